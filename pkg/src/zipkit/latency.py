"""Latency tables, additive runtime estimation and a host matmul benchmark."""

from __future__ import annotations

import math
import statistics
import time
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import InputError, TableError
from .pruner import default_grid, latency_key
from .store import ModelManifest, dump_json, read_json


@dataclass
class LatencyTable:
    """Per layer-kind map from configuration key to milliseconds.

    Keys are kept heads for ``attention_heads`` and kept columns otherwise.
    Key 0 (everything pruned) always costs 0 ms, listed or not.
    """

    device: str
    entries: dict[str, dict[int, float]]
    dense_runtime_ms: float
    interpolate: bool = True

    def __post_init__(self):
        self.entries = {k: {int(key): float(ms) for key, ms in v.items()}
                        for k, v in self.entries.items()}
        self.validate()

    def validate(self):
        if self.dense_runtime_ms is None or not math.isfinite(self.dense_runtime_ms) \
                or self.dense_runtime_ms <= 0:
            raise TableError(f"invalid dense_runtime_ms {self.dense_runtime_ms!r}")
        for kind, rows in self.entries.items():
            for key, ms in rows.items():
                if key < 0:
                    raise TableError(f"{kind}: negative key {key}")
                if not math.isfinite(ms) or ms < 0:
                    raise TableError(f"{kind}: latency {ms} ms for key {key} is invalid")
            if rows.get(0, 0.0) != 0.0:
                raise TableError(f"{kind}: the all-pruned entry must be 0 ms")

    def lookup(self, kind: str, key: int) -> float:
        """Latency for ``key``; linear interpolation between neighbours, no extrapolation."""
        if key == 0:
            return 0.0
        rows = self.entries.get(kind)
        if rows is None:
            raise TableError(f"no latency entries for layer kind {kind!r}")
        if key in rows:
            return rows[key]
        if not self.interpolate:
            raise TableError(f"{kind}: no entry for key {key} and interpolation is off")
        keys = sorted(set(rows) | {0})
        hi = next((k for k in keys if k > key), None)
        if hi is None:
            raise TableError(f"{kind}: key {key} beyond largest entry {keys[-1]}")
        lo = max(k for k in keys if k < key)
        t_lo = rows.get(lo, 0.0)
        return t_lo + (rows[hi] - t_lo) * (key - lo) / (hi - lo)


@dataclass
class SpeedupEstimate:
    runtime_ms: float
    dense_runtime_ms: float
    speedup: float
    infinite: bool = False


def estimate_runtime(choices: Iterable[tuple[str, int]], table: LatencyTable) -> float:
    """Sum of per-kind table entries over ``(kind, key)`` choices."""
    return math.fsum(table.lookup(kind, key) for kind, key in choices)


def estimate_speedup(choices: Iterable[tuple[str, int]], table: LatencyTable) -> SpeedupEstimate:
    runtime = estimate_runtime(choices, table)
    if runtime == 0.0:
        return SpeedupEstimate(0.0, table.dense_runtime_ms, math.inf, infinite=True)
    return SpeedupEstimate(runtime, table.dense_runtime_ms, table.dense_runtime_ms / runtime)


# -- persistence ----------------------------------------------------------------


def table_to_dict(table: LatencyTable) -> dict:
    return {
        "device": table.device,
        "dense_runtime_ms": table.dense_runtime_ms,
        "kinds": {
            kind: [{"key": key, "ms": rows[key]} for key in sorted(rows, reverse=True)]
            for kind, rows in sorted(table.entries.items())
        },
    }


def table_from_dict(doc: dict) -> LatencyTable:
    if "dense_runtime_ms" not in doc:
        raise TableError("latency table lacks dense_runtime_ms")
    try:
        entries = {
            kind: {int(e["key"]): float(e["ms"]) for e in rows}
            for kind, rows in doc.get("kinds", {}).items()
        }
        dense = float(doc["dense_runtime_ms"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TableError(f"malformed latency table: {exc!r}") from exc
    return LatencyTable(str(doc.get("device", "unknown")), entries, dense)


def save_table(table: LatencyTable, path):
    dump_json(table_to_dict(table), path)


def load_table(path) -> LatencyTable:
    try:
        doc = read_json(path)
    except InputError as exc:
        raise TableError(str(exc)) from exc
    return table_from_dict(doc)


def example_table() -> LatencyTable:
    """Reference single-layer table for a BERT-base block (12 heads, FFN width 3072)."""
    ffn = {3072: 11.9, 1814: 7.4, 1322: 5.8, 302: 1.6, 130: 1.0, 76: 0.9, 33: 0.7}
    heads = {12: 7.9, 10: 6.7, 8: 5.8, 6: 4.4, 4: 3.2, 2: 1.9, 0: 0.0}
    return LatencyTable("example", {"ffn_columns": ffn, "attention_heads": heads},
                        dense_runtime_ms=11.9 + 7.9)


# -- benchmarking ---------------------------------------------------------------


def bench_kernel(shape: tuple[int, int, int], reps: int = 7, warmup: int = 2,
                 seed: int = 0) -> float:
    """Median wall-clock ms of a ``(rows x cols) @ (cols x batch)`` float32 matmul.

    Calls too short for the clock are repeated in an inner loop whose count
    doubles until one measurement spans at least 10 clock ticks.
    """
    rows, cols, batch = shape
    if reps < 3:
        raise InputError("reps must be at least 3")
    if rows == 0 or cols == 0 or batch == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, cols), dtype=np.float32)
    B = rng.standard_normal((cols, batch), dtype=np.float32)
    out = np.empty((rows, batch), dtype=np.float32)
    floor_ns = 10 * time.get_clock_info("perf_counter").resolution * 1e9

    def run(inner):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            np.matmul(A, B, out=out)
        return time.perf_counter_ns() - t0

    for _ in range(warmup):
        run(1)
    inner = 1
    while run(inner) < floor_ns:
        inner *= 2
    if inner > 1:
        warnings.warn(f"matmul {shape} below timer resolution; inner loop raised to {inner}",
                      RuntimeWarning, stacklevel=2)
    samples = [run(inner) / inner for _ in range(reps)]
    return statistics.median(samples) / 1e6


def _block_shapes(spec, group, keep: int, hidden: int, batch: int):
    """Matmul shapes of one block with ``keep`` kept columns in the target."""
    target = spec.matrix(group.target_matrix)
    shapes = [(target.rows, keep, batch)]
    if group.linked_producer is not None:
        producer = spec.matrix(group.linked_producer.matrix)
        shapes.append((keep, producer.cols, batch))
    return shapes


def bench_table(manifest: ModelManifest, batch: int = 128, reps: int = 7, warmup: int = 2,
                device: Optional[str] = None) -> LatencyTable:
    """Benchmark every grid level of every layer kind in ``manifest``."""
    entries: dict[str, dict[int, float]] = {}
    signature: dict[str, tuple] = {}
    dense = []
    for spec in manifest.layers:
        for group in spec.groups:
            target = spec.matrix(group.target_matrix)
            sig = (target.rows, target.cols, group.structure_width, group.n_structures,
                   None if group.linked_producer is None
                   else spec.matrix(group.linked_producer.matrix).cols)
            if group.kind in signature:
                if signature[group.kind] != sig:
                    raise InputError(
                        f"layers of kind {group.kind!r} differ in shape; one table row set "
                        "per kind cannot describe them"
                    )
            else:
                signature[group.kind] = sig
                rows = {}
                for kept in default_grid(group):
                    cols = kept * group.structure_width
                    rows[latency_key(group, kept)] = math.fsum(
                        bench_kernel(s, reps, warmup)
                        for s in _block_shapes(spec, group, cols, manifest.hidden_dim, batch)
                    )
                entries[group.kind] = rows
            dense.append(entries[group.kind][latency_key(group, group.n_structures)])
    return LatencyTable(device or "host-cpu", entries, math.fsum(dense))


def model_runtime(manifest: ModelManifest, table: LatencyTable) -> float:
    """Estimated runtime of a (possibly compacted) model from its current shapes."""
    choices = []
    for spec in manifest.layers:
        for group in spec.groups:
            choices.append((group.kind, latency_key(group, group.n_structures)))
    return estimate_runtime(choices, table)

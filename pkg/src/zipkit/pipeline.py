"""One-shot compression pipeline built from the individual stages."""

from __future__ import annotations

import copy
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import calib as calib_mod
from .chain import stitch
from .errors import InputError
from .latency import LatencyTable
from .pruner import LayerDatabase, PruneMask, PrunedVariant, build_database, measure_relative_error
from .search import (
    ChainEvaluator,
    GroupKey,
    ProxyEvaluator,
    SearchResult,
    plan_targets,
)
from .store import CalibrationSet, Model, dump_json, read_blob, read_json, write_blob

CALIBRATION_BUDGETS = (4, 32, 128, 512, 2048)


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("ZIPKIT_THREADS", "1") or 1)
    return max(1, int(threads))


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def compute_hessians(model: Model, calibration: CalibrationSet, damping: Optional[float] = None,
                     threads: Optional[int] = None) -> dict[str, calib_mod.HessianState]:
    def one(spec):
        return spec.name, calib_mod.hessian_from_inputs(
            calibration.inputs[spec.name], damping, name=spec.name)

    return dict(_map(one, model.manifest.layers, resolve_threads(threads)))


def build_databases(model: Model, calibration: CalibrationSet,
                    hessians: Mapping[str, calib_mod.HessianState],
                    threads: Optional[int] = None) -> dict[GroupKey, LayerDatabase]:
    jobs = [(spec, g) for spec in model.manifest.layers for g in spec.groups]

    def one(job):
        spec, group = job
        return build_database(spec.name, group, model.matrices[group.target_matrix],
                              hessians[spec.name].inverse, calibration.inputs[spec.name])

    dbs = _map(one, jobs, resolve_threads(threads))
    return {db.key: db for db in dbs}


# -- database persistence ----------------------------------------------------------


def _db_dirname(key: GroupKey) -> str:
    return f"{key[0]}__{key[1]}"


def save_database(db: LayerDatabase, root) -> Path:
    path = Path(root) / _db_dirname(db.key)
    levels = []
    for v in db.variants:
        blob = f"level_{v.level_index:03d}.bin"
        write_blob(path / blob, v.weights)
        levels.append({
            "level": v.level_index,
            "kept_structures": v.kept_structures,
            "latency_key": v.latency_key,
            "p": v.relative_error,
            "cumulative_saliency": v.cumulative_saliency,
            "removed_structures": list(v.mask.removed_structures),
            "blob": blob,
            "rows": int(v.weights.shape[0]),
            "cols": int(v.weights.shape[1]),
        })
    dump_json({"layer": db.layer, "group_kind": db.group_kind, "grid": list(db.grid),
               "levels": levels}, path / "index.json")
    return path


def load_database(root, key: GroupKey, model: Model) -> LayerDatabase:
    path = Path(root) / _db_dirname(key)
    doc = read_json(path / "index.json")
    group = next(g for g in model.manifest.layer(key[0]).groups if g.kind == key[1])
    variants = []
    for e in doc["levels"]:
        mask = PruneMask(int(e["cols"]))
        for j in e["removed_structures"]:
            mask.add(j, group.structures[j])
        variants.append(PrunedVariant(
            group_kind=doc["group_kind"],
            level_index=int(e["level"]),
            kept_structures=int(e["kept_structures"]),
            latency_key=int(e["latency_key"]),
            weights=read_blob(path / e["blob"], (int(e["rows"]), int(e["cols"]))).astype(np.float64),
            mask=mask,
            relative_error=float(e["p"]),
            cumulative_saliency=float(e["cumulative_saliency"]),
        ))
    return LayerDatabase(doc["layer"], doc["group_kind"], list(doc["grid"]), variants)


def load_databases(root, model: Model) -> dict[GroupKey, LayerDatabase]:
    return {(s.name, g.kind): load_database(root, (s.name, g.kind), model)
            for s in model.manifest.layers for g in s.groups}


# -- export ---------------------------------------------------------------------------


def export_model(model: Model, databases, levels: Mapping[GroupKey, int],
                 provenance: Optional[Mapping[str, object]] = None) -> Model:
    """Stitched, physically compacted model with provenance in its metadata."""
    out = stitch(model, databases, levels, shrink=True)
    out.matrices = {k: np.asarray(v, dtype=np.float32) for k, v in out.matrices.items()}
    manifest = copy.deepcopy(out.manifest)
    for k, v in (provenance or {}).items():
        manifest.metadata[str(k)] = str(v)
    return Model(manifest, out.matrices)


# -- one-shot runs ------------------------------------------------------------------


def make_evaluator(kind: str, model: Model, databases, calibration: CalibrationSet):
    if kind == "proxy":
        return ProxyEvaluator(databases)
    if kind == "chain":
        if calibration.model_input is None:
            raise InputError("chain evaluator needs model_input in the calibration set")
        return ChainEvaluator(model, databases, calibration.model_input)
    raise InputError(f"unknown evaluator {kind!r}")


@dataclass
class OneShotRun:
    databases: dict[GroupKey, LayerDatabase]
    results: list[SearchResult]


def one_shot(model: Model, calibration: CalibrationSet, table: LatencyTable,
             targets: Sequence[float], evaluator: str = "proxy", steps: int = 1000,
             seed: int = 0, damping: Optional[float] = None,
             threads: Optional[int] = None) -> OneShotRun:
    hessians = compute_hessians(model, calibration, damping, threads)
    dbs = build_databases(model, calibration, hessians, threads)
    ev = make_evaluator(evaluator, model, dbs, calibration)
    return OneShotRun(dbs, plan_targets(dbs, table, targets, ev, steps=steps, seed=seed))


def heldout_proxy_loss(databases, levels: Mapping[GroupKey, int], model: Model,
                       heldout: CalibrationSet) -> float:
    """Sum of chosen variants' relative errors re-measured on held-out activations."""
    total = 0.0
    for key, lvl in levels.items():
        layer, kind = key
        group = next(g for g in model.manifest.layer(layer).groups if g.kind == kind)
        W = model.matrices[group.target_matrix]
        total += measure_relative_error(databases[key].variant(lvl).weights, W,
                                        heldout.inputs[layer])
    return total


def calibration_sweep(model: Model, calibration: CalibrationSet, heldout: CalibrationSet,
                      table: LatencyTable, target: float,
                      budgets: Sequence[int] = CALIBRATION_BUDGETS, steps: int = 200,
                      seed: int = 0, damping: Optional[float] = None) -> list[tuple[int, float]]:
    """Prune one-shot with growing calibration budgets; report held-out proxy loss."""
    rows = []
    for n in budgets:
        if n > calibration.sample_count:
            raise InputError(f"budget {n} exceeds the {calibration.sample_count} samples given")
        run = one_shot(model, calibration.truncated(n), table, [target], "proxy", steps, seed,
                       damping)
        best = run.results[0].best
        rows.append((n, heldout_proxy_loss(run.databases, best.levels, model, heldout)))
    return rows

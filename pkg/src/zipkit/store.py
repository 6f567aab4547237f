"""On-disk container for models, calibration activations and databases.

A container is a directory holding ``manifest.json`` plus one raw blob per
matrix: little-endian float32, row-major, no header.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    InputError,
    MissingBlobError,
    ShapeMismatchError,
    VersionMismatchError,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_DTYPE = np.dtype("<f4")
DEFAULT_SAMPLE_BUDGET = 2048

GROUP_KINDS = ("attention_heads", "ffn_columns", "generic")
ACTIVATIONS = ("identity", "relu", "gelu", "tanh")


@dataclass
class MatrixRecord:
    name: str
    rows: int
    cols: int
    blob: Optional[str] = None

    def __post_init__(self):
        if self.blob is None:
            self.blob = f"{self.name}.bin"

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols * BLOB_DTYPE.itemsize


@dataclass
class LinkedProducer:
    """Producer matrix whose rows feed the target's prunable columns.

    ``rows[k]`` is the producer row feeding the k-th column of the sorted
    union of structure columns.
    """

    matrix: str
    rows: list[int]


@dataclass
class StructureGroup:
    target_matrix: str
    structure_width: int
    structures: list[list[int]]
    kind: str = "generic"
    linked_producer: Optional[LinkedProducer] = None

    @property
    def columns(self) -> list[int]:
        return sorted(c for s in self.structures for c in s)

    @property
    def n_structures(self) -> int:
        return len(self.structures)

    def producer_rows(self, structure_indices) -> list[int]:
        """Producer rows linked to the given structures' columns."""
        if self.linked_producer is None:
            raise InputError(f"group on {self.target_matrix!r} has no linked producer")
        pos = {c: k for k, c in enumerate(self.columns)}
        rows = []
        for j in structure_indices:
            rows.extend(self.linked_producer.rows[pos[c]] for c in self.structures[j])
        return rows

    def validate(self, target_cols: int, producer_rows: Optional[int] = None):
        if self.kind not in GROUP_KINDS:
            raise InputError(f"unknown structure group kind {self.kind!r}")
        if self.structure_width < 1:
            raise InputError("structure_width must be positive")
        seen = set()
        for k, s in enumerate(self.structures):
            if len(s) != self.structure_width:
                raise InputError(
                    f"structure {k} of {self.target_matrix!r} has {len(s)} columns, "
                    f"expected {self.structure_width}"
                )
            for c in s:
                if not 0 <= c < target_cols:
                    raise InputError(f"column {c} out of range for {self.target_matrix!r}")
                if c in seen:
                    raise InputError(f"column {c} of {self.target_matrix!r} in two structures")
                seen.add(c)
        lp = self.linked_producer
        if lp is not None:
            if len(lp.rows) != len(seen) or len(set(lp.rows)) != len(lp.rows):
                raise InputError(
                    f"linked producer rows of {self.target_matrix!r} are not a bijection "
                    "onto the structure columns"
                )
            if producer_rows is not None and any(not 0 <= r < producer_rows for r in lp.rows):
                raise InputError(f"linked producer row out of range for {lp.matrix!r}")


@dataclass
class LayerSpec:
    """One prunable block.

    For chain evaluation the block computes
    ``y = target @ act(producer @ x)`` (plus ``x`` when residual), where the
    producer is the first group's linked producer.
    """

    name: str
    matrices: list[MatrixRecord]
    groups: list[StructureGroup]
    activation: str = "identity"
    residual: bool = True

    def matrix(self, name: str) -> MatrixRecord:
        for m in self.matrices:
            if m.name == name:
                return m
        raise InputError(f"layer {self.name!r} has no matrix {name!r}")

    @property
    def group(self) -> StructureGroup:
        if len(self.groups) != 1:
            raise InputError(f"layer {self.name!r} must have exactly one structure group")
        return self.groups[0]


@dataclass
class ModelManifest:
    layers: list[LayerSpec]
    hidden_dim: int
    format_version: int = FORMAT_VERSION
    metadata: dict[str, str] = field(default_factory=dict)

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise InputError(f"no layer named {name!r}")

    def validate(self):
        if self.format_version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"manifest format_version {self.format_version}, expected {FORMAT_VERSION}"
            )
        if self.hidden_dim <= 0:
            raise InputError("hidden_dim must be positive")
        names = [spec.name for spec in self.layers]
        if len(set(names)) != len(names):
            raise InputError("layer names are not unique")
        for spec in self.layers:
            if spec.activation not in ACTIVATIONS:
                raise InputError(f"layer {spec.name!r}: unknown activation {spec.activation!r}")
            for g in spec.groups:
                target = spec.matrix(g.target_matrix)
                prod = spec.matrix(g.linked_producer.matrix) if g.linked_producer else None
                g.validate(target.cols, prod.rows if prod else None)


@dataclass
class Model:
    manifest: ModelManifest
    matrices: dict[str, np.ndarray]

    def weight(self, name: str) -> np.ndarray:
        return self.matrices[name]

    def parameter_count(self) -> int:
        return int(sum(m.size for m in self.matrices.values()))


@dataclass
class CalibrationSet:
    """Per-layer input activations, ``d_col x n_samples`` each.

    ``model_input`` (``hidden_dim x n``) feeds the first block of a chain;
    ``padding`` holds optional ``batch x seq`` flags, true meaning padding.
    """

    inputs: dict[str, np.ndarray]
    model_input: Optional[np.ndarray] = None
    padding: Optional[np.ndarray] = None

    @property
    def sample_count(self) -> int:
        arrays = list(self.inputs.values())
        if self.model_input is not None:
            arrays.append(self.model_input)
        return int(arrays[0].shape[1]) if arrays else 0

    def truncated(self, n: int) -> "CalibrationSet":
        if n < 1:
            raise InputError("sample budget must be at least 1")
        return CalibrationSet(
            {k: v[:, :n] for k, v in self.inputs.items()},
            None if self.model_input is None else self.model_input[:, :n],
            self.padding,
        )


# -- blobs ---------------------------------------------------------------


def write_blob(path, array: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype=BLOB_DTYPE)
    try:
        with open(path, "wb") as fh:
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def read_blob(path, shape) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingBlobError(f"missing blob {path}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * BLOB_DTYPE.itemsize
    if len(raw) != expected:
        raise ShapeMismatchError(
            f"blob {path.name}: {len(raw)} bytes, declared shape {tuple(shape)} needs {expected}"
        )
    return np.frombuffer(raw, dtype=BLOB_DTYPE).reshape(shape).copy()


def dump_json(obj, path):
    """Canonical JSON: sorted keys, fixed indent, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing file {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} does not parse: {exc}") from exc


# -- manifest (de)serialization -------------------------------------------


def manifest_to_dict(manifest: ModelManifest) -> dict:
    layers = []
    for spec in manifest.layers:
        groups = []
        for g in spec.groups:
            d = {
                "target_matrix": g.target_matrix,
                "structure_width": g.structure_width,
                "structures": [list(map(int, s)) for s in g.structures],
                "kind": g.kind,
            }
            if g.linked_producer is not None:
                d["linked_producer"] = {
                    "matrix": g.linked_producer.matrix,
                    "rows": list(map(int, g.linked_producer.rows)),
                }
            groups.append(d)
        layers.append({
            "name": spec.name,
            "activation": spec.activation,
            "residual": spec.residual,
            "matrices": [
                {"name": m.name, "rows": m.rows, "cols": m.cols, "blob": m.blob}
                for m in spec.matrices
            ],
            "groups": groups,
        })
    return {
        "format_version": manifest.format_version,
        "hidden_dim": manifest.hidden_dim,
        "metadata": {str(k): str(v) for k, v in manifest.metadata.items()},
        "layers": layers,
    }


def manifest_from_dict(d: dict) -> ModelManifest:
    try:
        version = int(d["format_version"])
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"manifest format_version {version}, expected {FORMAT_VERSION}"
            )
        layers = []
        for ld in d["layers"]:
            groups = []
            for gd in ld.get("groups", []):
                lp = gd.get("linked_producer")
                groups.append(StructureGroup(
                    target_matrix=gd["target_matrix"],
                    structure_width=int(gd["structure_width"]),
                    structures=[[int(c) for c in s] for s in gd["structures"]],
                    kind=gd.get("kind", "generic"),
                    linked_producer=None if lp is None else LinkedProducer(
                        lp["matrix"], [int(r) for r in lp["rows"]]
                    ),
                ))
            layers.append(LayerSpec(
                name=ld["name"],
                matrices=[
                    MatrixRecord(m["name"], int(m["rows"]), int(m["cols"]), m.get("blob"))
                    for m in ld["matrices"]
                ],
                groups=groups,
                activation=ld.get("activation", "identity"),
                residual=bool(ld.get("residual", True)),
            ))
        return ModelManifest(
            layers=layers,
            hidden_dim=int(d["hidden_dim"]),
            format_version=version,
            metadata=dict(d.get("metadata", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed manifest: {exc!r}") from exc


def save_model(model: Model, path):
    """Write ``model`` to directory ``path``; blobs first, manifest last."""
    path = Path(path)
    model.manifest.validate()
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {path}: {exc}") from exc
    for spec in model.manifest.layers:
        for rec in spec.matrices:
            arr = model.matrices[rec.name]
            if arr.shape != (rec.rows, rec.cols):
                raise ShapeMismatchError(
                    f"matrix {rec.name!r} has shape {arr.shape}, manifest says "
                    f"{(rec.rows, rec.cols)}"
                )
            write_blob(path / rec.blob, arr)
    dump_json(manifest_to_dict(model.manifest), path / MANIFEST_NAME)


def load_model(path) -> Model:
    path = Path(path)
    manifest = manifest_from_dict(read_json(path / MANIFEST_NAME))
    matrices = {}
    for spec in manifest.layers:
        for rec in spec.matrices:
            if rec.name in matrices:
                raise InputError(f"matrix name {rec.name!r} used twice")
            matrices[rec.name] = read_blob(path / rec.blob, (rec.rows, rec.cols))
    manifest.validate()
    return Model(manifest, matrices)


# -- calibration ------------------------------------------------------------


def save_calibration(calib: CalibrationSet, path):
    path = Path(path)
    section = {}
    for name, X in calib.inputs.items():
        blob = f"calib.{name}.bin"
        write_blob(path / blob, X)
        section[name] = {"blob": blob, "rows": int(X.shape[0]), "cols": int(X.shape[1])}
    doc = {"format_version": FORMAT_VERSION, "calibration": section}
    if calib.model_input is not None:
        write_blob(path / "model_input.bin", calib.model_input)
        doc["model_input"] = {"blob": "model_input.bin", "rows": int(calib.model_input.shape[0]),
                              "cols": int(calib.model_input.shape[1])}
    if calib.padding is not None:
        pad = np.asarray(calib.padding, dtype=bool)
        write_blob(path / "padding.bin", pad.astype(BLOB_DTYPE))
        doc["padding"] = {"blob": "padding.bin", "rows": int(pad.shape[0]),
                          "cols": int(pad.shape[1])}
    dump_json(doc, path / MANIFEST_NAME)


def load_calibration(path, manifest: ModelManifest,
                     sample_budget: Optional[int] = None) -> CalibrationSet:
    """Load per-layer activations and check them against ``manifest``.

    Only the first ``sample_budget`` samples are kept (default 2048).
    """
    path = Path(path)
    doc = read_json(path / MANIFEST_NAME)
    if int(doc.get("format_version", -1)) != FORMAT_VERSION:
        raise VersionMismatchError(f"calibration format_version {doc.get('format_version')}")
    budget = DEFAULT_SAMPLE_BUDGET if sample_budget is None else int(sample_budget)
    if budget < 1:
        raise InputError("sample budget must be at least 1")

    def _read(entry):
        return read_blob(path / entry["blob"], (int(entry["rows"]), int(entry["cols"])))

    inputs = {}
    section = doc.get("calibration", {})
    for spec in manifest.layers:
        if spec.name not in section:
            raise InputError(f"no calibration activations for layer {spec.name!r}")
        X = _read(section[spec.name])
        for g in spec.groups:
            cols = spec.matrix(g.target_matrix).cols
            if X.shape[0] != cols:
                raise ShapeMismatchError(
                    f"calibration for {spec.name!r} has {X.shape[0]} rows, target "
                    f"{g.target_matrix!r} has {cols} columns"
                )
        if X.shape[1] < 1:
            raise InputError(f"calibration for {spec.name!r} has no samples")
        inputs[spec.name] = X
    model_input = _read(doc["model_input"]) if "model_input" in doc else None
    if model_input is not None and model_input.shape[0] != manifest.hidden_dim:
        raise ShapeMismatchError("model_input rows must equal hidden_dim")
    padding = _read(doc["padding"]).astype(bool) if "padding" in doc else None
    return CalibrationSet(inputs, model_input, padding).truncated(budget)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {path}: {exc}") from exc
    return path

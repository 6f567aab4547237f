"""Sequential block models: forward pass, variant stitching, synthetic models.

Every block computes ``y = T @ act(P @ x)``; residual blocks add ``x``. ``T``
is the pruned target matrix and ``P`` its linked producer, so dropping a
residual block entirely turns it into an identity passthrough.
"""

from __future__ import annotations

import copy
from typing import Mapping, Optional

import numpy as np
from scipy.special import erf

from .errors import InputError, ShapeMismatchError
from .pruner import LayerDatabase, compact
from .store import (
    CalibrationSet,
    LayerSpec,
    LinkedProducer,
    MatrixRecord,
    Model,
    ModelManifest,
    StructureGroup,
)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "gelu":
        return 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))
    if name == "tanh":
        return np.tanh(z)
    raise InputError(f"unknown activation {name!r}")


def _producer_target(model: Model, spec: LayerSpec):
    g = spec.group
    if g.linked_producer is None:
        raise InputError(f"chain layer {spec.name!r} needs a linked producer")
    return model.matrices[g.linked_producer.matrix], model.matrices[g.target_matrix]


def forward(model: Model, x: np.ndarray, collect: bool = False):
    """Run the chain on ``hidden_dim x n`` inputs.

    With ``collect=True`` also returns each block's target-matrix input,
    i.e. the calibration activations of that layer.
    """
    h = np.asarray(x, dtype=np.float64)
    acts = {}
    prev = None
    for spec in model.manifest.layers:
        P, T = _producer_target(model, spec)
        if P.shape[1] != h.shape[0]:
            raise ShapeMismatchError(
                f"layer {spec.name!r} expects {P.shape[1]} inputs but "
                f"{'the model input' if prev is None else repr(prev)} provides {h.shape[0]}"
            )
        if T.shape[1] != P.shape[0]:
            raise ShapeMismatchError(
                f"layer {spec.name!r}: target has {T.shape[1]} columns, producer "
                f"{P.shape[0]} rows"
            )
        a = activate(spec.activation, P.astype(np.float64) @ h)
        if collect:
            acts[spec.name] = a
        y = T.astype(np.float64) @ a
        if spec.residual:
            if y.shape != h.shape:
                raise ShapeMismatchError(f"residual layer {spec.name!r} changes the width")
            y = y + h
        h = y
        prev = spec.name
    return (h, acts) if collect else h


def stitch(model: Model, databases: Mapping[tuple[str, str], LayerDatabase],
           levels: Mapping[tuple[str, str], int], shrink: bool = True) -> Model:
    """Swap in the chosen pruned variant of every layer.

    With ``shrink`` the zeroed columns and their producer rows are deleted;
    otherwise the masked full-size matrices are kept. Layers absent from
    ``levels`` stay dense.
    """
    manifest = copy.deepcopy(model.manifest)
    matrices = dict(model.matrices)
    for spec in manifest.layers:
        for gi, group in enumerate(spec.groups):
            key = (spec.name, group.kind)
            if key not in levels:
                continue
            variant = databases[key].variant(levels[key])
            target = variant.weights
            if not shrink:
                matrices[group.target_matrix] = target
                continue
            lp = group.linked_producer
            producer = matrices[lp.matrix] if lp is not None else None
            t2, p2, g2 = compact(target, producer, group, variant.mask.removed_structures)
            matrices[group.target_matrix] = t2
            spec.groups[gi] = g2
            _resize(spec, group.target_matrix, t2.shape)
            if lp is not None:
                matrices[lp.matrix] = p2
                _resize(spec, lp.matrix, p2.shape)
    return Model(manifest, matrices)


def _resize(spec: LayerSpec, name: str, shape):
    rec = spec.matrix(name)
    rec.rows, rec.cols = int(shape[0]), int(shape[1])


# -- synthetic models -----------------------------------------------------------


def synthetic_chain(n_layers: int = 4, hidden: int = 32, ffn_width: int = 128,
                    n_heads: int = 8, seed: int = 0) -> Model:
    """Alternating attention-like (linear, head-structured) and FFN blocks.

    The attention stand-in is ``W_o @ (W_v @ x)`` with ``n_heads`` column
    blocks in ``W_o``; the FFN is ``W_2 @ relu(W_1 @ x)`` with single-column
    structures in ``W_2``. All blocks are residual.
    """
    if hidden % n_heads:
        raise InputError("hidden must be divisible by n_heads")
    rng = np.random.default_rng(seed)
    d_head = hidden // n_heads
    layers, matrices = [], {}
    for i in range(n_layers):
        if i % 2 == 0:
            name, width, sw, kind, act = f"l{i}.attn", hidden, d_head, "attention_heads", "identity"
            pn, tn = f"l{i}.attn.v", f"l{i}.attn.o"
        else:
            name, width, sw, kind, act = f"l{i}.ffn", ffn_width, 1, "ffn_columns", "relu"
            pn, tn = f"l{i}.ffn.fc1", f"l{i}.ffn.fc2"
        matrices[pn] = (rng.standard_normal((width, hidden)) / np.sqrt(hidden)).astype(np.float32)
        matrices[tn] = (rng.standard_normal((hidden, width)) / np.sqrt(width)).astype(np.float32)
        structures = [list(range(k * sw, (k + 1) * sw)) for k in range(width // sw)]
        group = StructureGroup(tn, sw, structures, kind, LinkedProducer(pn, list(range(width))))
        layers.append(LayerSpec(
            name,
            [MatrixRecord(pn, width, hidden), MatrixRecord(tn, hidden, width)],
            [group],
            activation=act,
            residual=True,
        ))
    manifest = ModelManifest(layers, hidden, metadata={"origin": "synthetic", "seed": str(seed)})
    manifest.validate()
    return Model(manifest, matrices)


def synthetic_inputs(hidden: int, n: int, rank: Optional[int] = None, noise: float = 0.1,
                     seed: int = 1) -> np.ndarray:
    """Correlated model inputs: a low-rank latent signal plus isotropic noise."""
    rng = np.random.default_rng(seed)
    rank = rank or max(1, hidden // 4)
    basis = rng.standard_normal((hidden, rank))
    return (basis @ rng.standard_normal((rank, n)) / np.sqrt(rank)
            + noise * rng.standard_normal((hidden, n)))


def make_calibration(model: Model, x: np.ndarray) -> CalibrationSet:
    """Propagate ``x`` through the dense chain and record every layer's inputs."""
    _, acts = forward(model, x, collect=True)
    return CalibrationSet({k: v.astype(np.float32) for k, v in acts.items()},
                          model_input=np.asarray(x, dtype=np.float32))

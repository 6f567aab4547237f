"""Structured OBS pruning of weight-matrix columns.

Structures (attention heads, FFN columns) are removed one at a time. Each
step picks the structure with the smallest joint-row saliency, applies the
optimal compensating update to the surviving columns, and eliminates the
structure from the inverse Hessian with a block Gaussian-elimination step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, NumericalError
from .store import LinkedProducer, StructureGroup

FFN_SHRINK = 0.9
FFN_STEPS = 42


# -- grids ------------------------------------------------------------------


def ffn_grid(n: int, shrink: float = FFN_SHRINK, steps: int = FFN_STEPS) -> list[int]:
    """Kept counts ``n * shrink**i`` for ``i = 0..steps`` plus 0, deduplicated.

    Counts are rounded half away from zero.
    """
    kept = {int(math.floor(n * shrink ** i + 0.5)) for i in range(steps + 1)}
    kept.add(0)
    return sorted(kept, reverse=True)


def heads_grid(n: int) -> list[int]:
    return list(range(n, -1, -1))


def default_grid(group: StructureGroup) -> list[int]:
    if group.kind == "attention_heads":
        return heads_grid(group.n_structures)
    return ffn_grid(group.n_structures)


def latency_key(group: StructureGroup, kept_structures: int) -> int:
    """Heads are keyed by kept head count, everything else by kept columns."""
    if group.kind == "attention_heads":
        return kept_structures
    return kept_structures * group.structure_width


# -- masks and variants -----------------------------------------------------


@dataclass
class PruneMask:
    n_cols: int
    removed_structures: list[int] = field(default_factory=list)
    step_masks: list[np.ndarray] = field(default_factory=list)

    @property
    def cumulative(self) -> np.ndarray:
        out = np.zeros(self.n_cols, dtype=bool)
        for m in self.step_masks:
            out |= m
        return out

    def add(self, structure: int, columns):
        m = np.zeros(self.n_cols, dtype=bool)
        m[np.asarray(columns)] = True
        self.removed_structures.append(int(structure))
        self.step_masks.append(m)

    def prefix(self, k: int) -> "PruneMask":
        return PruneMask(self.n_cols, self.removed_structures[:k], self.step_masks[:k])


@dataclass
class PrunedVariant:
    group_kind: str
    level_index: int
    kept_structures: int
    latency_key: int
    weights: np.ndarray
    mask: PruneMask
    relative_error: float
    cumulative_saliency: float


@dataclass
class LayerDatabase:
    layer: str
    group_kind: str
    grid: list[int]
    variants: list[PrunedVariant]

    @property
    def key(self) -> tuple[str, str]:
        return (self.layer, self.group_kind)

    @property
    def errors(self) -> np.ndarray:
        return np.array([v.relative_error for v in self.variants])

    @property
    def latency_keys(self) -> list[int]:
        return [v.latency_key for v in self.variants]

    def variant(self, level: int) -> PrunedVariant:
        return self.variants[level]


@dataclass
class ZipResult:
    weights: np.ndarray
    mask: PruneMask
    scores: list[float]
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


# -- the math ---------------------------------------------------------------


def _as_index(candidates) -> np.ndarray:
    idx = [np.asarray(c, dtype=np.intp) for c in candidates]
    widths = {len(c) for c in idx}
    if len(widths) > 1:
        raise InputError("candidate structures must share one width")
    return np.stack(idx) if idx else np.zeros((0, 0), dtype=np.intp)


def _block_inverses(Hinv: np.ndarray, idx: np.ndarray, labels=None) -> np.ndarray:
    """Inverses of the ``(H^-1)[S, S]`` sub-blocks, one per candidate row of ``idx``."""
    blocks = Hinv[idx[:, :, None], idx[:, None, :]]
    if idx.shape[1] == 1:
        d = blocks[:, 0, 0]
        bad = np.flatnonzero(~(d > 0))
        if bad.size:
            raise NumericalError(_singular_msg(bad[0], labels))
        return (1.0 / d)[:, None, None]
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        for j in range(len(blocks)):
            try:
                np.linalg.cholesky(blocks[j])
            except np.linalg.LinAlgError:
                raise NumericalError(_singular_msg(j, labels)) from None
    return np.linalg.inv(blocks)


def _singular_msg(j, labels):
    name = labels[j] if labels is not None else j
    return f"inverse-Hessian sub-block of candidate {name} is singular"


def saliency_scores(W: np.ndarray, Hinv: np.ndarray, candidates: Sequence) -> np.ndarray:
    """Joint-row saliency ``sum_i W[i,S] ((H^-1)[S,S])^-1 W[i,S]^T`` per candidate."""
    idx = _as_index(candidates)
    if idx.size == 0:
        return np.zeros(len(idx))
    binv = _block_inverses(Hinv, idx)
    Wsub = np.asarray(W, dtype=np.float64)[:, idx]  # rows x m x w
    return np.einsum("rmw,mwv,rmv->m", Wsub, binv, Wsub)


def prune_one(W: np.ndarray, Hinv: np.ndarray, S, block_inv: Optional[np.ndarray] = None):
    """Remove columns ``S``: optimal update of ``W`` and block downdate of ``H^-1``.

    Returns new arrays; the inputs are not modified.
    """
    W = np.asarray(W, dtype=np.float64)
    Hinv = np.asarray(Hinv, dtype=np.float64)
    M = np.asarray(S, dtype=np.intp)
    if block_inv is None:
        block_inv = _block_inverses(Hinv, M[None, :])[0]
    rows = block_inv @ Hinv[M, :]  # |S| x d_col
    W_new = W - W[:, M] @ rows
    H_new = Hinv - Hinv[:, M] @ rows
    return W_new, H_new


def run_ziplm(W: np.ndarray, Hinv: np.ndarray, k: int, group: StructureGroup,
              snapshot_at: Sequence[int] = ()) -> ZipResult:
    """Greedily remove exactly ``k`` structures of ``group`` from ``W``.

    ``snapshot_at`` lists numbers of removed structures after which a masked
    copy of the weights is kept (used to build a database in one pass).
    """
    n = group.n_structures
    if not 0 <= k <= n:
        raise InputError(f"k={k} out of range 0..{n}")
    W = np.array(W, dtype=np.float64)
    Hinv = np.array(Hinv, dtype=np.float64)
    if Hinv.shape != (W.shape[1], W.shape[1]):
        raise InputError(f"inverse Hessian {Hinv.shape} does not match W {W.shape}")
    structs = _as_index(group.structures)
    remaining = list(range(n))
    mask = PruneMask(W.shape[1])
    scores: list[float] = []
    wanted = set(snapshot_at)
    snapshots = {}

    def _snapshot():
        out = W.copy()
        out[:, mask.cumulative] = 0.0
        snapshots[len(mask.removed_structures)] = out

    if 0 in wanted:
        _snapshot()
    for _ in range(k):
        idx = structs[remaining]
        binv = _block_inverses(Hinv, idx, labels=remaining)
        Wsub = W[:, idx]
        s = np.einsum("rmw,mwv,rmv->m", Wsub, binv, Wsub)
        j = int(np.argmin(s))  # first minimum: lowest structure index
        chosen = remaining[j]
        M = structs[chosen]
        rows = binv[j] @ Hinv[M, :]
        W -= W[:, M] @ rows
        Hinv -= Hinv[:, M] @ rows
        mask.add(chosen, M)
        scores.append(float(s[j]))
        del remaining[j]
        if len(mask.removed_structures) in wanted:
            _snapshot()
    W[:, mask.cumulative] = 0.0
    return ZipResult(W, mask, scores, snapshots)


def measure_relative_error(W_hat: np.ndarray, W: np.ndarray, X: np.ndarray) -> float:
    """``||W_hat X - W X||_F / ||W X||_F``."""
    W = np.asarray(W, dtype=np.float64)
    W_hat = np.asarray(W_hat, dtype=np.float64)
    if W.shape != W_hat.shape:
        raise InputError(f"shape mismatch {W_hat.shape} vs {W.shape}")
    X = np.asarray(X, dtype=np.float64)
    ref = W @ X
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise InputError("reference output W X is zero; relative error undefined")
    return float(np.linalg.norm(W_hat @ X - ref) / denom)


def build_database(layer: str, group: StructureGroup, W: np.ndarray, Hinv: np.ndarray,
                   X: np.ndarray, grid: Optional[Sequence[int]] = None) -> LayerDatabase:
    """Snapshot one greedy pass at every grid level (kept-structure counts)."""
    grid = list(default_grid(group) if grid is None else grid)
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise InputError("grid must be strictly decreasing in kept structures")
    n = group.n_structures
    if grid and not 0 <= grid[-1] <= grid[0] <= n:
        raise InputError(f"grid levels must lie within 0..{n}")
    removed_counts = [n - kept for kept in grid]
    W = np.asarray(W, dtype=np.float64)
    res = run_ziplm(W, Hinv, max(removed_counts, default=0), group, snapshot_at=removed_counts)
    cum = np.concatenate([[0.0], np.cumsum(res.scores)])
    variants = []
    for level, (kept, removed) in enumerate(zip(grid, removed_counts)):
        Wv = res.snapshots[removed]
        variants.append(PrunedVariant(
            group_kind=group.kind,
            level_index=level,
            kept_structures=kept,
            latency_key=latency_key(group, kept),
            weights=Wv,
            mask=res.mask.prefix(removed),
            relative_error=measure_relative_error(Wv, W, X),
            cumulative_saliency=float(cum[removed]),
        ))
    return LayerDatabase(layer, group.kind, grid, variants)


# -- compaction -------------------------------------------------------------


def compact(target: np.ndarray, producer: Optional[np.ndarray], group: StructureGroup,
            removed_structures: Sequence[int]):
    """Physically delete pruned columns of ``target`` and linked rows of ``producer``.

    Returns ``(target, producer, group)`` with the group re-indexed onto the
    shrunk target. Without a linked producer only ``generic`` groups compact.
    """
    removed = sorted(set(int(j) for j in removed_structures))
    if group.linked_producer is None and group.kind != "generic":
        raise InputError(f"{group.kind} group on {group.target_matrix!r} needs a linked producer")
    if group.linked_producer is not None and producer is None:
        raise InputError(f"producer {group.linked_producer.matrix!r} not supplied")
    drop_cols = sorted(c for j in removed for c in group.structures[j])
    keep_cols = np.setdiff1d(np.arange(target.shape[1]), drop_cols)
    new_target = target[:, keep_cols]
    col_map = {int(c): k for k, c in enumerate(keep_cols)}

    kept_structs = [j for j in range(group.n_structures) if j not in set(removed)]
    new_structs = [[col_map[c] for c in group.structures[j]] for j in kept_structs]
    new_lp = None
    new_producer = producer
    if group.linked_producer is not None:
        drop_rows = group.producer_rows(removed)
        keep_rows = np.setdiff1d(np.arange(producer.shape[0]), drop_rows)
        new_producer = producer[keep_rows, :]
        row_map = {int(r): k for k, r in enumerate(keep_rows)}
        new_cols = sorted(c for s in new_structs for c in s)
        # rows linked to surviving columns, in the order of the new sorted columns
        inv_col = {v: k for k, v in col_map.items()}
        pos = {c: k for k, c in enumerate(group.columns)}
        new_rows = [row_map[group.linked_producer.rows[pos[inv_col[c]]]] for c in new_cols]
        new_lp = LinkedProducer(group.linked_producer.matrix, new_rows)
    new_group = StructureGroup(group.target_matrix, group.structure_width, new_structs,
                               group.kind, new_lp)
    return new_target, new_producer, new_group

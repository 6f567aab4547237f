"""Inference-aware per-layer sparsity search.

A random search over per-layer sensitivity coefficients drives an exact
knapsack-style dynamic program: given coefficients ``c``, the DP picks one
level per layer-group minimizing ``sum c_g * p_g`` under the runtime budget.
Every candidate the search evaluates therefore meets the speedup target.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .chain import forward, stitch
from .errors import InputError, TableError
from .latency import LatencyTable, estimate_runtime
from .pruner import LayerDatabase
from .store import Model

log = logging.getLogger(__name__)

DEFAULT_STEPS = 1000
DEFAULT_MUTATION_PROB = 0.1
DP_BUCKETS = 10_000
BERT_TARGETS = tuple(float(t) for t in range(2, 16))
GPT2_TARGETS = (1.5, 2.0, 2.5, 3.0)

GroupKey = tuple[str, str]


def group_label(key: GroupKey) -> str:
    return f"{key[0]}:{key[1]}"


@dataclass
class Budget:
    """Runtime budget for a speedup target.

    ``time_ms`` is the largest float ``t`` with ``dense / t >= target`` in
    floating point, so any runtime within it passes the speedup check as
    computed.
    """

    target_speedup: float
    dense_runtime_ms: float
    time_ms: float = field(init=False)

    def __post_init__(self):
        if not self.target_speedup >= 1.0:
            raise InputError(f"speedup target {self.target_speedup} is below 1")
        t = self.dense_runtime_ms / self.target_speedup
        while self.dense_runtime_ms / t < self.target_speedup:
            t = math.nextafter(t, 0.0)
        self.time_ms = t


@dataclass
class CandidateConfig:
    levels: dict[GroupKey, int]
    runtime_ms: float
    speedup: float
    objective: float
    loss: Optional[float] = None

    def as_dict(self, databases: Mapping[GroupKey, LayerDatabase]) -> dict:
        return {
            "layers": [
                {
                    "layer": key[0],
                    "kind": key[1],
                    "level": lvl,
                    "kept_structures": databases[key].variant(lvl).kept_structures,
                    "latency_key": databases[key].variant(lvl).latency_key,
                    "p": databases[key].variant(lvl).relative_error,
                }
                for key, lvl in self.levels.items()
            ],
            "estimated_runtime_ms": self.runtime_ms,
            "estimated_speedup": self.speedup if math.isfinite(self.speedup) else "inf",
            "objective": self.objective,
            "loss": self.loss,
        }


class Evaluator(Protocol):
    def evaluate(self, levels: Mapping[GroupKey, int]) -> float: ...


def _as_mapping(databases) -> dict[GroupKey, LayerDatabase]:
    if isinstance(databases, Mapping):
        return dict(databases)
    return {db.key: db for db in databases}


def _nearest_ns(ms: float) -> int:
    return round(Fraction(ms) * 1_000_000)


class _Problem:
    """Per-level latencies (integer ns, rounded to nearest) and priors."""

    def __init__(self, databases, table: LatencyTable):
        self.dbs = _as_mapping(databases)
        self.keys = list(self.dbs)
        self.table = table
        self.ms = []
        self.ns = []
        self.p = []
        for key in self.keys:
            db = self.dbs[key]
            ms = [table.lookup(db.group_kind, k) for k in db.latency_keys]
            self.ms.append(ms)
            self.ns.append(np.array([_nearest_ns(m) for m in ms], dtype=np.int64))
            self.p.append(db.errors)

    def runtime(self, levels: Mapping[GroupKey, int]) -> float:
        return estimate_runtime(
            ((self.dbs[k].group_kind, self.dbs[k].variant(levels[k]).latency_key)
             for k in self.keys), self.table)

    def config(self, levels, coefficients) -> CandidateConfig:
        runtime = self.runtime(levels)
        speedup = math.inf if runtime == 0 else self.table.dense_runtime_ms / runtime
        objective = math.fsum(float(c) * self.p[g][levels[k]]
                              for g, (k, c) in enumerate(zip(self.keys, coefficients)))
        return CandidateConfig(dict(levels), runtime, speedup, objective)

    def solve(self, coefficients, budget: Budget, max_states: int = DP_BUCKETS):
        """Pareto-frontier DP over (runtime, objective); see dp_solve."""
        # each rounded cost is within 0.5 ns of the exact one, so this widened
        # budget admits every truly feasible configuration
        n = len(self.keys)
        budget_ns = math.floor(Fraction(budget.time_ms) * 1_000_000 + Fraction(n, 2))
        bucket = max(1, budget_ns // DP_BUCKETS)
        T = np.zeros(1, dtype=np.int64)
        V = np.zeros(1)
        history = []
        for g in range(n):
            w = float(coefficients[g]) * self.p[g]
            nl = len(w)
            t = (T[:, None] + self.ns[g][None, :]).ravel()
            v = (V[:, None] + w[None, :]).ravel()
            parent = np.repeat(np.arange(len(T)), nl)
            level = np.tile(np.arange(nl), len(T))
            ok = t <= budget_ns
            t, v, parent, level = t[ok], v[ok], parent[ok], level[ok]
            if t.size == 0:
                raise TableError(f"no feasible level for {group_label(self.keys[g])}")
            order = np.lexsort((level, parent, v, t))
            t, v, parent, level = t[order], v[order], parent[order], level[order]
            # keep states strictly better in objective than every faster state
            best_before = np.concatenate([[np.inf], np.minimum.accumulate(v)[:-1]])
            keep = v < best_before
            t, v, parent, level = t[keep], v[keep], parent[keep], level[keep]
            if len(t) > max_states:
                # thin to one state per time bucket (its best objective)
                b = t // bucket
                last = np.r_[b[1:] != b[:-1], True]
                t, v, parent, level = t[last], v[last], parent[last], level[last]
            history.append((parent, level))
            T, V = t, v

        def trace(idx):
            chosen = [0] * n
            for g in range(n - 1, -1, -1):
                parent, level = history[g]
                chosen[g] = int(level[idx])
                idx = int(parent[idx])
            return {k: chosen[g] for g, k in enumerate(self.keys)}

        # best objective first; the exact runtime sum settles the sub-ns band.
        # The zero-time state sits on the frontier, so some state always passes.
        for idx in np.argsort(V, kind="stable"):
            levels = trace(int(idx))
            if self.runtime(levels) <= budget.time_ms:
                return levels
        raise TableError("no configuration fits the runtime budget")


def dp_solve(databases, table: LatencyTable, coefficients: Sequence[float],
             budget: Budget) -> CandidateConfig:
    """Minimize ``sum c_g p_g`` subject to estimated runtime within ``budget``.

    Latencies enter the DP as integer nanoseconds and the frontier is then
    checked against the exact floating-point runtime sum, so a returned
    config is always feasible and a budget equal to the dense runtime keeps
    the dense model. The DP keeps the full Pareto frontier of
    (runtime, objective) states; only if a frontier exceeds 10^4 states is
    it thinned to one state per ``budget / 10^4`` time bucket. Ties go to
    the faster state, then the lower parent state, then the lower level
    index.
    """
    problem = databases if isinstance(databases, _Problem) else _Problem(databases, table)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (len(problem.keys),):
        raise InputError("one sensitivity coefficient per layer-group required")
    levels = problem.solve(coefficients, budget)
    return problem.config(levels, coefficients)


@dataclass
class SearchResult:
    best: CandidateConfig
    coefficients: np.ndarray
    trace: list[float]
    accepted: int
    seed: int
    steps: int


def mutate(c: np.ndarray, rng: np.random.Generator, prob: float) -> np.ndarray:
    """Multiply each coefficient by ``exp(u)``, ``u ~ U(-ln 2, ln 2)``, w.p. ``prob``."""
    flips = rng.random(c.shape) < prob
    u = rng.uniform(-math.log(2.0), math.log(2.0), size=c.shape)
    return np.where(flips, c * np.exp(u), c)


def spdy_search(databases, table: LatencyTable, budget: Budget, evaluator: Evaluator,
                steps: int = DEFAULT_STEPS, mutation_prob: float = DEFAULT_MUTATION_PROB,
                seed: int = 0) -> SearchResult:
    """Random mutation search over sensitivity coefficients.

    Starts from all-ones coefficients; a mutated coefficient vector is kept
    only if its DP solution strictly lowers the evaluator loss.
    """
    problem = _Problem(databases, table)
    rng = np.random.default_rng(seed)
    cache: dict[tuple, float] = {}

    def evaluate(c):
        cfg = dp_solve(problem, table, c, budget)
        assert cfg.runtime_ms <= budget.time_ms, "DP returned an infeasible config"
        key = tuple(cfg.levels[k] for k in problem.keys)
        if key not in cache:
            cache[key] = float(evaluator.evaluate(cfg.levels))
        cfg.loss = cache[key]
        return cfg

    coeffs = np.ones(len(problem.keys))
    best = evaluate(coeffs)
    trace = [best.loss]
    accepted = 0
    for _ in range(steps):
        proposal = mutate(coeffs, rng, mutation_prob)
        cfg = evaluate(proposal)
        if cfg.loss < best.loss:
            coeffs, best = proposal, cfg
            accepted += 1
        trace.append(best.loss)
    return SearchResult(best, coeffs, trace, accepted, seed, steps)


def plan_targets(databases, table: LatencyTable, targets: Sequence[float],
                 evaluator: Evaluator, steps: int = DEFAULT_STEPS,
                 mutation_prob: float = DEFAULT_MUTATION_PROB, seed: int = 0):
    """One search per speedup target, sharing databases and table."""
    targets = [float(t) for t in targets]
    if targets != sorted(targets):
        raise InputError("speedup targets must be ascending")
    results = []
    for target in targets:
        budget = Budget(target, table.dense_runtime_ms)
        res = spdy_search(databases, table, budget, evaluator, steps, mutation_prob, seed)
        if not res.best.speedup >= target:
            raise TableError(f"target {target}x not met (estimated {res.best.speedup:.4f}x)")
        log.info("target %.2fx: estimated %.4fx, loss %.6g", target, res.best.speedup,
                 res.best.loss)
        results.append(res)
    return results


# -- evaluators -------------------------------------------------------------------


class ProxyEvaluator:
    """Sum of the measured relative errors of the chosen variants."""

    def __init__(self, databases):
        self.dbs = _as_mapping(databases)

    def evaluate(self, levels: Mapping[GroupKey, int]) -> float:
        return math.fsum(self.dbs[k].variant(lvl).relative_error for k, lvl in levels.items())


def proxy_evaluator(databases) -> ProxyEvaluator:
    return ProxyEvaluator(databases)


class ChainEvaluator:
    """Mean squared error of the stitched, compacted chain against reference outputs."""

    def __init__(self, model: Model, databases, inputs: np.ndarray,
                 reference: Optional[np.ndarray] = None):
        self.model = model
        self.dbs = _as_mapping(databases)
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.reference = forward(model, self.inputs) if reference is None else \
            np.asarray(reference, dtype=np.float64)

    def evaluate(self, levels: Mapping[GroupKey, int]) -> float:
        out = forward(stitch(self.model, self.dbs, levels), self.inputs)
        return float(np.mean((out - self.reference) ** 2))


def chain_evaluator(model: Model, databases, inputs, reference=None) -> ChainEvaluator:
    return ChainEvaluator(model, databases, inputs, reference)

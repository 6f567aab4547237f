"""
Choosing per-layer sparsity for a speedup target
================================================

A dynamic program picks one level per layer that minimizes the weighted sum
of priors while staying within the runtime budget. A random search over the
weights (sensitivity coefficients) then tunes that choice against an
end-to-end loss.
"""

from zipkit import Budget, ChainEvaluator, ProxyEvaluator, dp_solve, spdy_search
from zipkit.chain import make_calibration, synthetic_chain, synthetic_inputs
from zipkit.latency import bench_table
from zipkit.pipeline import build_databases, compute_hessians

model = synthetic_chain(4, hidden=32, ffn_width=128, n_heads=8, seed=0)
calib = make_calibration(model, synthetic_inputs(32, 1024, seed=1))
dbs = build_databases(model, calib, compute_hessians(model, calib))
table = bench_table(model.manifest, reps=5)

budget = Budget(2.0, table.dense_runtime_ms)
print(f"dense {table.dense_runtime_ms:.4f} ms, budget {budget.time_ms:.4f} ms")

# Uniform coefficients: minimize the plain sum of priors.
cfg = dp_solve(dbs, table, [1.0] * len(dbs), budget)
for key, level in cfg.levels.items():
    v = dbs[key].variant(level)
    print(f"{key[0]:8s} keeps {v.kept_structures:4d}  p = {v.relative_error:.3f}")
print(f"estimated speedup {cfg.speedup:.3f}x")

# The search keeps a coefficient mutation only if the chain's output error
# strictly improves, so the loss trace never goes up.
evaluator = ChainEvaluator(model, dbs, calib.model_input)
res = spdy_search(dbs, table, budget, evaluator, steps=300, seed=0)
print(f"chain MSE: start {res.trace[0]:.5f}, end {res.trace[-1]:.5f}, "
      f"{res.accepted} accepted steps")
print("proxy loss of the result:", ProxyEvaluator(dbs).evaluate(res.best.levels))

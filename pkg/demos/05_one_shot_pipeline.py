"""
One-shot compression end to end
===============================

Calibrate, build databases, search every target, export compacted models and
check that they reproduce the masked computation. Finally, see how held-out
error depends on the number of calibration samples.
"""

import numpy as np

from zipkit.chain import forward, make_calibration, stitch, synthetic_chain, synthetic_inputs
from zipkit.latency import bench_table, model_runtime
from zipkit.pipeline import calibration_sweep, export_model, one_shot

model = synthetic_chain(4, hidden=32, ffn_width=128, n_heads=8, seed=0)
x = synthetic_inputs(32, 2560, seed=1)
calib = make_calibration(model, x[:, :2048])
heldout = make_calibration(model, x[:, 2048:])
table = bench_table(model.manifest, reps=5)

targets = [1.5, 2.0, 3.0]
run = one_shot(model, calib, table, targets, steps=500)
probe = np.random.default_rng(0).standard_normal((32, 64))
for t, res in zip(targets, run.results):
    small = export_model(model, run.databases, res.best.levels, {"target": t})
    masked = forward(stitch(model, run.databases, res.best.levels, shrink=False), probe)
    gap = np.max(np.abs(forward(small, probe) - masked))
    speedup = table.dense_runtime_ms / model_runtime(small.manifest, table)
    print(f"{t:g}x: {small.parameter_count()} of {model.parameter_count()} parameters, "
          f"estimated {speedup:.3f}x, max output gap {gap:.1e}")

# More calibration data gives variants that generalize better.
for n, loss in calibration_sweep(model, calib, heldout, table, target=2.0, steps=200):
    print(f"{n:5d} samples: held-out proxy loss {loss:.4f}")

"""
Structured pruning of one layer
===============================

Remove column blocks from a weight matrix while keeping the layer output
``W @ X`` as close as possible to the original, then check the result against
a plain least-squares refit.
"""

import numpy as np

from zipkit import StructureGroup, hessian_from_inputs, prune_one, run_ziplm, saliency_scores
from zipkit.pruner import measure_relative_error

rng = np.random.default_rng(0)

# A layer with 16 input columns grouped into 8 "heads" of width 2, and 64
# calibration samples.
W = rng.standard_normal((8, 16))
X = rng.standard_normal((16, 64))
heads = StructureGroup("w", 2, [[2 * k, 2 * k + 1] for k in range(8)], kind="attention_heads")

# The Hessian of the squared reconstruction error is 2 X X^T (plus a little
# damping); the pruner only ever needs its inverse.
state = hessian_from_inputs(X, damping=1e-8)
print("damping used:", state.damping)

# Saliency: the error increase caused by removing each head and optimally
# updating the weights of the heads that remain.
scores = saliency_scores(W, state.inverse, heads.structures)
for j, s in enumerate(scores):
    print(f"head {j}: saliency {s:10.4f}")

# Greedy removal, one head at a time, with the inverse Hessian downdated
# after each step.
result = run_ziplm(W, state.inverse, 4, heads)
print("removal order:", result.mask.removed_structures)
print("relative layer error:", measure_relative_error(result.weights, W, X))

# Cross-check: refit the surviving columns by least squares.
keep = np.flatnonzero(~result.mask.cumulative)
fit, *_ = np.linalg.lstsq(X[keep].T, (W @ X).T, rcond=None)
ls = np.zeros_like(W)
ls[:, keep] = fit.T
print("least-squares refit error:", measure_relative_error(ls, W, X))

# Inputs that are linear combinations of other inputs can be removed for
# free: the update moves their weight onto the columns that reproduce them.
X[13] = 0.5 * X[2] - X[7]
state = hessian_from_inputs(X, damping=1e-8)
W2, _ = prune_one(W, state.inverse, [13])
print("error after dropping the redundant column:", measure_relative_error(W2, W, X))

"""
A database of pruned variants
=============================

One pass of greedy removal yields a whole family of pruned layers, one per
level of a width grid. Each variant stores its weights, mask and measured
relative error ``p``, which later serves as the search prior.
"""

import numpy as np

from zipkit import StructureGroup, build_database, hessian_from_inputs
from zipkit.chain import synthetic_inputs
from zipkit.pruner import ffn_grid

# A BERT-base FFN has 3072 intermediate columns; its grid has 44 levels.
grid = ffn_grid(3072)
print(len(grid), "levels:", grid[:6], "...", grid[-4:])

# A smaller FFN-like layer: 256 single-column structures, correlated inputs.
d = 256
X = synthetic_inputs(d, 1024, rank=48, seed=3)
W = np.random.default_rng(4).standard_normal((64, d)) / np.sqrt(d)
group = StructureGroup("fc2", 1, [[c] for c in range(d)], kind="ffn_columns")

db = build_database("ffn", group, W, hessian_from_inputs(X).inverse, X)
print(f"{len(db.variants)} variants for width {d}")
for v in db.variants[::6] + [db.variants[-1]]:
    print(f"kept {v.kept_structures:4d}  p = {v.relative_error:.4f}  "
          f"cumulative saliency = {v.cumulative_saliency:.4g}")

# Dense is exact and the fully dropped layer has p = 1.
assert db.variants[0].relative_error == 0.0
assert abs(db.variants[-1].relative_error - 1.0) < 1e-12

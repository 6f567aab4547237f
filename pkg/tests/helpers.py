import numpy as np

from zipkit.latency import LatencyTable
from zipkit.pruner import LayerDatabase, PruneMask, PrunedVariant


def fake_databases(latencies, errors, dense_runtime=None):
    """LayerDatabases + table from per-group level latencies (ms) and priors.

    Group g uses table kind ``k{g}``; level l is keyed ``n_levels - 1 - l`` so
    the last level has key 0 and therefore costs nothing.
    """
    dbs, entries = [], {}
    for g, (ms, ps) in enumerate(zip(latencies, errors)):
        n = len(ms)
        keys = [n - 1 - lvl for lvl in range(n)]
        kind = f"k{g}"
        entries[kind] = {k: m for k, m in zip(keys, ms) if k != 0}
        variants = [
            PrunedVariant(kind, lvl, keys[lvl], keys[lvl], None, PruneMask(0), float(ps[lvl]), 0.0)
            for lvl in range(n)
        ]
        dbs.append(LayerDatabase(f"g{g}", kind, keys, variants))
    dense = dense_runtime if dense_runtime is not None else sum(ms[0] for ms in latencies)
    return dbs, LatencyTable("toy", entries, dense)


def random_instance(rng, n_groups, n_levels):
    """Random decreasing latencies ending in 0 ms, priors rising from 0 to 1."""
    lat, err = [], []
    for _ in range(n_groups):
        ms = np.sort(rng.uniform(0.1, 10.0, n_levels - 1))[::-1].tolist() + [0.0]
        p = [0.0] + np.sort(rng.uniform(0.0, 1.0, n_levels - 2)).tolist() + [1.0] \
            if n_levels > 1 else [0.0]
        lat.append(ms)
        err.append(p[:n_levels])
    return lat, err


TOY_LATENCIES = [[4.0, 3.0, 1.5, 0.0], [6.0, 4.0, 2.0, 0.0], [3.0, 2.2, 1.1, 0.0]]
TOY_ERRORS = [[0.0, 0.05, 0.3, 1.0], [0.0, 0.1, 0.25, 1.0], [0.0, 0.02, 0.4, 1.0]]

"""Independent reference computations used by the tests.

Nothing here touches the inverse-Hessian machinery: the pruning oracles
solve reduced least-squares problems directly, the search oracle enumerates
every configuration, and the token-loss oracle is a scalar loop.
"""

import itertools
import math

import numpy as np


def reduced_ls_error(W, X, keep_cols):
    """min ||W_hat X - W X||_F^2 over W_hat supported on ``keep_cols``."""
    target = W @ X
    keep = np.asarray(sorted(keep_cols), dtype=int)
    if keep.size == 0:
        return float(np.sum(target ** 2))
    Xk = X[keep, :]
    sol, *_ = np.linalg.lstsq(Xk.T, target.T, rcond=None)
    resid = target - sol.T @ Xk
    return float(np.sum(resid ** 2))


def reduced_ls_weights(W, X, keep_cols):
    keep = np.asarray(sorted(keep_cols), dtype=int)
    out = np.zeros_like(W, dtype=np.float64)
    if keep.size:
        sol, *_ = np.linalg.lstsq(X[keep, :].T, (W @ X).T, rcond=None)
        out[:, keep] = sol.T
    return out


def error_increases(W, X, structures, removed):
    """True error increase for removing each remaining structure next."""
    all_cols = {c for s in structures for c in s}
    gone = {c for j in removed for c in structures[j]}
    base = reduced_ls_error(W, X, all_cols - gone)
    out = {}
    for j, s in enumerate(structures):
        if j in removed:
            continue
        out[j] = reduced_ls_error(W, X, all_cols - gone - set(s)) - base
    return out


def enumerate_best(ms, p, coeffs, budget_ms):
    """Exhaustive search: (objective, levels) minimizing sum c*p within budget."""
    best = None
    for combo in itertools.product(*[range(len(m)) for m in ms]):
        runtime = math.fsum(ms[g][l] for g, l in enumerate(combo))
        if runtime > budget_ms:
            continue
        obj = math.fsum(coeffs[g] * p[g][l] for g, l in enumerate(combo))
        if best is None or obj < best[0]:
            best = (obj, combo)
    return best


def token_loss_loop(student, teacher, mask):
    B, S, H = student.shape
    total, count = 0.0, 0
    for b in range(B):
        for s in range(S):
            if mask[b][s]:
                continue
            sq = 0.0
            for h in range(H):
                d = float(student[b, s, h]) - float(teacher[b, s, h])
                sq += d * d
            total += math.sqrt(sq)
            count += 1
    return total / count

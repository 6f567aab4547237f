"""Layer-wise Gram statistic ``2 X X^T`` and its damped inverse."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

DAMPING_FRACTION = 0.01
MAX_RETRIES = 5


@dataclass
class HessianState:
    dim: int
    gram: np.ndarray = None
    samples_seen: int = 0
    damping: Optional[float] = None
    inverse: Optional[np.ndarray] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.gram is None:
            self.gram = np.zeros((self.dim, self.dim), dtype=np.float64)


def accumulate(state: HessianState, X: np.ndarray) -> HessianState:
    """Add ``2 X X^T`` for a ``dim x b`` batch to the running Gram."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != state.dim:
        raise InputError(
            f"batch of shape {X.shape} does not match Hessian dimension {state.dim}"
        )
    if not np.all(np.isfinite(X)):
        where = f" for layer {state.name!r}" if state.name else ""
        raise InputError(f"non-finite calibration activations{where}")
    state.gram += 2.0 * (X @ X.T)
    state.samples_seen += X.shape[1]
    return state


def default_damping(gram: np.ndarray) -> float:
    return DAMPING_FRACTION * float(np.mean(np.diag(gram)))


def finalize(state: HessianState, damping: Optional[float] = None) -> HessianState:
    """Invert ``gram + damping * I`` through a Cholesky factorization.

    A failed factorization multiplies the damping by 10 and retries, at most
    five times. The damping that finally worked is stored on the state.
    """
    if state.samples_seen < 1:
        raise InputError(f"Hessian {state.name!r} has seen no samples")
    lam = default_damping(state.gram) if damping is None else float(damping)
    if lam < 0:
        raise InputError("damping must be non-negative")
    # symmetrize away accumulation round-off before factorizing
    gram = 0.5 * (state.gram + state.gram.T)
    eye = np.eye(state.dim)
    for attempt in range(MAX_RETRIES + 1):
        try:
            chol = scipy.linalg.cho_factor(gram + lam * eye, lower=True)
            if np.any(np.diag(chol[0]) <= 0):
                raise np.linalg.LinAlgError("non-positive pivot")
            inverse = scipy.linalg.cho_solve(chol, eye)
            break
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            if attempt == MAX_RETRIES:
                raise NumericalError(
                    f"Hessian of layer {state.name!r} not positive definite "
                    f"after {MAX_RETRIES} damping increases (damping {lam:g})"
                )
            lam = lam * 10.0 if lam > 0 else 1e-12 * max(1.0, float(np.abs(gram).max()))
            log.warning("layer %r: factorization failed, retrying with damping %g",
                        state.name, lam)
    state.inverse = 0.5 * (inverse + inverse.T)
    state.damping = lam
    return state


def hessian_from_inputs(X: np.ndarray, damping: Optional[float] = None,
                        batch_size: Optional[int] = None, name: str = "") -> HessianState:
    """Build and finalize a state in one go, optionally in fixed-size batches."""
    X = np.asarray(X, dtype=np.float64)
    state = HessianState(X.shape[0], name=name)
    step = X.shape[1] if not batch_size else batch_size
    for start in range(0, X.shape[1], step):
        accumulate(state, X[:, start:start + step])
    return finalize(state, damping)

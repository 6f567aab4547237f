import numpy as np
import pytest

from zipkit.calib import HessianState, accumulate, finalize, hessian_from_inputs
from zipkit.errors import InputError, NumericalError


def test_identity_batch():
    st = accumulate(HessianState(4), np.eye(4))
    np.testing.assert_array_equal(st.gram, 2 * np.eye(4))
    assert st.samples_seen == 4


def test_additive_over_batches(rng):
    x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 7))
    a = accumulate(accumulate(HessianState(5), x), y)
    b = accumulate(HessianState(5), np.hstack([x, y]))
    np.testing.assert_allclose(a.gram, b.gram, rtol=0, atol=1e-12)
    assert a.samples_seen == b.samples_seen == 10


def test_matches_dense_product(rng):
    X = rng.standard_normal((6, 32))
    expected = np.zeros((6, 6))
    for n in range(32):  # explicit outer-product sum
        expected += 2 * np.outer(X[:, n], X[:, n])
    st = accumulate(HessianState(6), X)
    np.testing.assert_allclose(st.gram, expected, rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(st.gram - st.gram.T)) <= 1e-10 * np.max(np.abs(st.gram))


def test_dimension_mismatch():
    with pytest.raises(InputError):
        accumulate(HessianState(4), np.ones((3, 2)))


@pytest.mark.parametrize("lam, expected", [(0.0, 0.5), (1.0, 1 / 3)])
def test_diagonal_inverse(lam, expected):
    st = finalize(accumulate(HessianState(4), np.eye(4)), lam)
    np.testing.assert_allclose(st.inverse, expected * np.eye(4), rtol=1e-15)
    assert st.damping == lam


def test_rank_deficient_with_small_damping(rng):
    X = rng.standard_normal((6, 40))
    X[4] = X[1]
    st = finalize(accumulate(HessianState(6), X), 1e-8)
    np.linalg.cholesky(st.inverse)
    assert np.all(np.linalg.eigvalsh(st.inverse) > 0)


def test_inverse_accuracy(rng):
    X = rng.standard_normal((64, 256))
    st = hessian_from_inputs(X, damping=1e-3)
    H = st.gram + st.damping * np.eye(64)
    assert np.max(np.abs(H @ st.inverse - np.eye(64))) <= 1e-8
    np.testing.assert_array_equal(st.inverse, st.inverse.T)


def test_default_damping_is_proportional(rng):
    X = rng.standard_normal((8, 20))
    st = hessian_from_inputs(X)
    assert st.damping == pytest.approx(0.01 * np.mean(np.diag(st.gram)))


def test_retry_raises_damping(rng):
    X = rng.standard_normal((5, 2))  # rank 2 of 5
    st = finalize(accumulate(HessianState(5), X), 0.0)
    assert st.damping > 0
    np.linalg.cholesky(st.inverse)


def test_negative_definite_fails_with_layer_name():
    st = HessianState(3, name="blk7")
    st.gram = -1e6 * np.eye(3)
    st.samples_seen = 1
    with pytest.raises(NumericalError, match="blk7"):
        finalize(st, 1e-3)


def test_finalize_idempotent(rng):
    st = hessian_from_inputs(rng.standard_normal((7, 30)), damping=0.1)
    inv = st.inverse.copy()
    finalize(st, st.damping)
    np.testing.assert_array_equal(st.inverse, inv)


def test_requires_samples():
    with pytest.raises(InputError):
        finalize(HessianState(3))

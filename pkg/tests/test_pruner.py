import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import error_increases, reduced_ls_error, reduced_ls_weights
from zipkit.calib import hessian_from_inputs
from zipkit.chain import forward, stitch
from zipkit.errors import InputError, NumericalError
from zipkit.pruner import (
    build_database,
    compact,
    ffn_grid,
    heads_grid,
    measure_relative_error,
    prune_one,
    run_ziplm,
    saliency_scores,
)
from zipkit.store import LinkedProducer, StructureGroup


def columns_group(d, width=1, kind="generic"):
    return StructureGroup("w", width, [list(range(k, k + width)) for k in range(0, d, width)],
                          kind)


def eq2_inverse(X, lam=1e-10):
    """(X X^T + lam I)^-1, the un-doubled Hessian form."""
    return np.linalg.inv(X @ X.T + lam * np.eye(X.shape[0]))


# -- saliency -------------------------------------------------------------------


def test_identity_hessian_is_magnitude(rng):
    W = rng.standard_normal((5, 8))
    cands = [[0, 1], [2, 3], [4, 5], [6, 7]]
    s = saliency_scores(W, np.eye(8), cands)
    np.testing.assert_allclose(s, [np.sum(W[:, c] ** 2) for c in cands], rtol=1e-14)


def test_zero_columns_score_zero(rng):
    W = rng.standard_normal((5, 8))
    W[:, [2, 3]] = 0
    Hinv = hessian_from_inputs(rng.standard_normal((8, 40)), 0.1).inverse
    assert saliency_scores(W, Hinv, [[2, 3]])[0] == 0.0


def test_scores_match_least_squares_oracle(rng):
    W = rng.standard_normal((8, 16))
    X = rng.standard_normal((16, 64))
    structs = [[2 * k, 2 * k + 1] for k in range(8)]
    oracle = error_increases(W, X, structs, removed=())
    s = saliency_scores(W, eq2_inverse(X), structs)
    np.testing.assert_allclose(s, [oracle[j] for j in range(8)], rtol=1e-8)
    # the doubled Gram used by the pipeline doubles every score
    s2 = saliency_scores(W, hessian_from_inputs(X, 1e-10).inverse, structs)
    np.testing.assert_allclose(s2, 2 * s, rtol=1e-8)


def test_singular_block_is_reported():
    Hinv = np.eye(4)
    Hinv[1, 1] = 0.0
    with pytest.raises(NumericalError, match="candidate 1"):
        saliency_scores(np.ones((2, 4)), Hinv, [[0], [1], [2], [3]])


# -- single steps ---------------------------------------------------------------


def test_prune_zero_columns_is_noop(rng):
    W = rng.standard_normal((4, 6))
    W[:, [1, 4]] = 0
    Hinv = hessian_from_inputs(rng.standard_normal((6, 30)), 0.1).inverse
    W2, _ = prune_one(W, Hinv, [1, 4])
    np.testing.assert_allclose(W2, W, atol=1e-15)


def test_scaled_identity_only_zeroes_structure(rng):
    W = rng.standard_normal((4, 6))
    W2, H2 = prune_one(W, 3.0 * np.eye(6), [2, 3])
    expected = W.copy()
    expected[:, [2, 3]] = 0
    np.testing.assert_allclose(W2, expected, atol=1e-15)
    np.testing.assert_allclose(H2[np.ix_([0, 1, 4, 5], [0, 1, 4, 5])], 3 * np.eye(4))


@pytest.mark.parametrize("seed", range(5))
def test_duplicate_feature_is_absorbed(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((10, 64))
    X[7] = X[2]
    W = rng.standard_normal((6, 10))
    Hinv = hessian_from_inputs(X, 1e-8).inverse
    W2, _ = prune_one(W, Hinv, [2])
    assert np.linalg.norm(W2 @ X - W @ X) <= 1e-6 * np.linalg.norm(W @ X)
    np.testing.assert_allclose(W2[:, 7], W[:, 2] + W[:, 7], atol=1e-5)


def test_update_matches_least_squares_weights(rng):
    W = rng.standard_normal((5, 12))
    X = rng.standard_normal((12, 80))
    W2, _ = prune_one(W, eq2_inverse(X, 1e-12), [3, 4])
    keep = [c for c in range(12) if c not in (3, 4)]
    np.testing.assert_allclose(W2[:, keep], reduced_ls_weights(W, X, keep)[:, keep], rtol=1e-7,
                               atol=1e-9)


# -- full runs ------------------------------------------------------------------


def test_k_zero_and_range():
    g = columns_group(4)
    W = np.arange(8.0).reshape(2, 4)
    res = run_ziplm(W, np.eye(4), 0, g)
    np.testing.assert_array_equal(res.weights, W)
    assert res.mask.removed_structures == [] and not res.mask.cumulative.any()
    with pytest.raises(InputError):
        run_ziplm(W, np.eye(4), 5, g)


def test_remove_everything(rng):
    X = rng.standard_normal((6, 40))
    W = rng.standard_normal((3, 6))
    res = run_ziplm(W, hessian_from_inputs(X).inverse, 3, columns_group(6, 2))
    assert np.all(res.weights == 0.0)
    assert measure_relative_error(res.weights, W, X) == 1.0


def test_greedy_steps_are_oracle_optimal(rng):
    for _ in range(5):
        W = rng.standard_normal((6, 12))
        X = rng.standard_normal((12, 50))
        structs = [[2 * k, 2 * k + 1] for k in range(6)]
        g = StructureGroup("w", 2, structs)
        res = run_ziplm(W, eq2_inverse(X, 1e-12), 5, g)
        for step, chosen in enumerate(res.mask.removed_structures):
            inc = error_increases(W, X, structs, res.mask.removed_structures[:step])
            assert chosen == min(inc, key=inc.get)
            assert res.scores[step] == pytest.approx(inc[chosen], rel=1e-6, abs=1e-9)


def test_downdate_matches_reinversion(rng):
    d = 32
    X = rng.standard_normal((d, 100))
    st = hessian_from_inputs(X, damping=0.5)
    H = st.gram + st.damping * np.eye(d)
    W = rng.standard_normal((4, d))
    Hinv = st.inverse
    alive = list(range(d))
    for j in rng.permutation(d)[:20]:
        W, Hinv = prune_one(W, Hinv, [j])
        alive.remove(j)
        ref = np.linalg.inv(H[np.ix_(alive, alive)])
        got = Hinv[np.ix_(alive, alive)]
        assert np.linalg.norm(got - ref) <= 1e-6 * np.linalg.norm(ref)


def test_one_at_a_time_handles_redundant_pair(rng):
    # columns 0 and 1 see identical inputs: each alone looks free to drop
    X = rng.standard_normal((8, 80))
    X[1] = X[0]
    W = rng.standard_normal((4, 8))
    W[:, 0] *= 3.0
    W[:, 1] *= 3.0
    g = columns_group(8)
    Hinv = hessian_from_inputs(X, 1e-8).inverse
    before = saliency_scores(W, Hinv, g.structures)
    tiny = 1e-6 * np.min(before[2:])
    assert before[0] < tiny and before[1] < tiny
    res = run_ziplm(W, Hinv, 2, g)
    first = res.mask.removed_structures[0]
    assert first in (0, 1)
    partner = 1 - first
    # after absorbing its twin, the partner carries both columns' signal
    W1, H1 = prune_one(W, Hinv, [first])
    assert saliency_scores(W1, H1, [[partner]])[0] > 1e3 * before[partner]
    assert partner not in res.mask.removed_structures
    # dropping both twins at once is worse than what greedy chose
    greedy_keep = set(range(8)) - set(res.mask.removed_structures)
    assert reduced_ls_error(W, X, set(range(2, 8))) > reduced_ls_error(W, X, greedy_keep)


def test_scaling_gram_scales_scores(rng):
    X = rng.standard_normal((10, 40))
    W = rng.standard_normal((5, 10))
    g = columns_group(10, 2)
    a = hessian_from_inputs(X, 0.3)
    c = 7.0
    b = hessian_from_inputs(np.sqrt(c) * X, 0.3 * c)
    ra, rb = run_ziplm(W, a.inverse, 4, g), run_ziplm(W, b.inverse, 4, g)
    assert ra.mask.removed_structures == rb.mask.removed_structures
    np.testing.assert_allclose(rb.weights, ra.weights, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(np.array(rb.scores), c * np.array(ra.scores), rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), width=st.sampled_from([1, 2, 3]))
def test_scores_nonnegative_and_cumulative_monotone(seed, width):
    rng = np.random.default_rng(seed)
    d = 6 * width
    X = rng.standard_normal((d, rng.integers(2, 40)))
    W = rng.standard_normal((3, d))
    res = run_ziplm(W, hessian_from_inputs(X).inverse, 6, columns_group(d, width))
    assert min(res.scores) >= -1e-10
    assert np.all(np.diff(np.cumsum(res.scores)) >= -1e-10)


# -- grids and databases ----------------------------------------------------------


def test_ffn_grid_for_bert_base():
    g = ffn_grid(3072)
    assert len(g) == 44
    assert g[:3] == [3072, 2765, 2488] and g[-1] == 0
    assert g == sorted(set(g), reverse=True)


def test_heads_grid():
    assert heads_grid(12) == list(range(12, -1, -1))


def test_database_levels_and_boundaries(rng):
    d = 1024
    X = rng.standard_normal((d, 1200)).astype(np.float32)
    W = rng.standard_normal((8, d))
    g = columns_group(d, 1, "ffn_columns")
    db = build_database("ffn", g, W, hessian_from_inputs(X).inverse, X)
    assert len(db.variants) == 44
    assert db.variants[0].relative_error == 0.0
    assert db.variants[-1].relative_error == 1.0
    assert np.all(db.variants[-1].weights == 0.0)
    cum = [v.cumulative_saliency for v in db.variants]
    assert np.all(np.diff(cum) >= -1e-10)
    for v in db.variants:
        assert np.all(v.weights[:, v.mask.cumulative] == 0.0)
        assert v.latency_key == v.kept_structures
        assert int((~v.mask.cumulative).sum()) == v.kept_structures
    # nested: each level extends the previous prefix
    for a, b in zip(db.variants, db.variants[1:]):
        assert b.mask.removed_structures[:len(a.mask.removed_structures)] == \
            a.mask.removed_structures


def test_heads_database(rng):
    heads, dh = 12, 4
    X = rng.standard_normal((heads * dh, 200))
    W = rng.standard_normal((6, heads * dh))
    g = columns_group(heads * dh, dh, "attention_heads")
    db = build_database("attn", g, W, hessian_from_inputs(X).inverse, X)
    assert len(db.variants) == 13
    assert [v.kept_structures for v in db.variants] == list(range(12, -1, -1))
    assert db.variants[0].relative_error == 0.0 and db.variants[-1].relative_error == 1.0


def test_grid_must_decrease(rng):
    X = rng.standard_normal((4, 10))
    with pytest.raises(InputError):
        build_database("x", columns_group(4), np.ones((2, 4)), np.eye(4), X, grid=[2, 3])


# -- relative error ---------------------------------------------------------------


def test_relative_error_values(rng):
    W, X = rng.standard_normal((3, 5)), rng.standard_normal((5, 9))
    assert measure_relative_error(W, W, X) == 0.0
    assert measure_relative_error(np.zeros_like(W), W, X) == 1.0
    assert measure_relative_error(0.5 * W, W, X) == pytest.approx(0.5, rel=1e-15)
    with pytest.raises(InputError):
        measure_relative_error(W, np.zeros_like(W), X)


# -- compaction ------------------------------------------------------------------


def _heads_layer(rng, heads=12, dh=64, hidden=96):
    d = heads * dh
    g = StructureGroup("o", dh, [list(range(h * dh, (h + 1) * dh)) for h in range(heads)],
                       "attention_heads", LinkedProducer("v", list(range(d))))
    return g, rng.standard_normal((hidden, d)), rng.standard_normal((d, hidden))


def test_compact_nothing_is_identity(rng):
    g, T, P = _heads_layer(rng, 4, 2, 5)
    T2, P2, g2 = compact(T, P, g, [])
    np.testing.assert_array_equal(T2, T)
    np.testing.assert_array_equal(P2, P)
    assert g2 == g


def test_compact_two_heads_shapes(rng):
    g, T, P = _heads_layer(rng)
    T2, P2, g2 = compact(T, P, g, [3, 9])
    assert T2.shape == (96, 768 - 128) and P2.shape == (768 - 128, 96)
    assert g2.n_structures == 10
    g2.validate(T2.shape[1], P2.shape[0])


def test_compact_preserves_outputs(rng):
    hidden, d = 10, 24
    perm = rng.permutation(d).tolist()  # non-trivial row mapping
    g = StructureGroup("t", 3, [list(range(k, k + 3)) for k in range(0, d, 3)],
                       "attention_heads", LinkedProducer("p", perm))
    T, P = rng.standard_normal((hidden, d)), rng.standard_normal((d, hidden))
    removed = [1, 4, 6]
    Tm = T.copy()
    for j in removed:
        Tm[:, g.structures[j]] = 0.0
    x = rng.standard_normal((hidden, 64))

    def block(T_, P_, row_for_col):
        return T_ @ np.maximum(P_[row_for_col] @ x, 0)

    ref = block(Tm, P, perm)
    T2, P2, g2 = compact(Tm, P, g, removed)
    got = block(T2, P2, g2.linked_producer.rows)
    assert np.max(np.abs(got - ref)) <= 1e-5


def test_compact_needs_producer(rng):
    g = StructureGroup("t", 1, [[0], [1]], "ffn_columns")
    with pytest.raises(InputError, match="linked producer"):
        compact(np.ones((2, 2)), None, g, [0])


def test_stitched_chain_matches_masked(small_chain):
    from zipkit.pipeline import build_databases, compute_hessians

    model, calib = small_chain
    dbs = build_databases(model, calib, compute_hessians(model, calib))
    rng = np.random.default_rng(0)
    levels = {k: int(rng.integers(1, len(db.variants))) for k, db in dbs.items()}
    x = rng.standard_normal((model.manifest.hidden_dim, 64))
    masked = forward(stitch(model, dbs, levels, shrink=False), x)
    compacted_model = stitch(model, dbs, levels)
    assert compacted_model.parameter_count() < model.parameter_count()
    assert np.max(np.abs(forward(compacted_model, x) - masked)) <= 1e-5

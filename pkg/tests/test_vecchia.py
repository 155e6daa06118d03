import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from sparsemvn.errors import DimensionMismatch, EmptyInput, InvalidParameter, NotPositiveDefinite
from sparsemvn.simulate import exponential_covariance
from sparsemvn.vecchia import (ConditioningPlan, build_plan, build_surrogate, coordinate_order,
                               full_plan, kl_divergence, moralize, plan_from_sets)


def _knn_bruteforce(x, k):
    out = []
    for i in range(x.shape[0]):
        d = np.sum((x[:i] - x[i]) ** 2, axis=1)
        idx = np.lexsort((np.arange(i), d))[:k]
        out.append(np.sort(idx))
    return out


def _problem(seed, n):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, 2, (n, 2))
    return locs, rng.standard_normal(n), exponential_covariance(locs, 1.0)


def test_coordinate_order_ties_break_on_y_then_index():
    locs = np.array([[1.0, 2.0], [0.0, 5.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
    assert coordinate_order(locs).tolist() == [4, 1, 2, 3, 0]


def test_knn_matches_bruteforce(rng):
    locs = rng.uniform(0, 1, (60, 2))
    plan = build_plan(locs, 4)
    ref = _knn_bruteforce(locs[plan.order], 4)
    for got, want in zip(plan.sets(), ref):
        assert got.tolist() == want.tolist()


def test_plan_validation():
    with pytest.raises(EmptyInput):
        build_plan(np.zeros((0, 2)), 3)
    with pytest.raises(InvalidParameter):
        build_plan(np.zeros((3, 2)) + np.arange(3)[:, None], -1)
    with pytest.raises(InvalidParameter):
        build_plan(np.arange(6.0).reshape(3, 2), 1, ordering=[0, 0, 1])
    with pytest.raises(InvalidParameter):
        ConditioningPlan(np.arange(3), np.array([[-1], [1], [0]]), 1)


def test_duplicate_locations_warn():
    with pytest.warns(UserWarning, match="duplicate"):
        build_plan(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), 1)


def test_k_zero_is_independent(rng):
    locs, m, S = _problem(1, 30)
    sur = build_surrogate(m, S, build_plan(locs, 0))
    Q = sur.precision().toarray()
    np.testing.assert_allclose(Q, np.diag(1 / np.diag(S)), rtol=1e-12)


def test_full_plan_is_exact_and_kl_zero():
    locs, m, S = _problem(2, 25)
    for plan in (full_plan(25), build_plan(locs, 24)):
        sur = build_surrogate(m, S, plan)
        np.testing.assert_allclose(sur.precision().toarray(), np.linalg.inv(S), rtol=1e-8,
                                   atol=1e-8)
        assert abs(kl_divergence(m, S, sur)) < 1e-9


def test_kl_against_dense_formula():
    locs, m, S = _problem(3, 40)
    sur = build_surrogate(m + 0.1, S, build_plan(locs, 2))
    Q = sur.precision().toarray()
    d = m - sur.mean
    dense = 0.5 * (np.trace(Q @ S) - 40 - np.linalg.slogdet(Q)[1] - np.linalg.slogdet(S)[1]
                   + d @ Q @ d)
    assert kl_divergence(m, S, sur) == pytest.approx(dense, rel=1e-9)


def test_moral_graph_is_precision_pattern():
    locs, m, S = _problem(4, 50)
    plan = build_plan(locs, 3)
    Q = build_surrogate(m, S, plan).precision(ordered=True).toarray()
    adj = moralize(plan).toarray()
    off = ~np.eye(50, dtype=bool)
    assert np.array_equal(adj[off], (np.abs(Q) > 0)[off])


def test_sample_covariance(rng):
    locs, m, S = _problem(5, 4)
    sur = build_surrogate(m, S, build_plan(locs, 1))
    x = np.stack([sur.sample(rng) for _ in range(40000)])
    np.testing.assert_allclose(np.cov(x.T), np.linalg.inv(sur.precision().toarray()), atol=0.03)
    np.testing.assert_allclose(x.mean(0), m, atol=0.03)


def test_singular_covariance_is_reported():
    S = np.ones((3, 3))
    with pytest.raises(NotPositiveDefinite):
        build_surrogate(np.zeros(3), S, full_plan(3))
    with pytest.raises(DimensionMismatch):
        build_surrogate(np.zeros(2), S, full_plan(3))


def test_plan_from_sets_and_contains():
    big = plan_from_sets([[], [0], [0, 1], [1, 2]])
    small = plan_from_sets([[], [0], [1], [2]])
    assert big.contains(small) and not small.contains(big)


@given(seed=st.integers(0, 10_000), n=st.integers(5, 30), k=st.integers(0, 4))
def test_kl_decreases_with_nested_sets(seed, n, k):
    locs, m, S = _problem(seed, n)
    S = S + 1e-3 * np.eye(n)
    small, large = build_plan(locs, k), build_plan(locs, k + 1)
    assert large.contains(small)
    kl_s = kl_divergence(m, S, build_surrogate(m, S, small))
    kl_l = kl_divergence(m, S, build_surrogate(m, S, large))
    assert kl_l <= kl_s + 1e-9 * max(1.0, kl_s)
    assert kl_l >= 0


@given(seed=st.integers(0, 10_000), n=st.integers(2, 25), k=st.integers(1, 5))
def test_surrogate_preserves_marginal_variances_of_conditionals(seed, n, k):
    # Q = U U^T with positive diagonal, and Q is symmetric positive definite
    locs, m, S = _problem(seed, n)
    sur = build_surrogate(m, S, build_plan(locs, k))
    Q = sur.precision().toarray()
    assert np.allclose(Q, Q.T)
    assert np.all(np.linalg.eigvalsh(Q) > 0)
    # the first site in the ordering keeps its marginal variance as conditional variance
    first = sur.plan.order[0]
    assert sur.factor.diagonal[0] == pytest.approx(S[first, first] ** -0.5)

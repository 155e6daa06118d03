import numpy as np
import pytest

from sparsemvn.chains import Schedule
from sparsemvn.errors import DimensionMismatch, InsufficientSamples, InvalidParameter
from sparsemvn.exposure import (DpcPriors, DpcState, PredictiveSummary, SpatioTemporalPriors,
                                bspline_basis, first_stage_params, gibbs_first_stage,
                                gibbs_first_stage_spatiotemporal, kernel_matrix, default_grid,
                                predict_at, predict_spatiotemporal, summarize)
from sparsemvn.rng import make_rng


def test_default_grid_layout():
    g = default_grid()
    assert g.shape == (25, 2)
    assert np.allclose(g[:5, 0], 0.2) and np.allclose(g[:5, 1], [0.2, 0.6, 1.0, 1.4, 1.8])


def test_kernel_values():
    K = kernel_matrix([[0.0, 0.0]], [[0.0, 0.0], [0.4, 0.0]], 0.4)
    c = 1 / (2 * np.pi * 0.16)
    np.testing.assert_allclose(K, [[c, c * np.exp(-0.5)]])
    with pytest.raises(InvalidParameter):
        kernel_matrix([[0, 0]], [[0, 0]], 0.0)
    assert kernel_matrix(np.zeros((0, 2)), default_grid(), 0.4).shape == (0, 25)


def test_full_conditional_matches_covariance_form(rng):
    K = kernel_matrix(rng.uniform(0, 2, (6, 2)), default_grid()[:4], 0.4)
    W = rng.standard_normal(6)
    st = DpcState(0.3, np.zeros(4), 0.7, 0.2)
    pri = DpcPriors(m_mu=1.0, s2_mu=4.0)
    Kt = np.column_stack([np.ones(6), K])
    Q, b = first_stage_params(st, Kt.T @ Kt, Kt.T @ W, pri)
    # covariance form: theta ~ N(m0, V0), W | theta ~ N(Kt theta, s2w I)
    m0 = np.array([1.0, 0, 0, 0, 0])
    V0 = np.diag([4.0] + [0.7] * 4)
    C = Kt @ V0 @ Kt.T + 0.2 * np.eye(6)
    gain = V0 @ Kt.T @ np.linalg.inv(C)
    mean = m0 + gain @ (W - Kt @ m0)
    cov = V0 - gain @ Kt @ V0
    np.testing.assert_allclose(np.linalg.solve(Q, b), mean, rtol=1e-10)
    np.testing.assert_allclose(np.linalg.inv(Q), cov, rtol=1e-9, atol=1e-12)


def test_priors_resolve_and_validate():
    assert DpcPriors().resolve(np.array([1.0, 3.0])).m_mu == 2.0
    with pytest.raises(InvalidParameter):
        DpcPriors().resolve(np.array([]))
    with pytest.raises(InvalidParameter):
        DpcPriors(a_G=0.0)


def test_first_stage_recovers_simulated_field():
    rng = np.random.default_rng(3)
    grid = default_grid()
    sites = rng.uniform(0, 2, (80, 2))
    K = kernel_matrix(sites, grid, 0.4)
    G = rng.normal(0, 1.0, 25)
    W = 3.0 + K @ G + rng.normal(0, 0.1, 80)
    draws = gibbs_first_stage(W, K, DpcPriors(), Schedule(1000, 1000, 2), make_rng(3))
    assert len(draws) == 1000
    assert abs(draws.mu.mean() - 3.0) < 4 * draws.mu.std()
    assert 0.005 < np.median(draws.sigma2_W) < 0.03
    new = rng.uniform(0.3, 1.7, (10, 2))
    K_new = kernel_matrix(new, grid, 0.4)
    pred = summarize(predict_at(K_new, draws))
    truth = 3.0 + K_new @ G
    z = (pred.mean - truth) / pred.sd
    assert np.mean(np.abs(z) < 3) >= 0.8


def test_same_seed_same_chain(rng):
    K = kernel_matrix(rng.uniform(0, 2, (5, 2)), default_grid(), 0.4)
    W = rng.standard_normal(5)
    a = gibbs_first_stage(W, K, DpcPriors(), Schedule(10, 20, 1), make_rng(1))
    b = gibbs_first_stage(W, K, DpcPriors(), Schedule(10, 20, 1), make_rng(1))
    assert np.array_equal(a.G, b.G) and np.array_equal(a.sigma2_W, b.sigma2_W)


def test_summarize_and_roundtrip(tmp_path, rng):
    X = rng.standard_normal((500, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0, 0, 2.0]])
    s = summarize(X)
    np.testing.assert_allclose(s.cov, np.cov(X.T), rtol=1e-12)
    s.save(tmp_path / "s.npz")
    t = PredictiveSummary.load(tmp_path / "s.npz")
    assert np.array_equal(t.mean, s.mean) and np.array_equal(t.cov, s.cov) and t.n_draws == 500
    with pytest.raises(InsufficientSamples):
        summarize(X[:1])


def test_predict_validation(rng):
    K = kernel_matrix(rng.uniform(0, 2, (5, 2)), default_grid(), 0.4)
    draws = gibbs_first_stage(rng.standard_normal(5), K, DpcPriors(), Schedule(0, 3, 1),
                              make_rng(0))
    with pytest.raises(DimensionMismatch):
        predict_at(K[:, :3], draws)


def test_bspline_basis_partition_of_unity():
    B = bspline_basis(np.arange(1, 366), 365, df=14)
    assert B.shape == (365, 14)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(B >= 0)
    assert bspline_basis(np.arange(1, 4), 3, df=1).shape == (3, 1)


def test_spatiotemporal_recovers_intercept_trend():
    rng = np.random.default_rng(4)
    T, L = 20, 4
    grid = default_grid()[[0, 6, 18, 24]]
    sites = rng.uniform(0, 2, (15, 2))
    K = kernel_matrix(sites, grid, 0.6)
    mu_t = 2.0 + np.sin(np.arange(1, T + 1) / 3.0)
    site, t, w = [], [], []
    for tt in range(1, T + 1):
        G = rng.normal(0, 0.3, L)
        for h in range(15):
            if rng.uniform() < 0.8:       # some site-times missing
                site.append(h)
                t.append(tt)
                w.append(mu_t[tt - 1] + K[h] @ G + rng.normal(0, 0.05))
    draws = gibbs_first_stage_spatiotemporal(site, t, w, K, T, SpatioTemporalPriors(),
                                             Schedule(300, 300, 1), make_rng(4), df=6)
    est = draws.intercept().mean(axis=0)
    assert np.max(np.abs(est - mu_t)) < 0.35
    pred = predict_spatiotemporal(kernel_matrix(sites[:2], grid, 0.6), draws, times=[1, 5])
    assert pred.shape == (300, 2, 2)
    with pytest.raises(InvalidParameter):
        gibbs_first_stage_spatiotemporal([0], [T + 1], [1.0], K, T, SpatioTemporalPriors(),
                                         Schedule(0, 2, 1), make_rng(0))

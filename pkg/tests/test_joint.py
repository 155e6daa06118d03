import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsemvn.chains import Schedule
from sparsemvn.errors import DegenerateBetaX, DimensionMismatch, InvalidParameter
from sparsemvn.exposure import (DpcPriors, DpcState, first_stage_params, gibbs_first_stage,
                                kernel_matrix, default_grid)
from sparsemvn.joint import (JointState, gibbs_joint_linear, gibbs_joint_logistic,
                             joint_step1_params, stacked_kernel)
from sparsemvn.rng import make_rng

PRIORS = DpcPriors(m_mu=3.0)


def _data(seed, n_w=8, n_y=12, L=25):
    rng = np.random.default_rng(seed)
    grid = default_grid()[:L]
    K = kernel_matrix(rng.uniform(0, 2, (n_w, 2)), grid, 0.4)
    Ks = kernel_matrix(rng.uniform(0, 2, (n_y, 2)), grid, 0.4)
    W = 3 + K @ rng.normal(0, 0.5, L) + rng.normal(0, 0.1, n_w)
    Y = rng.standard_normal(n_y)
    Z = rng.uniform(size=n_y)
    st = JointState(DpcState(2.9, rng.normal(0, 0.3, L), 0.4, 0.02),
                    np.array([0.2, 1.5, -0.7]), sigma2_Y=0.6,
                    omega=rng.uniform(0.05, 0.3, n_y))
    return K, Ks, W, Y, Z, st


def test_stacked_kernel():
    K, Ks = np.ones((2, 3)), np.zeros((4, 3))
    out = stacked_kernel(K, Ks)
    assert out.shape == (6, 4) and np.all(out[:, 0] == 1)
    with pytest.raises(DimensionMismatch):
        stacked_kernel(K, np.zeros((4, 2)))


@pytest.mark.parametrize("outcome", ["continuous", "binary"])
def test_information_and_covariance_forms_agree(outcome):
    K, Ks, W, Y, Z, st = _data(1)
    if outcome == "binary":
        Y = (Y > 0).astype(float)
    Qi, bi = joint_step1_params(st, W, K, Ks, Y, Z, PRIORS, outcome=outcome)
    Qc, bc = joint_step1_params(st, W, K, Ks, Y, Z, PRIORS, outcome=outcome, form="covariance")
    np.testing.assert_allclose(Qi, Qc, rtol=1e-12)
    np.testing.assert_allclose(bi, bc, rtol=1e-12)


def test_covariance_form_refuses_zero_beta_x():
    K, Ks, W, Y, Z, st = _data(2)
    st.beta[1] = 0.0
    with pytest.raises(DegenerateBetaX):
        joint_step1_params(st, W, K, Ks, Y, Z, PRIORS, form="covariance")
    joint_step1_params(st, W, K, Ks, Y, Z, PRIORS)  # information form is fine
    with pytest.raises(InvalidParameter):
        joint_step1_params(st, W, K, Ks, Y, Z, PRIORS, form="other")


def test_zero_beta_x_gives_first_stage_conditional():
    K, Ks, W, Y, Z, st = _data(3)
    st.beta[1] = 0.0
    Q, b = joint_step1_params(st, W, K, Ks, Y, Z, PRIORS)
    Kt = np.column_stack([np.ones(W.size), K])
    Q0, b0 = first_stage_params(st.exposure, Kt.T @ Kt, Kt.T @ W, PRIORS)
    np.testing.assert_array_equal(Q, Q0)
    np.testing.assert_array_equal(b, b0)


def test_step1_against_joint_gaussian_conditioning():
    # (mu, G) prior and both data blocks as one Gaussian vector; condition by Schur complement.
    K, Ks, W, Y, Z, st = _data(4, L=6)
    ex, bx = st.exposure, st.beta[1]
    m0 = np.concatenate([[PRIORS.m_mu], np.zeros(6)])
    V0 = np.diag(np.concatenate([[PRIORS.s2_mu], np.full(6, ex.sigma2_G)]))
    H = np.vstack([np.column_stack([np.ones(W.size), K]),
                   bx * np.column_stack([np.ones(Y.size), Ks])])
    Rn = np.diag(np.concatenate([np.full(W.size, ex.sigma2_W), np.full(Y.size, st.sigma2_Y)]))
    obs = np.concatenate([W, Y - st.beta[0] - Z * st.beta[2]])
    C = H @ V0 @ H.T + Rn
    gain = np.linalg.solve(C, H @ V0).T
    mean = m0 + gain @ (obs - H @ m0)
    cov = V0 - gain @ H @ V0
    Q, b = joint_step1_params(st, W, K, Ks, Y, Z, PRIORS)
    np.testing.assert_allclose(np.linalg.solve(Q, b), mean, rtol=1e-8)
    np.testing.assert_allclose(np.linalg.inv(Q), cov, rtol=1e-7, atol=1e-12)


def test_augmentation_identity():
    # binary with omega = c everywhere equals linear with sigma2 = 1/c on (y - 1/2)/c
    K, Ks, W, Y, Z, st = _data(5)
    yb = (Y > 0).astype(float)
    c = 0.17
    st.omega = np.full(Y.size, c)
    Qb, bb = joint_step1_params(st, W, K, Ks, yb, Z, PRIORS, outcome="binary")
    st.sigma2_Y = 1 / c
    Ql, bl = joint_step1_params(st, W, K, Ks, (yb - 0.5) / c, Z, PRIORS)
    np.testing.assert_allclose(Qb, Ql, rtol=1e-12)
    np.testing.assert_allclose(bb, bl, rtol=1e-12)


@pytest.mark.parametrize("sampler", [gibbs_joint_linear, gibbs_joint_logistic])
def test_no_health_rows_reproduces_first_stage(sampler):
    K, Ks, W, Y, Z, st = _data(6)
    sched = Schedule(20, 30, 2)
    ref = gibbs_first_stage(W, K, DpcPriors(), sched, make_rng(9))
    out = sampler(W, K, Ks[:0], Y[:0], None, DpcPriors(), schedule=sched, rng=make_rng(9))
    d = out.extra["exposure_draws"]
    assert np.array_equal(d.mu, ref.mu) and np.array_equal(d.G, ref.G)
    assert np.array_equal(d.sigma2_G, ref.sigma2_G) and np.array_equal(d.sigma2_W, ref.sigma2_W)


def test_joint_linear_recovers_slope():
    rng = np.random.default_rng(7)
    grid = default_grid()
    K = kernel_matrix(rng.uniform(0, 2, (30, 2)), grid, 0.4)
    Ks = kernel_matrix(rng.uniform(0, 2, (300, 2)), grid, 0.4)
    G = rng.normal(0, 1, 25)
    W = 3 + K @ G + rng.normal(0, 0.1, 30)
    Z = rng.uniform(size=300)
    Y = 1.0 * (3 + Ks @ G) + 2 * Z + rng.normal(0, 0.8, 300)
    out = gibbs_joint_linear(W, K, Ks, Y, Z, schedule=Schedule(1000, 500, 2), rng=make_rng(7),
                             store_x=True)
    s = out.summary()
    assert s["beta_x"]["lower"] < 1.0 < s["beta_x"]["upper"]
    assert out.prior == "fully-bayes" and out.x.shape == (500, 300)
    assert 0.3 < np.median(out.sigma2) < 1.2


def test_joint_logistic_runs_and_validates():
    K, Ks, W, Y, Z, st = _data(8, n_y=40)
    yb = (Y > 0).astype(float)
    out = gibbs_joint_logistic(W, K, Ks, yb, Z, schedule=Schedule(10, 20, 1), seed=3)
    again = gibbs_joint_logistic(W, K, Ks, yb, Z, schedule=Schedule(10, 20, 1), seed=3)
    assert np.array_equal(out.beta, again.beta)
    assert out.sigma2 is None and out.extra["outcome"] == "binary"
    with pytest.raises(InvalidParameter):
        gibbs_joint_logistic(W, K, Ks, Y, Z, schedule=Schedule(0, 2, 1), seed=3)


@given(bx=st.floats(-4, 4).filter(lambda v: abs(v) > 1e-3), s2=st.floats(0.05, 5),
       seed=st.integers(0, 500))
def test_health_data_only_adds_information(bx, s2, seed):
    # Exchange of information: the health block adds a PSD term, so conditional
    # variances of (mu, G) can only shrink relative to the first stage.
    K, Ks, W, Y, Z, state = _data(seed, L=5)
    state.beta[1], state.sigma2_Y = bx, s2
    Q, _ = joint_step1_params(state, W, K, Ks, Y, Z, PRIORS)
    Kt = np.column_stack([np.ones(W.size), K])
    Q0, _ = first_stage_params(state.exposure, Kt.T @ Kt, Kt.T @ W, PRIORS)
    assert np.linalg.eigvalsh(Q - Q0).min() > -1e-9 * np.abs(Q).max()
    assert np.all(np.diag(np.linalg.inv(Q)) <= np.diag(np.linalg.inv(Q0)) * (1 + 1e-9))

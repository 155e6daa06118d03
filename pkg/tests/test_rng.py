import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from scipy import stats

from sparsemvn.errors import InvalidParameter
from sparsemvn.rng import (RngStream, draw_inverse_gamma, draw_mvn_dense, draw_mvn_precision_dense,
                           draw_mvn_sparse_precision, draw_polya_gamma, make_rng,
                           polya_gamma_mean, polya_gamma_var)


def _pg_series_moments(z, terms=20000):
    # PG(1, z) = sum_k g_k / (2 pi^2 ((k - 1/2)^2 + z^2 / (4 pi^2))), g_k ~ Exp(1)
    k = np.arange(1, terms + 1)
    c = 2 * np.pi ** 2 * ((k - 0.5) ** 2 + z ** 2 / (4 * np.pi ** 2))
    return np.sum(1 / c), np.sum(1 / c ** 2)


def test_same_stream_same_draws():
    a = RngStream(3, (1, 2)).generator().standard_normal(5)
    b = RngStream(3, (1, 2)).generator().standard_normal(5)
    c = RngStream(3, (1, 3)).generator().standard_normal(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert RngStream(3, (1,)).child(2) == RngStream(3, (1, 2))
    assert np.array_equal(make_rng(3, 1, 2).standard_normal(5), a)


@pytest.mark.parametrize("z", [0.0, 0.3, 1.0, 4.0, 12.0])
def test_pg_closed_forms_match_series(z):
    m, v = _pg_series_moments(z)
    assert polya_gamma_mean(z) == pytest.approx(m, rel=1e-4)
    assert polya_gamma_var(z) == pytest.approx(v, rel=1e-4)


@pytest.mark.parametrize("z", [0.0, 0.5, 3.0, -3.0])
def test_pg_distribution_against_reference_sampler(z):
    polyagamma = pytest.importorskip("polyagamma")
    ours = draw_polya_gamma(make_rng(1), np.full(20000, z))
    ref = polyagamma.random_polyagamma(1, z, size=20000, random_state=np.random.default_rng(2))
    assert stats.ks_2samp(ours, ref).pvalue > 0.001


def test_pg_is_symmetric_in_tilt_and_positive():
    a = draw_polya_gamma(make_rng(4), np.full(1000, 2.5))
    b = draw_polya_gamma(make_rng(4), np.full(1000, -2.5))
    assert np.array_equal(a, b) and np.all(a > 0)
    assert isinstance(draw_polya_gamma(make_rng(0), 1.0), float)
    with pytest.raises(InvalidParameter):
        draw_polya_gamma(make_rng(0), np.array([np.nan]))


def test_inverse_gamma_parameterization():
    x = draw_inverse_gamma(make_rng(5), 5.0, 8.0, size=200000)
    assert x.mean() == pytest.approx(8.0 / 4.0, rel=0.01)
    assert stats.kstest(x[:5000], stats.invgamma(5.0, scale=8.0).cdf).pvalue > 0.001
    with pytest.raises(InvalidParameter):
        draw_inverse_gamma(make_rng(5), 0.0, 1.0)


def test_mvn_samplers_agree_in_distribution(rng):
    P = np.array([[2.0, -0.8, 0.0], [-0.8, 2.0, -0.8], [0.0, -0.8, 2.0]])
    b = np.array([1.0, 0.0, -1.0])
    mean, cov = np.linalg.solve(P, b), np.linalg.inv(P)
    g = make_rng(6)
    xd = np.stack([draw_mvn_precision_dense(g, b, P) for _ in range(20000)])
    xs = np.stack([draw_mvn_sparse_precision(g, b, sp.csc_matrix(P)) for _ in range(20000)])
    xc = np.stack([draw_mvn_dense(g, mean, cov) for _ in range(20000)])
    for x in (xd, xs, xc):
        np.testing.assert_allclose(x.mean(0), mean, atol=0.03)
        np.testing.assert_allclose(np.cov(x.T), cov, atol=0.03)


@given(z=st.floats(-30, 30))
def test_pg_mean_formula_is_even_and_bounded(z):
    m = polya_gamma_mean(z)
    assert 0 < m <= 0.25
    assert m == pytest.approx(polya_gamma_mean(-z))

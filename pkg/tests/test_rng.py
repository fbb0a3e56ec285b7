import numpy as np
import pytest
from scipy import stats

from oracles import chi2_against_density, inverse_gaussian_pdf, laplace_cdf
from privexp import rng as R


def test_same_seed_same_sequence():
    a = R.make_rng(123, 4, 5)
    b = R.make_rng(123, 4, 5)
    assert np.array_equal(a.random(1000), b.random(1000))
    assert np.array_equal(R.laplace(0.0, 1.0, a, size=10), R.laplace(0.0, 1.0, b, size=10))
    assert not np.array_equal(R.make_rng(123, 4).random(10), R.make_rng(123, 5).random(10))
    assert not np.array_equal(R.make_rng(123).random(10), R.make_rng(124).random(10))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        R.make_rng(-1)


def test_substreams_uncorrelated():
    draws = [R.make_rng(99, i).standard_normal(10**5) for i in range(4)]
    corr = np.corrcoef(draws)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 0.01)


def test_laplace_moments():
    g = R.make_rng(1)
    x = R.laplace(0.0, 1.0, g, size=10**6)
    assert abs(x.var() - 2.0) < 0.02
    y = R.laplace(5.0, 1.0, g, size=10**6)
    assert abs(np.median(y) - 5.0) < 0.01


def test_laplace_ks_against_closed_form_cdf():
    x = R.laplace(1.5, 0.7, R.make_rng(2), size=10**5)
    assert stats.kstest(x, lambda t: laplace_cdf(t, 1.5, 0.7)).pvalue > 0.01


def test_laplace_vector_location_is_per_coordinate():
    y = R.laplace(np.array([0.0, 1000.0, -1000.0]), 1e-9, R.make_rng(3))
    np.testing.assert_allclose(y, [0.0, 1000.0, -1000.0], atol=1e-6)


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_laplace_rejects_nonpositive_scale(scale):
    with pytest.raises(ValueError):
        R.laplace(0.0, scale, R.make_rng(0))


def test_inverse_gaussian_moments():
    x = R.inverse_gaussian(2.0, 8.0, R.make_rng(4), size=10**6)
    assert np.all(x > 0)
    assert abs(x.mean() - 2.0) < 0.01
    assert abs(x.var() - 1.0) < 0.02


@pytest.mark.parametrize("mean,shape", [(2.0, 8.0), (1.0, 0.3), (0.05, 5.0)])
def test_inverse_gaussian_histogram_against_density(mean, shape):
    x = R.inverse_gaussian(mean, shape, R.make_rng(5), size=2 * 10**5)
    # fixed bins on the central 99.8% of the law; bin probabilities come from the density
    edges = stats.invgauss(mu=mean / shape, scale=shape).ppf(np.linspace(0.001, 0.999, 41))
    stat, dof = chi2_against_density(x, lambda t: inverse_gaussian_pdf(t, mean, shape), edges)
    assert stats.chi2.sf(stat, dof) > 0.01


def test_inverse_gaussian_matches_scipy_cdf():
    # scipy's invgauss(mu=m/v, scale=v) is IG(mean m, shape v)
    m, v = 3.0, 2.0
    x = R.inverse_gaussian(m, v, R.make_rng(6), size=10**5)
    assert stats.kstest(x, stats.invgauss(mu=m / v, scale=v).cdf).pvalue > 0.01


def test_inverse_gaussian_scalar_matches_vector_law():
    g = R.make_rng(7)
    x = np.array([R.inverse_gaussian_scalar(2.0, 8.0, g) for _ in range(20000)])
    assert stats.kstest(x, stats.invgauss(mu=0.25, scale=8.0).cdf).pvalue > 0.01


def test_inverse_gaussian_extreme_ratio_stays_positive_and_finite():
    # mean/shape ~ 1e12, as in the noise-variance update with tiny residuals
    x = R.inverse_gaussian(1e6, 1e-6, R.make_rng(8), size=10**4)
    assert np.all(np.isfinite(x)) and np.all(x > 0)


@pytest.mark.parametrize("mean,shape", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_inverse_gaussian_rejects_bad_parameters(mean, shape):
    with pytest.raises(ValueError):
        R.inverse_gaussian(mean, shape, R.make_rng(0))
    with pytest.raises(ValueError):
        R.inverse_gaussian_scalar(mean, shape, R.make_rng(0))


def test_mvnormal_zero_covariance_returns_mean():
    m = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(R.mvnormal(m, np.zeros((3, 3)), R.make_rng(0)), m)
    assert np.array_equal(R.mvnormal([4.0], [[0.0]], R.make_rng(0)), [4.0])


def test_mvnormal_one_dimensional_variance():
    g = R.make_rng(9)
    x = np.array([R.mvnormal([1.0], [[2.5]], g)[0] for _ in range(10**6 // 4)])
    # 2.5e5 draws keep the test fast; the 1% band is still over 8 standard errors wide
    assert abs(x.var() / 2.5 - 1.0) < 0.01


def test_mvnormal_correlation():
    g = R.make_rng(10)
    cov = np.array([[1.0, 0.8 * 2.0], [0.8 * 2.0, 4.0]])
    x = np.array([R.mvnormal([0.0, 0.0], cov, g) for _ in range(10**5)])
    assert abs(np.corrcoef(x.T)[0, 1] - 0.8) < 0.01


def test_mvnormal_ridge_rescues_singular_psd():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = R.mvnormal([0.0, 0.0], cov, R.make_rng(11))
    assert abs(x[0] - x[1]) < 1e-3


def test_mvnormal_indefinite_raises():
    with pytest.raises(np.linalg.LinAlgError):
        R.mvnormal([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], R.make_rng(0))
    with pytest.raises(np.linalg.LinAlgError):
        R.mvnormal([0.0], [[-1.0]], R.make_rng(0))
    with pytest.raises(ValueError):
        R.mvnormal([0.0, 0.0], np.eye(3), R.make_rng(0))


def test_gamma_with_unit_shape_is_exponential():
    g = R.make_rng(12)
    x = R.gamma_shape_rate(1.0, 2.5, g, size=10**5)
    y = R.exponential_rate(2.5, g, size=10**5)
    assert stats.ks_2samp(x, y).pvalue > 0.01
    assert stats.kstest(x, stats.expon(scale=0.4).cdf).pvalue > 0.01


def test_gamma_small_shape():
    x = R.gamma_shape_rate(0.3, 2.0, R.make_rng(13), size=10**5)
    assert stats.kstest(x, stats.gamma(0.3, scale=0.5).cdf).pvalue > 0.01


def test_beta_one_one_is_uniform():
    x = R.beta(1.0, 1.0, R.make_rng(14), size=10**5)
    assert stats.kstest(x, "uniform").pvalue > 0.01


def test_binomial_proportion():
    assert abs(R.binomial(10**4, 0.3, R.make_rng(15)) / 10**4 - 0.3) < 0.01


def test_dirichlet_and_categorical():
    g = R.make_rng(16)
    d = R.dirichlet([2.0, 3.0, 5.0], g, size=10**5)
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(d.mean(axis=0), [0.2, 0.3, 0.5], atol=0.005)
    c = R.categorical([0.1, 0.6, 0.3], g, size=10**5)
    np.testing.assert_allclose(np.bincount(c) / 10**5, [0.1, 0.6, 0.3], atol=0.006)


def test_standard_family_parameter_errors():
    g = R.make_rng(0)
    with pytest.raises(ValueError):
        R.gamma_shape_rate(0.0, 1.0, g)
    with pytest.raises(ValueError):
        R.gamma_shape_rate(1.0, -1.0, g)
    with pytest.raises(ValueError):
        R.exponential_rate(0.0, g)
    with pytest.raises(ValueError):
        R.beta(1.0, 0.0, g)
    with pytest.raises(ValueError):
        R.dirichlet([1.0, 0.0], g)
    with pytest.raises(ValueError):
        R.binomial(10, 1.5, g)
    with pytest.raises(ValueError):
        R.binomial(-1, 0.5, g)
    with pytest.raises(ValueError):
        R.categorical([0.5, 0.6], g)

import numpy as np
import pytest
from scipy import integrate, stats

from ebshrink.variates import (
    inverse_gaussian,
    polya_gamma,
    polya_gamma_mean,
    polya_gamma_var,
    sample_enet_latent,
    sample_enet_latent_prior,
)


def test_inverse_gaussian_moments(rng):
    mu, lam, n = 2.0, 3.0, 1_000_000
    x = inverse_gaussian(mu, lam, rng, size=n)
    var = mu ** 3 / lam
    assert abs(x.mean() - mu) < 3 * np.sqrt(var / n)
    assert x.var() == pytest.approx(var, rel=0.03)


def test_inverse_gaussian_matches_scipy_law(rng):
    x = inverse_gaussian(0.7, 2.5, rng, size=20_000)
    # scipy's invgauss(m, scale=s) has mean m*s and shape s
    assert stats.kstest(x, stats.invgauss(0.7 / 2.5, scale=2.5).cdf).pvalue > 1e-3


def test_enet_latent_conditional_is_gig(rng):
    l1, l2, s2, b = 1.5, 2.0, 1.0, 0.4
    psi = l1 ** 2 / (4 * l2 * s2)
    chi = l2 * b * b / s2
    tau = sample_enet_latent(np.full(20_000, b), l1, l2, s2, rng)
    ref = stats.geninvgauss(0.5, np.sqrt(psi * chi), scale=np.sqrt(chi / psi))
    assert stats.kstest(tau - 1, ref.cdf).pvalue > 1e-3


def test_enet_latent_strictly_above_one(rng):
    beta = np.concatenate([np.zeros(10), 1e-300 * np.ones(5), np.logspace(-8, 4, 50)])
    for l1 in (1e-4, 1.0, 1e4):
        tau = sample_enet_latent(beta, l1, 1.0, 1.0, rng)
        assert np.all(tau > 1) and np.all(np.isfinite(tau))


def test_enet_latent_concentrates_for_large_l1(rng):
    beta = np.full(5000, 0.3)
    l1, l2 = 1e4, 1.0
    z = 1.0 / (sample_enet_latent(beta, l1, l2, 1.0, rng) - 1.0)
    mu = np.sqrt((l1 ** 2 / (4 * l2)) / (l2 * 0.09))
    psi = l1 ** 2 / (4 * l2)
    # relative spread of IG(mu, psi) is sqrt(mu/psi), vanishing as psi grows
    assert np.std(z) / mu == pytest.approx(np.sqrt(mu / psi), rel=0.05)
    assert np.mean(z) == pytest.approx(mu, rel=1e-3)
    z_small = 1.0 / (sample_enet_latent(beta, 1.0, l2, 1.0, rng) - 1.0)
    assert np.std(z) / mu < np.std(z_small) / np.mean(z_small)


def test_enet_latent_prior_against_quadrature(rng):
    l1, l2 = 2.0, 2.0
    psi = l1 ** 2 / (4 * l2)
    dens = lambda t: t ** -0.5 * np.exp(-psi * t / 2)  # noqa: E731
    Z = integrate.quad(dens, 1, np.inf)[0]
    cdf = np.vectorize(lambda t: integrate.quad(dens, 1, t)[0] / Z if t > 1 else 0.0)
    grid = np.linspace(1, 40, 3000)
    cgrid = cdf(grid)
    tau = sample_enet_latent_prior(50_000, l1, l2, 1.0, rng)
    assert np.all(tau > 1)
    assert stats.kstest(tau, lambda t: np.interp(t, grid, cgrid)).statistic < 0.01
    with pytest.raises(ValueError):
        sample_enet_latent_prior(3, 0.0, 1.0, 1.0, rng)


def _pg_series_moments(z, terms=200_000):
    # PG(1, z) = (1/(2 pi^2)) sum_k g_k / ((k - 1/2)^2 + z^2/(4 pi^2)), g_k ~ Exp(1)
    k = np.arange(1, terms + 1)
    d = (k - 0.5) ** 2 + z * z / (4 * np.pi ** 2)
    tail = 1.0 / terms  # sum_{k > terms} 1/k^2
    return (np.sum(1 / d) + tail) / (2 * np.pi ** 2), np.sum(1 / d ** 2) / (4 * np.pi ** 4)


@pytest.mark.parametrize("z", [0.0, 0.5, 1.7, 5.0, 20.0])
def test_pg_analytic_moments_match_series(z):
    m, v = _pg_series_moments(z)
    assert polya_gamma_mean(z) == pytest.approx(m, rel=1e-5)
    assert polya_gamma_var(z) == pytest.approx(v, rel=1e-5)


def test_pg_sampler_mean_at_1_7(rng):
    z, n = 1.7, 1_000_000
    x = polya_gamma(np.full(n, z), rng)
    mean = np.tanh(z / 2) / (2 * z)
    assert abs(x.mean() - mean) < 3 * x.std() / np.sqrt(n)
    assert x.var() == pytest.approx(polya_gamma_var(z), rel=0.02)


@pytest.mark.parametrize("z", [0.0, 3.0, 12.0])
def test_pg_sampler_matches_gamma_series(rng, z):
    n, terms = 20_000, 400
    x = polya_gamma(np.full(n, z), rng)
    k = np.arange(1, terms + 1)
    d = (k - 0.5) ** 2 + z * z / (4 * np.pi ** 2)
    ref = rng.standard_exponential((n, terms)) @ (1 / d) / (2 * np.pi ** 2)
    # truncation bias of the series reference is below 1e-4 of the mean
    assert stats.ks_2samp(x, ref).pvalue > 1e-3


def test_pg_sampler_positive_and_shaped(rng):
    z = rng.normal(0, 10, (30, 4))
    x = polya_gamma(z, rng)
    assert x.shape == z.shape and np.all(x > 0)

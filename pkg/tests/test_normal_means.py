import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebshrink.core import Dataset, EBShrinkError, RngStream
from ebshrink.normal_means import (
    BATTING_FIRST45,
    BATTING_TRUTH,
    ConvolutionData,
    GaussianPrior,
    MixturePrior,
    batting_data,
    dlda_classify,
    extend_batting,
    fit_gaussian_prior,
    fit_mixture_prior_em,
    marginal_loglik_mixture,
    posterior_mean_gaussian,
    posterior_mean_mixture,
    silverman_bandwidth,
    z_scores,
)


def test_batting_golden_numbers():
    c = batting_data()
    prior = fit_gaussian_prior(c)
    theta = posterior_mean_gaussian(c, prior)
    assert prior.mu == pytest.approx(0.256, abs=1e-3)
    assert prior.tau2 == pytest.approx(0.000623, abs=1e-5)
    assert theta[0] == pytest.approx(0.271, abs=1e-3)
    assert np.var(BATTING_TRUTH, ddof=1) == pytest.approx(0.00143, abs=1e-5)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=30),
    st.floats(0.01, 3.0),
)
@settings(max_examples=100, deadline=None)
def test_gaussian_shrinkage_ordering(z, s2):
    c = ConvolutionData(np.array(z), s2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prior = fit_gaussian_prior(c)
    theta = posterior_mean_gaussian(c, prior)
    assert np.all(np.abs(theta - prior.mu) <= np.abs(c.z - prior.mu) + 1e-12)


def test_negative_tau2_is_clipped_with_warning():
    c = ConvolutionData(np.array([0.0, 0.1, -0.1, 0.05]), 1.0)
    with pytest.warns(RuntimeWarning):
        prior = fit_gaussian_prior(c)
    assert prior.tau2 == 0.0
    assert np.allclose(posterior_mean_gaussian(c, prior), prior.mu)


def test_gaussian_prior_recovery_large_p():
    mu, tau2, reps, p = 0.3, 0.5, 40, 10_000
    est = []
    for r in range(reps):
        rng = RngStream(11, r).generator()
        s2 = rng.uniform(0.2, 1.0, p)
        z = mu + np.sqrt(tau2) * rng.standard_normal(p) + np.sqrt(s2) * rng.standard_normal(p)
        g = fit_gaussian_prior(ConvolutionData(z, s2))
        est.append((g.mu, g.tau2))
    est = np.array(est)
    sd = est.std(axis=0, ddof=1)
    assert abs(est[0, 0] - mu) < 3 * sd[0]
    assert abs(est[0, 1] - tau2) < 3 * sd[1]
    assert np.all(np.abs(est.mean(axis=0) - [mu, tau2]) < 3 * sd / np.sqrt(reps))


def test_mixture_with_one_component_equals_gaussian(rng):
    c = ConvolutionData(rng.normal(1, 2, 50), rng.uniform(0.5, 1.5, 50))
    g = GaussianPrior(0.7, 1.3)
    m = MixturePrior([1.0], [0.7], [1.3])
    assert np.allclose(posterior_mean_mixture(c, m), posterior_mean_gaussian(c, g), atol=1e-12)


def test_symmetric_mixture_midpoint_is_fixed():
    c = ConvolutionData(np.array([0.0]), 1.0)
    m = MixturePrior([0.5, 0.5], [-2.0, 2.0], [0.5, 0.5])
    assert posterior_mean_mixture(c, m)[0] == pytest.approx(0.0, abs=1e-14)


def test_em_is_monotone_and_beats_single_gaussian(rng):
    z = np.concatenate([rng.normal(-2, 0.5, 150), rng.normal(2, 0.5, 150)])
    c = ConvolutionData(z + rng.standard_normal(300), 1.0)
    prior, trace = fit_mixture_prior_em(c, 2, rng=rng, return_trace=True)
    assert np.all(np.diff(trace) >= -1e-8 * abs(trace[-1]))
    g = fit_gaussian_prior(c)
    single = MixturePrior([1.0], [g.mu], [g.tau2])
    assert marginal_loglik_mixture(c, prior) > marginal_loglik_mixture(c, single)
    assert np.allclose(np.sort(prior.means), [-2, 2], atol=0.4)


def test_mixture_k_too_large():
    with pytest.raises(EBShrinkError):
        fit_mixture_prior_em(ConvolutionData(np.zeros(2), 1.0), 3)


def test_dlda_trivial_cases(rng):
    W = rng.standard_normal((6, 3))
    S, lab = dlda_classify(W, np.zeros(3))
    assert np.all(S == 0) and np.all(lab == 0)
    theta = np.array([0.0, -2.0, 0.0])
    S, lab = dlda_classify(W, theta)
    assert np.array_equal(np.sign(S), np.sign(-2.0 * W[:, 1]))


def test_dlda_separable_simulation_beats_chance(rng):
    n, p = 200, 100
    y = (np.arange(n) % 2).astype(float)
    shift = np.zeros(p)
    shift[:10] = 0.8
    X = rng.standard_normal((n, p)) + np.outer(y - 0.5, shift)
    d = Dataset(X, y, "binary")
    c = z_scores(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        theta = posterior_mean_gaussian(c, fit_gaussian_prior(c))
    W = (X - X.mean(axis=0)) / X.std(axis=0)
    _, lab = dlda_classify(W, theta)
    assert np.mean(lab != y) < 0.4


def test_z_scores_null_is_standard(rng):
    X = rng.standard_normal((200, 2000))
    y = (np.arange(200) % 2).astype(float)
    c = z_scores(Dataset(X, y, "binary"))
    assert abs(c.z.mean()) < 0.05
    assert abs(c.z.var() - 1) < 0.1


def test_extend_batting_m0_and_domain(rng):
    c, t = extend_batting(BATTING_TRUTH, 0, rng)
    assert np.array_equal(c.z, np.asarray(BATTING_FIRST45))
    assert np.array_equal(t, BATTING_TRUTH)
    with pytest.raises(EBShrinkError):
        extend_batting(np.array([0.2, 1.2]), 5, rng)


def test_extended_batting_reduces_overshrinkage():
    rng = RngStream(0).generator()
    c18 = batting_data()
    g18 = fit_gaussian_prior(c18)
    ext, truths = extend_batting(BATTING_TRUTH, 10_000, rng)
    gext = fit_gaussian_prior(ext)
    theta_ext = posterior_mean_gaussian(ext, gext)
    assert abs(gext.tau2 - np.var(truths, ddof=1)) < abs(g18.tau2 - 0.00143)
    assert theta_ext[0] > posterior_mean_gaussian(c18, g18)[0]
    mix = fit_mixture_prior_em(ext, 3, rng=rng, restarts=3)
    assert posterior_mean_mixture(ext, mix)[0] >= theta_ext[0]


def test_silverman_bandwidth_normal_reference(rng):
    x = rng.standard_normal(10_000)
    assert silverman_bandwidth(x) == pytest.approx(0.9 * 10_000 ** -0.2, rel=0.05)

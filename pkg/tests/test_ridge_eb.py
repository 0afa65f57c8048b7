import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import log_expit

from ebshrink.core import (
    BlockCovariance,
    Dataset,
    EBShrinkError,
    GroupStructure,
    RngStream,
    generate_response,
    sample_coefficients,
    sample_design,
)
from ebshrink.ridge_eb import (
    RidgeFit,
    clip_tau2,
    cv_ridge,
    default_lambda_grid,
    direct_mml_ridge,
    emse_closed_form,
    emse_independent,
    group_moment_eb,
    laplace_log_ml_logistic,
    multiplier_reparam,
    multipliers_from_variances,
    ridge_fit,
    ridge_log_ml,
    tau2_bias_corrected,
    tau2_unbiased_ols,
)


def _gauss(rng, n, p, tau2=0.04, sigma2=1.0):
    X = rng.standard_normal((n, p))
    beta = np.sqrt(tau2) * rng.standard_normal(p)
    return Dataset(X, X @ beta + np.sqrt(sigma2) * rng.standard_normal(n)), beta


# --- ridge_fit -------------------------------------------------------------


@pytest.mark.parametrize("n,p", [(20, 10), (10, 20)])
def test_gaussian_ridge_matches_normal_equations(rng, n, p):
    d, _ = _gauss(rng, n, p)
    lam, s2 = 0.7, 1.3
    fit = ridge_fit(d, lam, s2)
    H = d.X.T @ d.X + lam * np.eye(p)
    coef = np.linalg.solve(H, d.X.T @ d.y)
    Hi = np.linalg.inv(H)
    V = s2 * Hi @ d.X.T @ d.X @ Hi
    C = Hi @ d.X.T @ d.X
    assert np.allclose(fit.coef, coef, atol=1e-10)
    assert np.allclose(fit.var, np.diag(V), atol=1e-10)
    assert np.allclose(fit.bias_matrix(), C, atol=1e-10)
    assert np.allclose(fit.bias_rowsq(), (C * C).sum(axis=1), atol=1e-10)


def test_ridge_limits(rng):
    d, _ = _gauss(rng, 30, 5)
    assert np.max(np.abs(ridge_fit(d, 1e12).coef)) < 1e-9
    Q, _ = np.linalg.qr(rng.standard_normal((30, 5)))
    y = rng.standard_normal(30)
    fit = ridge_fit(Dataset(Q, y), 0.0, sigma2=2.0)
    assert np.allclose(fit.coef, Q.T @ y)
    assert np.allclose(fit.var, 2.0)
    assert np.allclose(fit.bias_matrix(), np.eye(5))


def test_ols_requires_p_below_n(rng):
    d, _ = _gauss(rng, 10, 12)
    with pytest.raises(EBShrinkError):
        ridge_fit(d, 0.0)


@pytest.mark.parametrize("intercept", [False, True])
def test_logistic_ridge_stationarity_and_sandwich(rng, intercept):
    X = rng.standard_normal((80, 4))
    y = generate_response(X + 0.3, np.array([1.0, -0.5, 0.0, 0.3]), "binary", rng)
    d = Dataset(X, y, "binary")
    fit = ridge_fit(d, 2.0, intercept=intercept)
    Xa = np.column_stack([np.ones(80), X]) if intercept else X
    b = np.concatenate([[fit.intercept], fit.coef]) if intercept else fit.coef
    pen = np.concatenate([[0.0], np.full(4, 2.0)]) if intercept else np.full(4, 2.0)
    mu = 1 / (1 + np.exp(-Xa @ b))
    assert np.linalg.norm(Xa.T @ (y - mu) - pen * b) < 1e-7
    W = mu * (1 - mu)
    H = (Xa.T * W) @ Xa + np.diag(pen)
    Hi = np.linalg.inv(H)
    V = Hi @ ((Xa.T * W) @ Xa) @ Hi
    assert np.allclose(fit.var, np.diag(V)[1:] if intercept else np.diag(V), rtol=1e-8)


# --- marginal likelihood -----------------------------------------------------


def test_ridge_log_ml_matches_dense_density(rng):
    from scipy.stats import multivariate_normal

    d, _ = _gauss(rng, 15, 30)
    ref = multivariate_normal(np.zeros(15), 0.3 * d.X @ d.X.T + 0.8 * np.eye(15)).logpdf(d.y)
    assert ridge_log_ml(d, 0.3, 0.8) == pytest.approx(ref, abs=1e-9)


def test_direct_mml_zero_response_hits_bounds(rng):
    d = Dataset(rng.standard_normal((20, 5)), np.zeros(20))
    r = direct_mml_ridge(d)
    assert r.at_bound
    assert r.tau2 < 1e-6 and r.sigma2 < 1e-6


def test_direct_mml_recovers_tau2():
    est = []
    for r in range(50):
        rng = RngStream(3, r).generator()
        d, _ = _gauss(rng, 200, 1000, tau2=0.04)
        fit = direct_mml_ridge(d)
        assert fit.log_ml >= ridge_log_ml(d, 0.04, 1.0) - 1e-8
        assert fit.lam == pytest.approx(fit.sigma2 / fit.tau2)
        est.append(fit.tau2)
    est = np.array(est)
    assert abs(est.mean() - 0.04) < 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_laplace_matches_quadrature_p1(rng):
    n, tau2 = 60, 0.5
    x = rng.standard_normal(n)
    y = generate_response(x[:, None], np.array([0.8]), "binary", rng)
    d = Dataset(x[:, None], y, "binary")
    ll0 = n * np.log(0.5)

    def integrand(b):
        ll = np.sum(y * log_expit(x * b) + (1 - y) * log_expit(-x * b))
        return np.exp(ll - ll0 - b * b / (2 * tau2)) / np.sqrt(2 * np.pi * tau2)

    exact = ll0 + np.log(integrate.quad(integrand, -20, 20, points=[0])[0])
    # evidence itself within 1%
    assert abs(laplace_log_ml_logistic(d, tau2) - exact) < np.log(1.01)


def test_laplace_null_limit(rng):
    X = rng.standard_normal((40, 3))
    d = Dataset(X, generate_response(X, np.ones(3), "binary", rng), "binary")
    limit = 40 * np.log(0.5)
    gaps = [abs(laplace_log_ml_logistic(d, t) - limit) for t in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 0.01


def test_laplace_argmax_near_truth():
    grid = 0.1 * 2.0 ** np.arange(-3, 4)
    hits = 0
    for r in range(50):
        rng = RngStream(9, r).generator()
        X = rng.standard_normal((200, 50))
        y = generate_response(X, np.sqrt(0.1) * rng.standard_normal(50), "binary", rng)
        d = Dataset(X, y, "binary")
        k = int(np.argmax([laplace_log_ml_logistic(d, t) for t in grid]))
        hits += abs(k - 3) <= 1
    assert hits >= 40


# --- tau^2 estimators --------------------------------------------------------


def test_tau2_ols_trivial_cases():
    fit = RidgeFit(np.zeros(3), np.zeros(3), np.array([0.1, 0.2, 0.3]), "gaussian")
    assert tau2_unbiased_ols(fit) == pytest.approx(-0.2)
    assert clip_tau2(tau2_unbiased_ols(fit)) == 0.0
    fit = RidgeFit(np.zeros(3), np.array([1.0, 2.0, 0.0]), np.zeros(3), "gaussian")
    assert tau2_unbiased_ols(fit) == pytest.approx(5 / 3)
    with pytest.raises(EBShrinkError):
        tau2_unbiased_ols(RidgeFit(np.ones(3), np.zeros(3), np.ones(3), "gaussian"))


def _mc_estimates(estimator, reps, n=50, p=10, tau2=0.04, seed=0):
    rng = np.random.default_rng(seed)
    out = np.empty(reps)
    for r in range(reps):
        d, _ = _gauss(rng, n, p, tau2)
        out[r] = estimator(d)
    return out


def test_tau2_ols_unbiased():
    est = _mc_estimates(lambda d: tau2_unbiased_ols(ridge_fit(d, 0.0)), 20_000)
    assert abs(est.mean() - 0.04) < 3 * est.std(ddof=1) / np.sqrt(est.size)


@pytest.mark.parametrize("lam0", [1e-6, 1.0])
def test_tau2_bias_corrected_unbiased(lam0):
    est = _mc_estimates(lambda d: tau2_bias_corrected(d, lam0), 20_000, seed=1)
    assert abs(est.mean() - 0.04) < 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_tau2_bias_corrected_small_lam0_denominator(rng):
    d, _ = _gauss(rng, 50, 10)
    fit = ridge_fit(d, 1e-9)
    ols = ridge_fit(d, 0.0)
    assert np.allclose(fit.bias_rowsq(), 1.0, atol=1e-6)
    assert np.allclose(fit.var, ols.var, rtol=1e-6)


def test_tau2_bias_corrected_null_truth():
    est = _mc_estimates(lambda d: tau2_bias_corrected(d), 200, n=100, p=300, tau2=0.0)
    assert abs(est.mean()) < 3 * est.std(ddof=1) / np.sqrt(est.size)
    assert clip_tau2(min(est)) == 0.0


# --- EMSE theory -------------------------------------------------------------


@given(st.integers(10, 400), st.data(), st.floats(1e-4, 1.0))
@settings(max_examples=100, deadline=None)
def test_emse_identity_psi_identity(n, data, tau2):
    p = data.draw(st.integers(1, n - 4))
    a = emse_closed_form(n, p, tau2, np.eye(p))
    b = emse_independent(n, p, tau2)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_emse_domain_errors():
    with pytest.raises(EBShrinkError):
        emse_independent(10, 7, 0.1)
    with pytest.raises(EBShrinkError):
        emse_closed_form(10, 7, 0.1, np.eye(7))


def test_emse_monotone_in_tau2_and_interior_minimum():
    vals = [emse_independent(100, 20, t) for t in (0.001, 0.01, 0.1, 1.0)]
    assert np.all(np.diff(vals) > 0)
    ps = np.arange(5, 997)
    curve = np.array([emse_independent(1000, p, 0.01) for p in ps])
    k = int(np.argmin(curve))
    assert 0 < k < ps.size - 1


def test_emse_correlation_ordering():
    for p in range(100, 1000, 100):
        lo = emse_closed_form(1000, p, 0.01, BlockCovariance(p, 10, 0.3).precision())
        hi = emse_closed_form(1000, p, 0.01, BlockCovariance(p, 10, 0.8).precision())
        assert hi > lo


# --- group moments, CV, multipliers -------------------------------------------


def test_group_moment_single_group_reduces(rng):
    for n, p in [(50, 20), (40, 120)]:
        d, _ = _gauss(rng, n, p)
        a = group_moment_eb(d, GroupStructure(np.zeros(p, int)), 1.0) if tau2_bias_corrected(d) > 1e-8 else None
        if a is not None:
            assert a[0] == pytest.approx(tau2_bias_corrected(d, 1.0), abs=1e-10)


def test_group_moment_ratio_two_groups():
    ok = 0
    g = GroupStructure.contiguous([100, 100])
    for r in range(300):
        rng = RngStream(21, r).generator()
        X = rng.standard_normal((150, 200))
        b = sample_coefficients(g, np.array([1.0, 0.25]), rng)
        d = Dataset(X, X @ b + rng.standard_normal(150))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            a = group_moment_eb(d, g)
        ok += 2 <= a[0] / a[1] <= 8
    assert ok >= 270


def test_group_moment_relabeling_symmetry(rng):
    d, _ = _gauss(rng, 80, 60, tau2=0.2)
    a = np.repeat([0, 1], 30)
    fwd = group_moment_eb(d, GroupStructure(a))
    rev = group_moment_eb(d, GroupStructure(1 - a))
    assert np.allclose(fwd, rev[::-1], rtol=1e-10)
    ratios = []
    for r in range(40):
        dd, _ = _gauss(np.random.default_rng(r), 80, 60, tau2=0.2)
        ratios.append(np.log(np.divide(*group_moment_eb(dd, GroupStructure(a)))))
    ratios = np.array(ratios)
    assert abs(ratios.mean()) < 3 * ratios.std(ddof=1) / np.sqrt(ratios.size)


def test_group_moment_clips_negative(rng):
    d = Dataset(rng.standard_normal((50, 20)), rng.standard_normal(50) * 0.01)
    with pytest.warns(RuntimeWarning):
        a = group_moment_eb(d, GroupStructure.contiguous([10, 10]))
    assert np.all(a >= 1e-8)


def test_group_moment_binary_runs(rng):
    X = rng.standard_normal((200, 40))
    g = GroupStructure.contiguous([20, 20])
    b = sample_coefficients(g, np.array([0.5, 0.02]), rng)
    d = Dataset(X, generate_response(X, b, "binary", rng), "binary")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = group_moment_eb(d, g)
    assert a.shape == (2,) and a[0] > a[1]


def test_cv_ridge_trivial_grid_and_determinism(rng):
    d, _ = _gauss(rng, 40, 20)
    assert cv_ridge(d, 5, lambdas=[3.0]) == (3.0, 1 / 3.0)
    a = cv_ridge(d, 5, rng=np.random.default_rng(1))
    b = cv_ridge(d, 5, rng=np.random.default_rng(1))
    assert a == b
    assert default_lambda_grid().size == 25
    with pytest.raises(EBShrinkError):
        cv_ridge(d, 1)


def test_cv_ridge_gaussian_curve_matches_refits(rng):
    d, _ = _gauss(rng, 30, 8)
    grid = np.array([0.1, 1.0, 10.0])
    _, _, curve = cv_ridge(d, 3, lambdas=grid, rng=np.random.default_rng(4), return_curve=True)
    folds = np.random.default_rng(4).permutation(30) % 3
    ref = np.zeros(3)
    for i, lam in enumerate(grid):
        for f in range(3):
            tr = folds != f
            b = ridge_fit(Dataset(d.X[tr], d.y[tr]), lam).coef
            ref[i] += np.sum((d.y[~tr] - d.X[~tr] @ b) ** 2)
    assert np.allclose(curve, ref / 30)


def test_multipliers():
    assert np.array_equal(multiplier_reparam(2.0, [1, 1, 1]), [2.0, 2.0, 2.0])
    assert np.array_equal(multiplier_reparam(0.0, [1.5, 3.0]), [0.0, 0.0])
    m = multipliers_from_variances([0.04, 0.01, 0.02])
    assert np.exp(np.mean(np.log(m))) == pytest.approx(1.0)
    assert m[1] / m[0] == pytest.approx(4.0)


def test_correlation_insensitivity_far_above_n():
    def root_emse(cov, seed):
        errs = []
        for r in range(100):
            rng = RngStream(seed, r).generator()
            X = sample_design(100, cov, rng)
            b = 0.1 * rng.standard_normal(cov.p)
            errs.append(tau2_bias_corrected(Dataset(X, X @ b + rng.standard_normal(100))) - 0.01)
        return np.sqrt(np.mean(np.square(errs)))

    ind = root_emse(BlockCovariance(2000), 31)
    cor = root_emse(BlockCovariance(2000, 50, 0.8), 32)
    assert abs(cor / ind - 1) < 0.25

"""Empirical Bayes estimation of ridge prior variances.

Contents
--------
ridge_fit                  Gaussian ridge / OLS and penalized logistic IRLS
direct_mml_ridge           exact marginal likelihood maximization, Gaussian ridge
laplace_log_ml_logistic    Laplace-approximated log evidence, logistic ridge
tau2_unbiased_ols          bias-corrected ``mean(beta_hat^2 - v)`` estimator
tau2_bias_corrected        estimator correcting for ridge shrinkage bias
emse_closed_form           exact EMSE of the OLS-based estimator (random X)
emse_independent           the same for independent columns
group_moment_eb            group-wise prior variances from moment equations
cv_ridge                   k-fold cross-validation over a penalty grid
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit, log_expit

from .core import BINARY, GAUSSIAN, Dataset, EBShrinkError, GroupStructure

log = logging.getLogger(__name__)

__all__ = [
    "RidgeFit",
    "ridge_fit",
    "MMLResult",
    "ridge_log_ml",
    "direct_mml_ridge",
    "laplace_log_ml_logistic",
    "tau2_unbiased_ols",
    "tau2_plugin",
    "tau2_bias_corrected",
    "clip_tau2",
    "emse_closed_form",
    "emse_independent",
    "group_moment_eb",
    "default_lambda_grid",
    "cv_ridge",
    "multiplier_reparam",
    "multipliers_from_variances",
    "IRLSConvergenceError",
]

VARIANCE_FLOOR = 1e-8


class IRLSConvergenceError(EBShrinkError):
    pass


@dataclass
class RidgeFit:
    """Result of a (penalized) regression fit.

    ``penalty`` is the per-coefficient penalty vector (``lam`` times any
    multipliers). ``var`` holds the sampling variances of ``coef`` given the
    true coefficients, i.e. the diagonal of
    ``H^-1 X'WX H^-1`` with ``H = X'WX + diag(penalty)`` (``W = I/sigma2``
    for the Gaussian family).
    """

    penalty: np.ndarray
    coef: np.ndarray
    var: np.ndarray
    family: str
    intercept: float = 0.0
    _XtWX: np.ndarray | None = field(default=None, repr=False)
    _svd: tuple | None = field(default=None, repr=False)

    @property
    def lam(self) -> float:
        return float(self.penalty.max()) if self.penalty.size else 0.0

    def bias_matrix(self) -> np.ndarray:
        """``C`` with ``E[coef] = C beta``: ``C = H^-1 X'WX``."""
        if self._svd is not None:
            W, f, dsq = self._svd
            return (W * f) @ W.T * (dsq[None, :] / dsq[:, None])
        if not np.any(self.penalty):
            return np.eye(self.coef.size)
        H = self._XtWX + np.diag(self.penalty)
        return linalg.solve(H, self._XtWX, assume_a="pos")

    def bias_rowsq(self) -> np.ndarray:
        """``sum_k c_jk^2`` for each ``j`` without forming ``C`` when possible."""
        if self._svd is not None and np.allclose(self._svd[2], self._svd[2][0]):
            W, f, _ = self._svd
            return (W * W) @ (f * f)
        C = self.bias_matrix()
        return (C * C).sum(axis=1)


def _as_penalty(lam, p):
    pen = np.broadcast_to(np.asarray(lam, dtype=float), (p,)).copy()
    if np.any(pen < 0):
        raise EBShrinkError("penalties must be non-negative")
    return pen


def _gaussian_ridge(X, y, pen, sigma2):
    n, p = X.shape
    if not np.any(pen):
        if p >= n:
            raise EBShrinkError(f"OLS (lambda=0) needs p < n, got p={p}, n={n}")
        XtX = X.T @ X
        try:
            cf = linalg.cho_factor(XtX)
        except linalg.LinAlgError:
            raise EBShrinkError("X'X is singular") from None
        coef = linalg.cho_solve(cf, X.T @ y)
        V = linalg.cho_solve(cf, np.eye(p))
        return RidgeFit(pen, coef, sigma2 * np.diag(V).copy(), GAUSSIAN, _XtWX=XtX / sigma2)
    if np.any(pen == 0):
        raise EBShrinkError("mixed zero/positive penalties are not supported")
    dsq = np.sqrt(pen)
    Xs = X / dsq
    # thin SVD of the rescaled design: X D^-1/2 = U S W'
    U, s, Wt = linalg.svd(Xs, full_matrices=False)
    W = Wt.T
    s2 = s * s
    coef = (W * (s / (s2 + 1.0))) @ (U.T @ y) / dsq
    f = s2 / (s2 + 1.0)
    var = sigma2 * ((W * W) @ (s2 / (s2 + 1.0) ** 2)) / pen
    return RidgeFit(pen, coef, var, GAUSSIAN, _svd=(W, f, dsq))


def _logistic_ridge(X, y, pen, intercept, tol, max_iter):
    n, p = X.shape
    Xa = np.column_stack([np.ones(n), X]) if intercept else X
    pena = np.concatenate([[0.0], pen]) if intercept else pen
    b = np.zeros(Xa.shape[1])

    def objective(b):
        eta = Xa @ b
        return -np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)) + 0.5 * np.sum(pena * b * b)

    obj = objective(b)
    for it in range(max_iter):
        mu = expit(Xa @ b)
        grad = Xa.T @ (y - mu) - pena * b
        if np.linalg.norm(grad) < tol:
            break
        w = mu * (1 - mu)
        H = (Xa.T * w) @ Xa + np.diag(pena)
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(H, grad)[0]
        t = 1.0
        while True:
            new_obj = objective(b + t * step)
            if new_obj <= obj + 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        b = b + t * step
        obj = new_obj
    else:
        raise IRLSConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    mu = expit(Xa @ b)
    w = mu * (1 - mu)
    XtWX = (Xa.T * w) @ Xa
    H = XtWX + np.diag(pena)
    Hinv = linalg.inv(H)
    V = Hinv @ XtWX @ Hinv
    sl = slice(1, None) if intercept else slice(None)
    var = np.diag(V)[sl].copy()
    return RidgeFit(
        pen, b[sl].copy(), var, BINARY,
        intercept=float(b[0]) if intercept else 0.0,
        _XtWX=XtWX[sl, sl].copy() if not intercept else _profile_intercept(XtWX),
    )


def _profile_intercept(XtWX):
    # information for the slopes with the unpenalized intercept profiled out
    a = XtWX[0, 0]
    r = XtWX[1:, 0]
    return XtWX[1:, 1:] - np.outer(r, r) / a


def ridge_fit(
    d: Dataset,
    lam,
    sigma2: float = 1.0,
    intercept: bool = False,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> RidgeFit:
    """Ridge fit with penalty ``lam`` (scalar or one value per column).

    Gaussian family: closed form (OLS when ``lam == 0``). Binary family:
    penalized IRLS (Newton with step halving) until the gradient norm drops
    below ``tol``; an unpenalized intercept is added when ``intercept``.
    """
    pen = _as_penalty(lam, d.p)
    if d.family == GAUSSIAN:
        if intercept:
            raise EBShrinkError("intercept is only supported for the binary family")
        return _gaussian_ridge(d.X, d.y, pen, sigma2)
    if not np.any(pen) and d.p >= d.n:
        raise EBShrinkError("unpenalized logistic regression needs p < n")
    return _logistic_ridge(d.X, d.y, pen, intercept, tol, max_iter)


# --- marginal likelihood ---------------------------------------------------


@dataclass(frozen=True)
class MMLResult:
    tau2: float
    sigma2: float
    lam: float
    log_ml: float
    at_bound: bool


def _eig_xxt(X):
    # eigen-decomposition of XX' via the SVD of X
    U, s, _ = linalg.svd(X, full_matrices=True)
    d = np.zeros(X.shape[0])
    d[: s.size] = s * s
    return d, U


def _log_ml_eig(log_params, d, uy2):
    tau2, sigma2 = np.exp(log_params)
    s = tau2 * d + sigma2
    return -0.5 * (np.sum(np.log(s) + uy2 / s) + d.size * np.log(2 * np.pi))


def ridge_log_ml(d: Dataset, tau2: float, sigma2: float) -> float:
    """``log N(y; 0, tau2 XX' + sigma2 I)``."""
    ev, U = _eig_xxt(d.X)
    uy2 = (U.T @ d.y) ** 2
    return float(_log_ml_eig(np.log([tau2, sigma2]), ev, uy2))


def direct_mml_ridge(d: Dataset, bounds=(1e-8, 1e8)) -> MMLResult:
    """Maximize the exact Gaussian-ridge marginal likelihood over ``(tau2, sigma2)``.

    The likelihood is diagonalized once through the eigenvectors of ``XX'``;
    L-BFGS-B then works on ``(log tau2, log sigma2)`` inside ``bounds`` from
    three starting points. ``at_bound`` flags a solution on the box edge
    (degenerate prior).
    """
    if d.n < 2:
        raise EBShrinkError("need n >= 2")
    ev, U = _eig_xxt(d.X)
    uy2 = (U.T @ d.y) ** 2
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    vy = max(float(np.mean(d.y ** 2)), bounds[0] * 10)
    mean_ev = max(float(ev.mean()), 1e-12)
    starts = [
        np.log([0.5 * vy / mean_ev, 0.5 * vy]),
        np.log([0.9 * vy / mean_ev, 0.1 * vy]),
        np.log([0.1 * vy / mean_ev, 0.9 * vy]),
    ]
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = optimize.minimize(
            lambda t: -_log_ml_eig(t, ev, uy2), x0, method="L-BFGS-B",
            bounds=[(lo, hi), (lo, hi)],
        )
        if best is None or res.fun < best.fun:
            best = res
    tau2, sigma2 = np.exp(best.x)
    at_bound = bool(np.any(np.isclose(best.x, lo, atol=1e-3) | np.isclose(best.x, hi, atol=1e-3)))
    if at_bound:
        log.warning("marginal likelihood maximum on the parameter box edge")
    return MMLResult(float(tau2), float(sigma2), float(sigma2 / tau2), float(-best.fun), at_bound)


def laplace_log_ml_logistic(d: Dataset, tau2: float, intercept: bool = False) -> float:
    """Laplace approximation to the log evidence of logistic ridge regression.

    ``log p(y) ~ l(b) - |b|^2/(2 tau2) - (p/2) log tau2 - (1/2) log|H|`` with
    ``b`` the posterior mode and ``H = X'WX + I/tau2`` the Hessian of the
    negative log posterior at ``b``.
    """
    if d.family != BINARY:
        raise EBShrinkError("Laplace evidence is implemented for a binary response")
    if tau2 <= 0:
        raise EBShrinkError("tau2 must be positive")
    if intercept:
        raise EBShrinkError("an improper flat intercept has no finite evidence")
    fit = ridge_fit(d, 1.0 / tau2)
    eta = d.X @ fit.coef
    ll = np.sum(d.y * log_expit(eta) + (1 - d.y) * log_expit(-eta))
    w = expit(eta) * expit(-eta)
    H = (d.X.T * w) @ d.X + np.eye(d.p) / tau2
    try:
        L = linalg.cholesky(H, lower=True)
    except linalg.LinAlgError:
        raise EBShrinkError("Hessian at the mode is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(ll - fit.coef @ fit.coef / (2 * tau2) - 0.5 * d.p * np.log(tau2) - 0.5 * logdet)


# --- tau^2 estimators ------------------------------------------------------


def tau2_plugin(fit: RidgeFit) -> float:
    """``sum_j (coef_j^2 - v_j) / p``; unbiased when the fit is OLS."""
    return float(np.mean(fit.coef ** 2 - fit.var))


def tau2_unbiased_ols(fit: RidgeFit) -> float:
    """Unbiased prior-variance estimate from an OLS fit (may be negative)."""
    if np.any(fit.penalty):
        raise EBShrinkError("tau2_unbiased_ols needs an OLS fit (lambda = 0)")
    return tau2_plugin(fit)


def clip_tau2(value: float) -> float:
    return max(float(value), 0.0)


def tau2_bias_corrected(d: Dataset, lam0: float = 1.0, sigma2: float = 1.0) -> float:
    """Prior variance estimate accounting for the shrinkage bias of a ridge fit.

    ``sum_j (b_j^2 / v_j - 1) / sum_{j,k} c_jk^2 / v_j`` where ``b`` is the ridge
    estimate at ``lam0``, ``v`` its sampling variances and ``C`` its bias
    matrix. May be negative; see :func:`clip_tau2`.
    """
    if lam0 <= 0:
        raise EBShrinkError("lam0 must be positive")
    fit = ridge_fit(d, lam0, sigma2=sigma2)
    return _tau2_from_fit(fit)


def _tau2_from_fit(fit):
    num = np.sum(fit.coef ** 2 / fit.var - 1.0)
    den = np.sum(fit.bias_rowsq() / fit.var)
    return float(num / den)


# --- EMSE theory -------------------------------------------------------------


def _check_emse_domain(n, p):
    if not p < n - 3:
        raise EBShrinkError(f"closed-form EMSE needs p < n - 3, got n={n}, p={p}")


def emse_closed_form(n: int, p: int, tau2: float, precision=None) -> float:
    """Exact EMSE of :func:`tau2_unbiased_ols` for rows ``X_i ~ N(0, Sigma)``.

    ``precision`` is ``Psi = Sigma^{-1}`` (identity when omitted). Requires
    ``p < n - 3``.
    """
    _check_emse_domain(n, p)
    psi = np.eye(p) if precision is None else np.asarray(precision, dtype=float)
    if psi.shape != (p, p):
        raise EBShrinkError(f"precision must be {p}x{p}")
    m1 = n - p - 1.0
    m3 = n - p - 3.0
    m0 = float(n - p)
    dg = np.diag(psi)
    diag_terms = np.sum(2 * dg ** 2 / (m1 * m3) + dg ** 2 / m1)
    sq = psi * psi
    off_sq = sq.sum() - np.sum(dg ** 2)
    off_prod = dg.sum() ** 2 - np.sum(dg ** 2)
    off_terms = ((m0 + 1) * off_sq + m1 * off_prod) / (m0 * m1 * m3) + off_sq / m1
    return float(2.0 / (m1 * p * p) * (diag_terms + 2 * tau2 * dg.sum() + off_terms) + 2 * tau2 ** 2 / p)


def emse_independent(n: int, p: int, tau2: float) -> float:
    """EMSE for independent standardized columns (``Psi = I``)."""
    _check_emse_domain(n, p)
    m1 = n - p - 1.0
    m3 = n - p - 3.0
    bracket = 2.0 / (m1 * m3) + 1.0 / m1 + 2 * tau2 + (p - 1.0) / ((n - p) * m3)
    return float(2.0 / (m1 * p) * bracket + 2 * tau2 ** 2 / p)


# --- group moment EB -----------------------------------------------------------


def group_moment_eb(
    d: Dataset,
    groups: GroupStructure,
    lam0: float = 1.0,
    sigma2: float = 1.0,
    floor: float = VARIANCE_FLOOR,
) -> np.ndarray:
    """Group prior variances ``alpha_g`` from G linear moment equations.

    With ``b`` the ridge estimate at ``lam0``, ``v_j`` its sampling variances
    and ``C`` its bias matrix, ``E[b_j^2] = v_j + sum_h alpha_h sum_{k in G_h} c_jk^2``.
    Summing ``(b_j^2 / v_j - 1)`` over each group gives ``A alpha = m`` with
    ``A_gh = sum_{j in G_g} sum_{k in G_h} c_jk^2 / v_j``. The ``1/v_j``
    weighting makes the one-group solution coincide with
    :func:`tau2_bias_corrected`. For a binary response the moments come from
    the converged IRLS fit (weights fixed at the ``lam0`` solution).
    Negative solutions are clipped to ``floor`` with a warning.
    """
    if lam0 <= 0:
        raise EBShrinkError("lam0 must be positive")
    if groups.p != d.p:
        raise EBShrinkError("group structure does not match the number of columns")
    fit = ridge_fit(d, lam0, sigma2=sigma2)
    ind = groups.indicator()
    C = fit.bias_matrix()
    w = 1.0 / fit.var
    A = ind.T @ ((C * C) * w[:, None]) @ ind
    m = ind.T @ (fit.coef ** 2 * w - 1.0)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise EBShrinkError(f"moment system is singular (condition number {cond:.3g})")
    alpha = np.linalg.solve(A, m)
    if np.any(alpha < floor):
        warnings.warn("negative group variance estimate clipped", RuntimeWarning)
        alpha = np.maximum(alpha, floor)
    return alpha


# --- cross-validation ------------------------------------------------------------


def default_lambda_grid(size: int = 25, lo: float = 1e-3, hi: float = 1e5) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), size)


def _fold_ids(n, k, rng):
    return rng.permutation(n) % k


def _cv_gaussian(X, y, folds, k, lambdas, mult):
    err = np.zeros(lambdas.size)
    sq = np.sqrt(mult)
    for f in range(k):
        tr, te = folds != f, folds == f
        Xs = X[tr] / sq
        U, s, Wt = linalg.svd(Xs, full_matrices=False)
        uy = U.T @ y[tr]
        Xte = (X[te] / sq) @ Wt.T
        # predictions for every lambda at once
        shrink = s[None, :] / (s[None, :] ** 2 + lambdas[:, None])
        pred = (shrink * uy[None, :]) @ Xte.T
        err += ((pred - y[te][None, :]) ** 2).sum(axis=1)
    return err / y.size


def _cv_logistic(X, y, folds, k, lambdas, mult, intercept):
    err = np.zeros(lambdas.size)
    for f in range(k):
        tr, te = folds != f, folds == f
        dtr = Dataset(X[tr], y[tr], BINARY)
        for i, lam in enumerate(lambdas):
            fit = ridge_fit(dtr, lam * mult, intercept=intercept)
            eta = X[te] @ fit.coef + fit.intercept
            err[i] -= np.sum(y[te] * log_expit(eta) + (1 - y[te]) * log_expit(-eta))
    return err / y.size


def cv_ridge(
    d: Dataset,
    k: int = 10,
    lambdas=None,
    rng: np.random.Generator | None = None,
    sigma2: float = 1.0,
    multipliers=None,
    intercept: bool = False,
    return_curve: bool = False,
):
    """k-fold CV choice of the global ridge penalty.

    Gaussian family minimizes mean squared prediction error, binary family
    the mean log-loss. ``multipliers`` (one per column) scale the global
    penalty. Returns ``(lambda_cv, sigma2 / lambda_cv)``, plus the CV curve
    when ``return_curve``.
    """
    if k < 2:
        raise EBShrinkError("need at least 2 folds")
    lambdas = default_lambda_grid() if lambdas is None else np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        raise EBShrinkError("empty penalty grid")
    if lambdas.size == 1:
        lam = float(lambdas[0])
        return (lam, sigma2 / lam, np.zeros(1)) if return_curve else (lam, sigma2 / lam)
    rng = np.random.default_rng(0) if rng is None else rng
    mult = np.ones(d.p) if multipliers is None else np.asarray(multipliers, dtype=float)
    folds = _fold_ids(d.n, k, rng)
    if d.family == GAUSSIAN:
        curve = _cv_gaussian(d.X, d.y, folds, k, lambdas, mult)
    else:
        curve = _cv_logistic(d.X, d.y, folds, k, lambdas, mult, intercept)
    lam = float(lambdas[int(np.argmin(curve))])
    out = (lam, sigma2 / lam)
    return out + (curve,) if return_curve else out


def multiplier_reparam(lam: float, multipliers) -> np.ndarray:
    """Group penalties ``lam * multipliers``."""
    return lam * np.asarray(multipliers, dtype=float)


def multipliers_from_variances(alpha) -> np.ndarray:
    """Penalty multipliers inversely proportional to ``alpha``, geometric mean 1."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise EBShrinkError("variances must be positive")
    inv = 1.0 / alpha
    return inv / np.exp(np.mean(np.log(inv)))

"""Random variate generators not provided by numpy.

* inverse Gaussian via the Michael-Schucany-Haas transformation, including
  the latent-scale update of the Bayesian elastic net,
* the truncated Gamma(1/2) prior of that latent scale,
* Polya-Gamma PG(1, z) by Devroye's alternating-series method.

All functions are vectorized over their parameter arrays.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaincc, gammainccinv, log_ndtr

__all__ = [
    "inverse_gaussian",
    "sample_enet_latent",
    "sample_enet_latent_prior",
    "polya_gamma",
    "polya_gamma_mean",
    "polya_gamma_var",
]


def _msh_roots(mu, lam, y):
    """Both roots of the MSH quadratic; the product of the roots is ``mu^2``.

    The larger root is computed directly and the smaller one as ``mu^2/x2`` to
    avoid cancellation when ``mu`` is tiny relative to ``y mu^2/lam``.
    """
    a = mu * mu * y / (2.0 * lam)
    big = mu + a + np.sqrt(mu * a * 2.0 + a * a)
    return mu * mu / big, big


def inverse_gaussian(mu, lam, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from IG(mean ``mu``, shape ``lam``)."""
    mu, lam = np.broadcast_arrays(np.asarray(mu, float), np.asarray(lam, float))
    shape = mu.shape if size is None else size
    mu = np.broadcast_to(mu, shape)
    lam = np.broadcast_to(lam, shape)
    y = rng.standard_normal(shape) ** 2
    u = rng.random(shape)
    small, big = _msh_roots(mu, lam, y)
    return np.where(u <= mu / (mu + small), small, big)


def sample_enet_latent(beta, lambda1, lambda2, sigma2, rng: np.random.Generator) -> np.ndarray:
    """Full-conditional draw of the elastic-net latent scales ``tau_j > 1``.

    ``tau_j - 1 ~ GIG(1/2, psi, chi_j)`` with ``psi = lambda1^2/(4 lambda2 sigma2)``
    and ``chi_j = lambda2 beta_j^2/sigma2``, so ``z = 1/(tau_j - 1)`` is
    inverse Gaussian with mean ``sqrt(psi/chi_j)`` and shape ``psi``.
    Coefficients with ``|beta_j| < 1e-12`` (exact zeros included) are
    dithered to ``1e-12`` to keep ``chi_j > 0``.
    """
    beta = np.asarray(beta, dtype=float)
    b = np.where(np.abs(beta) < 1e-12, 1e-12, beta)
    psi = lambda1 ** 2 / (4.0 * lambda2 * sigma2)
    chi = lambda2 * b * b / sigma2
    y = rng.standard_normal(b.shape) ** 2
    u = rng.random(b.shape)
    mu = np.sqrt(psi / chi)
    small, big = _msh_roots(mu, psi, y)
    z = np.where(u <= mu / (mu + small), small, big)
    with np.errstate(divide="ignore"):
        tau = 1.0 + 1.0 / z
    # z can underflow to 0 or overflow for extreme psi/chi; keep tau finite and > 1
    return np.clip(tau, np.nextafter(1.0, 2.0), 1e300)


def sample_enet_latent_prior(p, lambda1, lambda2, sigma2, rng: np.random.Generator) -> np.ndarray:
    """Prior draw of ``tau_j``: Gamma(shape 1/2, rate psi/2) truncated to ``(1, inf)``.

    Sampled exactly by inverting the regularized upper incomplete gamma
    function restricted to the truncation region.
    """
    psi = lambda1 ** 2 / (4.0 * lambda2 * sigma2)
    if psi <= 0:
        raise ValueError("the latent-scale prior is improper for lambda1 = 0")
    tail = gammaincc(0.5, psi / 2.0)
    u = rng.random(p)
    # u in (0, 1]: keep strictly inside so the inverse stays finite
    q = np.clip((1.0 - u) * tail, np.finfo(float).tiny, tail)
    tau = 2.0 / psi * gammainccinv(0.5, q)
    return np.maximum(tau, np.nextafter(1.0, 2.0))


# --- Polya-Gamma ----------------------------------------------------------

_T = 0.64  # Devroye's truncation point for the J*(1, z) mixture proposal


def polya_gamma_mean(z):
    """E[PG(1, z)] = tanh(z/2)/(2z), with the z -> 0 limit 1/4."""
    z = np.abs(np.asarray(z, dtype=float))
    small = z < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 0.25 - z * z / 48.0, np.tanh(zs / 2.0) / (2.0 * zs))


def polya_gamma_var(z):
    """Var[PG(1, z)] = (sinh z - z) / (4 z^3 cosh^2(z/2)), limit 1/24 at z = 0."""
    z = np.abs(np.asarray(z, dtype=float))
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    v = (np.sinh(zs) - zs) / (4.0 * zs ** 3 * np.cosh(zs / 2.0) ** 2)
    return np.where(small, 1.0 / 24.0 - z * z / 160.0, v)


def _series_coef(n, x):
    """Coefficient ``a_n(x)`` of the J*(1) density series, piecewise around ``_T``."""
    k = n + 0.5
    left = np.pi * k * (2.0 / (np.pi * x)) ** 1.5 * np.exp(-2.0 * k * k / x)
    right = np.pi * k * np.exp(-0.5 * k * k * np.pi ** 2 * x)
    return np.where(x <= _T, left, right)


def _truncated_ig(mu, rng):
    """IG(mu, 1) restricted to (0, _T), one draw per entry of ``mu``."""
    out = np.empty_like(mu)
    pending = np.arange(mu.size)
    while pending.size:
        m = mu[pending]
        x = np.empty_like(m)
        # mu > T: chi-square proposal with exponential acceptance
        lo = m > _T
        if lo.any():
            k = lo.sum()
            e1 = rng.standard_exponential(k)
            e2 = rng.standard_exponential(k)
            bad = e1 * e1 > 2.0 * e2 / _T
            while bad.any():
                nb = bad.sum()
                e1[bad] = rng.standard_exponential(nb)
                e2[bad] = rng.standard_exponential(nb)
                bad = e1 * e1 > 2.0 * e2 / _T
            xx = _T / (1.0 + _T * e1) ** 2
            alpha = np.exp(-0.5 * xx / m[lo] ** 2)
            acc = rng.random(k) <= alpha
            x[lo] = np.where(acc, xx, np.inf)
        hi = ~lo
        if hi.any():
            k = hi.sum()
            xx = inverse_gaussian(m[hi], 1.0, rng)
            x[hi] = np.where(xx < _T, xx, np.inf)
        done = np.isfinite(x)
        out[pending[done]] = x[done]
        pending = pending[~done]
    return out


def _pg_proposal_weights(z):
    """Mixture weight of the exponential tail and the rate ``K`` of the proposal."""
    K = np.pi ** 2 / 8.0 + z * z / 2.0
    log_p = np.log(np.pi / (2.0 * K)) - K * _T
    # q = 2 exp(-z) * IGcdf(T; 1/z, 1), computed on the log scale
    rt = np.sqrt(1.0 / _T)
    with np.errstate(divide="ignore"):
        a = log_ndtr(rt * (_T * z - 1.0)) - z
        b = log_ndtr(-rt * (_T * z + 1.0)) + z
    log_q = np.log(2.0) + np.logaddexp(a, b)
    prob_exp = expit(log_p - log_q)
    return prob_exp, K


def polya_gamma(z, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from PG(1, z) for each entry of ``z``.

    Uses PG(1, z) = J*(1, |z|/2) / 4 and Devroye's sampler for J*(1, c):
    a mixture proposal (truncated inverse Gaussian left of 0.64, shifted
    exponential right of it) accepted through the alternating series.
    """
    z = np.asarray(z, dtype=float)
    shape = z.shape
    c = np.abs(z.ravel()) / 2.0
    out = np.empty_like(c)
    pending = np.arange(c.size)
    while pending.size:
        cc = c[pending]
        prob_exp, K = _pg_proposal_weights(cc)
        use_exp = rng.random(cc.size) < prob_exp
        x = np.empty_like(cc)
        if use_exp.any():
            x[use_exp] = _T + rng.standard_exponential(use_exp.sum()) / K[use_exp]
        if (~use_exp).any():
            with np.errstate(divide="ignore"):
                mu = np.where(cc[~use_exp] > 0, 1.0 / cc[~use_exp], np.inf)
            x[~use_exp] = _truncated_ig(mu, rng)
        s = _series_coef(0, x)
        y = rng.random(cc.size) * s
        decided = np.zeros(cc.size, dtype=bool)
        accept = np.zeros(cc.size, dtype=bool)
        n = 0
        while not decided.all():
            n += 1
            a = _series_coef(n, x)
            if n % 2:
                s = s - a
                hit = ~decided & (y <= s)
                accept |= hit
            else:
                s = s + a
                hit = ~decided & (y > s)
            decided |= hit
        out[pending[accept]] = x[accept] / 4.0
        pending = pending[~accept]
    return out.reshape(shape)

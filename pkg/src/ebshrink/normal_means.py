"""Empirical Bayes for the normal-means convolution ``Z_j = theta_j + eps_j``.

Covers the conjugate Gaussian prior (moment fit), the K-component Gaussian
mixture prior fitted by EM on the marginal likelihood, posterior-mean
shrinkage, diagonal LDA scoring and the batting-average example.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import BINARY, Dataset, EBShrinkError

log = logging.getLogger(__name__)

__all__ = [
    "ConvolutionData",
    "GaussianPrior",
    "MixturePrior",
    "z_scores",
    "fit_gaussian_prior",
    "posterior_mean_gaussian",
    "marginal_loglik_mixture",
    "fit_mixture_prior_em",
    "posterior_mean_mixture",
    "dlda_classify",
    "BATTING_FIRST45",
    "BATTING_TRUTH",
    "batting_data",
    "extend_batting",
    "silverman_bandwidth",
]

# Efron & Morris (1975): batting averages over the first 45 at-bats and over
# the remainder of the 1970 season, as printed (three decimals).
BATTING_FIRST45 = np.array([
    0.400, 0.378, 0.356, 0.333, 0.311, 0.311, 0.289, 0.267, 0.244,
    0.244, 0.222, 0.222, 0.222, 0.222, 0.222, 0.200, 0.178, 0.156,
])
BATTING_TRUTH = np.array([
    0.346, 0.298, 0.276, 0.222, 0.273, 0.270, 0.263, 0.210, 0.269,
    0.230, 0.264, 0.256, 0.303, 0.264, 0.226, 0.286, 0.316, 0.200,
])
BATTING_AT_BATS = 45


@dataclass(frozen=True)
class ConvolutionData:
    z: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        s2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), z.shape).copy()
        if z.ndim != 1:
            raise EBShrinkError("scores must be a vector")
        if np.any(s2 <= 0):
            raise EBShrinkError("noise variances must be positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma2", s2)

    @property
    def p(self) -> int:
        return self.z.size


@dataclass(frozen=True)
class GaussianPrior:
    mu: float
    tau2: float

    def __post_init__(self):
        if self.tau2 < 0:
            raise EBShrinkError("prior variance must be non-negative")


@dataclass(frozen=True)
class MixturePrior:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise EBShrinkError("mixture weights must be non-negative and sum to one")
        if np.any(np.asarray(self.variances) < 0):
            raise EBShrinkError("component variances must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))

    @property
    def k(self) -> int:
        return self.weights.size


def z_scores(d: Dataset) -> ConvolutionData:
    """Two-sample t-type statistics per column, unit noise variance under the null."""
    if d.family != BINARY:
        raise EBShrinkError("z_scores needs a binary response")
    g1 = d.y == 1
    n1, n0 = int(g1.sum()), int((~g1).sum())
    if n1 == 0 or n0 == 0:
        raise EBShrinkError("both classes must be present")
    X1, X0 = d.X[g1], d.X[~g1]
    diff = X1.mean(axis=0) - X0.mean(axis=0)
    ss = ((X1 - X1.mean(axis=0)) ** 2).sum(axis=0) + ((X0 - X0.mean(axis=0)) ** 2).sum(axis=0)
    dof = max(n1 + n0 - 2, 1)
    se = np.sqrt(ss / dof * (1.0 / n1 + 1.0 / n0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, 0.0)
    return ConvolutionData(z, np.ones_like(z))


def fit_gaussian_prior(c: ConvolutionData) -> GaussianPrior:
    """One-pass moment fit: ``tau2 = var(Z) - mean(sigma2)``, then the
    precision-weighted mean using the (clipped) ``tau2``.

    ``var`` uses the unbiased (n - 1) divisor.
    """
    if c.p < 2:
        raise EBShrinkError("need at least two observations")
    tau2 = np.var(c.z, ddof=1) - c.sigma2.mean()
    if tau2 < 0:
        warnings.warn("moment estimate of tau2 is negative; clipped to 0", RuntimeWarning)
        tau2 = 0.0
    w = 1.0 / (tau2 + c.sigma2)
    return GaussianPrior(float(np.sum(w * c.z) / np.sum(w)), float(tau2))


def posterior_mean_gaussian(c: ConvolutionData, prior: GaussianPrior) -> np.ndarray:
    shrink = prior.tau2 / (prior.tau2 + c.sigma2)
    return prior.mu + shrink * (c.z - prior.mu)


def _component_logdens(c: ConvolutionData, prior: MixturePrior) -> np.ndarray:
    s2 = prior.variances[None, :] + c.sigma2[:, None]
    r = c.z[:, None] - prior.means[None, :]
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights)[None, :]
    return logw - 0.5 * (np.log(2 * np.pi * s2) + r * r / s2)


def marginal_loglik_mixture(c: ConvolutionData, prior: MixturePrior) -> float:
    """``sum_j log sum_k w_k N(Z_j; mu_k, tau_k^2 + sigma_j^2)``."""
    return float(logsumexp(_component_logdens(c, prior), axis=1).sum())


def _row_logsumexp(L):
    # scipy's logsumexp is several times slower on tall, narrow arrays
    mx = L.max(axis=1, keepdims=True)
    return mx + np.log(np.exp(L - mx).sum(axis=1, keepdims=True))


def _em_run(c, prior, max_iter, tol, var_floor):
    z, s2 = c.z, c.sigma2
    L = _component_logdens(c, prior)
    norm = _row_logsumexp(L)
    ll = float(norm.sum())
    trace = [ll]
    for _ in range(max_iter):
        resp = np.exp(L - norm)
        tk = prior.variances[None, :]
        # posterior moments of theta_j given component k
        m = (prior.means[None, :] * s2[:, None] + z[:, None] * tk) / (tk + s2[:, None])
        v = tk * s2[:, None] / (tk + s2[:, None])
        nk = resp.sum(axis=0)
        keep = nk > 1e-12
        w = nk / nk.sum()
        mu = prior.means.copy()
        var = prior.variances.copy()
        mu[keep] = (resp * m).sum(axis=0)[keep] / nk[keep]
        var[keep] = (resp * (v + (m - mu[None, :]) ** 2)).sum(axis=0)[keep] / nk[keep]
        var = np.maximum(var, var_floor)
        new = MixturePrior(w / w.sum(), mu, var)
        L = _component_logdens(c, new)
        norm = _row_logsumexp(L)
        new_ll = float(norm.sum())
        if new_ll < ll - 1e-8 * max(1.0, abs(ll)):
            raise AssertionError(f"EM decreased the marginal log-likelihood: {ll} -> {new_ll}")
        prior = new
        trace.append(new_ll)
        if new_ll - ll < tol:
            break
        ll = new_ll
    return prior, trace


def fit_mixture_prior_em(
    c: ConvolutionData,
    k: int,
    rng: np.random.Generator | None = None,
    restarts: int = 10,
    max_iter: int = 500,
    tol: float = 1e-8,
    return_trace: bool = False,
):
    """Maximum marginal likelihood K-component Gaussian mixture prior via EM.

    The first start places the means at the K quantile midpoints with equal
    weights and the pooled variance; further restarts jitter the means with
    random data points. The fit with the largest marginal log-likelihood is
    returned. Monotonicity of the marginal log-likelihood is asserted at
    every EM step.
    """
    if k < 1:
        raise EBShrinkError("need at least one component")
    if k > c.p:
        raise EBShrinkError(f"K={k} exceeds the number of observations p={c.p}")
    rng = np.random.default_rng(0) if rng is None else rng
    pooled = max(np.var(c.z) - c.sigma2.mean(), np.var(c.z) / k, 1e-8)
    q = np.quantile(c.z, (np.arange(k) + 0.5) / k)
    best = None
    for r in range(restarts):
        means = q if r == 0 else rng.choice(c.z, size=k, replace=False)
        start = MixturePrior(np.full(k, 1.0 / k), np.sort(means), np.full(k, pooled))
        fit, trace = _em_run(c, start, max_iter, tol, var_floor=0.0)
        if best is None or trace[-1] > best[1][-1]:
            best = (fit, trace)
    return best if return_trace else best[0]


def posterior_mean_mixture(c: ConvolutionData, prior: MixturePrior) -> np.ndarray:
    L = _component_logdens(c, prior)
    resp = np.exp(L - logsumexp(L, axis=1, keepdims=True))
    tk = prior.variances[None, :]
    s2 = c.sigma2[:, None]
    m = (prior.means[None, :] * s2 + c.z[:, None] * tk) / (tk + s2)
    return (resp * m).sum(axis=1)


def dlda_classify(W, theta) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``S = W theta`` and labels ``1{S > 0}`` (ties go to class 0)."""
    S = np.asarray(W, dtype=float) @ np.asarray(theta, dtype=float)
    return S, (S > 0).astype(int)


def batting_data(first45=BATTING_FIRST45) -> ConvolutionData:
    """Batting averages with binomial noise variances ``B(1 - B)/45``."""
    b = np.asarray(first45, dtype=float)
    return ConvolutionData(b, b * (1 - b) / BATTING_AT_BATS)


def silverman_bandwidth(x) -> float:
    """Silverman's rule of thumb, ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def extend_batting(
    truth, m: int, rng: np.random.Generator, first45=BATTING_FIRST45
) -> tuple[ConvolutionData, np.ndarray]:
    """Append ``m`` synthetic players to the batting data.

    New true averages are drawn from a Gaussian-kernel density estimate of
    ``truth``; their observed averages add Gaussian noise with variance
    ``theta(1 - theta)/45``, which is also the noise variance recorded for
    them. The original players keep the plug-in ``B(1 - B)/45``.

    Returns the combined :class:`ConvolutionData` and the combined truths.
    """
    truth = np.asarray(truth, dtype=float)
    if m < 0:
        raise EBShrinkError("m must be non-negative")
    if np.any((truth <= 0) | (truth >= 1)):
        raise EBShrinkError("true averages must lie in (0, 1)")
    base = np.asarray(first45, dtype=float)
    if m == 0:
        return batting_data(base), truth.copy()
    h = silverman_bandwidth(truth)
    new_theta = rng.choice(truth, size=m) + h * rng.standard_normal(m)
    if np.any((new_theta <= 0) | (new_theta >= 1)):
        raise EBShrinkError("kernel draw fell outside (0, 1)")
    new_s2 = new_theta * (1 - new_theta) / BATTING_AT_BATS
    new_b = new_theta + np.sqrt(new_s2) * rng.standard_normal(m)
    orig = batting_data(base)
    data = ConvolutionData(np.concatenate([orig.z, new_b]), np.concatenate([orig.sigma2, new_s2]))
    return data, np.concatenate([truth, new_theta])

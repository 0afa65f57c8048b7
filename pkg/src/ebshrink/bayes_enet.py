"""Bayesian elastic net: Gibbs sampler, Chib evidence and the penalty-grid scan.

Model (``sigma2`` fixed)::

    y | beta        ~ N(X beta, sigma2 I)
    beta_j          ~ g(l1, l2, sigma2) exp(-(l1 |beta_j| + l2 beta_j^2) / (2 sigma2))

With latent scales ``tau_j > 1`` the conditionals are
``beta | tau ~ N(A^-1 X'y, sigma2 A^-1)``, ``A = X'X + l2 diag(tau/(tau-1))``
and ``tau_j - 1 | beta ~ GIG(1/2, l1^2/(4 l2 sigma2), l2 beta_j^2/sigma2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, logsumexp

from .core import (
    BlockCovariance,
    Dataset,
    EBShrinkError,
    PosteriorChain,
    RngStream,
    batch_means_se,
    generate_response,
    parallel_map,
    sample_design,
)
from .variates import sample_enet_latent, sample_enet_latent_prior

log = logging.getLogger(__name__)

__all__ = [
    "EnetHyper",
    "enet_log_norm_const",
    "enet_log_prior",
    "sample_beta",
    "sample_beta_naive",
    "sample_tau",
    "gibbs_enet",
    "chib_log_ml",
    "sample_enet_prior",
    "GridScan",
    "grid_scan_experiment",
]


@dataclass(frozen=True)
class EnetHyper:
    lambda1: float
    lambda2: float
    sigma2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 <= 0 or self.sigma2 <= 0:
            raise EBShrinkError("need lambda1 >= 0, lambda2 > 0, sigma2 > 0")

    @property
    def psi(self) -> float:
        return self.lambda1 ** 2 / (4.0 * self.lambda2 * self.sigma2)


def enet_log_norm_const(h: EnetHyper) -> float:
    """``log g(l1, l2, sigma2)``, the per-coefficient prior normalizer."""
    a = h.lambda1 / np.sqrt(4.0 * h.lambda2 * h.sigma2)
    log_phi = -0.5 * a * a - 0.5 * np.log(2 * np.pi)
    return float(0.5 * np.log(h.lambda2 / (4.0 * h.sigma2)) + log_phi - log_ndtr(-a))


def enet_log_prior(beta, h: EnetHyper) -> float:
    b = np.asarray(beta, dtype=float)
    return float(b.size * enet_log_norm_const(h)
                 - (h.lambda1 * np.abs(b).sum() + h.lambda2 * (b * b).sum()) / (2 * h.sigma2))


def _prior_cov_diag(tau, h):
    # prior covariance of beta given tau: sigma2/l2 * (1 - 1/tau)
    return h.sigma2 / h.lambda2 * (1.0 - 1.0 / tau)


def sample_beta(tau, h: EnetHyper, X, y, rng: np.random.Generator) -> np.ndarray:
    """Exact draw of ``beta | tau`` with the n x n auxiliary-variable scheme.

    ``u ~ N(0, D)``, ``v = X u / sigma + N(0, I_n)``, then
    ``beta = u + D X' (X D X'/sigma2 + I)^-1 (y/sigma - v) / sigma`` where
    ``D = sigma2/l2 (I - diag(1/tau))`` is the conditional prior covariance.
    """
    n, p = X.shape
    sig = np.sqrt(h.sigma2)
    tau = np.asarray(tau, float)
    if not np.all(tau > 1.0):
        raise EBShrinkError("latent scales must exceed 1")
    D = _prior_cov_diag(tau, h)
    u = np.sqrt(D) * rng.standard_normal(p)
    v = X @ u / sig + rng.standard_normal(n)
    XD = X * D
    M = XD @ X.T / h.sigma2
    M[np.diag_indices(n)] += 1.0
    try:
        cf = linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise EBShrinkError("n x n system in the beta update is not positive definite") from None
    w = linalg.cho_solve(cf, y / sig - v, check_finite=False)
    return u + XD.T @ w / sig


def sample_beta_naive(tau, h: EnetHyper, X, y, rng: np.random.Generator) -> np.ndarray:
    """Reference draw of ``beta | tau`` through a p x p Cholesky of ``A``."""
    tau = np.asarray(tau, float)
    A = X.T @ X + np.diag(h.lambda2 * tau / (tau - 1.0))
    L = linalg.cholesky(A, lower=True)
    mean = linalg.cho_solve((L, True), X.T @ y)
    z = rng.standard_normal(X.shape[1])
    return mean + np.sqrt(h.sigma2) * linalg.solve_triangular(L.T, z, lower=False)


def sample_tau(beta, h: EnetHyper, rng: np.random.Generator) -> np.ndarray:
    """Draw the latent scales given ``beta`` (inverse-Gaussian route)."""
    return sample_enet_latent(beta, h.lambda1, h.lambda2, h.sigma2, rng)


def gibbs_enet(
    d: Dataset,
    h: EnetHyper,
    n_keep: int = 8000,
    burn_in: int = 2000,
    rng: np.random.Generator | None = None,
    tau0=None,
    sampler: str = "auto",
) -> PosteriorChain:
    """Two-block Gibbs sampler for the Bayesian elastic net.

    ``sampler`` chooses the beta update: ``"fast"`` (n x n), ``"naive"``
    (p x p) or ``"auto"`` (whichever system is smaller).
    """
    rng = np.random.default_rng() if rng is None else rng
    X, y = d.X, d.y
    if sampler == "auto":
        sampler = "naive" if d.p < d.n else "fast"
    draw = sample_beta if sampler == "fast" else sample_beta_naive
    if tau0 is not None:
        tau = np.asarray(tau0, float).copy()
    elif h.lambda1 > 0:
        tau = sample_enet_latent_prior(d.p, h.lambda1, h.lambda2, h.sigma2, rng)
    else:
        tau = np.full(d.p, 1e12)
    betas = np.empty((n_keep, d.p))
    taus = np.empty((n_keep, d.p))
    for it in range(burn_in + n_keep):
        beta = draw(tau, h, X, y, rng)
        tau = sample_tau(beta, h, rng)
        if it >= burn_in:
            betas[it - burn_in] = beta
            taus[it - burn_in] = tau
    return PosteriorChain({"beta": betas, "tau": taus}, burn_in=burn_in)


def _chib_terms(tau_draws, beta_star, h: EnetHyper, X, y):
    """``log p(beta*|y, tau_k) - log f(y|beta*) - log pi(beta*)`` for each draw."""
    n, p = X.shape
    l1, l2, s2 = h.lambda1, h.lambda2, h.sigma2
    a = l1 / np.sqrt(4.0 * l2 * s2)
    const = (
        0.5 * (n - p) * np.log(2 * np.pi)
        + 0.5 * n * np.log(s2)
        + 0.5 * p * np.log(4.0)
        - 0.5 * n * np.log(l2)
        - p * (-0.5 * a * a - 0.5 * np.log(2 * np.pi))
        + p * log_ndtr(-a)
        + l1 / (2 * s2) * np.abs(beta_star).sum()
    )
    b2 = beta_star * beta_star
    out = np.empty(len(tau_draws))
    for k, tau in enumerate(tau_draws):
        if not np.all(tau > 1.0):
            raise EBShrinkError(f"Chib term not finite at sample {k}")
        d = 1.0 - 1.0 / tau
        M = (X * d) @ X.T
        M[np.diag_indices(n)] += l2
        try:
            L = linalg.cholesky(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise EBShrinkError(f"Chib term not finite at sample {k}") from None
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        z = linalg.solve_triangular(L, y, lower=True, check_finite=False)
        val = (
            const
            - l2 / (2 * s2) * np.sum(b2 / (tau - 1.0))
            + 0.5 * np.sum(np.log(tau / (tau - 1.0)))
            + 0.5 * logdet
            + l2 / (2 * s2) * (z @ z)
        )
        if not np.isfinite(val):
            raise EBShrinkError(f"Chib term not finite at sample {k}")
        out[k] = val
    return out


def chib_log_ml(
    chain: PosteriorChain,
    h: EnetHyper,
    d: Dataset,
    beta_star=None,
    return_se: bool = False,
):
    """Chib's log marginal likelihood from the kept latent-scale draws.

    ``log m(y) ~ log K - logsumexp_k [log p(beta*|y, tau_k) - log f(y|beta*) pi(beta*)]``,
    with ``beta*`` defaulting to the posterior mean of ``beta``. With
    ``return_se`` also returns a batch-means Monte Carlo standard error
    (delta method on the averaged posterior ordinate).
    """
    beta_star = chain.mean("beta") if beta_star is None else np.asarray(beta_star, float)
    terms = _chib_terms(chain["tau"], beta_star, h, d.X, d.y)
    K = terms.size
    value = float(np.log(K) - logsumexp(terms))
    if not return_se:
        return value
    ratios = np.exp(terms - terms.max())
    se = float(batch_means_se(ratios, n_batches=min(50, K)) / ratios.mean()) if K > 1 else 0.0
    return value, se


def sample_enet_prior(p: int, h: EnetHyper, rng: np.random.Generator) -> np.ndarray:
    """Draw ``p`` coefficients from the elastic-net prior through the latent scales."""
    if h.lambda1 == 0:
        return np.sqrt(h.sigma2 / h.lambda2) * rng.standard_normal(p)
    tau = sample_enet_latent_prior(p, h.lambda1, h.lambda2, h.sigma2, rng)
    return np.sqrt(_prior_cov_diag(tau, h)) * rng.standard_normal(p)


# --- grid experiment ----------------------------------------------------------


@dataclass
class GridScan:
    lambda1: np.ndarray
    lambda2: np.ndarray
    log_ml: np.ndarray
    mc_se: np.ndarray
    extra: dict = field(default_factory=dict)

    def rows(self):
        for i, l1 in enumerate(self.lambda1):
            for j, l2 in enumerate(self.lambda2):
                yield float(l1), float(l2), float(self.log_ml[i, j]), float(self.mc_se[i, j])


def _scan_cell(d, l1, l2, sigma2, n_keep, burn_in, stream):
    h = EnetHyper(l1, l2, sigma2)
    chain = gibbs_enet(d, h, n_keep=n_keep, burn_in=burn_in, rng=stream.generator())
    return chib_log_ml(chain, h, d, return_se=True)


def grid_scan_experiment(config: dict, threads: int = 1) -> GridScan:
    """Simulate one data set and compute the Chib evidence on a penalty grid.

    ``config`` keys: ``n``, ``p``, ``lambda1_grid``, ``lambda2_grid``,
    ``true_lambda1`` / ``true_lambda2`` (default 2, 2), ``n_keep``,
    ``burn_in``, ``seed``; ``include_truth`` additionally evaluates the true
    cell and stores it in ``extra["truth"]``.
    """
    n, p = int(config["n"]), int(config["p"])
    g1 = np.asarray(config["lambda1_grid"], float)
    g2 = np.asarray(config["lambda2_grid"], float)
    if np.any(np.diff(g1) <= 0) or np.any(np.diff(g2) <= 0):
        raise EBShrinkError("grids must be strictly increasing")
    t1 = float(config.get("true_lambda1", 2.0))
    t2 = float(config.get("true_lambda2", 2.0))
    sigma2 = float(config.get("sigma2", 1.0))
    n_keep = int(config.get("n_keep", 8000))
    burn_in = int(config.get("burn_in", 2000))
    root = RngStream(int(config["seed"]))
    rng = root.child(0).generator()
    X = sample_design(n, BlockCovariance(p), rng)
    beta = sample_enet_prior(p, EnetHyper(t1, t2, sigma2), rng)
    y = generate_response(X, beta, "gaussian", rng, sigma2)
    d = Dataset(X, y)
    cells = [(l1, l2) for l1 in g1 for l2 in g2]
    jobs = [(d, l1, l2, sigma2, n_keep, burn_in, root.child(1 + i)) for i, (l1, l2) in enumerate(cells)]
    if config.get("include_truth", False):
        jobs.append((d, t1, t2, sigma2, n_keep, burn_in, root.child(1 + len(cells))))
    res = parallel_map(lambda a: _scan_cell(*a), jobs, threads)
    vals = np.array([r[0] for r in res[: len(cells)]]).reshape(g1.size, g2.size)
    ses = np.array([r[1] for r in res[: len(cells)]]).reshape(g1.size, g2.size)
    extra = {"beta": beta}
    if config.get("include_truth", False):
        extra["truth"] = (t1, t2, res[-1][0], res[-1][1])
    return GridScan(g1, g2, vals, ses, extra)

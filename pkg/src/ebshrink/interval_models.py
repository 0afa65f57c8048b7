"""Group-ridge Bayesian logistic regression and posterior predictive intervals.

Three treatments of the group prior precisions ``tau_g^-2``:

* ``EB``: fixed, ``tau_g^-2 = lam * lam_g^2``;
* ``FB``: independent ``Gamma(a1, a2)`` hyperpriors per group;
* ``Hybrid``: ``tau_g^-2 = tau^-2 * lam_g^2`` with ``tau^-2 ~ Gamma(a1, a2)``.

``lam_g^2`` are the EB multipliers (geometric mean one), so EB with penalty
``lam`` and Hybrid with ``tau^-2 = lam`` coincide. The sampler uses
Polya-Gamma data augmentation and carries an unpenalized intercept.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .core import (
    BINARY,
    BlockCovariance,
    Dataset,
    EBShrinkError,
    GroupStructure,
    PosteriorChain,
    RngStream,
    generate_response,
    parallel_map,
    sample_design,
)
from .ridge_eb import cv_ridge, group_moment_eb, multipliers_from_variances
from .variates import polya_gamma

log = logging.getLogger(__name__)

__all__ = [
    "PrecisionSpec",
    "PredictiveIntervals",
    "pg_logistic_gibbs",
    "sample_group_precision",
    "intervals_from_chain",
    "hpd_interval",
    "calibrate_tau0",
    "simulate_group_logistic",
    "fit_eb_penalties",
    "coverage_experiment",
    "moving_average_coverage",
]

VARIANTS = ("EB", "FB", "Hybrid")
KINDS = ("equal-tail", "hpd")
INTERCEPT_PRECISION = 1e-4


@dataclass(frozen=True)
class PrecisionSpec:
    """Prior on the group precisions.

    ``lam`` is the EB global penalty (and the starting value of the random
    precisions for FB and Hybrid); ``multipliers`` are the ``lam_g^2``.
    """

    variant: str
    lam: float = 1.0
    multipliers: tuple | None = None
    alpha1: float = 1e-3
    alpha2: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EBShrinkError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lam <= 0 or self.alpha1 <= 0 or self.alpha2 <= 0:
            raise EBShrinkError("lam, alpha1 and alpha2 must be positive")
        if self.multipliers is not None and np.any(np.asarray(self.multipliers) <= 0):
            raise EBShrinkError("group multipliers must be positive")

    def group_multipliers(self, n_groups: int) -> np.ndarray:
        if self.multipliers is None:
            return np.ones(n_groups)
        m = np.asarray(self.multipliers, dtype=float)
        if m.shape != (n_groups,):
            raise EBShrinkError(f"need {n_groups} multipliers, got {m.size}")
        return m


@dataclass
class PredictiveIntervals:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kind: str
    level: float

    def covers(self, q) -> np.ndarray:
        q = np.asarray(q)
        return (self.lower <= q) & (q <= self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def pg_logistic_gibbs(
    d: Dataset,
    spec: PrecisionSpec,
    groups: GroupStructure,
    n_keep: int = 4000,
    burn_in: int = 1000,
    rng: np.random.Generator | None = None,
    intercept: bool = True,
) -> PosteriorChain:
    """Polya-Gamma Gibbs sampler for group-ridge logistic regression.

    Kept draws: ``beta`` (n_keep x p), ``intercept`` and ``precision``
    (n_keep x G, the group precisions in force for that draw).
    """
    if d.family != BINARY:
        raise EBShrinkError("logistic sampler needs a binary response")
    if groups.p != d.p:
        raise EBShrinkError("group structure does not cover the columns of X")
    rng = np.random.default_rng() if rng is None else rng
    G = groups.n_groups
    a = groups.assignment
    mult = spec.group_multipliers(G)
    Xa = np.column_stack([np.ones(d.n), d.X]) if intercept else d.X
    off = 1 if intercept else 0
    kappa = Xa.T @ (d.y - 0.5)
    prec_g = spec.lam * mult
    sizes = groups.sizes
    beta = np.zeros(Xa.shape[1])
    out_b = np.empty((n_keep, d.p))
    out_c = np.empty(n_keep)
    out_p = np.empty((n_keep, G))
    for it in range(burn_in + n_keep):
        omega = polya_gamma(Xa @ beta, rng)
        prior = prec_g[a]
        if intercept:
            prior = np.concatenate([[INTERCEPT_PRECISION], prior])
        Q = (Xa * omega[:, None]).T @ Xa
        Q[np.diag_indices_from(Q)] += prior
        try:
            L = linalg.cholesky(Q, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise EBShrinkError(f"posterior precision not positive definite at iteration {it}") from None
        mean = linalg.cho_solve((L, True), kappa, check_finite=False)
        beta = mean + linalg.solve_triangular(L.T, rng.standard_normal(beta.size), lower=False,
                                              check_finite=False)
        b = beta[off:]
        if spec.variant != "EB":
            prec_g = sample_group_precision(spec, np.bincount(a, weights=b * b, minlength=G), sizes, rng)
        if it >= burn_in:
            k = it - burn_in
            out_b[k] = b
            out_c[k] = beta[0] if intercept else 0.0
            out_p[k] = prec_g
    return PosteriorChain(
        {"beta": out_b, "intercept": out_c, "precision": out_p},
        burn_in=burn_in,
        info={"variant": spec.variant},
    )


def sample_group_precision(spec: PrecisionSpec, ss, sizes, rng: np.random.Generator) -> np.ndarray:
    """Draw the group precisions given per-group sums of squared coefficients.

    FB: independent ``Gamma(alpha1 + p_g/2, rate alpha2 + ss_g/2)`` per group.
    Hybrid: one global ``t ~ Gamma(alpha1 + p/2, rate alpha2 + sum_g m_g ss_g/2)``
    scaled by the fixed multipliers. EB keeps ``lam * m_g``.
    """
    ss = np.asarray(ss, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    mult = spec.group_multipliers(ss.size)
    if spec.variant == "FB":
        return rng.gamma(spec.alpha1 + sizes / 2.0, 1.0 / (spec.alpha2 + ss / 2.0))
    if spec.variant == "Hybrid":
        t = rng.gamma(spec.alpha1 + sizes.sum() / 2.0, 1.0 / (spec.alpha2 + np.dot(mult, ss) / 2.0))
        return t * mult
    return spec.lam * mult


def hpd_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Shortest window containing ``ceil(level * M)`` of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    M = s.size
    k = min(max(math.ceil(level * M), 1), M)
    widths = s[k - 1:] - s[: M - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


def intervals_from_chain(chain: PosteriorChain, X_test, level: float = 0.95, kind: str = "hpd"):
    """Posterior intervals for ``q_i = expit(x_i beta)`` at each test row.

    The point estimate is the posterior mean of ``q_i``.
    """
    if kind not in KINDS:
        raise EBShrinkError(f"unknown interval kind {kind!r}")
    if len(chain) == 0:
        raise EBShrinkError("empty chain")
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    q = expit(chain["beta"] @ X_test.T + chain["intercept"][:, None])
    if kind == "equal-tail":
        lo, hi = np.quantile(q, [(1 - level) / 2, (1 + level) / 2], axis=0)
    else:
        lo, hi = np.array([hpd_interval(q[:, i], level) for i in range(q.shape[1])]).T
    return PredictiveIntervals(q.mean(axis=0), lo, hi, kind, level)


# --- simulation ---------------------------------------------------------------


def _group_scales(groups: GroupStructure) -> np.ndarray:
    # prior sd of group g relative to tau0
    return 2.0 ** (-groups.assignment.astype(float))


def calibrate_tau0(
    groups: GroupStructure,
    cov: BlockCovariance,
    rng: np.random.Generator,
    target=(0.18, 0.22),
    cut: float = 0.05,
    size: int = 10_000,
) -> float:
    """Choose ``tau0`` so that a fraction in ``target`` of ``q`` falls outside ``[cut, 1-cut]``.

    Each of the ``size`` population draws pairs a fresh row of X with a fresh
    coefficient vector; the draws are reused across the bisection, which
    makes the extreme fraction monotone in ``tau0``.
    """
    X = sample_design(size, cov, rng)
    Z = rng.standard_normal((size, groups.p)) * _group_scales(groups)
    s = np.abs(np.einsum("ij,ij->i", X, Z))
    thr = np.log((1 - cut) / cut)

    def frac(t0):
        return float(np.mean(t0 * s > thr))

    mid = 0.5 * (target[0] + target[1])
    lo, hi = 1e-6, 1.0
    while frac(hi) < mid:
        hi *= 2
        if hi > 1e6:
            raise EBShrinkError("could not bracket tau0")
    for _ in range(200):
        t0 = 0.5 * (lo + hi)
        f = frac(t0)
        if abs(f - mid) < 1e-3:
            break
        lo, hi = (t0, hi) if f < mid else (lo, t0)
    if not target[0] <= f <= target[1]:
        raise EBShrinkError("tau0 calibration missed the target band")
    return t0


def simulate_group_logistic(groups, cov, tau0, n_train, n_test, rng):
    """Training set, test design and true test probabilities for one replicate."""
    beta = tau0 * _group_scales(groups) * rng.standard_normal(groups.p)
    X = sample_design(n_train + n_test, cov, rng)
    y = generate_response(X[:n_train], beta, BINARY, rng)
    q_test = expit(X[n_train:] @ beta)
    return Dataset(X[:n_train], y, BINARY), X[n_train:], q_test, beta


def fit_eb_penalties(d: Dataset, groups: GroupStructure, rng, k: int = 10, lambdas=None):
    """Global penalty by CV and group multipliers by moment EB.

    Returns ``(lam, multipliers)`` with multipliers inverse to the moment
    estimates of the group variances and geometric mean one.
    """
    alpha = group_moment_eb(d, groups, lam0=1.0)
    mult = multipliers_from_variances(alpha)
    lam, _ = cv_ridge(d, k=k, lambdas=lambdas, rng=rng, multipliers=mult[groups.assignment])
    return lam, mult


@dataclass
class CoverageConfig:
    n_groups: int = 2
    group_size: int = 30
    n_train: int = 100
    n_test: int = 100
    rho: float = 0.1
    block: int = 5
    n_rep: int = 50
    variants: tuple = VARIANTS
    kinds: tuple = KINDS
    level: float = 0.95
    n_keep: int = 4000
    burn_in: int = 1000
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    cv_folds: int = 10
    tau0: float | None = None
    seed: int = 0
    window: int = 200
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "CoverageConfig":
        known = {k: v for k, v in cfg.items() if k in cls.__dataclass_fields__ and k != "extra"}
        for k in ("variants", "kinds"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)


def _coverage_replicate(args):
    cfg, groups, cov, tau0, r, stream = args
    rng = stream.generator()
    d, X_test, q_test, _ = simulate_group_logistic(groups, cov, tau0, cfg.n_train, cfg.n_test, rng)
    lam, mult = fit_eb_penalties(d, groups, rng, k=cfg.cv_folds)
    rows = []
    for variant in cfg.variants:
        spec = PrecisionSpec(variant, lam, tuple(mult), cfg.alpha1, cfg.alpha2)
        chain = pg_logistic_gibbs(d, spec, groups, cfg.n_keep, cfg.burn_in, rng)
        for kind in cfg.kinds:
            iv = intervals_from_chain(chain, X_test, cfg.level, kind)
            cov_ind = iv.covers(q_test)
            for i in range(q_test.size):
                rows.append(
                    {
                        "replicate": r,
                        "variant": variant,
                        "kind": kind,
                        "q_true": float(q_test[i]),
                        "point": float(iv.point[i]),
                        "lower": float(iv.lower[i]),
                        "upper": float(iv.upper[i]),
                        "covered": int(cov_ind[i]),
                    }
                )
    return rows, {"lambda": lam, "multipliers": mult.tolist()}


def coverage_experiment(config, threads: int | None = 1):
    """Coverage simulation for the EB, FB and Hybrid interval models.

    Returns ``(rows, info)``; each row holds replicate, variant, kind,
    ``q_true``, point estimate, interval bounds and the coverage indicator.
    """
    cfg = config if isinstance(config, CoverageConfig) else CoverageConfig.from_dict(config)
    groups = GroupStructure.contiguous([cfg.group_size] * cfg.n_groups)
    cov = BlockCovariance(groups.p, cfg.block, cfg.rho)
    root = RngStream(cfg.seed)
    tau0 = cfg.tau0
    if tau0 is None:
        tau0 = calibrate_tau0(groups, cov, root.child(0).generator())
    jobs = [(cfg, groups, cov, tau0, r, root.child(1 + r)) for r in range(cfg.n_rep)]
    res = parallel_map(_coverage_replicate, jobs, threads)
    rows = [row for rr, _ in res for row in rr]
    info = {"tau0": tau0, "penalties": [pi for _, pi in res]}
    return rows, info


def moving_average_coverage(rows, window: int = 200):
    """Sliding-window mean of the coverage indicator after sorting by ``q_true``.

    Returns ``(q_mid, coverage)``; ``q_mid`` is the window mean of ``q_true``.
    """
    q = np.array([r["q_true"] for r in rows], dtype=float)
    c = np.array([r["covered"] for r in rows], dtype=float)
    if q.size == 0:
        raise EBShrinkError("no coverage rows")
    order = np.argsort(q, kind="stable")
    q, c = q[order], c[order]
    if q.size < window:
        warnings.warn(f"only {q.size} rows for a window of {window}; returning the overall mean")
        return np.array([q.mean()]), np.array([c.mean()])
    kern = np.ones(window) / window
    return np.convolve(q, kern, mode="valid"), np.convolve(c, kern, mode="valid")

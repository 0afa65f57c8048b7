"""Spike-and-slab linear regression with co-data moderated inclusion probabilities.

    y | beta         ~ N(X beta, sigma2 I)
    beta_j | xi_j=0  = 0
    beta_j | xi_j=1  ~ N(0, slab_var)
    xi_j             ~ Bern(nu_j),  logit(nu_j) = C_j alpha

``alpha`` is estimated by Monte Carlo EM: the E-step runs the Gibbs sampler at
the current ``alpha``, the M-step is a binomial regression of the inclusion
counts on ``C``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit, logit

from .core import Dataset, EBShrinkError, PosteriorChain

log = logging.getLogger(__name__)

__all__ = [
    "SpikeSlabModel",
    "McemTrace",
    "McemSchedule",
    "ss_gibbs",
    "fit_alpha_binomial",
    "binomial_loglik",
    "conditional_loglik",
    "run_mcem",
]

NU_CLAMP = 1e-12


@dataclass
class SpikeSlabModel:
    """Gaussian slab, point-mass spike, known noise variance, logit co-data link.

    Non-constant columns of ``codata`` are standardized on construction;
    constant columns (the intercept) are left untouched. ``alpha`` always
    refers to the standardized matrix ``C``.
    """

    slab_var: float
    codata: np.ndarray
    sigma2: float = 1.0
    C: np.ndarray = field(init=False, repr=False)
    clamp_count: int = field(default=0, init=False)

    def __post_init__(self):
        if self.slab_var <= 0 or self.sigma2 <= 0:
            raise EBShrinkError("slab variance and sigma2 must be positive")
        C = np.asarray(self.codata, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        p, s = C.shape
        if s > p / 10:
            warnings.warn(f"{s} co-data columns for {p} variables; alpha may be poorly identified")
        sd = C.std(axis=0)
        const = sd < 1e-12
        Cs = C.copy()
        Cs[:, ~const] = (C[:, ~const] - C[:, ~const].mean(axis=0)) / sd[~const]
        if np.linalg.matrix_rank(Cs) < s:
            raise EBShrinkError("co-data matrix is not of full column rank")
        self.C = Cs

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def nu(self, alpha) -> np.ndarray:
        """Prior inclusion probabilities, clamped to ``[1e-12, 1 - 1e-12]``."""
        raw = expit(self.C @ np.asarray(alpha, dtype=float))
        nu = np.clip(raw, NU_CLAMP, 1.0 - NU_CLAMP)
        self.clamp_count += int(np.count_nonzero(nu != raw))
        return nu


@dataclass
class McemSchedule:
    k_max: int = 30
    m0: int = 200
    m_max: int = 5000
    burn_in: int = 200
    tol: float = 0.05
    patience: int = 3

    def m(self, k: int) -> int:
        return int(min(self.m0 * 2 ** k, self.m_max))


@dataclass
class McemTrace:
    alpha: list = field(default_factory=list)
    m: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    q_old: list = field(default_factory=list)
    q_new: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.m)

    def to_dict(self) -> dict:
        return {
            "alpha": [list(map(float, a)) for a in self.alpha],
            "m": list(self.m),
            "q_old": list(map(float, self.q_old)),
            "q_new": list(map(float, self.q_new)),
            "converged": self.converged,
        }


@numba.njit(cache=True)
def _sweeps(X, xtx, resid, beta, xi, logit_nu, slab_var, sigma2, U, Z, xi_out, beta_out, keep):
    """Systematic-scan sweeps; ``resid = y - X beta`` is updated in place.

    ``U`` and ``Z`` hold one uniform and one normal per (sweep, variable),
    drawn outside so results do not depend on the compiled kernel.
    """
    n, p = X.shape
    counts = np.zeros(p)
    for m in range(U.shape[0]):
        for j in range(p):
            bj = beta[j]
            xr = 0.0
            for i in range(n):
                xr += X[i, j] * (resid[i] + X[i, j] * bj)
            prec = xtx[j] / sigma2 + 1.0 / slab_var
            v = 1.0 / prec
            mu = v * xr / sigma2
            lo = logit_nu[j] + 0.5 * np.log(v / slab_var) + 0.5 * mu * mu / v
            if lo >= 0:
                pin = 1.0 / (1.0 + np.exp(-lo))
            else:
                e = np.exp(lo)
                pin = e / (1.0 + e)
            if U[m, j] < pin:
                nb = mu + np.sqrt(v) * Z[m, j]
                xi[j] = 1
            else:
                nb = 0.0
                xi[j] = 0
            if nb != bj:
                d = nb - bj
                for i in range(n):
                    resid[i] -= X[i, j] * d
                beta[j] = nb
            counts[j] += xi[j]
        if keep:
            for j in range(p):
                xi_out[m, j] = xi[j]
                beta_out[m, j] = beta[j]
    return counts


@dataclass
class _State:
    beta: np.ndarray
    xi: np.ndarray
    resid: np.ndarray


def _initial_state(d: Dataset) -> _State:
    return _State(np.zeros(d.p), np.zeros(d.p, dtype=np.int64), d.y.copy())


def _run(d, model, nu, state, n_sweeps, rng, keep, chunk=1000):
    X = np.ascontiguousarray(d.X)
    xtx = (X * X).sum(axis=0)
    lnu = logit(nu)
    total = np.zeros(d.p)
    xi_all, beta_all = [], []
    done = 0
    while done < n_sweeps:
        k = min(chunk, n_sweeps - done)
        U = rng.random((k, d.p))
        Z = rng.standard_normal((k, d.p))
        xo = np.empty((k if keep else 0, d.p), dtype=np.int8)
        bo = np.empty((k if keep else 0, d.p))
        total += _sweeps(X, xtx, state.resid, state.beta, state.xi, lnu,
                         model.slab_var, model.sigma2, U, Z, xo, bo, keep)
        if keep:
            xi_all.append(xo)
            beta_all.append(bo)
        done += k
    if keep:
        return total, np.concatenate(xi_all), np.concatenate(beta_all)
    return total, None, None


def ss_gibbs(
    d: Dataset,
    model: SpikeSlabModel,
    nu,
    n_keep: int,
    burn_in: int = 200,
    rng: np.random.Generator | None = None,
    state: _State | None = None,
    keep: bool = True,
):
    """Run the collapsed spike-and-slab Gibbs sampler at fixed ``nu``.

    Each sweep draws ``xi_j`` with ``beta_j`` integrated out and then
    ``beta_j | xi_j``. Returns ``(chain, counts, state)``; ``counts[j]`` is
    the number of kept sweeps with ``xi_j = 1``.
    """
    if d.family != "gaussian":
        raise EBShrinkError("spike-and-slab regression needs a continuous response")
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (d.p,) or np.any(nu <= 0) or np.any(nu >= 1):
        raise EBShrinkError("nu must be a p-vector inside (0, 1)")
    rng = np.random.default_rng() if rng is None else rng
    state = _initial_state(d) if state is None else state
    if burn_in:
        _run(d, model, nu, state, burn_in, rng, keep=False)
    counts, xi, beta = _run(d, model, nu, state, n_keep, rng, keep=keep)
    chain = PosteriorChain({"xi": xi, "beta": beta} if keep else {}, burn_in=burn_in)
    return chain, counts, state


def binomial_loglik(alpha, B, M, C) -> float:
    """``sum_j log Bin(B_j; M, expit(C_j alpha))`` without the binomial coefficients."""
    eta = C @ alpha
    return float(np.sum(B * eta - M * np.logaddexp(0.0, eta)))


def fit_alpha_binomial(B, M, C, alpha0=None, tol=1e-8, max_iter=100) -> np.ndarray:
    """Logit binomial regression of counts ``B_j`` out of ``M`` on ``C`` (Newton-IRLS).

    Under separation the MLE does not exist; a ridge ``1e-6 |alpha|^2`` is
    then added and a warning issued.
    """
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if np.any(B < 0) or np.any(B > M):
        raise EBShrinkError("counts must lie in [0, M]")
    a = np.zeros(C.shape[1]) if alpha0 is None else np.asarray(alpha0, float).copy()
    try:
        return _newton_binomial(B, M, C, a, 0.0, tol, max_iter)
    except _Separation:
        warnings.warn("separation in the co-data regression; using a 1e-6 ridge")
        return _newton_binomial(B, M, C, np.zeros(C.shape[1]), 1e-6, tol, 10 * max_iter)


class _Separation(Exception):
    pass


def _newton_binomial(B, M, C, a, ridge, tol, max_iter):
    def obj(a):
        return binomial_loglik(a, B, M, C) - ridge * a @ a

    f = obj(a)
    for _ in range(max_iter):
        mu = expit(C @ a)
        g = C.T @ (B - M * mu) - 2 * ridge * a
        if np.max(np.abs(g)) < tol * max(1.0, M):
            return a
        w = M * mu * (1 - mu)
        H = (C * w[:, None]).T @ C + 2 * ridge * np.eye(C.shape[1])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise _Separation from None
        t = 1.0
        while True:
            a_new = a + t * step
            f_new = obj(a_new)
            if f_new >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t /= 2
        if ridge == 0 and np.max(np.abs(a_new)) > 30:
            raise _Separation
        if np.max(np.abs(a_new - a)) < 1e-12 * max(1.0, np.max(np.abs(a))):
            return a_new
        a, f = a_new, f_new
    if ridge == 0:
        raise _Separation
    return a


def conditional_loglik(xi, alpha, model: SpikeSlabModel) -> float:
    """``log pi(xi; alpha) = sum_j log Bern(xi_j; nu_j)``, averaged over rows of ``xi``."""
    nu = model.nu(alpha)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    vals = xi @ np.log(nu) + (1 - xi) @ np.log1p(-nu)
    return float(vals.mean())


def run_mcem(
    d: Dataset,
    model: SpikeSlabModel,
    alpha0=None,
    schedule: McemSchedule | None = None,
    rng: np.random.Generator | None = None,
):
    """Monte Carlo EM for ``alpha``.

    Iteration ``k`` runs ``schedule.burn_in`` + ``M_k`` sweeps at the current
    ``alpha`` (chain warm-started from the previous iteration), counts
    inclusions and refits ``alpha`` by binomial regression. Stops after
    ``patience`` consecutive changes below ``tol`` (sup norm) or at ``k_max``.
    Returns ``(alpha_hat, trace, chain)`` with ``chain`` run at ``alpha_hat``.
    """
    schedule = McemSchedule() if schedule is None else schedule
    rng = np.random.default_rng() if rng is None else rng
    s = model.C.shape[1]
    if alpha0 is None:
        alpha = np.zeros(s)
        const = np.flatnonzero(model.C.std(axis=0) < 1e-12)
        if const.size:
            alpha[const[0]] = logit(0.1) / model.C[0, const[0]]
    else:
        alpha = np.asarray(alpha0, dtype=float).copy()
    trace = McemTrace()
    trace.alpha.append(alpha.copy())
    state = None
    calm = 0
    for k in range(schedule.k_max):
        M = schedule.m(k)
        _, counts, state = ss_gibbs(d, model, model.nu(alpha), M, schedule.burn_in, rng, state, keep=False)
        new = fit_alpha_binomial(counts, M, model.C, alpha0=alpha)
        trace.m.append(M)
        trace.counts.append(counts)
        trace.q_old.append(binomial_loglik(alpha, counts, M, model.C) / M)
        trace.q_new.append(binomial_loglik(new, counts, M, model.C) / M)
        change = np.max(np.abs(new - alpha))
        alpha = new
        trace.alpha.append(alpha.copy())
        log.debug("mcem iteration %d: M=%d alpha=%s change=%.3g", k, M, alpha, change)
        calm = calm + 1 if change < schedule.tol else 0
        if calm >= schedule.patience:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("MCEM stopped at k_max=%d without meeting the tolerance", schedule.k_max)
    chain, _, _ = ss_gibbs(d, model, model.nu(alpha), trace.m[-1], schedule.burn_in, rng, state)
    return alpha, trace, chain

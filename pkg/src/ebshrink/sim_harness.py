"""Declarative experiment runner.

A config is a JSON object. Single experiments carry a ``kind`` (``emse``,
``enet-surface``, ``coverage`` or ``batting``) plus that kind's parameters;
``run_all`` takes ``{"out": dir, "experiments": [...]}`` and writes one CSV
per experiment together with ``manifest.json``.

Every replicate draws from its own :class:`~ebshrink.core.RngStream`, so
outputs are byte-identical for any thread count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bayes_enet import grid_scan_experiment
from .core import (
    BlockCovariance,
    Dataset,
    EBShrinkError,
    RngStream,
    generate_response,
    parallel_map,
    sample_design,
)
from .interval_models import CoverageConfig, coverage_experiment, moving_average_coverage
from .normal_means import (
    BATTING_FIRST45,
    BATTING_TRUTH,
    batting_data,
    extend_batting,
    fit_gaussian_prior,
    fit_mixture_prior_em,
    posterior_mean_gaussian,
    posterior_mean_mixture,
)
from .ridge_eb import (
    cv_ridge,
    emse_closed_form,
    ridge_fit,
    tau2_bias_corrected,
    tau2_plugin,
    tau2_unbiased_ols,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "EMSE_COLUMNS",
    "ENET_COLUMNS",
    "COVERAGE_COLUMNS",
    "CURVE_COLUMNS",
    "BATTING_COLUMNS",
    "emse_replicate",
    "run_emse_sweep",
    "run_enet_surface",
    "run_coverage",
    "run_batting",
    "run_all",
    "write_csv",
    "format_csv",
]

EMSE_COLUMNS = ["n", "p", "tau2", "rho", "b", "method", "root_emse", "mc_se", "replicates"]
ENET_COLUMNS = ["lambda1", "lambda2", "log_ml", "mc_se"]
COVERAGE_COLUMNS = ["replicate", "variant", "kind", "q_true", "lower", "upper", "covered"]
CURVE_COLUMNS = ["variant", "kind", "q_mid", "coverage"]
BATTING_COLUMNS = ["player", "B", "theta_hat_18", "theta_ext", "theta_mixt", "truth"]
KINDS = ("emse", "enet-surface", "coverage", "batting")
EMSE_METHODS = ("naive", "bias_corrected", "cv10", "cv5")


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EBShrinkError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.name is None:
            self.name = self.kind

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        cfg = dict(cfg)
        if "kind" not in cfg:
            raise EBShrinkError("experiment config needs a 'kind'")
        kind = cfg.pop("kind")
        name = cfg.pop("name", None)
        return cls(kind, cfg, name)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_csv(rows, columns))
    return path


# --- EMSE sweep ------------------------------------------------------------


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple, np.ndarray)) else [v]


def emse_replicate(n, p, tau2, rho, b, methods, stream: RngStream, lam0=1.0, sigma2=1.0):
    """One draw of (X, beta, y) and the requested prior-variance estimates.

    ``naive`` is the OLS moment estimator when ``p < n`` and the same
    plug-in on the ``lam0`` ridge fit otherwise.
    """
    rng = stream.generator()
    X = sample_design(n, BlockCovariance(p, b, rho), rng)
    beta = np.sqrt(tau2) * rng.standard_normal(p)
    d = Dataset(X, generate_response(X, beta, "gaussian", rng, sigma2))
    out = {}
    for m in methods:
        if m == "naive":
            out[m] = tau2_unbiased_ols(ridge_fit(d, 0.0, sigma2)) if p < n else tau2_plugin(ridge_fit(d, lam0, sigma2))
        elif m == "bias_corrected":
            out[m] = tau2_bias_corrected(d, lam0, sigma2)
        elif m in ("cv10", "cv5"):
            out[m] = cv_ridge(d, k=int(m[2:]), rng=rng, sigma2=sigma2)[1]
        else:
            raise EBShrinkError(f"unknown EMSE method {m!r}")
    return out


def run_emse_sweep(config: dict, threads: int | None = 1) -> list[dict]:
    """Root EMSE of prior-variance estimators over a (n, p, tau2, rho, b) grid.

    Config keys: ``n``, ``p``, ``tau2``, ``rho`` (default 0), ``b`` (default
    1; values not dividing ``p`` are skipped), ``replicates``, ``seed``,
    ``methods`` (default naive and bias_corrected), ``simulate`` (default
    true), ``closed_form`` (default true; emitted only for ``p < n - 3``),
    ``lam0`` and ``sigma2``.
    """
    methods = tuple(config.get("methods", ("naive", "bias_corrected")))
    for m in methods:
        if m not in EMSE_METHODS:
            raise EBShrinkError(f"unknown EMSE method {m!r}")
    reps = int(config.get("replicates", 500))
    lam0 = float(config.get("lam0", 1.0))
    sigma2 = float(config.get("sigma2", 1.0))
    simulate = bool(config.get("simulate", True))
    closed = bool(config.get("closed_form", True))
    if simulate and "seed" not in config:
        raise EBShrinkError("simulated EMSE sweep needs a seed")
    cells = [
        (int(n), int(p), float(t2), float(rho), int(b))
        for n in _as_list(config["n"])
        for p in _as_list(config["p"])
        for t2 in _as_list(config["tau2"])
        for rho in _as_list(config.get("rho", 0.0))
        for b in _as_list(config.get("b", 1))
        if int(p) % int(b) == 0
    ]
    rows = []
    if closed:
        for n, p, t2, rho, b in cells:
            if p < n - 3:
                prec = BlockCovariance(p, b, rho).precision()
                rows.append(dict(n=n, p=p, tau2=t2, rho=rho, b=b, method="closed_form",
                                 root_emse=np.sqrt(emse_closed_form(n, p, t2, prec)),
                                 mc_se=0.0, replicates=0))
    if simulate:
        root = RngStream(int(config["seed"]))
        jobs = [(c, r, root.child(ci).child(r)) for ci, c in enumerate(cells) for r in range(reps)]
        res = parallel_map(
            lambda j: emse_replicate(*j[0], methods, j[2], lam0, sigma2), jobs, threads
        )
        for ci, (n, p, t2, rho, b) in enumerate(cells):
            block = res[ci * reps:(ci + 1) * reps]
            for m in methods:
                sq = (np.array([r[m] for r in block]) - t2) ** 2
                emse = sq.mean()
                se_emse = sq.std(ddof=1) / np.sqrt(reps) if reps > 1 else 0.0
                root_emse = np.sqrt(emse)
                rows.append(dict(n=n, p=p, tau2=t2, rho=rho, b=b, method=m, root_emse=root_emse,
                                 mc_se=se_emse / (2 * root_emse) if root_emse > 0 else 0.0,
                                 replicates=reps))
    return rows


# --- other experiments -----------------------------------------------------


def run_enet_surface(config: dict, threads: int | None = 1) -> list[dict]:
    if "seed" not in config:
        raise EBShrinkError("elastic-net surface needs a seed")
    scan = grid_scan_experiment(config, threads=threads)
    return [dict(lambda1=a, lambda2=b, log_ml=v, mc_se=s) for a, b, v, s in scan.rows()]


def run_coverage(config: dict, threads: int | None = 1):
    """Returns ``(rows, curve_rows, info)``."""
    if "seed" not in config:
        raise EBShrinkError("coverage study needs a seed")
    cfg = CoverageConfig.from_dict(config)
    rows, info = coverage_experiment(cfg, threads=threads)
    curves = []
    for v in cfg.variants:
        for k in cfg.kinds:
            sub = [r for r in rows if r["variant"] == v and r["kind"] == k]
            qm, cv = moving_average_coverage(sub, cfg.window)
            curves += [dict(variant=v, kind=k, q_mid=a, coverage=c) for a, c in zip(qm, cv)]
    return rows, curves, info


def run_batting(config: dict | None = None):
    """Shrinkage estimates for the 18 players: plain, extended-data and mixture prior.

    Returns ``(rows, summary)``.
    """
    config = config or {}
    seed = int(config.get("seed", 0))
    m = int(config.get("m", 10_000))
    k = int(config.get("components", 3))
    restarts = int(config.get("restarts", 3))
    c18 = batting_data()
    g18 = fit_gaussian_prior(c18)
    th18 = posterior_mean_gaussian(c18, g18)
    rng = RngStream(seed).generator()
    ext, truths = extend_batting(BATTING_TRUTH, m, rng)
    gext = fit_gaussian_prior(ext)
    thext = posterior_mean_gaussian(ext, gext)[:18]
    mix = fit_mixture_prior_em(ext, k, rng=rng, restarts=restarts)
    thmix = posterior_mean_mixture(ext, mix)[:18]
    rows = [
        dict(player=i + 1, B=float(BATTING_FIRST45[i]), theta_hat_18=float(th18[i]),
             theta_ext=float(thext[i]), theta_mixt=float(thmix[i]), truth=float(BATTING_TRUTH[i]))
        for i in range(18)
    ]
    summary = {
        "mu_hat": g18.mu,
        "tau2_hat": g18.tau2,
        "tau2_ext": gext.tau2,
        "var_truth_ext": float(np.var(truths, ddof=1)),
        "seed": seed,
        "m": m,
    }
    return rows, summary


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_one(exp: ExperimentConfig, out: Path, threads):
    name = exp.name
    files = []
    if exp.kind == "emse":
        files.append(write_csv(out / f"{name}.csv", run_emse_sweep(exp.params, threads), EMSE_COLUMNS))
    elif exp.kind == "enet-surface":
        files.append(write_csv(out / f"{name}.csv", run_enet_surface(exp.params, threads), ENET_COLUMNS))
    elif exp.kind == "coverage":
        rows, curves, _ = run_coverage(exp.params, threads)
        files.append(write_csv(out / f"{name}.csv", rows, COVERAGE_COLUMNS))
        files.append(write_csv(out / f"{name}_curves.csv", curves, CURVE_COLUMNS))
    elif exp.kind == "batting":
        rows, _ = run_batting(exp.params)
        files.append(write_csv(out / f"{name}.csv", rows, BATTING_COLUMNS))
    return files


def run_all(config: dict, threads: int | None = 1) -> dict:
    """Run every experiment in ``config["experiments"]`` and write a manifest.

    A failing experiment is recorded with its error message and the
    remaining ones still run.
    """
    out = Path(config.get("out", "results"))
    exps = [ExperimentConfig.from_dict(e) for e in config.get("experiments", [])]
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "versions": {
            "ebshrink": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "experiments": [],
    }
    for exp in exps:
        entry = {"name": exp.name, "kind": exp.kind, "seed": exp.params.get("seed")}
        t0 = time.perf_counter()
        try:
            files = _run_one(exp, out, threads)
            entry["status"] = "ok"
            entry["files"] = [{"path": f.name, "sha256": _sha256(f)} for f in files]
        except Exception as exc:  # recorded, the suite keeps going
            log.error("experiment %s failed: %s", exp.name, exc)
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entry["files"] = []
        entry["wall_time_s"] = round(time.perf_counter() - t0, 3)
        manifest["experiments"].append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest

"""Command-line entry point: ``ebshrink fit ...``, ``ebshrink simulate ...`` and utilities.

Results go to stdout (JSON for ``fit``, CSV for ``simulate`` unless ``--out``
is given), logs to stderr. Exit status: 0 success, 1 domain error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import (
    Dataset,
    EBShrinkError,
    GroupStructure,
    RngStream,
    read_dataset_csv,
    read_matrix_csv,
    resolve_threads,
    standardize,
)

log = logging.getLogger("ebshrink")

STOCHASTIC = {("fit", "spike-slab"), ("fit", "enet"), ("simulate", "enet-surface"),
              ("simulate", "coverage"), ("simulate", "batting"), ("simulate", "all")}


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def _emit_json(obj):
    sys.stdout.write(json.dumps(obj, default=_tolist) + "\n")


def _load(args, family=None) -> Dataset:
    if args.x is None:
        raise EBShrinkError("--x is required")
    return read_dataset_csv(args.x, args.y, response=getattr(args, "response", None), family=family)


def _read_config(path) -> dict:
    if path is None:
        raise EBShrinkError("--config is required")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise EBShrinkError(f"{path}: invalid JSON ({exc})") from None


def _seeded(config: dict, args) -> dict:
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if "seed" not in config:
        raise EBShrinkError("a seed is required for this command (--seed)")
    return config


def _rng(args) -> np.random.Generator:
    return RngStream(args.seed).generator()


# --- fit -----------------------------------------------------------------


def _fit_normal_means(args):
    from .normal_means import (
        ConvolutionData,
        fit_gaussian_prior,
        fit_mixture_prior_em,
        posterior_mean_gaussian,
        posterior_mean_mixture,
    )

    header, arr = read_matrix_csv(args.x)
    if "z" not in header or "sigma2" not in header:
        raise EBShrinkError("normal-means input needs columns 'z' and 'sigma2'")
    c = ConvolutionData(arr[:, header.index("z")], arr[:, header.index("sigma2")])
    if args.components == 1:
        prior = fit_gaussian_prior(c)
        return {"mu": prior.mu, "tau2": prior.tau2, "theta_hat": posterior_mean_gaussian(c, prior)}
    if args.seed is None:
        raise EBShrinkError("mixture fits use random restarts; --seed is required")
    prior = fit_mixture_prior_em(c, args.components, rng=_rng(args))
    return {
        "weights": prior.weights,
        "means": prior.means,
        "variances": prior.variances,
        "theta_hat": posterior_mean_mixture(c, prior),
    }


def _fit_ridge_mml(args):
    from .ridge_eb import direct_mml_ridge

    r = direct_mml_ridge(_load(args, "gaussian"))
    return {"tau2": r.tau2, "sigma2": r.sigma2, "lambda": r.lam, "log_ml": r.log_ml,
            "at_bound": bool(r.at_bound)}


def _read_groups(path, p) -> GroupStructure:
    if path is None:
        raise EBShrinkError("--groups is required")
    # labels may be any strings; groups are numbered in order of first appearance
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    lab = np.array([r[0].strip() for r in rows if r])
    if lab.size != p:
        raise EBShrinkError(f"--groups lists {lab.size} variables, X has {p}")
    first = {}
    for v in lab:
        first.setdefault(v, len(first))
    return GroupStructure(np.array([first[v] for v in lab]))


def _fit_group_moment(args):
    from .ridge_eb import group_moment_eb, multipliers_from_variances

    d = _load(args)
    g = _read_groups(args.groups, d.p)
    alpha = group_moment_eb(d, g, lam0=args.lam0, sigma2=args.sigma2)
    return {"alpha": alpha, "multipliers": multipliers_from_variances(alpha)}


def _fit_spike_slab(args):
    from .spike_slab import SpikeSlabModel, run_mcem

    d = _load(args, "gaussian")
    if args.codata is None:
        raise EBShrinkError("--codata is required")
    _, C = read_matrix_csv(args.codata)
    if C.shape[0] != d.p:
        raise EBShrinkError(f"co-data has {C.shape[0]} rows, X has {d.p} columns")
    if args.slab_var is None:
        raise EBShrinkError("--slab-var is required")
    model = SpikeSlabModel(args.slab_var, C, sigma2=args.sigma2)
    alpha, trace, chain = run_mcem(d, model, rng=_rng(args))
    return {
        "alpha_hat": alpha,
        "trace": trace.to_dict(),
        "posterior_inclusion": chain["xi"].mean(axis=0),
        "beta_posterior_mean": chain["beta"].mean(axis=0),
        "nu_clamped": model.clamp_count,
    }


def _fit_enet(args):
    from .bayes_enet import EnetHyper, chib_log_ml, gibbs_enet

    d = _load(args, "gaussian")
    h = EnetHyper(args.lambda1, args.lambda2, args.sigma2)
    chain = gibbs_enet(d, h, n_keep=args.n_keep, burn_in=args.burn_in, rng=_rng(args))
    value, se = chib_log_ml(chain, h, d, return_se=True)
    return {"log_ml": value, "mc_se": se, "beta_posterior_mean": chain.mean("beta")}


FIT = {
    "normal-means": _fit_normal_means,
    "ridge-mml": _fit_ridge_mml,
    "group-moment": _fit_group_moment,
    "spike-slab": _fit_spike_slab,
    "enet": _fit_enet,
}


# --- simulate ----------------------------------------------------------------


def _write_or_print(rows, columns, out):
    from .sim_harness import format_csv, write_csv

    if out is None:
        sys.stdout.write(format_csv(rows, columns))
    else:
        write_csv(out, rows, columns)
        log.info("wrote %s", out)


def _sim_emse(args, threads):
    from .sim_harness import EMSE_COLUMNS, run_emse_sweep

    config = _read_config(args.config)
    simulate = args.simulate or not args.closed_form
    config["simulate"] = simulate
    config["closed_form"] = args.closed_form or not args.simulate
    if simulate:
        config = _seeded(config, args)
    _write_or_print(run_emse_sweep(config, threads), EMSE_COLUMNS, args.out)


def _sim_enet(args, threads):
    from .sim_harness import ENET_COLUMNS, run_enet_surface

    config = _seeded(_read_config(args.config), args)
    _write_or_print(run_enet_surface(config, threads), ENET_COLUMNS, args.out)


def _sim_coverage(args, threads):
    from .sim_harness import COVERAGE_COLUMNS, CURVE_COLUMNS, run_coverage

    config = _seeded(_read_config(args.config), args)
    rows, curves, _ = run_coverage(config, threads)
    _write_or_print(rows, COVERAGE_COLUMNS, args.out)
    if args.out is not None:
        out = Path(args.out)
        _write_or_print(curves, CURVE_COLUMNS, out.with_name(out.stem + "_curves" + out.suffix))


def _sim_batting(args, threads):
    from .sim_harness import BATTING_COLUMNS, run_batting, write_csv

    config = _read_config(args.config) if args.config else {}
    config = _seeded(config, args)
    rows, summary = run_batting(config)
    if args.out is None:
        _write_or_print(rows, BATTING_COLUMNS, None)
    else:
        out = Path(args.out)
        write_csv(out / "batting.csv", rows, BATTING_COLUMNS)
        (out / "batting_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("mu_hat=%.4f tau2_hat=%.6f", summary["mu_hat"], summary["tau2_hat"])


def _sim_all(args, threads):
    from .sim_harness import run_all

    config = _read_config(args.config)
    if args.out is not None:
        config["out"] = args.out
    if args.seed is not None:
        for e in config.get("experiments", []):
            e.setdefault("seed", args.seed)
    for e in config.get("experiments", []):
        if "seed" not in e and not (e.get("kind") == "emse" and e.get("simulate") is False):
            raise EBShrinkError(f"experiment {e.get('name', e.get('kind'))!r} has no seed")
    _emit_json(run_all(config, threads))


SIMULATE = {
    "emse": _sim_emse,
    "enet-surface": _sim_enet,
    "coverage": _sim_coverage,
    "batting": _sim_batting,
    "all": _sim_all,
}


# --- utilities -------------------------------------------------------------


def _standardize(args):
    header, arr = read_matrix_csv(args.x)
    d = standardize(Dataset(arr, np.zeros(arr.shape[0])))
    _write_or_print([dict(zip(header, row)) for row in d.X], header, args.out)


def _seed_check(args):
    if args.seed is None:
        raise EBShrinkError("--seed is required")
    s = RngStream(args.seed, args.stream)
    a = s.generator().random(4)
    b = s.generator().random(4)
    _emit_json({"seed": args.seed, "stream": args.stream, "draws": a,
                "reproducible": bool(np.array_equal(a, b))})


# --- parser ----------------------------------------------------------------


def _common(p):
    p.add_argument("--x", help="CSV with a header row (design matrix or input table)")
    p.add_argument("--y", help="CSV holding the response")
    p.add_argument("--response", help="response column name inside --x")
    p.add_argument("--codata", help="CSV of per-variable co-data (p rows)")
    p.add_argument("--groups", help="CSV with one group label per variable")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")
    p.add_argument("--threads", type=int, help="worker threads (default: EBSHRINK_THREADS or cores)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebshrink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and print JSON")
    fsub = fit.add_subparsers(dest="target", required=True)
    for name in FIT:
        p = fsub.add_parser(name)
        _common(p)
        p.add_argument("--sigma2", type=float, default=1.0, help="noise variance (default 1)")
        if name == "normal-means":
            p.add_argument("--components", type=int, default=1)
        if name == "group-moment":
            p.add_argument("--lam0", type=float, default=1.0)
        if name == "spike-slab":
            p.add_argument("--slab-var", type=float, dest="slab_var")
        if name == "enet":
            p.add_argument("--lambda1", type=float, required=True)
            p.add_argument("--lambda2", type=float, required=True)
            p.add_argument("--n-keep", type=int, default=8000, dest="n_keep")
            p.add_argument("--burn-in", type=int, default=2000, dest="burn_in")

    sim = sub.add_parser("simulate", help="run a simulation study and write CSV")
    ssub = sim.add_subparsers(dest="target", required=True)
    for name in SIMULATE:
        p = ssub.add_parser(name)
        _common(p)
        if name == "emse":
            p.add_argument("--closed-form", action="store_true", dest="closed_form")
            p.add_argument("--simulate", action="store_true")

    p = sub.add_parser("standardize", help="center and scale the columns of a CSV")
    _common(p)
    p = sub.add_parser("seed-check", help="show that a (seed, stream) pair is reproducible")
    _common(p)
    p.add_argument("--stream", type=int, default=0)
    return parser


def dispatch(args) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "fit":
            if ("fit", args.target) in STOCHASTIC and args.seed is None:
                raise EBShrinkError("a seed is required for this command (--seed)")
            _emit_json(FIT[args.target](args))
        elif args.command == "simulate":
            stochastic = (args.command, args.target) in STOCHASTIC or (
                args.target == "emse" and (args.simulate or not args.closed_form)
            )
            if stochastic and args.seed is None and args.config is None:
                raise EBShrinkError("a seed is required for this command (--seed)")
            SIMULATE[args.target](args, resolve_threads(args.threads))
        elif args.command == "standardize":
            if args.x is None:
                raise EBShrinkError("--x is required")
            _standardize(args)
        elif args.command == "seed-check":
            _seed_check(args)
    except EBShrinkError as exc:
        print(f"ebshrink: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ebshrink: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())

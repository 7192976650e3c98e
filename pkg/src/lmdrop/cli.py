"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 fit did not converge, 4 invalid
input (unreadable data, bad config, non-converged fit given to bootstrap).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import DataError, ModelConfig, dataset_config, dropout_counts, load_config, load_dataset, save_config, write_dataset
from .em import EMConfig, FitResult, e_step, fit_model, is_spurious
from .inference import config_param_count, information_criteria, parametric_bootstrap
from .serialize import (
    best_by_criterion,
    load_fit,
    save_fit,
    write_criteria,
    write_decoding,
    write_manifest,
)
from .simulate import SchemeSpec, run_replications, simulate, write_report, write_truth

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INVALID = 0, 2, 3, 4

log = logging.getLogger("lmdrop")


class InvalidInput(Exception):
    pass


def _default_seed() -> int:
    return int(os.environ.get("LMDROP_SEED", "0"))


def _default_threads() -> int:
    return int(os.environ.get("LMDROP_THREADS", os.cpu_count() or 1))


def _em_config(args, **overrides) -> EMConfig:
    kw = dict(
        final_tol=args.tol,
        n_short_starts=args.starts,
        n_long_runs=min(args.long_runs, args.starts),
        max_iter=args.max_iter,
        refine_with_newton=not args.no_newton,
        seed=args.seed,
        n_jobs=args.threads,
    )
    kw.update(overrides)
    return EMConfig(**kw)


def _load_inputs(args) -> tuple:
    try:
        config = load_config(args.config)
        if getattr(args, "states", None) and isinstance(args.states, int):
            config = config.replace(n_states=args.states)
        if getattr(args, "variant", None):
            config = config.replace(chain_variant=args.variant)
        data = load_dataset(args.data, config)
    except (OSError, DataError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc
    return config, data


def _resolved(config: ModelConfig, args) -> list:
    return [
        ("data", args.data),
        ("config", args.config),
        ("n_states", config.n_states),
        ("chain_variant", config.chain_variant),
        ("fixed_columns", ",".join(config.fixed_columns)),
        ("state_columns", ",".join(config.state_columns)),
        ("random_intercept", str(config.random_intercept).lower()),
        ("seed", args.seed),
    ]


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    spec = SchemeSpec(scheme=args.scheme, n=args.n, T=args.T, seed=args.seed)
    data, truth = simulate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "data.csv", data)
    write_truth(out / "truth.csv", truth)
    save_config(out / "config.txt", dataset_config(data, n_states=spec.J))
    with open(out / "dropout_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "n_dropout"])
        for t, c in enumerate(dropout_counts(data), 1):
            w.writerow([t, int(c)])
    write_manifest(out / "manifest.txt", [("command", "simulate")] + spec.manifest())
    print(f"wrote {data.n} subjects ({data.n_observations} observations) to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config, data = _load_inputs(args)
    fit = fit_model(data, config, args.model, _em_config(args))
    k = config_param_count(config, args.model, data.horizon)
    summary = save_fit(args.out, fit, data, k)
    write_manifest(Path(args.out) / "manifest.txt",
                   [("command", "fit"), ("model", args.model)] + _resolved(config, args))
    print(f"loglik = {fit.loglik:.6f}  k = {k}  iterations = {fit.n_iter}  converged = {fit.converged}")
    if "H" in summary:
        print(f"H = {summary['H']:.4f}")
    return EXIT_OK if fit.converged else EXIT_NONCONVERGED


def cmd_select(args) -> int:
    base, data = _load_inputs(args)
    rows = []
    for model in args.models:
        for J in args.states:
            config = base.replace(n_states=J)
            fit = fit_model(data, config, model, _em_config(args))
            k = config_param_count(config, model, data.horizon)
            rows.append((model, J, information_criteria(fit.loglik, k, data.n, allow_undefined=True)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_criteria(out / "criteria.csv", rows)
    best = best_by_criterion(rows)
    with open(out / "best.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criterion", "model", "J"])
        for c, (m, J) in best.items():
            w.writerow([c, m, J])
    write_manifest(out / "manifest.txt", [("command", "select"), ("states", ",".join(map(str, args.states))),
                                          ("models", ",".join(args.models))] + _resolved(base, args))
    with open(out / "criteria.csv") as fh:
        for line in fh:
            print(line.rstrip())
    for c, (m, J) in best.items():
        print(f"best {c}: {m} J={J}")
    return EXIT_OK


def _load_fit_for(args, data) -> FitResult:
    try:
        theta, summary = load_fit(args.fit)
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidInput(f"cannot read fit from {args.fit}: {exc}") from exc
    post, ll = e_step(data, theta)
    return FitResult(
        theta=theta, loglik=ll.total, loglik_trace=[ll.total],
        converged=summary.get("converged") == "true", n_iter=int(summary.get("n_iter", 0)),
        posteriors=post, model=summary.get("model", "m1"), spurious_flag=is_spurious(post),
    )


def cmd_bootstrap(args) -> int:
    config, data = _load_inputs(args)
    fit = _load_fit_for(args, data)
    if not fit.converged:
        print("error: refusing to bootstrap a non-converged fit", file=sys.stderr)
        return EXIT_INVALID
    res = parametric_bootstrap(
        data, fit, B=args.B, config=_em_config(args, n_jobs=1), seed=args.seed,
        n_jobs=args.threads, resample_dropout=args.resample_dropout,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x_names = dict(zip(fit.theta.names(), fit.theta.names(data.x1_names, data.x2_names)))
    with open(out / "bootstrap_se.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "se"])
        for name, est, se in zip(res.names, res.estimate, res.se):
            w.writerow([x_names.get(name, name), repr(float(est)), repr(float(se))])
    write_manifest(out / "manifest.txt", [("command", "bootstrap"), ("B", res.B), ("n_failed", res.n_failed),
                                          ("resample_dropout", str(args.resample_dropout).lower())]
                   + _resolved(config, args))
    print(f"bootstrap: {res.n_success} successful replicates, {res.n_failed} failed")
    return EXIT_OK


def cmd_decode(args) -> int:
    config, data = _load_inputs(args)
    fit = _load_fit_for(args, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = write_decoding(out, data, fit.posteriors)
    write_manifest(out / "manifest.txt", [("command", "decode"), ("fit", args.fit)]
                   + list(summary.items()) + _resolved(config, args))
    if "H" in summary:
        print(f"H = {summary['H']:.4f}")
    return EXIT_OK


def cmd_replicate(args) -> int:
    spec = SchemeSpec(scheme=args.scheme, n=args.n, T=args.T, seed=args.seed)
    cfg = EMConfig(final_tol=args.tol, n_short_starts=args.starts, n_long_runs=min(args.long_runs, args.starts),
                   max_iter=args.max_iter, refine_with_newton=not args.no_newton)
    report = run_replications(spec, args.reps, models=tuple(args.models), em_config=cfg, n_jobs=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.csv", report)
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "beta_hat"])
        for m, s in report.summaries.items():
            for b in s.estimates:
                w.writerow([m.upper(), repr(float(b))])
    write_manifest(out / "manifest.txt", [("command", "replicate"), ("reps", args.reps),
                                          ("valid", str(report.valid).lower())] + spec.manifest())
    with open(out / "report.csv") as fh:
        for line in fh:
            print(line.rstrip())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_fit_options(p):
    p.add_argument("--starts", type=int, default=20, help="random starts screened by short EM runs")
    p.add_argument("--long-runs", type=int, default=10, help="best short runs continued to convergence")
    p.add_argument("--tol", type=float, default=1e-5, help="final relative log-likelihood tolerance")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--no-newton", action="store_true", help="skip the Newton refinement after EM")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmdrop", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_default_seed())
    common.add_argument("--threads", type=int, default=_default_threads())
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a panel with informative dropout")
    p.add_argument("--scheme", choices=("conditional", "joint"), default="conditional")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    def data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--config", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit one model")
    data_args(p)
    p.add_argument("--model", choices=("m1", "m2"), default="m1")
    p.add_argument("--variant", choices=("parametric", "saturated"))
    p.add_argument("--states", type=int)
    p.add_argument("--out", default="fit")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", parents=[common], help="information criteria over numbers of states")
    data_args(p)
    p.add_argument("--states", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--models", nargs="+", choices=("m1", "m2"), default=["m2", "m1"])
    p.add_argument("--variant", choices=("parametric", "saturated"))
    p.add_argument("--out", default="select")
    _add_fit_options(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("bootstrap", parents=[common], help="parametric bootstrap standard errors")
    data_args(p)
    p.add_argument("--fit", required=True, help="directory written by 'fit'")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--resample-dropout", action="store_true")
    p.add_argument("--out", default="bootstrap")
    _add_fit_options(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("decode", parents=[common], help="local decoding tables from a saved fit")
    data_args(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", default="decode")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("replicate", parents=[common], help="Monte Carlo bias/SD/MSE of beta")
    p.add_argument("--scheme", choices=("conditional", "joint"), default="conditional")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--models", nargs="+", choices=("m1", "m2"), default=["m1", "m2"])
    p.add_argument("--out", default="replicate")
    _add_fit_options(p)
    p.set_defaults(func=cmd_replicate, starts=5, long_runs=5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

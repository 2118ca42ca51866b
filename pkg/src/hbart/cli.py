"""Command-line interface: fit, predict, simulate, benchmark, replicate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gibbs
from .data import VarianceDesignSpec, load_csv, read_csv_columns
from .errors import DataError, ModelFileError, NumericalError
from .posterior import credible_interval, design_matrix, gamma_summary, predict_mean, predictive_interval, variance_at
from .priors import Hyperparams
from .simulate import KINDS, DGPSpec, generate, replicate, rmse_benchmark

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

HYPER_FIELDS = tuple(f.name for f in fields(Hyperparams))

# checked after any config file is merged, so they may come from either source
REQUIRED = {
    "fit": ("data", "response", "x", "model"),
    "predict": ("model", "data", "out"),
    "simulate": ("seed", "kind", "out"),
    "benchmark": ("seed", "kind", "out"),
    "replicate": ("seed", "outdir"),
}


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--m", type=int)
    for name in ("alpha", "beta", "nu", "q", "lam", "k_shrink", "sigma_mu_sq"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--gamma0", type=float, nargs="+")
    g.add_argument("--Sigma_diag", type=float, nargs="+")
    g.add_argument("--proposal_probs", type=float, nargs=3, metavar=("GROW", "PRUNE", "CHANGE"))
    for name in ("n_burn", "n_post", "max_depth"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--pin_gamma", action=argparse.BooleanOptionalAction)
    g.add_argument("--center_z", action=argparse.BooleanOptionalAction)


def _hyper(args) -> Hyperparams:
    given = {k: getattr(args, k) for k in HYPER_FIELDS if getattr(args, k, None) is not None}
    return Hyperparams(**given)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbart", description="Heteroskedastic BART via Gibbs sampling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text, needs_seed):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON file of flag values; explicit flags win")
        p.add_argument("--seed", type=int, default=None if needs_seed else 0)
        return p

    p = command("fit", "fit a model to a CSV file", False)
    p.add_argument("--data", type=Path)
    p.add_argument("--response")
    p.add_argument("--x", nargs="+", help="mean-model predictor columns")
    p.add_argument("--z", nargs="+", help="variance terms such as x1 or x1^2 (default: the --x columns)")
    p.add_argument("--orthogonalize", action="store_true", help="orthogonalize the variance terms")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--model", type=Path, help="output model file")
    p.add_argument("--summary", type=Path, help="output summary JSON (default: <model>.summary.json)")
    _add_hyper_flags(p)

    p = command("predict", "predict from a fitted model", False)
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--reps", type=int, default=1000)

    p = command("simulate", "draw a simulated dataset", True)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--noise_scale", type=float, default=1.0)
    p.add_argument("--held_out", action="store_true", help="use the shifted test grid (univariate only)")
    p.add_argument("--out", type=Path)

    p = command("benchmark", "paired HBART versus baseline RMSE study", True)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--n_test", type=int)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--out", type=Path)
    _add_hyper_flags(p)

    p = command("replicate", "run every simulation study and write figure data", True)
    p.add_argument("--outdir", type=Path)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--n_uni", type=int, default=250)
    p.add_argument("--n_grid", type=int, default=1000)
    p.add_argument("--n_multi", type=int, default=500)
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--pi_reps", type=int, default=1000)
    _add_hyper_flags(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, merging a ``--config`` JSON file underneath them."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        args = _merge_config(parser, args, argv)
    missing = [f"--{name}" for name in REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        parser.error(f"{args.command}: missing required {', '.join(missing)}")
    return args


def _merge_config(parser, args, argv):
    try:
        config = json.loads(args.config.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise DataError("config file must hold a JSON object")
    known = set(vars(args)) - {"command", "config", "verbose"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise DataError(f"unknown config keys: {unknown}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    # config values become defaults, so flags given on the command line still win
    subparser.set_defaults(**config)
    return parser.parse_args(argv)


def _quantiles(v) -> dict:
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return {str(q): float(x) for q, x in zip(qs, np.quantile(v, qs))}


def cmd_fit(args) -> int:
    spec = VarianceDesignSpec.from_strings(args.z, args.orthogonalize) if args.z else None
    dataset = load_csv(args.data, args.response, args.x, spec)
    hyper = _hyper(args)
    start = time.perf_counter()
    draws = gibbs.fit(dataset, hyper, seed=args.seed, n_chains=args.chains)
    wall = time.perf_counter() - start
    gibbs.save(draws, args.model)
    gs = gamma_summary(draws, 0.9)
    summary = {
        "n": dataset.n,
        "retained_draws": len(draws),
        "acceptance_rates": draws.counts.rates(),
        "sigma_sq_trace_quantiles": _quantiles(draws.sigma_sq_trace * draws.scaling.width**2),
        "gamma": {
            name: {"mean": float(r[0]), "lo": float(r[1]), "hi": float(r[2]), "level": 0.9}
            for name, r in zip(draws.z_names, gs)
        },
        "wall_time_seconds": wall,
    }
    out = args.summary or args.model.with_name(args.model.name + ".summary.json")
    out.write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    draws = gibbs.load(args.model)
    needed = list(draws.x_names)
    if draws.basis is not None:
        needed += [t.column for t in draws.basis.spec.terms if isinstance(t.column, str)]
    cols = read_csv_columns(args.data, list(dict.fromkeys(needed)))
    X = np.column_stack([cols[c] for c in draws.x_names])
    Z = design_matrix(draws, X, cols)
    mean = predict_mean(draws, X)
    ci = credible_interval(draws, X, args.level)
    pi = predictive_interval(draws, X, Z, args.level, args.reps, args.seed)
    var_mean = variance_at(draws, Z).mean(axis=0)
    with args.out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "mean", "cred_lo", "cred_hi", "pred_lo", "pred_hi", "var_mean"])
        for i in range(len(mean)):
            w.writerow([i, *(repr(float(v)) for v in (mean[i], ci[i, 0], ci[i, 1], pi[i, 0], pi[i, 1], var_mean[i]))])
    return EXIT_OK


def cmd_simulate(args) -> int:
    dataset, f, var = generate(DGPSpec(args.kind, args.n, args.seed, args.noise_scale), args.held_out)
    with args.out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.x_names, "y", "f_true", "var_true"])
        for i in range(dataset.n):
            w.writerow([repr(float(v)) for v in (*dataset.X[i], dataset.y[i], f[i], var[i])])
    return EXIT_OK


def cmd_benchmark(args) -> int:
    rows = rmse_benchmark(DGPSpec(args.kind, args.n), args.reps, _hyper(args), args.seed, args.n_test)
    args.out.write_text(json.dumps({"kind": args.kind, "seed": args.seed, "reps": rows}, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_replicate(args) -> int:
    replicate(
        args.seed,
        args.outdir,
        reps=args.reps,
        hyper=_hyper(args),
        n_uni=args.n_uni,
        n_grid=args.n_grid,
        n_multi=args.n_multi,
        level=args.level,
        pi_reps=args.pi_reps,
    )
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "replicate": cmd_replicate,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DataError, OSError) as exc:
        print(f"hbart: error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, DataError) else EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ModelFileError as exc:
        print(f"hbart: model file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"hbart: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"hbart: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"hbart: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

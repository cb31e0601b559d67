"""Command-line interface: impute, analyze, bootstrap, simulate."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analyze import analyze_ancova, analyze_diff_means, pooled_to_json, rubin_pool
from .data import load_csv, write_csv
from .errors import RefmiError
from .fvar import boot_then_impute, grid_to_csv, vonhippel_pool
from .impute import Strategy, impute_dataset
from .sim import load_scenario, run_scenario


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refmi",
        description="Reference-based multiple imputation and frequentist variance tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("impute", help="write M completed copies of a trial CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--strategy", choices=["mar", "j2r"], default="j2r")
    p.add_argument("-M", type=int, default=5, help="number of imputations")
    p.add_argument("--improper", action="store_true",
                   help="condition on the MLE instead of posterior draws")
    p.add_argument("-o", "--outdir", type=Path, default=None,
                   help="output directory (default: alongside the input)")
    _add_seed(p)

    p = sub.add_parser("analyze", help="pool completed CSVs with Rubin's rules")
    p.add_argument("csvs", nargs="+", type=Path)
    p.add_argument("--method", choices=["diff_means", "ancova"], default="diff_means")
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("bootstrap", help="bootstrap-then-impute variance estimate")
    p.add_argument("csv", type=Path)
    p.add_argument("--strategy", choices=["mar", "j2r"], default="j2r")
    p.add_argument("-B", type=int, default=200, help="bootstrap replicates")
    p.add_argument("-M", type=int, default=2, help="imputations per replicate")
    p.add_argument("--method", choices=["diff_means", "ancova"], default="diff_means")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--dump-grid", type=Path, default=None,
                   help="write the b,m,theta grid to this CSV for audit")
    _add_seed(p)

    p = sub.add_parser("simulate", help="run a Monte-Carlo scenario (TOML/JSON config)")
    p.add_argument("config", type=Path)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")

    return parser


def _cmd_impute(args) -> int:
    data = load_csv(args.csv)
    rng = np.random.default_rng(args.seed)
    imps = impute_dataset(data, Strategy(args.strategy), args.M, not args.improper, rng)
    outdir = args.outdir if args.outdir is not None else args.csv.parent
    outdir.mkdir(parents=True, exist_ok=True)
    stem = args.csv.stem
    for m, d in enumerate(imps, start=1):
        write_csv(d, outdir / f"{stem}_imp{m}.csv")
    print(f"wrote {len(imps)} completed datasets to {outdir}")
    return 0


def _cmd_analyze(args) -> int:
    analyze = analyze_diff_means if args.method == "diff_means" else analyze_ancova
    estimates = [analyze(load_csv(p)) for p in args.csvs]
    pooled = rubin_pool(estimates, args.alpha)
    print(pooled_to_json(pooled, method=f"rubin+{args.method}"))
    return 0


def _cmd_bootstrap(args) -> int:
    data = load_csv(args.csv)
    rng = np.random.default_rng(args.seed)
    grid = boot_then_impute(data, Strategy(args.strategy), args.B, args.M, rng,
                            method=args.method)
    if args.dump_grid is not None:
        grid_to_csv(grid, args.dump_grid)
    est = vonhippel_pool(grid, args.alpha)
    print(json.dumps(
        {
            "estimate": est.theta_bar,
            "se": est.se,
            "df": est.df,
            "ci": list(est.ci),
            "components": {"between_bootstrap": est.sigma2_b,
                           "within_bootstrap": est.sigma2_w},
            "degenerate": est.degenerate,
            "method": f"bootMI+{args.method}",
        },
        indent=2,
    ))
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_scenario(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    report = run_scenario(cfg, n_jobs=args.threads)
    print(report.to_json())
    return 0


_COMMANDS = {
    "impute": _cmd_impute,
    "analyze": _cmd_analyze,
    "bootstrap": _cmd_bootstrap,
    "simulate": _cmd_simulate,
}


def cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (RefmiError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()

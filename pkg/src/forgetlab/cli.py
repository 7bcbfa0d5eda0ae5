"""Command-line entry point.

Exit codes: 0 success, 1 configuration rejected, 2 a cell (or check) failed.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ConfigError
from .lab.optimum import run_identity_suite
from .runner import load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects a comma-separated list of integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("--seeds must list at least one seed")
    return seeds


def _add_run_args(p):
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--workers", type=int, default=1, help="process-pool size for independent cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgetlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="Gaussian-mixture KL simulations")
    sim.add_argument("mode", choices=["uni", "bi", "sweep"])
    _add_run_args(sim)
    sim.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (overrides the config)")

    lab = sub.add_parser("lab", help="discrete post-training lab")
    lab_sub = lab.add_subparsers(dest="action", required=True)
    lab_run = lab_sub.add_parser("run", help="run a lab config")
    _add_run_args(lab_run)
    lab_run.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (overrides the config)")

    check = sub.add_parser("check", help="exact-enumeration checks")
    check_sub = check.add_subparsers(dest="what", required=True)
    ident = check_sub.add_parser("identities", help="forward/reverse KL identities on random tabular cases")
    ident.add_argument("--trials", type=int, default=100)
    ident.add_argument("--seed", type=int, default=0)

    sub.add_parser("version", help="print the package version")
    return parser


def _run(args, kind: str) -> int:
    try:
        cfg = load_config(args.config, kind=kind)
        if args.seeds is not None:
            cfg = cfg.with_seeds(args.seeds)
        if args.out is not None:
            cfg = cfg.with_output_dir(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = run_experiment(cfg, workers=max(1, args.workers))
    for row in summary.aggregates:
        dist = f" d={row['distance']:g}" if "distance" in row else ""
        gm, dm = row["gain_mean"], row["drop_mean"]
        gm = "nan" if gm is None else f"{gm:.4f}"
        dm = "nan" if dm is None else f"{dm:.4f}"
        print(f"{row['label']}{dist}: gain {gm} drop {dm} ({row['n_ok']}/{row['n_cells']} ok)")
    print(f"wrote {len(summary.cells)} cell result(s) to {cfg.output_dir}")
    for cell in summary.cells:
        if cell["status"] == "failed":
            print(f"FAILED {cell['label']} seed {cell['seed']}: {cell.get('error')}", file=sys.stderr)
    return summary.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "sim":
        return _run(args, {"uni": "sim_uni", "bi": "sim_bi", "sweep": "sim_sweep"}[args.mode])
    if args.command == "lab":
        return _run(args, "lab")
    if args.trials < 1:
        print("config error: --trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    res = run_identity_suite(trials=args.trials, seed=args.seed)
    print(f"trials {res.trials}: max sft residual {res.max_sft_residual:.3e}, max rl residual {res.max_rl_residual:.3e}")
    print("PASS" if res.passed else f"FAIL (tolerance {res.tolerance:g})")
    return EXIT_OK if res.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

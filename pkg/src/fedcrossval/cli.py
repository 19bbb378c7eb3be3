"""Command-line interface.

Subcommands:
  run              execute an experiment config and write CSV metrics
  analyze evade    tabulate delegation-evasion probabilities
  analyze penalty  tabulate the report-count penalty curve
  gen-data         write a synthetic dataset bundle to an .npz file
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from .analysis import EvasionParams, p_evade_exact, p_evade_montecarlo, penalty_curve
from .data import make_synthetic_problem
from .errors import ConfigurationError, FormatError, InputError, ProtocolError
from .experiment import run_experiment
from .fileio import save_dataset_npz
from .rng import derive_rng


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcrossval",
        description="Collaborative-learning simulator with client-side "
                    "cross-validation against poisoning attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--out-dir", required=True, help="directory for CSV/model output")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--mode", choices=("fedavg-baseline", "defended"), default=None,
                     help="override the config mode")
    run.add_argument("--format", dest="fmt", default="csv", choices=("csv",))

    analyze = sub.add_parser("analyze", help="closed-form analyses")
    asub = analyze.add_subparsers(dest="analysis", required=True)

    evade = asub.add_parser("evade", help="delegation-evasion probabilities")
    evade.add_argument("--clients", type=int, default=100, help="K selected per round")
    evade.add_argument("--group-size", type=int, default=10, help="u updates per sub-model")
    evade.add_argument("--evaluators", type=int, default=3, help="e per sub-model")
    evade.add_argument("--fractions", default="0.05,0.1,0.2,0.3",
                       help="comma-separated malicious proportions p")
    evade.add_argument("--trials", type=int, default=0,
                       help="Monte Carlo trials per point (0 = closed form only)")
    evade.add_argument("--seed", type=int, default=0)
    evade.add_argument("--out-dir", default=".", help="directory for evade.csv")
    evade.add_argument("--format", dest="fmt", default="csv", choices=("csv",))

    pen = asub.add_parser("penalty", help="penalty coefficient curve")
    pen.add_argument("--evaluators", type=int, required=True, help="e per sub-model")
    pen.add_argument("--initial-penalty", type=float, default=0.5, help="v at r=1")
    pen.add_argument("--r-max", type=int, default=None,
                     help="largest report count to tabulate (default e)")
    pen.add_argument("--out-dir", default=".", help="directory for penalty.csv")
    pen.add_argument("--format", dest="fmt", default="csv", choices=("csv",))

    gen = sub.add_parser("gen-data", help="write a synthetic dataset bundle (.npz)")
    gen.add_argument("--out", required=True, help="output .npz path")
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--per-class", type=int, default=600)
    gen.add_argument("--test-per-class", type=int, default=100)
    gen.add_argument("--separation", type=float, default=6.0)
    gen.add_argument("--spread", type=float, default=1.0)
    gen.add_argument("--subclusters", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    out = run_experiment(args.config, args.out_dir, mode=args.mode,
                         seed=args.seed, fmt=args.fmt)
    last = out.result.records[-1] if out.result.records else None
    if last is not None:
        print(f"completed {len(out.result.records)} rounds; "
              f"final main-task accuracy {last.main_accuracy:.4f}")
    print(f"metrics:   {out.metrics_path}")
    print(f"detection: {out.detection_path}")
    print(f"model:     {out.model_path}")
    return 0


def _cmd_evade(args) -> int:
    fractions = [float(p) for p in args.fractions.split(",") if p.strip()]
    rng = derive_rng(args.seed, "cli-evade")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "evade.csv"
    cols = ["clients", "malicious_fraction", "group_size", "evaluators", "t",
            "p_joint_any", "p_joint_one", "p_conditional_any"]
    if args.trials > 0:
        cols += ["mc_estimate", "mc_stderr"]
    lines = [",".join(cols)]
    for p in fractions:
        for t in range(args.evaluators + 1):
            params = EvasionParams(args.clients, p, args.group_size,
                                   args.evaluators, t)
            row = [str(args.clients), f"{p:.12g}", str(args.group_size),
                   str(args.evaluators), str(t),
                   f"{p_evade_exact(params):.12g}",
                   f"{p_evade_exact(params, members=1):.12g}",
                   f"{p_evade_exact(params, conditional=True):.12g}"]
            if args.trials > 0:
                est, err = p_evade_montecarlo(params, args.trials, rng)
                row += [f"{est:.12g}", f"{err:.12g}"]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} ({len(lines) - 1} rows)")
    return 0


def _cmd_penalty(args) -> int:
    r_max = args.r_max if args.r_max is not None else args.evaluators
    rows = penalty_curve(args.evaluators, args.initial_penalty, r_max)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "penalty.csv"
    lines = ["reports,coefficient"] + [f"{r},{c:.12g}" for r, c in rows]
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def _cmd_gen_data(args) -> int:
    problem = make_synthetic_problem(args.classes, args.dim, args.separation,
                                     args.spread, args.seed, args.subclusters)
    train = problem.sample(args.per_class, "train")
    test = problem.sample(args.test_per_class, "test")
    save_dataset_npz(args.out, train, test, centers=problem.centers)
    print(f"wrote {args.out}: {len(train)} train / {len(test)} test samples, "
          f"{args.classes} classes, dim {args.dim}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "analyze":
            if args.analysis == "evade":
                return _cmd_evade(args)
            return _cmd_penalty(args)
        return _cmd_gen_data(args)
    except (ConfigurationError, InputError, FormatError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

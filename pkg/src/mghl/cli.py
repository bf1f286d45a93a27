"""Command-line entry point.

Subcommands:

* ``mghl train --config cfg.ini [--seed 1,2,3] [--actors N]
  [--subgoals pc,dc,fc] [--out DIR]`` — train every seed, writing one
  artifact directory per seed.
* ``mghl ablate --config cfg.ini [--robustness] [+ the same overrides]`` —
  run the subgoal-set comparison ladder and summarize steps-to-threshold.
* ``mghl eval --checkpoint path/checkpoint.bin --episodes N`` — greedy
  rollouts of a saved checkpoint (reads the config.ini sitting next to it).

Configuration and checkpoint problems print a one-line message to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, apply_overrides, load_config
from .runs import run_ablation, run_eval, run_train


def _add_overrides(parser):
    parser.add_argument("--seed", help="comma-separated seed list override")
    parser.add_argument("--actors", type=int,
                        help="number of parallel actors override")
    parser.add_argument("--subgoals",
                        help="comma-separated subgoal kinds override "
                             "(pc, dc, fc, rand)")
    parser.add_argument("--out", help="output directory override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mghl",
        description="Train, compare, and evaluate multi-goal hierarchical "
                    "agents on grid tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one run per seed")
    p_train.add_argument("--config", required=True,
                         help="path to an INI run configuration")
    _add_overrides(p_train)

    p_abl = sub.add_parser(
        "ablate", help="compare subgoal sets (pc / pc+fc / pc+fc+dc)")
    p_abl.add_argument("--config", required=True,
                       help="path to an INI run configuration")
    p_abl.add_argument("--robustness", action="store_true",
                       help="append the pc+fc+dc+rand setting")
    _add_overrides(p_abl)

    p_eval = sub.add_parser("eval", help="greedy rollouts of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True,
                        help="path to a checkpoint.bin")
    p_eval.add_argument("--episodes", type=int, default=20,
                        help="number of evaluation episodes (default 20)")
    return parser


def _load_with_overrides(args):
    rc = load_config(args.config)
    return apply_overrides(rc, seeds=args.seed, actors=args.actors,
                           subgoals=args.subgoals, out_dir=args.out)


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _print_summaries(summaries):
    for s in summaries:
        print(f"seed {s['seed']}: episodes={s['episodes']} "
              f"env_steps={s['env_steps']} "
              f"steps_to_threshold={_fmt(s['steps_to_threshold'])} "
              f"final_return={_fmt(s['final_return'])} -> {s['out_dir']}")


def _print_table(rows, columns):
    widths = [max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(_fmt(r[c]).ljust(w) for c, w in zip(columns, widths)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            _print_summaries(run_train(_load_with_overrides(args)))
        elif args.command == "ablate":
            table = run_ablation(_load_with_overrides(args),
                                 robustness=args.robustness)
            _print_table(table, ("setting", "seeds", "solved_seeds",
                                 "median_steps_to_threshold",
                                 "median_final_return"))
        else:
            report = run_eval(args.checkpoint, args.episodes)
            print(f"checkpoint: {report['checkpoint']}")
            print(f"env: {report['env']}  episodes: {report['episodes']}")
            print(f"mean_return: {report['mean_return']:.4f}  "
                  f"median_return: {report['median_return']:.4f}")
            if report["success_rate"] is not None:
                print(f"success_rate: {report['success_rate']:.3f}")
            print(f"mean_length: {report['mean_length']:.1f}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

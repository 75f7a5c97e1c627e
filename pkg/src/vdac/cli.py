"""Command line entry point: ``vdac train | eval | aggregate | selftest``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .envs import EnvError, env_spec_from_config
from .experiment import (
    AGG_COLUMNS,
    EVAL_COLUMNS,
    ConfigError,
    aggregate_runs,
    emit_csv,
    evaluate,
    load_learner,
    parse_config,
    run_training,
)
from .seeding import EVAL, derive_seed

log = logging.getLogger("vdac")


def _train(args) -> int:
    config = parse_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)

    def report(rec):
        log.info("t_env=%d win_rate=%.3f mean_return=%.3f", rec.t_env, rec.win_rate, rec.mean_return)

    result = run_training(config, args.out, on_eval=report)
    print(f"trained {config.algorithm} on {config.env_name} for {result.t_env} steps; results in {args.out}")
    return 0


def _eval(args) -> int:
    config = parse_config(args.config) if args.config else None
    learner = load_learner(args.checkpoint, config)
    cfg = learner.config
    spec = env_spec_from_config(cfg.env_name, cfg.env_overrides)
    seed = derive_seed(cfg.seed if args.seed is None else args.seed, EVAL)
    rec = evaluate(learner.actor, spec, args.episodes, seed)
    print(",".join(EVAL_COLUMNS))
    print(f"{rec.t_env},{rec.win_rate:.6f},{rec.mean_return:.6f},{rec.episode_len_mean:.6f}")
    return 0


def _aggregate(args) -> int:
    files = [Path(p) / "eval.csv" if Path(p).is_dir() else Path(p) for p in args.runs]
    rows = aggregate_runs(files)
    emit_csv(rows, args.out, AGG_COLUMNS)
    print(f"aggregated {len(files)} runs into {args.out}")
    return 0


def _selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log evaluation progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run and write eval.csv, stats.csv, checkpoint.bin")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="greedy evaluation of a saved checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--config", type=Path, default=None, help="defaults to config.txt next to the checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_eval)

    p = sub.add_parser("aggregate", help="median and 25/75 percentiles across runs")
    p.add_argument("--runs", required=True, nargs="+", help="run directories or eval CSV files")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_aggregate)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.set_defaults(func=_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, EnvError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"vdac {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

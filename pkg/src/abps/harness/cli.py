"""Command line entry point.

    abps run --config exp.toml [--seed N] [--out DIR] [--mode MODE] [--checkpoint]
    abps baseline --config exp.toml [--seed N] [--out DIR]
    abps metrics --eval DIR/eval.csv [--out metrics.csv]

Set ``ABPS_VERBOSITY`` to a logging level name (DEBUG, INFO, WARNING, ...)
to control diagnostic output on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from ..pbt import PbtConfig, pbt_hook
from ..training import AbpsRun, RunAborted
from .config import MODES, ConfigError, ExperimentConfig, load_config, resolve, to_dict
from .metrics import compute_metrics, selection_frequencies
from .outputs import atomic_directory, read_eval, read_selections, write_metrics, write_run
from .runner import run_independent_baseline

log = logging.getLogger("abps")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abps", description="Shared-experience hyper-parameter tuning runs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (.toml or .json)")
        p.add_argument("--seed", type=int, help="run seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")

    run = sub.add_parser("run", help="train a pool and write eval/selection/event CSVs")
    common(run)
    run.add_argument("--mode", choices=MODES, help="training procedure (overrides the config)")
    run.add_argument("--checkpoint", action="store_true", help="also write a final checkpoint")

    baseline = sub.add_parser("baseline", help="train every pool member independently")
    common(baseline)

    metrics = sub.add_parser("metrics", help="per-epoch pool metrics from an eval.csv")
    metrics.add_argument("--eval", required=True, help="eval.csv produced by run/baseline")
    metrics.add_argument("--out", help="write metrics CSV here instead of printing")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("ABPS_VERBOSITY", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _train(config: ExperimentConfig, checkpoint: bool, out: Path) -> None:
    config = resolve(config)
    if config.mode == "independent-baseline":
        training_log = run_independent_baseline(config)
        run = None
    else:
        run = AbpsRun(config.abps, config.pool, config.env, config.run_seed, config.agent_ids)
        hook = pbt_hook(config.pbt or PbtConfig()) if config.mode == "abps-pbt" else None
        training_log = run.run(hook)
    with atomic_directory(out) as scratch:
        write_run(scratch, training_log, to_dict(config))
        if checkpoint and run is not None:
            run.save_checkpoint(scratch / "checkpoint")
    final = compute_metrics(training_log.eval_matrix)[-1]
    print(f"wrote {out} (training interactions {training_log.total_interactions}, "
          f"final best {final['best']:.4g}, top-25% {final['top25_quantile']:.4g})")


def _metrics(eval_path: str, out: Optional[str]) -> None:
    agent_ids, steps, matrix = read_eval(eval_path)
    if out:
        tmp = Path(f"{out}.tmp")
        write_metrics(tmp, steps, matrix)
        os.replace(tmp, out)
        return
    print("epoch,env_steps,best,top25_quantile,variance,median")
    for epoch, (s, m) in enumerate(zip(steps, compute_metrics(matrix))):
        print(f"{epoch},{s},{m['best']!r},{m['top25_quantile']!r},{m['variance']!r},{m['median']!r}")
    selections = Path(eval_path).with_name("selections.csv")
    hypers_path = Path(eval_path).with_name("config.resolved.json")
    if selections.exists() and hypers_path.exists():
        agents = json.loads(hypers_path.read_text(encoding="utf-8"))["pool"]["agents"]
        rows = selection_frequencies(read_selections(selections), agents, steps)
        print(f"behavior selections by arm: {rows[-1]['arm']}")


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "metrics":
            _metrics(args.eval, args.out)
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, run_seed=args.seed)
        mode = "independent-baseline" if args.command == "baseline" else args.mode
        if mode is not None:
            config = replace(config, mode=mode)
        out = args.out or config.out_dir
        if out is None:
            raise ConfigError("no output directory: pass --out or set [output] dir")
        _train(config, getattr(args, "checkpoint", False), Path(out))
    except ConfigError as exc:
        print(f"abps: config error: {exc}", file=sys.stderr)
        return 1
    except RunAborted as exc:
        print(f"abps: run aborted at {exc.diagnostics}: {exc.__cause__!r}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"abps: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())

"""CSV emission and parsing, and all-or-nothing output directories."""
from __future__ import annotations

import contextlib
import csv
import json
import os
import shutil
import tempfile
from pathlib import Path

from ..training import PbtEvent, SelectionEvent, TrainingLog
from .metrics import compute_metrics

EVAL_COLUMNS = ("epoch", "env_steps", "agent_id", "mean_return")
SELECTION_COLUMNS = ("round", "arm", "period_reward", "agent_id", "env_steps", "bandit_time")
EVENT_COLUMNS = ("round", "agent_id", "action", "src_agent", "old_learning_rate", "new_learning_rate",
                 "old_epsilon_decay_steps", "new_epsilon_decay_steps", "arm_mean")
METRIC_COLUMNS = ("epoch", "env_steps", "best", "top25_quantile", "variance", "median")


def _write(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _read(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_eval(path, log: TrainingLog) -> None:
    rows = []
    for epoch, (steps, row) in enumerate(zip(log.eval_steps, log.eval_matrix)):
        rows += [(epoch, steps, agent_id, repr(value)) for agent_id, value in zip(log.agent_ids, row)]
    _write(Path(path), EVAL_COLUMNS, rows)


def write_selections(path, log: TrainingLog) -> None:
    _write(Path(path), SELECTION_COLUMNS,
           [(e.round, e.arm, repr(e.period_reward), e.agent_id, e.env_steps, e.time)
            for e in log.selection_events])


def write_events(path, log: TrainingLog) -> None:
    _write(Path(path), EVENT_COLUMNS,
           [(e.round, e.agent_id, e.action, "" if e.src_agent is None else e.src_agent,
             repr(e.old_learning_rate), repr(e.new_learning_rate), e.old_epsilon_decay_steps,
             e.new_epsilon_decay_steps, repr(e.arm_mean)) for e in log.pbt_events])


def write_metrics(path, eval_steps, eval_matrix) -> list[dict]:
    metrics = compute_metrics(eval_matrix)
    _write(Path(path), METRIC_COLUMNS,
           [(epoch, steps, *(repr(m[c]) for c in METRIC_COLUMNS[2:]))
            for epoch, (steps, m) in enumerate(zip(eval_steps, metrics))])
    return metrics


def read_eval(path) -> tuple[list[int], list[int], list[list[float]]]:
    """``(agent_ids, eval_steps, eval_matrix)`` from an eval.csv."""
    rows = _read(Path(path))
    if not rows:
        raise ValueError(f"{path} has no evaluation rows")
    agent_ids: list[int] = []
    steps: dict[int, int] = {}
    values: dict[tuple[int, int], float] = {}
    for r in rows:
        epoch, agent = int(r["epoch"]), int(r["agent_id"])
        if agent not in agent_ids:
            agent_ids.append(agent)
        steps[epoch] = int(r["env_steps"])
        values[epoch, agent] = float(r["mean_return"])
    epochs = sorted(steps)
    matrix = [[values[e, a] for a in agent_ids] for e in epochs]
    return agent_ids, [steps[e] for e in epochs], matrix


def read_selections(path) -> list[SelectionEvent]:
    return [SelectionEvent(int(r["round"]), int(r["bandit_time"]), int(r["arm"]), int(r["agent_id"]), float(r["period_reward"]),
                           int(r["env_steps"])) for r in _read(Path(path))]


def read_events(path) -> list[PbtEvent]:
    return [PbtEvent(int(r["round"]), int(r["agent_id"]), r["action"],
                     int(r["src_agent"]) if r["src_agent"] else None,
                     float(r["old_learning_rate"]), float(r["new_learning_rate"]),
                     int(r["old_epsilon_decay_steps"]), int(r["new_epsilon_decay_steps"]), float(r["arm_mean"]))
            for r in _read(Path(path))]


def read_metrics(path) -> list[dict]:
    return [{c: float(r[c]) for c in METRIC_COLUMNS[2:]} for r in _read(Path(path))]


def write_run(directory, log: TrainingLog, resolved_config: dict) -> None:
    directory = Path(directory)
    write_eval(directory / "eval.csv", log)
    write_selections(directory / "selections.csv", log)
    write_events(directory / "events.csv", log)
    write_metrics(directory / "metrics.csv", log.eval_steps, log.eval_matrix)
    summary = {"env_steps": log.env_step_counter, "total_interactions": log.total_interactions,
               "eval_env_steps": log.eval_env_steps, "agent_ids": log.agent_ids}
    (directory / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    (directory / "config.resolved.json").write_text(json.dumps(resolved_config, indent=2) + "\n",
                                                    encoding="utf-8")


@contextlib.contextmanager
def atomic_directory(target):
    """Yield a scratch directory whose files land in ``target`` only on success."""
    target = Path(target)
    parent = target.parent if str(target.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=parent))
    try:
        yield scratch
        if not target.exists():
            os.replace(scratch, target)
            return
        for item in scratch.iterdir():
            dest = target / item.name
            if dest.is_dir() and not item.is_dir():
                raise IsADirectoryError(f"{dest} is a directory")
            if dest.is_dir():
                shutil.rmtree(dest)
            os.replace(item, dest)
    finally:
        if scratch.exists():
            shutil.rmtree(scratch, ignore_errors=True)

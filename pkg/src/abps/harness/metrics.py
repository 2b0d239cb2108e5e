"""Pool-level summaries of evaluation curves and behavior selections."""
from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

BUCKETINGS = ("arm", "architecture", "learning_rate", "epsilon_decay")


def epoch_metrics(returns: Sequence[float]) -> dict:
    """Best, 75th percentile (linear interpolation), population variance and median."""
    x = np.asarray(returns, dtype=float)
    if x.size == 0:
        raise ValueError("no agents to summarize")
    return {
        "best": float(x.max()),
        "top25_quantile": float(np.percentile(x, 75, method="linear")),
        "variance": float(x.var()),
        "median": float(np.median(x)),
    }


def compute_metrics(eval_matrix: Sequence[Sequence[float]]) -> list[dict]:
    if len(eval_matrix) == 0:
        raise ValueError("evaluation matrix is empty")
    return [epoch_metrics(row) for row in eval_matrix]


def decade_bucket(value: float) -> str:
    return f"1e{math.floor(math.log10(value))}"


def _bucket(kind: str, arm: int, hyper: dict) -> str:
    if kind == "arm":
        return str(arm)
    if kind == "architecture":
        return hyper.get("architecture") or "x".join(str(h) for h in hyper["hidden_sizes"])
    if kind == "learning_rate":
        return decade_bucket(hyper["learning_rate"])
    if kind == "epsilon_decay":
        return decade_bucket(hyper["epsilon_decay_steps"])
    raise ValueError(f"unknown bucketing {kind!r}")


def selection_frequencies(selection_events: Iterable, agent_hypers: Sequence[dict], eval_steps: Sequence[int],
                          bucketing: Sequence[str] = BUCKETINGS) -> list[dict]:
    """Cumulative selection counts at each evaluation epoch.

    An event counts toward epoch ``e`` once its period finished at or before
    ``eval_steps[e]``. Arms are bucketed by the hyper-parameters they started
    the run with.
    """
    events = sorted(selection_events, key=lambda e: e.env_steps)
    rows = []
    counts = {kind: Counter() for kind in bucketing}
    pos = 0
    for epoch, steps in enumerate(eval_steps):
        while pos < len(events) and events[pos].env_steps <= steps:
            ev = events[pos]
            for kind in bucketing:
                counts[kind][_bucket(kind, ev.arm, agent_hypers[ev.arm])] += 1
            pos += 1
        rows.append({"epoch": epoch, "env_steps": steps, "total": pos,
                     **{kind: dict(counts[kind]) for kind in bucketing}})
    return rows


def frequencies(counts: dict) -> dict:
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()} if total else {}

"""Dispatch an experiment config to the right training procedure."""
from __future__ import annotations

from dataclasses import replace

from ..pbt import run_abps_pbt
from ..training import TrainingLog, run_abps
from .config import ExperimentConfig, resolve


def run_independent_baseline(config: ExperimentConfig) -> TrainingLog:
    """Train every pool member alone, with its own buffer and behavior stream.

    Each agent gets ``baseline_steps`` interactions (default: the ABPS budget),
    so the pool consumes K times that in total. An agent's run depends only on
    ``(run_seed, agent_id)``, never on the rest of the pool.
    """
    config = resolve(config)
    per_agent = config.baseline_steps if config.baseline_steps is not None else config.abps.total_env_steps
    abps = replace(config.abps, total_env_steps=per_agent)
    logs = [run_abps(abps, [hyper], config.env, config.run_seed, [agent_id])
            for agent_id, hyper in zip(config.agent_ids, config.pool)]

    merged = TrainingLog(list(config.agent_ids), [h.to_dict() for h in config.pool])
    merged.eval_steps = list(logs[0].eval_steps)
    merged.eval_matrix = [[lg.eval_matrix[e][0] for lg in logs] for e in range(len(merged.eval_steps))]
    for arm, lg in enumerate(logs):
        merged.selection_events += [replace(ev, arm=arm) for ev in lg.selection_events]
        merged.eval_env_steps += lg.eval_env_steps
    merged.env_step_counter = per_agent
    merged.total_interactions = sum(lg.total_interactions for lg in logs)
    return merged


def run_experiment(config: ExperimentConfig) -> TrainingLog:
    config = resolve(config)
    if config.mode == "independent-baseline":
        return run_independent_baseline(config)
    if config.mode == "abps-pbt":
        return run_abps_pbt(config.abps, config.pbt, config.pool, config.env, config.run_seed, config.agent_ids)
    return run_abps(config.abps, config.pool, config.env, config.run_seed, config.agent_ids)

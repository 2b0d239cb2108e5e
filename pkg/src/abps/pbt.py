"""Population based training on top of the shared-experience loop.

Every ``pbt_period_multiplier`` selection rounds, arms whose bandit value is
stale are re-evaluated, the pool is ranked by bandit means, and each agent in
the bottom fraction takes over the weights, hyper-parameters and bandit
statistics of a random agent from the top fraction. Copied hyper-parameters
are then perturbed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import bandit as bandit_ops
from .bandit import BanditState
from .env import EnvSpec
from .learner import HyperParams
from .training import STALE_EVAL_STREAM, AbpsConfig, AbpsRun, AgentSlot, PbtEvent, TrainingLog

MUTABLE_KEYS = ("learning_rate", "epsilon_decay_steps")
DEFAULT_LEARNING_RATE_RANGE = (1e-5, 5e-3)
DEFAULT_EPSILON_DECAY_RANGE = (1_000, 16_000)


@dataclass(frozen=True)
class PbtConfig:
    enabled: bool = True
    pbt_period_multiplier: int = 4
    truncation_fraction: float = 0.25
    staleness_threshold: Optional[int] = None
    perturb_factors: tuple[float, float] = (0.8, 1.2)
    mutable_keys: tuple[str, ...] = MUTABLE_KEYS
    learning_rate_range: tuple[float, float] = DEFAULT_LEARNING_RATE_RANGE
    epsilon_decay_range: tuple[int, int] = DEFAULT_EPSILON_DECAY_RANGE
    eval_episodes: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "perturb_factors", tuple(self.perturb_factors))
        object.__setattr__(self, "mutable_keys", tuple(self.mutable_keys))
        object.__setattr__(self, "learning_rate_range", tuple(self.learning_rate_range))
        object.__setattr__(self, "epsilon_decay_range", tuple(self.epsilon_decay_range))
        if self.pbt_period_multiplier < 1:
            raise ValueError("pbt_period_multiplier must be >= 1")
        if not 0.0 < self.truncation_fraction <= 0.5:
            raise ValueError("truncation_fraction must lie in (0, 0.5]")
        if self.staleness_threshold is not None and self.staleness_threshold < 0:
            raise ValueError("staleness_threshold must be non-negative")
        if len(self.perturb_factors) != 2 or min(self.perturb_factors) <= 0:
            raise ValueError("perturb_factors must be two positive reals")
        unknown = set(self.mutable_keys) - set(MUTABLE_KEYS)
        if unknown:
            raise ValueError(f"unsupported mutable keys {sorted(unknown)}")
        lo, hi = self.learning_rate_range
        if not 0 < lo <= hi:
            raise ValueError("learning_rate_range must be ordered and positive")
        lo, hi = self.epsilon_decay_range
        if not 1 <= lo <= hi:
            raise ValueError("epsilon_decay_range must be ordered and >= 1")
        if self.eval_episodes is not None and self.eval_episodes < 1:
            raise ValueError("eval_episodes must be positive")

    @property
    def effective_staleness_threshold(self) -> int:
        if self.staleness_threshold is not None:
            return self.staleness_threshold
        return 2 * self.pbt_period_multiplier


def pbt_ready(selection_round: int, config: PbtConfig) -> bool:
    return selection_round > 0 and selection_round % config.pbt_period_multiplier == 0


def truncation_count(K: int, fraction: float) -> int:
    if K < 2:
        return 0
    return max(1, int(math.floor(K * fraction)))


def rank_arms(bandit: BanditState) -> list[int]:
    """Arms from best to worst bandit mean; equal means keep index order."""
    return sorted(range(bandit.K), key=lambda i: (-bandit.arms[i].mean, i))


def exploit_source(arm: int, ranking: Sequence[int], truncation_fraction: float,
                   rng: np.random.Generator) -> Optional[int]:
    """Arm to copy from if ``arm`` sits in the bottom fraction of ``ranking``, else None."""
    n = truncation_count(len(ranking), truncation_fraction)
    if n == 0 or arm not in ranking[-n:]:
        return None
    top = list(ranking[:n])
    return top[int(rng.integers(len(top)))]


def exploit(arm: int, pool: Sequence[AgentSlot], bandit: BanditState, truncation_fraction: float,
            rng: np.random.Generator, ranking: Optional[Sequence[int]] = None) -> bool:
    """Copy a top agent into ``arm`` if it ranks in the bottom fraction."""
    ranking = rank_arms(bandit) if ranking is None else ranking
    src = exploit_source(arm, ranking, truncation_fraction, rng)
    if src is None:
        return False
    _copy_agent(pool, bandit, arm, src)
    return True


def _copy_agent(pool: Sequence[AgentSlot], bandit: BanditState, dst: int, src: int) -> None:
    pool[dst].learner.copy_state_from(pool[src].learner)
    bandit_ops.substitute_arm(bandit, dst, src)


def explore(hyper: HyperParams, config: PbtConfig, rng: np.random.Generator) -> HyperParams:
    """Scale each mutable key by a factor drawn from ``perturb_factors``, clamped to its range."""
    changes = {}
    for key in MUTABLE_KEYS:
        if key not in config.mutable_keys:
            continue
        factor = config.perturb_factors[int(rng.integers(2))]
        if key == "learning_rate":
            lo, hi = config.learning_rate_range
            changes[key] = float(min(max(hyper.learning_rate * factor, lo), hi))
        else:
            lo, hi = config.epsilon_decay_range
            changes[key] = int(min(max(round(hyper.epsilon_decay_steps * factor), lo), hi))
    return hyper.with_updates(**changes)


def refresh_if_stale(run: AbpsRun, arm: int, now: int, eval_episodes: int, threshold: int) -> Optional[float]:
    """Re-evaluate ``arm`` when its bandit value is stale; returns the new return or None."""
    if not bandit_ops.is_stale(run.bandit, arm, now, threshold):
        return None
    value = run.evaluate(run.pool[arm], eval_episodes, (STALE_EVAL_STREAM, run.round))
    bandit_ops.update(run.bandit, arm, value, now)
    return value


def _event(run: AbpsRun, slot: AgentSlot, action: str, src: Optional[int], old: HyperParams,
           new: HyperParams) -> PbtEvent:
    return PbtEvent(run.round, slot.agent_id, action, src, old.learning_rate, new.learning_rate,
                    old.epsilon_decay_steps, new.epsilon_decay_steps, run.bandit.arms[slot.arm_index].mean)


def pbt_round(run: AbpsRun, config: PbtConfig) -> None:
    """Refresh stale arms, rank once, then exploit/explore in ascending agent_id order."""
    now = run.bandit.time
    order = sorted(range(run.K), key=lambda i: run.pool[i].agent_id)
    episodes = config.eval_episodes or run.config.eval_episodes
    threshold = config.effective_staleness_threshold
    for arm in order:
        if refresh_if_stale(run, arm, now, episodes, threshold) is not None:
            hyper = run.pool[arm].hyper
            run.log.pbt_events.append(_event(run, run.pool[arm], "stale-eval", None, hyper, hyper))
    ranking = rank_arms(run.bandit)
    for arm in order:
        slot = run.pool[arm]
        src = exploit_source(arm, ranking, config.truncation_fraction, run.pbt_rng)
        if src is None:
            continue
        old = slot.hyper
        _copy_agent(run.pool, run.bandit, arm, src)
        copied = slot.hyper
        run.log.pbt_events.append(_event(run, slot, "exploit", run.pool[src].agent_id, old, copied))
        slot.learner.hyper = explore(copied, config, run.pbt_rng)
        run.log.pbt_events.append(_event(run, slot, "explore", run.pool[src].agent_id, copied, slot.hyper))


def run_abps_pbt(config: AbpsConfig, pbt_config: Optional[PbtConfig], pool: Sequence[HyperParams],
                 env_spec: EnvSpec, run_seed: int, agent_ids: Optional[Sequence[int]] = None) -> TrainingLog:
    return AbpsRun(config, pool, env_spec, run_seed, agent_ids).run(pbt_hook(pbt_config))


def pbt_hook(config: Optional[PbtConfig]):
    """Per-period callback for :meth:`AbpsRun.run`; None when PBT is off."""
    if config is None or not config.enabled:
        return None

    def after_period(run: AbpsRun) -> None:
        if pbt_ready(run.round, config):
            pbt_round(run, config)

    return after_period

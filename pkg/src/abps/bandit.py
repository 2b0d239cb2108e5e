"""K-armed bandit over pool members used to pick the behavior policy.

Two bookkeeping modes are supported. ``cumulative`` keeps the incremental
mean of every reward an arm has received. ``sliding`` keeps only rewards
whose update time is within ``window_length`` selections of the latest
update, so arm values can track learners whose quality drifts as they train.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

STRATEGY_KINDS = ("random", "ucb", "epsilon_greedy", "softmax")
MODES = ("cumulative", "sliding")


@dataclass(frozen=True)
class Strategy:
    kind: str = "ucb"
    xi: float = 2.0
    epsilon_b: float = 0.1
    temperature: float = 1.0
    # "global": log of total selections; "window": log of pulls still in windows
    ucb_horizon: str = "global"

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not 0.0 <= self.epsilon_b <= 1.0:
            raise ValueError("epsilon_b must lie in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.ucb_horizon not in ("global", "window"):
            raise ValueError("ucb_horizon must be 'global' or 'window'")


@dataclass
class ArmState:
    mean: float = 0.0
    pulls: int = 0
    window: list[tuple[int, float]] = field(default_factory=list)
    last_update_time: int = 0

    def copy(self) -> "ArmState":
        return ArmState(self.mean, self.pulls, list(self.window), self.last_update_time)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "pulls": self.pulls,
                "window": [list(w) for w in self.window], "last_update_time": self.last_update_time}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmState":
        return cls(float(d["mean"]), int(d["pulls"]), [(int(t), float(r)) for t, r in d["window"]],
                   int(d["last_update_time"]))


@dataclass
class BanditState:
    arms: list[ArmState]
    time: int
    mode: str = "cumulative"
    window_length: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown bandit mode {self.mode!r}")
        if self.mode == "sliding" and (self.window_length is None or self.window_length < 1):
            raise ValueError("sliding mode needs a positive window_length")
        if not self.arms:
            raise ValueError("a bandit needs at least one arm")

    @property
    def K(self) -> int:
        return len(self.arms)

    @property
    def means(self) -> np.ndarray:
        return np.array([arm.mean for arm in self.arms])

    @property
    def pulls(self) -> np.ndarray:
        return np.array([arm.pulls for arm in self.arms])

    def to_dict(self) -> dict:
        return {"time": self.time, "mode": self.mode, "window_length": self.window_length,
                "arms": [arm.to_dict() for arm in self.arms]}

    @classmethod
    def from_dict(cls, d: dict) -> "BanditState":
        return cls([ArmState.from_dict(a) for a in d["arms"]], int(d["time"]), d["mode"], d["window_length"])


def init(K: int, initial_rewards: Sequence[float], mode: str = "cumulative",
         window_length: Optional[int] = None) -> BanditState:
    """Seed each arm with one initial reward; arm ``i`` counts as updated at time ``i + 1``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(initial_rewards) != K:
        raise ValueError(f"expected {K} initial rewards, got {len(initial_rewards)}")
    arms = [ArmState(float(r), 1, [(i + 1, float(r))] if mode == "sliding" else [], i + 1)
            for i, r in enumerate(initial_rewards)]
    return BanditState(arms, K, mode, window_length)


def argmax_lowest(values) -> int:
    # np.argmax already returns the first of equal maxima
    return int(np.argmax(values))


def ucb_indices(state: BanditState, xi: float, horizon: str = "global") -> np.ndarray:
    t = state.time if horizon == "global" else max(1, int(state.pulls.sum()))
    pulls = state.pulls.astype(float)
    with np.errstate(divide="ignore"):
        bonus = np.sqrt(xi * math.log(t) / pulls)
    return np.where(pulls > 0, state.means + bonus, np.inf)


def softmax_probabilities(means, temperature: float = 1.0) -> np.ndarray:
    z = (np.asarray(means, dtype=float) - np.max(means)) / temperature
    p = np.exp(z)
    return p / p.sum()


def select(state: BanditState, strategy: Strategy, rng: np.random.Generator) -> int:
    """Pick an arm and advance the bandit clock."""
    K = state.K
    kind = strategy.kind
    if kind == "random":
        arm = int(rng.integers(K))
    elif kind == "softmax":
        arm = int(rng.choice(K, p=softmax_probabilities(state.means, strategy.temperature)))
    elif kind == "epsilon_greedy":
        if rng.random() < strategy.epsilon_b:
            arm = int(rng.integers(K))
        else:
            arm = argmax_lowest(state.means)
    else:
        unpulled = np.flatnonzero(state.pulls == 0)
        if unpulled.size:
            arm = int(unpulled[0])
        else:
            arm = argmax_lowest(ucb_indices(state, strategy.xi, strategy.ucb_horizon))
    state.time += 1
    return arm


def _evict(state: BanditState, now: int) -> None:
    for arm in state.arms:
        kept = [(t, r) for t, r in arm.window if now - t < state.window_length]
        if len(kept) != len(arm.window):
            arm.window = kept
            arm.pulls = len(kept)
            if kept:
                arm.mean = float(np.mean([r for _, r in kept]))


def update(state: BanditState, arm: int, reward: float, now: int) -> None:
    """Fold a period's mean return into ``arm``.

    In sliding mode every arm's window is aged to ``now``; an arm whose window
    empties keeps its last mean but drops to zero pulls.
    """
    if not 0 <= arm < state.K:
        raise IndexError(f"arm {arm} outside [0, {state.K})")
    a = state.arms[arm]
    if state.mode == "cumulative":
        a.mean = (a.pulls * a.mean + reward) / (a.pulls + 1)
        a.pulls += 1
    else:
        a.window.append((now, float(reward)))
        _evict(state, now)
        a.pulls = len(a.window)
        a.mean = float(np.mean([r for _, r in a.window]))
    a.last_update_time = now


def substitute_arm(state: BanditState, dst: int, src: int) -> None:
    if dst == src:
        return
    state.arms[dst] = state.arms[src].copy()


def is_stale(state: BanditState, arm: int, now: int, threshold: int) -> bool:
    return now - state.arms[arm].last_update_time > threshold

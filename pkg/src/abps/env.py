"""Small episodic environments with exact dynamic-programming oracles.

Three kinds are provided:

* ``chain``: states ``0..N-1`` on a line, actions ``left``/``right``. Moving
  right from ``N-2`` into ``N-1`` pays ``goal_reward`` and ends the episode.
* ``gridworld``: a ``height x width`` grid, start at the top-left cell, goal at
  the bottom-right cell, actions ``up/right/down/left``. Bumping a wall leaves
  the agent in place.
* ``windy-gridworld``: the gridworld where, with probability
  ``slip_probability``, the chosen action is replaced by a push in the wind
  direction (down).

All observations are one-hot encodings of the state index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

KINDS = ("chain", "gridworld", "windy-gridworld")

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
CHAIN_LEFT, CHAIN_RIGHT = 0, 1
WIND_ACTION = DOWN

_GRID_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


class EnvError(RuntimeError):
    """Raised when an environment contract is violated."""


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "chain"
    length: int = 5
    width: int = 4
    height: int = 4
    slip_probability: float = 0.0
    max_episode_steps: int = 50
    seed: int = 0
    goal_reward: float = 1.0
    step_reward: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if not 0.0 <= self.slip_probability <= 1.0:
            raise ValueError("slip_probability must lie in [0, 1]")
        if self.kind != "windy-gridworld" and self.slip_probability != 0.0:
            raise ValueError(f"slip_probability must be 0 for deterministic kind {self.kind!r}")
        if self.kind == "chain" and self.length < 2:
            raise ValueError("chain length must be >= 2")
        if self.kind != "chain" and (self.width < 1 or self.height < 1 or self.width * self.height < 2):
            raise ValueError("grid needs at least two cells")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def state_count(self) -> int:
        if self.kind == "chain":
            return self.length
        return self.width * self.height

    @property
    def action_count(self) -> int:
        return 2 if self.kind == "chain" else 4

    @property
    def feature_size(self) -> int:
        return self.state_count

    @property
    def tabular(self) -> bool:
        return True

    @property
    def start_state(self) -> int:
        return 0

    @property
    def goal_state(self) -> int:
        return self.state_count - 1


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    state_id: Optional[int] = None


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    # done because the goal was reached (as opposed to the step limit)
    terminal: bool = False
    slipped: bool = field(default=False, compare=False)


def _one_hot(index: int, size: int) -> np.ndarray:
    x = np.zeros(size)
    x[index] = 1.0
    return x


def _grid_move(spec: EnvSpec, state: int, action: int) -> int:
    row, col = divmod(state, spec.width)
    dr, dc = _GRID_MOVES[action]
    row = min(max(row + dr, 0), spec.height - 1)
    col = min(max(col + dc, 0), spec.width - 1)
    return row * spec.width + col


def _deterministic_next(spec: EnvSpec, state: int, action: int) -> int:
    if spec.kind == "chain":
        if action == CHAIN_RIGHT:
            return min(state + 1, spec.length - 1)
        return max(state - 1, 0)
    return _grid_move(spec, state, action)


def transitions(spec: EnvSpec, state: int, action: int) -> list[tuple[float, int, float, bool]]:
    """Outcome distribution ``[(probability, next_state, reward, terminal)]``.

    The goal state is absorbing and never stepped from; callers treat it as
    terminal.
    """
    if not 0 <= action < spec.action_count:
        raise EnvError(f"action {action} outside [0, {spec.action_count})")
    outcomes = []
    if spec.kind == "windy-gridworld" and spec.slip_probability > 0.0:
        branches = [(1.0 - spec.slip_probability, action), (spec.slip_probability, WIND_ACTION)]
    else:
        branches = [(1.0, action)]
    for prob, effective in branches:
        if prob == 0.0:
            continue
        nxt = _deterministic_next(spec, state, effective)
        terminal = nxt == spec.goal_state
        reward = spec.goal_reward if terminal else spec.step_reward
        outcomes.append((prob, nxt, reward, terminal))
    return outcomes


class Environment:
    """A single-threaded instance of an :class:`EnvSpec`."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state: Optional[int] = None
        self.steps = 0
        self.done = True
        self._rng: Optional[np.random.Generator] = None
        self._eye = np.eye(spec.state_count)

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    @property
    def feature_size(self) -> int:
        return self.spec.feature_size

    def observe(self) -> Observation:
        return Observation(self._eye[self.state].copy(), self.state)

    def reset(self, episode_seed: int = 0, stream: Sequence[int] = ()) -> Observation:
        """Return to the start state and reseed from ``(spec.seed, *stream, episode_seed)``.

        ``stream`` separates otherwise-equal episode counters (training vs.
        evaluation, one agent vs. another) so they never share random draws.
        """
        self._rng = np.random.default_rng([self.spec.seed, *stream, episode_seed])
        self.state = self.spec.start_state
        self.steps = 0
        self.done = False
        return self.observe()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset() first")
        if not 0 <= action < self.action_count:
            raise EnvError(f"action {action} outside [0, {self.action_count})")
        effective = action
        slipped = False
        if self.spec.slip_probability > 0.0 and self._rng.random() < self.spec.slip_probability:
            effective = WIND_ACTION
            slipped = True
        nxt = _deterministic_next(self.spec, self.state, effective)
        terminal = nxt == self.spec.goal_state
        reward = self.spec.goal_reward if terminal else self.spec.step_reward
        self.state = nxt
        self.steps += 1
        self.done = terminal or self.steps >= self.spec.max_episode_steps
        return StepResult(self.observe(), float(reward), self.done, terminal, slipped)


def bellman_backup(spec: EnvSpec, q: np.ndarray, discount: float) -> np.ndarray:
    """One application of the Bellman optimality operator to a Q table."""
    v = q.max(axis=1)
    v[spec.goal_state] = 0.0
    out = np.zeros_like(q)
    for s in range(spec.state_count):
        if s == spec.goal_state:
            continue
        for a in range(spec.action_count):
            total = 0.0
            for prob, nxt, reward, terminal in transitions(spec, s, a):
                total += prob * (reward + (0.0 if terminal else discount * v[nxt]))
            out[s, a] = total
    return out


def optimal_q(spec: EnvSpec, discount: float, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Q* by value iteration; the goal row is all zeros (absorbing).

    The step limit is ignored: Q* is for the untruncated discounted MDP.
    """
    if not spec.tabular:
        raise ValueError("optimal_q needs a tabular environment")
    if not 0.0 <= discount < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    q = np.zeros((spec.state_count, spec.action_count))
    for _ in range(max_iter):
        new = bellman_backup(spec, q, discount)
        if np.max(np.abs(new - q)) <= tol:
            return new
        q = new
    raise RuntimeError("value iteration did not converge")


def make_env(spec: EnvSpec) -> Environment:
    return Environment(spec)

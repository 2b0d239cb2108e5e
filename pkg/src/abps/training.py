"""Shared-experience training loop with bandit-selected behavior policy.

A pool of learners trains from one replay buffer. Each selection round the
bandit picks one learner to act (epsilon-greedily) for ``m`` episodes; every
environment step the transition is stored and every learner takes one
gradient step. The mean return of the period is fed back to the bandit.
The environment interaction budget is the same as for a single learner.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import bandit as bandit_ops
from .bandit import BanditState, Strategy
from .env import EnvSpec, Environment
from .learner import HyperParams, Learner, WeightSnapshot
from .replay import DEFAULT_CAPACITY, ReplayBuffer, Transition, learn_start

log = logging.getLogger(__name__)

# RNG stream tags; each is combined with run_seed (and agent_id where relevant)
SEED_INIT, SEED_ACT, SEED_SAMPLE, SEED_BANDIT, SEED_PBT = 0, 1, 2, 3, 4
TRAIN_STREAM, EVAL_STREAM, INIT_EVAL_STREAM, STALE_EVAL_STREAM = 0, 1, 2, 3


class RunAborted(RuntimeError):
    """A training run failed; ``diagnostics`` records where."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message} {diagnostics}")
        self.diagnostics = diagnostics


def stream_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


@dataclass(frozen=True)
class AbpsConfig:
    m: int = 1
    n_init_eval_episodes: int = 1
    eval_episodes: int = 50
    eval_period: int = 2_000
    total_env_steps: int = 20_000
    strategy: Strategy = field(default_factory=Strategy)
    bandit_mode: str = "sliding"
    window_length: int = 25
    batch_size: int = 32
    buffer_capacity: int = DEFAULT_CAPACITY
    learn_start: Optional[int] = None
    parallel_learners: bool = False

    def __post_init__(self):
        for name in ("m", "n_init_eval_episodes", "eval_episodes", "eval_period", "batch_size",
                     "buffer_capacity", "window_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_env_steps < 0:
            raise ValueError("total_env_steps must be non-negative")
        if self.bandit_mode not in bandit_ops.MODES:
            raise ValueError(f"unknown bandit mode {self.bandit_mode!r}")
        if self.learn_start is not None and self.learn_start < 1:
            raise ValueError("learn_start must be positive")

    @property
    def effective_learn_start(self) -> int:
        return self.learn_start if self.learn_start is not None else learn_start(self.batch_size)


@dataclass
class AgentSlot:
    agent_id: int
    learner: Learner
    arm_index: int
    act_rng: np.random.Generator
    sample_rng: np.random.Generator

    @property
    def hyper(self) -> HyperParams:
        return self.learner.hyper


@dataclass
class SelectionEvent:
    round: int
    time: int
    arm: int
    agent_id: int
    period_reward: float
    env_steps: int


@dataclass
class PbtEvent:
    round: int
    agent_id: int
    action: str
    src_agent: Optional[int]
    old_learning_rate: float
    new_learning_rate: float
    old_epsilon_decay_steps: int
    new_epsilon_decay_steps: int
    arm_mean: float


@dataclass
class TrainingLog:
    agent_ids: list[int]
    agent_hypers: list[dict]
    eval_steps: list[int] = field(default_factory=list)
    eval_matrix: list[list[float]] = field(default_factory=list)
    selection_events: list[SelectionEvent] = field(default_factory=list)
    pbt_events: list[PbtEvent] = field(default_factory=list)
    env_step_counter: int = 0
    eval_env_steps: int = 0
    total_interactions: int = 0

    def final_evaluation(self) -> list[float]:
        return list(self.eval_matrix[-1])

    def agent_curve(self, agent_id: int) -> list[float]:
        col = self.agent_ids.index(agent_id)
        return [row[col] for row in self.eval_matrix]


def build_pool(hypers: Sequence[HyperParams], env_spec: EnvSpec, run_seed: int,
               agent_ids: Optional[Sequence[int]] = None) -> list[AgentSlot]:
    """Create learners whose random streams depend only on ``(run_seed, agent_id)``."""
    agent_ids = list(range(len(hypers))) if agent_ids is None else list(agent_ids)
    if len(set(agent_ids)) != len(agent_ids):
        raise ValueError("agent ids must be unique")
    if len(agent_ids) != len(hypers):
        raise ValueError("one agent id per hyper-parameter set is required")
    slots = []
    for arm, (agent_id, hyper) in enumerate(zip(agent_ids, hypers)):
        learner = Learner.create(hyper, env_spec.feature_size, env_spec.action_count,
                                 stream_rng(run_seed, SEED_INIT, agent_id))
        slots.append(AgentSlot(agent_id, learner, arm, stream_rng(run_seed, SEED_ACT, agent_id),
                               stream_rng(run_seed, SEED_SAMPLE, agent_id)))
    return slots


def evaluate_greedy(learner: Learner, env_spec: EnvSpec, episodes: int, stream: Sequence[int]) -> tuple[float, int]:
    """Mean greedy return over ``episodes`` isolated episodes, and the steps they took.

    Episodes run in lockstep so the network sees one batched forward pass per
    time step; each episode still has its own environment and random stream.
    """
    envs = [Environment(env_spec) for _ in range(episodes)]
    obs = np.stack([env.reset(i, stream).features for i, env in enumerate(envs)])
    returns = np.zeros(episodes)
    active = np.arange(episodes)
    steps = 0
    while active.size:
        actions = np.argmax(learner.online.forward(obs[active]), axis=1)
        still = []
        for idx, action in zip(active, actions):
            result = envs[idx].step(int(action))
            returns[idx] += result.reward
            obs[idx] = result.observation.features
            steps += 1
            if not result.done:
                still.append(idx)
        active = np.array(still, dtype=int)
    return float(returns.mean()), steps


def online_evaluation(learner: Learner, env_spec: EnvSpec, eval_episodes: int,
                      stream: Sequence[int] = (EVAL_STREAM,)) -> float:
    return evaluate_greedy(learner, env_spec, eval_episodes, stream)[0]


class AbpsRun:
    """State of one run: pool, shared buffer, bandit and log."""

    def __init__(self, config: AbpsConfig, hypers: Sequence[HyperParams], env_spec: EnvSpec,
                 run_seed: int, agent_ids: Optional[Sequence[int]] = None):
        self.config = config
        self.env_spec = env_spec
        self.run_seed = run_seed
        self.pool = build_pool(hypers, env_spec, run_seed, agent_ids)
        self.env = Environment(env_spec)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.bandit_rng = stream_rng(run_seed, SEED_BANDIT)
        self.pbt_rng = stream_rng(run_seed, SEED_PBT)
        self.bandit: Optional[BanditState] = None
        self.round = 0
        self.episode_counter = 0
        self.log = TrainingLog([s.agent_id for s in self.pool], [s.hyper.to_dict() for s in self.pool])
        self._train_order = sorted(self.pool, key=lambda s: s.agent_id)
        self._executor = ThreadPoolExecutor(max_workers=min(len(self.pool), os.cpu_count() or 1)) \
            if config.parallel_learners else None

    @property
    def K(self) -> int:
        return len(self.pool)

    @property
    def steps(self) -> int:
        return self.log.env_step_counter

    def evaluate(self, slot: AgentSlot, episodes: int, stream: Sequence[int]) -> float:
        mean, steps = evaluate_greedy(slot.learner, self.env_spec, episodes,
                                      (self.run_seed, *stream, slot.agent_id))
        self.log.eval_env_steps += steps
        return mean

    def initial_evaluation(self) -> list[float]:
        returns = [self.evaluate(s, self.config.n_init_eval_episodes, (INIT_EVAL_STREAM,)) for s in self.pool]
        self.bandit = bandit_ops.init(self.K, returns, self.config.bandit_mode, self.config.window_length)
        self.log.eval_steps.append(0)
        self.log.eval_matrix.append(returns)
        return returns

    def evaluate_pool(self) -> list[float]:
        epoch = len(self.log.eval_matrix)
        row = [self.evaluate(s, self.config.eval_episodes, (EVAL_STREAM, epoch)) for s in self.pool]
        self.log.eval_steps.append(self.steps)
        self.log.eval_matrix.append(row)
        log.debug("epoch %d at step %d: %s", epoch, self.steps, row)
        return row

    def _train_all(self) -> None:
        bs = self.config.batch_size

        def one(slot: AgentSlot) -> float:
            return slot.learner.train_step(self.buffer.sample_batch(bs, slot.sample_rng))

        if self._executor is None:
            for slot in self._train_order:
                one(slot)
        else:
            list(self._executor.map(one, self._train_order))

    def run_period(self, arm: int, m: Optional[int] = None) -> float:
        """Let ``arm``'s learner act for ``m`` episodes; return their mean return.

        Stops early, mid-episode if needed, when the step budget is used up; the
        cut episode's partial return then counts as one of the period's returns.
        """
        m = self.config.m if m is None else m
        behavior = self.pool[arm]
        warmup = self.config.effective_learn_start
        returns = []
        for _ in range(m):
            if self.steps >= self.config.total_env_steps:
                break
            obs = self.env.reset(self.episode_counter, (self.run_seed, TRAIN_STREAM))
            self.episode_counter += 1
            total = 0.0
            while True:
                action = behavior.learner.act(obs, behavior.act_rng)
                result = self.env.step(action)
                self.buffer.push(Transition(obs.features, action, result.reward,
                                            result.observation.features, result.terminal))
                total += result.reward
                self.log.env_step_counter += 1
                if len(self.buffer) >= warmup:
                    self._train_all()
                if self.steps % self.config.eval_period == 0:
                    self.evaluate_pool()
                obs = result.observation
                if result.done or self.steps >= self.config.total_env_steps:
                    break
            returns.append(total)
        return float(np.mean(returns)) if returns else 0.0

    def run(self, after_period: Optional[Callable[["AbpsRun"], None]] = None) -> TrainingLog:
        arm = None
        try:
            if self.bandit is None:
                self.initial_evaluation()
            while self.steps < self.config.total_env_steps:
                self.round += 1
                arm = bandit_ops.select(self.bandit, self.config.strategy, self.bandit_rng)
                reward = self.run_period(arm)
                bandit_ops.update(self.bandit, arm, reward, self.bandit.time)
                self.log.selection_events.append(SelectionEvent(
                    self.round, self.bandit.time, arm, self.pool[arm].agent_id, reward, self.steps))
                if after_period is not None:
                    after_period(self)
            if self.log.eval_steps[-1] != self.steps:
                self.evaluate_pool()
        except Exception as exc:
            diag = {"epoch": len(self.log.eval_matrix), "round": self.round, "step": self.steps,
                    "arm": arm}
            raise RunAborted(f"run aborted: {exc!r}", diag) from exc
        finally:
            if self._executor is not None:
                self._executor.shutdown()
        self.log.total_interactions = self.steps
        return self.log

    def save_checkpoint(self, directory) -> Path:
        """Pool weights, bandit state, buffer metadata and RNG cursors."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        agents = []
        for slot in self.pool:
            name = f"agent_{slot.agent_id}.weights"
            (directory / name).write_bytes(slot.learner.clone_weights().to_bytes())
            agents.append({
                "agent_id": slot.agent_id, "arm_index": slot.arm_index, "weights": name,
                "hyper": slot.hyper.to_dict(), "train_step_count": slot.learner.train_step_count,
                "act_step_count": slot.learner.act_step_count,
                "act_rng": slot.act_rng.bit_generator.state, "sample_rng": slot.sample_rng.bit_generator.state,
            })
        state = {
            "run_seed": self.run_seed, "round": self.round, "episode_counter": self.episode_counter,
            "env_steps": self.steps, "agents": agents,
            "bandit": self.bandit.to_dict() if self.bandit else None,
            "buffer": self.buffer.metadata(),
            "bandit_rng": self.bandit_rng.bit_generator.state, "pbt_rng": self.pbt_rng.bit_generator.state,
        }
        path = directory / "checkpoint.json"
        path.write_text(json.dumps(state, indent=2, default=int), encoding="utf-8")
        return path


def load_checkpoint(directory) -> tuple[dict, dict[int, WeightSnapshot], Optional[BanditState]]:
    directory = Path(directory)
    state = json.loads((directory / "checkpoint.json").read_text(encoding="utf-8"))
    weights = {a["agent_id"]: WeightSnapshot.from_bytes((directory / a["weights"]).read_bytes())
               for a in state["agents"]}
    bandit = BanditState.from_dict(state["bandit"]) if state["bandit"] else None
    return state, weights, bandit


def initial_evaluation(run: AbpsRun) -> list[float]:
    return run.initial_evaluation()


def run_period(run: AbpsRun, behavior_arm: int, m: int) -> float:
    return run.run_period(behavior_arm, m)


def run_abps(config: AbpsConfig, pool: Sequence[HyperParams], env_spec: EnvSpec, run_seed: int,
             agent_ids: Optional[Sequence[int]] = None) -> TrainingLog:
    return AbpsRun(config, pool, env_spec, run_seed, agent_ids).run()


def log_to_dict(log: TrainingLog) -> dict:
    return asdict(log)

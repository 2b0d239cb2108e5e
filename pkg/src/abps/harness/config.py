"""Experiment configuration files.

A config is a small TOML (or JSON) tree::

    mode = "abps"              # abps | abps-pbt | independent-baseline
    seed = 0

    [env]
    kind = "gridworld"
    width = 6
    height = 6
    max_episode_steps = 100

    [abps]
    m = 1
    total_env_steps = 20000
    eval_period = 2000

    [abps.strategy]
    kind = "ucb"
    xi = 2.0

    [pbt]                      # read only in abps-pbt mode
    pbt_period_multiplier = 4

    [baseline]
    per_agent_steps = 20000    # defaults to abps.total_env_steps

    [[pool.agents]]            # explicit pool ...
    learning_rate = 1e-3

    [pool.prior]               # ... or a prior to sample from
    K = 16

Unknown keys are rejected. :func:`resolve` replaces a prior by the pool it
samples, and :func:`to_dict` of the result is the resolved snapshot written
next to every run's outputs.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from ..bandit import Strategy
from ..env import EnvSpec
from ..learner import HyperParams
from ..pbt import PbtConfig
from ..training import AbpsConfig, stream_rng
from .pool import ArchitectureChoice, PoolPrior, sample_pool

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("abps", "abps-pbt", "independent-baseline")
_POOL_STREAM = 5


class ConfigError(ValueError):
    """The configuration file is missing, unparsable or invalid."""


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    abps: AbpsConfig = field(default_factory=AbpsConfig)
    pbt: Optional[PbtConfig] = None
    pool: Optional[list[HyperParams]] = None
    agent_ids: Optional[list[int]] = None
    prior: Optional[PoolPrior] = None
    mode: str = "abps"
    run_seed: int = 0
    out_dir: Optional[str] = None
    baseline_steps: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if (self.pool is None) == (self.prior is None):
            raise ConfigError("exactly one of pool.agents / pool.prior must be given")
        if self.pool is not None and not self.pool:
            raise ConfigError("pool.agents is empty")
        if self.agent_ids is not None and self.pool is not None and len(self.agent_ids) != len(self.pool):
            raise ConfigError("agent ids do not match pool size")
        if self.baseline_steps is not None and self.baseline_steps < 0:
            raise ConfigError("baseline.per_agent_steps must be non-negative")


def _build(cls, data: Any, section: str, **overrides):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**{**data, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


def _hyper(data: dict, section: str, base: Optional[dict] = None) -> HyperParams:
    return _build(HyperParams, {**(base or {}), **data}, section)


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    top = {"mode", "seed", "env", "abps", "pbt", "pool", "baseline", "output"}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    env = _build(EnvSpec, data.get("env", {}), "env")

    abps_data = dict(data.get("abps", {}))
    strategy = _build(Strategy, abps_data.pop("strategy", {}), "abps.strategy")
    abps = _build(AbpsConfig, abps_data, "abps", strategy=strategy)

    pbt = _build(PbtConfig, data["pbt"], "pbt") if "pbt" in data else None

    pool_data = data.get("pool")
    if not isinstance(pool_data, dict):
        raise ConfigError("a [pool] table with 'agents' or 'prior' is required")
    unknown = set(pool_data) - {"agents", "prior", "defaults"}
    if unknown:
        raise ConfigError(f"unknown key(s) in [pool]: {', '.join(sorted(unknown))}")
    defaults = pool_data.get("defaults", {})
    pool = agent_ids = prior = None
    if "agents" in pool_data:
        pool, agent_ids = [], []
        for i, agent in enumerate(pool_data["agents"]):
            agent = dict(agent)
            agent_ids.append(int(agent.pop("id", i)))
            pool.append(_hyper(agent, f"pool.agents[{i}]", defaults))
        if len(set(agent_ids)) != len(agent_ids):
            raise ConfigError("pool agent ids must be unique")
    if "prior" in pool_data:
        prior_data = dict(pool_data["prior"])
        archs = prior_data.pop("architectures", None)
        overrides = {"base": _hyper({}, "pool.defaults", defaults)}
        if archs is not None:
            overrides["architecture_choices"] = tuple(
                _build(ArchitectureChoice, {**a, "hidden_sizes": tuple(a.get("hidden_sizes", ()))},
                       f"pool.prior.architectures[{i}]")
                for i, a in enumerate(archs))
        for key in ("size_perturbation_range", "learning_rate_range", "epsilon_decay_range"):
            if key in prior_data:
                prior_data[key] = tuple(prior_data[key])
        prior = _build(PoolPrior, prior_data, "pool.prior", **overrides)

    baseline = data.get("baseline", {})
    if set(baseline) - {"per_agent_steps"}:
        raise ConfigError("unknown key(s) in [baseline]")
    output = data.get("output", {})
    if set(output) - {"dir"}:
        raise ConfigError("unknown key(s) in [output]")

    try:
        return ExperimentConfig(env=env, abps=abps, pbt=pbt, pool=pool, agent_ids=agent_ids, prior=prior,
                                mode=data.get("mode", "abps"), run_seed=int(data.get("seed", 0)),
                                out_dir=output.get("dir"), baseline_steps=baseline.get("per_agent_steps"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(data)


def resolve(config: ExperimentConfig) -> ExperimentConfig:
    """Replace a prior by the pool it samples under ``run_seed``."""
    if config.pool is not None:
        ids = config.agent_ids or list(range(len(config.pool)))
        return replace(config, agent_ids=ids)
    pool = sample_pool(config.prior, stream_rng(config.run_seed, _POOL_STREAM))
    return replace(config, pool=pool, agent_ids=list(range(len(pool))), prior=None)


def to_dict(config: ExperimentConfig) -> dict:
    """Plain-data form that :func:`from_dict` reads back to an equal config."""
    config = resolve(config)
    env = {f.name: getattr(config.env, f.name) for f in fields(EnvSpec)}
    abps = {f.name: getattr(config.abps, f.name) for f in fields(AbpsConfig) if f.name != "strategy"}
    abps = {k: v for k, v in abps.items() if v is not None}
    abps["strategy"] = {f.name: getattr(config.abps.strategy, f.name) for f in fields(Strategy)}
    out: dict = {"mode": config.mode, "seed": config.run_seed, "env": env, "abps": abps}
    if config.pbt is not None:
        pbt = {f.name: getattr(config.pbt, f.name) for f in fields(PbtConfig)}
        out["pbt"] = {k: list(v) if isinstance(v, tuple) else v for k, v in pbt.items() if v is not None}
    out["pool"] = {"agents": [{"id": i, **h.to_dict()} for i, h in zip(config.agent_ids, config.pool)]}
    if config.baseline_steps is not None:
        out["baseline"] = {"per_agent_steps": config.baseline_steps}
    if config.out_dir is not None:
        out["output"] = {"dir": config.out_dir}
    return out

"""Sampling heterogeneous learner pools from a prior."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..learner import HyperParams

# relative capacities: small < normal < wide, deep = three normal layers
ARCHITECTURES = {
    "normal": (64,),
    "wide": (256,),
    "deep": (64, 64, 64),
    "small": (8,),
}
ARCHITECTURE_MARGINAL = {"normal": 0.2, "wide": 0.2, "deep": 0.2, "small": 0.4}


@dataclass(frozen=True)
class ArchitectureChoice:
    name: str
    hidden_sizes: tuple[int, ...]
    probability: float


def default_architectures() -> tuple[ArchitectureChoice, ...]:
    return tuple(ArchitectureChoice(name, ARCHITECTURES[name], p) for name, p in ARCHITECTURE_MARGINAL.items())


@dataclass(frozen=True)
class PoolPrior:
    K: int = 16
    architecture_choices: tuple[ArchitectureChoice, ...] = field(default_factory=default_architectures)
    size_perturbation_range: tuple[float, float] = (0.9, 1.1)
    learning_rate_range: tuple[float, float] = (1e-5, 5e-3)
    epsilon_decay_range: tuple[int, int] = (1_000, 16_000)
    base: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("pool size K must be >= 1")
        if not self.architecture_choices:
            raise ValueError("at least one architecture choice is required")
        probs = [c.probability for c in self.architecture_choices]
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("architecture probabilities must be non-negative and sum to 1")
        for name, (lo, hi) in (("size_perturbation_range", self.size_perturbation_range),
                               ("learning_rate_range", self.learning_rate_range),
                               ("epsilon_decay_range", self.epsilon_decay_range)):
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be positive and ordered")


def log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    return float(np.exp(rng.uniform(np.log(low), np.log(high))))


def sample_hyper(prior: PoolPrior, rng: np.random.Generator) -> HyperParams:
    probs = np.array([c.probability for c in prior.architecture_choices])
    choice = prior.architecture_choices[int(rng.choice(len(probs), p=probs))]
    lo, hi = prior.size_perturbation_range
    hidden = tuple(max(1, int(round(h * rng.uniform(lo, hi)))) for h in choice.hidden_sizes)
    lr = log_uniform(rng, *prior.learning_rate_range)
    decay = max(1, int(round(log_uniform(rng, *prior.epsilon_decay_range))))
    return prior.base.with_updates(hidden_sizes=hidden, learning_rate=lr, epsilon_decay_steps=decay,
                                   architecture=choice.name)


def sample_pool(prior: PoolPrior, rng: np.random.Generator) -> list[HyperParams]:
    """``prior.K`` independent draws from the prior."""
    return [sample_hyper(prior, rng) for _ in range(prior.K)]

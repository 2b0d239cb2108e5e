"""Adaptive behavior policy sharing: hyper-parameter tuning of off-policy
Q-learners that share one replay buffer, with a bandit choosing which learner
collects experience."""

from .bandit import BanditState, Strategy
from .env import EnvSpec, Environment, optimal_q
from .learner import HyperParams, Learner, QNetwork
from .pbt import PbtConfig, run_abps_pbt
from .replay import ReplayBuffer, Transition
from .training import AbpsConfig, AbpsRun, TrainingLog, run_abps

__version__ = "0.1.0"

__all__ = [
    "AbpsConfig", "AbpsRun", "BanditState", "EnvSpec", "Environment", "HyperParams", "Learner",
    "PbtConfig", "QNetwork", "ReplayBuffer", "Strategy", "TrainingLog", "Transition", "optimal_q",
    "run_abps", "run_abps_pbt",
]

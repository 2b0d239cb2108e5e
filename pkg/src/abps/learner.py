"""DQN-style Q-learner on a small fully connected network.

The network, its backward pass and the Adam update are written directly in
numpy so that every learner in a pool is cheap, deterministic and checkable
against finite differences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .replay import Batch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SNAPSHOT_MAGIC = b"ABPSW\x01"


class NonFiniteLoss(FloatingPointError):
    """A train step produced a NaN or infinite loss."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class HyperParams:
    hidden_sizes: tuple[int, ...] = (64,)
    learning_rate: float = 1e-3
    epsilon_decay_steps: int = 5_000
    epsilon_start: float = 1.0
    epsilon_final: float = 0.1
    discount: float = 0.99
    target_sync_period: int = 500
    architecture: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a non-empty list of positive integers")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epsilon_decay_steps < 1:
            raise ValueError("epsilon_decay_steps must be positive")
        if not 0.0 < self.epsilon_start <= 1.0:
            raise ValueError("epsilon_start must lie in (0, 1]")
        if not 0.0 <= self.epsilon_final < 1.0:
            raise ValueError("epsilon_final must lie in [0, 1)")
        if self.epsilon_final > self.epsilon_start:
            raise ValueError("epsilon_final must not exceed epsilon_start")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be positive")

    def with_updates(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "learning_rate": self.learning_rate,
            "epsilon_decay_steps": self.epsilon_decay_steps,
            "epsilon_start": self.epsilon_start,
            "epsilon_final": self.epsilon_final,
            "discount": self.discount,
            "target_sync_period": self.target_sync_period,
            "architecture": self.architecture,
        }


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class QNetwork:
    """ReLU MLP with an identity output layer.

    ``params`` holds ``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(in, out)``.
    """

    def __init__(self, sizes: Sequence[int], params: Optional[list[np.ndarray]] = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("a network needs at least input and output sizes")
        if params is None:
            params = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                params += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
        self.params = params
        self._check_shapes(params)

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "QNetwork":
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            params += [_glorot(rng, fan_in, fan_out), np.zeros(fan_out)]
        return cls(sizes, params)

    def _check_shapes(self, params):
        expected = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            expected += [(fan_in, fan_out), (fan_out,)]
        if [p.shape for p in params] != expected:
            raise ValueError(f"parameter shapes {[p.shape for p in params]} do not match architecture {self.sizes}")

    @property
    def input_size(self) -> int:
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        return self.sizes[-1]

    @property
    def layer_count(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "QNetwork":
        return QNetwork(self.sizes, [p.copy() for p in self.params])

    def _validate_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_size or x.ndim > 2:
            raise ValueError(f"input of shape {x.shape} does not match input width {self.input_size}")
        return x

    def forward(self, x) -> np.ndarray:
        """Q-values for one observation ``(in,)`` or a batch ``(B, in)``."""
        h = self._validate_input(x)
        last = self.layer_count - 1
        for layer in range(self.layer_count):
            h = h @ self.params[2 * layer] + self.params[2 * layer + 1]
            if layer < last:
                h = np.maximum(h, 0.0)
        return h

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that also returns every layer's input, for backprop."""
        h = self._validate_input(x)
        if h.ndim == 1:
            h = h[None, :]
        inputs = []
        last = self.layer_count - 1
        for layer in range(self.layer_count):
            inputs.append(h)
            h = h @ self.params[2 * layer] + self.params[2 * layer + 1]
            if layer < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, inputs: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` with respect to ``params``."""
        grads: list[Optional[np.ndarray]] = [None] * len(self.params)
        delta = grad_out
        for layer in range(self.layer_count - 1, -1, -1):
            grads[2 * layer] = inputs[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.params[2 * layer].T) * (inputs[layer] > 0.0)
        return grads


def td_targets(target_net: QNetwork, batch: Batch, discount: float) -> np.ndarray:
    """``r`` for terminal transitions, else ``r + discount * max_a target(s', a)``."""
    next_q = target_net.forward(batch.s_next).max(axis=1)
    return batch.r + discount * np.where(batch.done, 0.0, next_q)


def td_loss_and_grads(net: QNetwork, batch: Batch, targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean squared TD error and its gradient, targets held fixed."""
    q, inputs = net.forward_cached(batch.s)
    rows = np.arange(len(batch.a))
    err = q[rows, batch.a] - targets
    loss = float(np.mean(err ** 2))
    grad_out = np.zeros_like(q)
    grad_out[rows, batch.a] = 2.0 * err / len(err)
    return loss, net.backward(inputs, grad_out)


def td_loss(net: QNetwork, batch: Batch, targets: np.ndarray) -> float:
    q = net.forward(batch.s)
    return float(np.mean((q[np.arange(len(batch.a)), batch.a] - targets) ** 2))


def gradient_check(net: QNetwork, batch: Batch, perturbation: float = 1e-5, discount: float = 0.99,
                   backprop: Optional[Callable] = None) -> float:
    """Largest relative disagreement between central differences and backprop.

    Targets are computed once from ``net`` and then frozen, matching how a
    train step treats them. ``backprop`` may replace :func:`td_loss_and_grads`
    (used to verify the check catches broken gradients).
    """
    if not 1e-7 <= perturbation <= 1e-3:
        raise ValueError("perturbation must lie in [1e-7, 1e-3]")
    targets = td_targets(net, batch, discount)
    _, analytic = (backprop or td_loss_and_grads)(net, batch, targets)
    worst = 0.0
    for param, grad in zip(net.params, analytic):
        flat = param.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + perturbation
            up = td_loss(net, batch, targets)
            flat[i] = saved - perturbation
            down = td_loss(net, batch, targets)
            flat[i] = saved
            numeric = (up - down) / (2.0 * perturbation)
            rel = abs(numeric - gflat[i]) / max(1e-8, abs(numeric) + abs(gflat[i]))
            worst = max(worst, rel)
    return worst


@dataclass
class WeightSnapshot:
    """Value copy of a network's architecture and parameters."""

    sizes: tuple[int, ...]
    params: list[np.ndarray]

    def to_bytes(self) -> bytes:
        header = SNAPSHOT_MAGIC + struct.pack("<I", len(self.sizes)) + struct.pack(f"<{len(self.sizes)}I", *self.sizes)
        body = np.concatenate([p.reshape(-1) for p in self.params]).astype("<f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightSnapshot":
        if not data.startswith(SNAPSHOT_MAGIC):
            raise ValueError("not a weight snapshot")
        offset = len(SNAPSHOT_MAGIC)
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        sizes = struct.unpack_from(f"<{count}I", data, offset)
        offset += 4 * count
        flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
        params, pos = [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for shape in ((fan_in, fan_out), (fan_out,)):
                n = int(np.prod(shape))
                params.append(flat[pos:pos + n].reshape(shape).copy())
                pos += n
        if pos != flat.size:
            raise ValueError("weight snapshot length does not match its header")
        return cls(tuple(sizes), params)


@dataclass
class Learner:
    """One pool member: online/target networks, Adam moments and counters."""

    online: QNetwork
    target: QNetwork
    hyper: HyperParams
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    train_step_count: int = 0
    act_step_count: int = 0

    def __post_init__(self):
        if self.online.sizes != self.target.sizes:
            raise ValueError("online and target networks must have identical shapes")
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.online.params]
            self.adam_v = [np.zeros_like(p) for p in self.online.params]

    @classmethod
    def create(cls, hyper: HyperParams, input_size: int, action_count: int,
               rng: np.random.Generator) -> "Learner":
        online = QNetwork.initialize((input_size, *hyper.hidden_sizes, action_count), rng)
        return cls(online, online.copy(), hyper)

    @property
    def action_count(self) -> int:
        return self.online.output_size

    def current_epsilon(self) -> float:
        h = self.hyper
        frac = min(1.0, self.act_step_count / h.epsilon_decay_steps)
        return h.epsilon_start + (h.epsilon_final - h.epsilon_start) * frac

    def greedy_action(self, observation) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return int(np.argmax(self.online.forward(_features(observation))))

    def act(self, observation, rng: np.random.Generator, epsilon: Optional[float] = None) -> int:
        """Epsilon-greedy action; advances the annealing counter."""
        eps = self.current_epsilon() if epsilon is None else epsilon
        self.act_step_count += 1
        if rng.random() < eps:
            return int(rng.integers(self.action_count))
        return self.greedy_action(observation)

    def train_step(self, batch: Batch) -> float:
        """One Adam step on the mean squared TD error; returns the pre-step loss."""
        if batch.size == 0:
            raise ValueError("cannot train on an empty batch")
        targets = td_targets(self.target, batch, self.hyper.discount)
        loss, grads = td_loss_and_grads(self.online, batch, targets)
        if not np.isfinite(loss):
            raise NonFiniteLoss(
                f"non-finite TD loss {loss} at train step {self.train_step_count}",
                {"train_step": self.train_step_count, "learning_rate": self.hyper.learning_rate,
                 "max_abs_weight": max(float(np.max(np.abs(p))) for p in self.online.params)},
            )
        self.train_step_count += 1
        t = self.train_step_count
        lr_t = self.hyper.learning_rate * np.sqrt(1.0 - ADAM_BETA2 ** t) / (1.0 - ADAM_BETA1 ** t)
        for p, g, m, v in zip(self.online.params, grads, self.adam_m, self.adam_v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr_t * m / (np.sqrt(v) + ADAM_EPS * np.sqrt(1.0 - ADAM_BETA2 ** t))
        if t % self.hyper.target_sync_period == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        for dst, src in zip(self.target.params, self.online.params):
            dst[...] = src

    def clone_weights(self) -> WeightSnapshot:
        return WeightSnapshot(self.online.sizes, [p.copy() for p in self.online.params])

    def load_weights(self, snapshot: WeightSnapshot) -> None:
        if tuple(snapshot.sizes) != self.online.sizes:
            raise ValueError(f"snapshot architecture {snapshot.sizes} does not match learner {self.online.sizes}")
        for dst, src in zip(self.online.params, snapshot.params):
            if dst.shape != src.shape:
                raise ValueError("snapshot parameter shapes do not match learner")
            dst[...] = src

    def copy_state_from(self, other: "Learner") -> None:
        """Take over another learner's weights, optimizer state, counters and hyper-params.

        The architecture travels with the weights, so this may reshape ``self``.
        """
        self.online = other.online.copy()
        self.target = other.target.copy()
        self.adam_m = [m.copy() for m in other.adam_m]
        self.adam_v = [v.copy() for v in other.adam_v]
        self.train_step_count = other.train_step_count
        self.act_step_count = other.act_step_count
        self.hyper = other.hyper


def _features(observation) -> np.ndarray:
    return getattr(observation, "features", observation)

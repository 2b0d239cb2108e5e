"""Shared FIFO experience replay."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

DEFAULT_CAPACITY = 50_000


def learn_start(batch_size: int) -> int:
    """Buffer fill required before any learner trains."""
    return max(batch_size, 100)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    @property
    def size(self) -> int:
        return len(self.a)

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        transitions = list(transitions)
        return cls(
            np.stack([np.asarray(t.s, dtype=float) for t in transitions]),
            np.array([t.a for t in transitions], dtype=np.int64),
            np.array([t.r for t in transitions], dtype=float),
            np.stack([np.asarray(t.s_next, dtype=float) for t in transitions]),
            np.array([t.done for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """Ring buffer of transitions; sampling is uniform with replacement.

    Storage is allocated on the first push, once the feature width is known.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.insert_count = 0
        self._s: Optional[np.ndarray] = None
        self._s_next: Optional[np.ndarray] = None
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._done = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.insert_count, self.capacity)

    def push(self, transition: Transition) -> None:
        s = np.asarray(transition.s, dtype=float)
        if self._s is None:
            self._s = np.zeros((self.capacity, s.size))
            self._s_next = np.zeros((self.capacity, s.size))
        if not np.isfinite(transition.r):
            raise ValueError("transition reward must be finite")
        i = self.insert_count % self.capacity
        self._s[i] = s
        self._s_next[i] = transition.s_next
        self._a[i] = transition.a
        self._r[i] = transition.r
        self._done[i] = transition.done
        self.insert_count += 1

    def _ordered_slots(self) -> np.ndarray:
        n = len(self)
        start = self.insert_count % self.capacity if self.insert_count > self.capacity else 0
        return (start + np.arange(n)) % self.capacity

    def _transition(self, i: int) -> Transition:
        return Transition(self._s[i].copy(), int(self._a[i]), float(self._r[i]),
                          self._s_next[i].copy(), bool(self._done[i]))

    def __iter__(self) -> Iterator[Transition]:
        """Oldest to newest."""
        for i in self._ordered_slots():
            yield self._transition(int(i))

    def _draw(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        return rng.integers(0, len(self), size=batch_size)

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self._draw(batch_size, rng)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._done[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return [self._transition(int(i)) for i in self._draw(batch_size, rng)]

    def metadata(self) -> dict:
        return {"capacity": self.capacity, "insert_count": self.insert_count, "len": len(self)}

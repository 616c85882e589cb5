"""Bounded FIFO replay memory backed by preallocated numpy arrays."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .dialogue import Transition


class ReplayBuffer:
    def __init__(self, capacity: int = 5000, obs_dim: int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self._size = 0
        self._head = 0  # slot of the oldest item once full
        self.inserted = 0
        if obs_dim is not None:
            self._alloc(obs_dim)

    def _alloc(self, obs_dim: int) -> None:
        self.obs_dim = obs_dim
        self.s = np.zeros((self.capacity, obs_dim))
        self.s_next = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros(self.capacity, dtype=np.intp)
        self.r = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity, dtype=bool)

    def __len__(self) -> int:
        return self._size

    @property
    def evicted(self) -> int:
        return self.inserted - self._size

    def push(self, t: Transition) -> None:
        if self.obs_dim is None:
            self._alloc(len(t.s))
        if len(t.s) != self.obs_dim or len(t.s_next) != self.obs_dim:
            raise ValueError("transition feature length does not match the buffer")
        if not np.isfinite(t.r):
            raise ValueError("non-finite reward")
        i = (self._head + self._size) % self.capacity
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = t.s_next
        self.done[i] = t.done
        if self._size < self.capacity:
            self._size += 1
        else:
            self._head = (self._head + 1) % self.capacity
        self.inserted += 1

    def extend(self, transitions: Iterable[Transition]) -> int:
        n = 0
        for t in transitions:
            self.push(t)
            n += 1
        return n

    def push_subsampled(self, transitions: Iterable[Transition], M: int, rng: np.random.Generator) -> int:
        """Keep each transition independently with probability ``1/M``."""
        if M < 1:
            raise ValueError("M must be >= 1")
        transitions = list(transitions)
        if M == 1:
            return self.extend(transitions)
        keep = rng.random(len(transitions)) < 1.0 / M
        return self.extend(t for t, k in zip(transitions, keep) if k)

    def _slots(self, idx: np.ndarray) -> np.ndarray:
        return (self._head + idx) % self.capacity

    def __getitem__(self, i: int) -> Transition:
        """Transition ``i`` in insertion order (0 is the oldest retained)."""
        if not -self._size <= i < self._size:
            raise IndexError(i)
        j = int(self._slots(np.array([i % self._size]))[0])
        return Transition(self.s[j].copy(), int(self.a[j]), float(self.r[j]), self.s_next[j].copy(), bool(self.done[j]))

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > self._size:
            raise ValueError(f"cannot draw {batch_size} from a buffer of {self._size}")
        return self._slots(rng.choice(self._size, size=batch_size, replace=False))

    def sample_minibatch(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw without replacement."""
        idx = self.sample_indices(batch_size, rng)
        return [
            Transition(self.s[j].copy(), int(self.a[j]), float(self.r[j]), self.s_next[j].copy(), bool(self.done[j]))
            for j in idx
        ]

    def arrays(self, slots: np.ndarray):
        """(s, a, r, s_next, done) arrays at raw storage ``slots``."""
        return self.s[slots], self.a[slots], self.r[slots], self.s_next[slots], self.done[slots]

"""Online/target Q-network pair trained by minibatch TD regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .dialogue import Transition
from .nn import PolicyGenome
from .replay import ReplayBuffer

BATCH_SIZE = 16


@dataclass
class DqnState:
    online: PolicyGenome
    target: PolicyGenome
    gamma: float = 0.99
    lr: float = 0.001
    epsilon: float = 0.0
    batch_size: int = BATCH_SIZE
    clip_norm: float = nn.GRAD_CLIP_NORM
    optimizer: str = "adam"
    steps: int = 0
    _opt: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.online.shape != self.target.shape:
            raise ValueError("online and target networks must share a shape")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.optimizer not in nn.OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self._opt = nn.OPTIMIZERS[self.optimizer](self.lr)

    def apply_gradient(self, grad: np.ndarray) -> None:
        self.online = self._opt.step(self.online, nn.clip_gradient(grad, self.clip_norm))
        self.steps += 1

    @classmethod
    def create(cls, shape: nn.NetworkShape, rng: np.random.Generator, **kw) -> "DqnState":
        online = PolicyGenome.random(shape, rng)
        return cls(online, online.copy(), **kw)


def td_targets(batch: Sequence[Transition], target: PolicyGenome, gamma: float) -> np.ndarray:
    if not batch:
        raise ValueError("empty batch")
    r = np.array([t.r for t in batch], dtype=np.float64)
    done = np.array([t.done for t in batch], dtype=bool)
    s_next = np.stack([t.s_next for t in batch])
    return _targets(r, done, s_next, target, gamma)


def _targets(r, done, s_next, target, gamma):
    bootstrap = nn.forward(target, s_next).max(axis=1)
    return r + np.where(done, 0.0, gamma * bootstrap)


def train_epoch(dqn: DqnState, buffer: ReplayBuffer, rng: np.random.Generator) -> float:
    """One pass of ``len(buffer) // batch_size`` SGD steps, then sync the target net.

    The target network is fixed for the whole pass, so bootstrap values are
    computed once for every stored transition.
    """
    n_batches = len(buffer) // dqn.batch_size
    losses = []
    if n_batches:
        slots = np.arange(buffer.capacity)[: len(buffer)]
        s, a, r, s_next, done = buffer.arrays(slots)
        y_all = np.empty(buffer.capacity)
        y_all[slots] = _targets(r, done, s_next, dqn.target, dqn.gamma)
        for _ in range(n_batches):
            idx = buffer.sample_indices(dqn.batch_size, rng)
            loss, grad = nn._loss_and_gradient(dqn.online, buffer.s[idx], buffer.a[idx], y_all[idx])
            dqn.apply_gradient(grad)
            losses.append(loss)
    dqn.target = dqn.online.copy()
    return float(np.mean(losses)) if losses else 0.0


def greedy_action(q: np.ndarray) -> int:
    """Argmax; ``np.argmax`` already returns the lowest index on ties."""
    return int(np.argmax(q))


def select_action(genome: PolicyGenome, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(genome.shape.output_dim))
    return greedy_action(nn.forward(genome, obs))


def greedy_policy(genome: PolicyGenome):
    """Adapter so a genome can drive :func:`dialogue.run_episode`."""

    def act(_state, obs):
        return greedy_action(nn.forward(genome, obs))

    return act

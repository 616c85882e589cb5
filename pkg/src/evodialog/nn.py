"""Fixed-architecture Q-network over a flat parameter vector.

Every network here is an MLP ``affine -> ReLU -> ... -> affine`` whose
parameters live in one contiguous float64 array (the genome).  Gradient
descent, crossover, mutation and injection all act on that array.

Flat layout, in order: ``W1, b1, W2, b2, ..., Wk, bk``.  Each ``W`` has
shape ``(fan_out, fan_in)`` and is stored row-major, so row ``i`` of a
matrix holds the incoming weights of unit ``i`` and pairs with ``b[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    hidden_dims: tuple[int, ...] = (80, 80)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")

    @cached_property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        """(fan_in, fan_out) per affine layer."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return tuple(zip(dims[:-1], dims[1:]))

    @cached_property
    def genome_len(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)

    @cached_property
    def _offsets(self) -> tuple[tuple[int, int, int], ...]:
        out = []
        pos = 0
        for fi, fo in self.layer_dims:
            w0 = pos
            b0 = w0 + fi * fo
            pos = b0 + fo
            out.append((w0, b0, pos))
        return tuple(out)

    def offsets(self) -> tuple[tuple[int, int, int], ...]:
        """(weight_start, bias_start, bias_end) of each layer in the flat vector."""
        return self._offsets

    def locate(self, index: int) -> tuple[int, str, int, int]:
        """Map a flat index to ``(layer, "W" | "b", row, col)``; col is 0 for biases."""
        if not 0 <= index < self.genome_len:
            raise IndexError(index)
        for layer, ((fi, _fo), (w0, b0, end)) in enumerate(zip(self.layer_dims, self.offsets())):
            if index < b0:
                row, col = divmod(index - w0, fi)
                return layer, "W", row, col
            if index < end:
                return layer, "b", index - b0, 0
        raise AssertionError("unreachable")


def genome_len(shape: NetworkShape) -> int:
    return shape.genome_len


@dataclass
class PolicyGenome:
    shape: NetworkShape
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 1 or self.params.size != self.shape.genome_len:
            raise ValueError(
                f"genome has {self.params.size} params, shape {self.shape} needs {self.shape.genome_len}"
            )

    @classmethod
    def zeros(cls, shape: NetworkShape) -> "PolicyGenome":
        return cls(shape, np.zeros(shape.genome_len))

    @classmethod
    def random(cls, shape: NetworkShape, rng: np.random.Generator) -> "PolicyGenome":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        params = np.zeros(shape.genome_len)
        for (fi, _fo), (w0, b0, _end) in zip(shape.layer_dims, shape.offsets()):
            bound = 1.0 / np.sqrt(fi)
            params[w0:b0] = rng.uniform(-bound, bound, size=b0 - w0)
        return cls(shape, params)

    def copy(self) -> "PolicyGenome":
        return PolicyGenome(self.shape, self.params.copy())

    def same_as(self, other: "PolicyGenome") -> bool:
        """Bit-exact equality of shape and parameters."""
        return self.shape == other.shape and np.array_equal(self.params, other.params)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self)


def unflatten(genome: PolicyGenome) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into the genome's buffer; writes go through to the genome."""
    p = genome.params
    cached = genome.__dict__.get("_views")
    if cached is not None and cached[0] is p:
        return cached[1]
    out = []
    for (fi, fo), (w0, b0, end) in zip(genome.shape.layer_dims, genome.shape.offsets()):
        out.append((p[w0:b0].reshape(fo, fi), p[b0:end]))
    genome.__dict__["_views"] = (p, out)
    return out


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> PolicyGenome:
    """Pack ``[(W1, b1), ...]`` into a new genome (inverse of :func:`unflatten`)."""
    if not layers:
        raise ValueError("need at least one layer")
    dims = [np.shape(layers[0][0])[1]]
    for W, b in layers:
        W = np.asarray(W)
        if W.ndim != 2 or W.shape[1] != dims[-1] or np.shape(b) != (W.shape[0],):
            raise ValueError("inconsistent layer shapes")
        dims.append(W.shape[0])
    shape = NetworkShape(dims[0], tuple(dims[1:-1]), dims[-1])
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return PolicyGenome(shape, np.concatenate(parts))


def _check_obs(genome: PolicyGenome, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1 and x.shape[0] == genome.shape.input_dim:
        return x
    if x.shape[-1:] != (genome.shape.input_dim,) or x.ndim > 2:
        raise ValueError(f"observation shape {x.shape} does not match input_dim {genome.shape.input_dim}")
    return x


def forward(genome: PolicyGenome, obs) -> np.ndarray:
    """Q-values for one observation ``(d,)`` or a batch ``(B, d)``."""
    h = _check_obs(genome, obs)
    layers = unflatten(genome)
    for W, b in layers[:-1]:
        h = np.maximum(h @ W.T + b, 0.0)
    W, b = layers[-1]
    return h @ W.T + b


def hidden_activations(genome: PolicyGenome, obs) -> list[np.ndarray]:
    h = _check_obs(genome, obs)
    acts = []
    for W, b in unflatten(genome)[:-1]:
        h = np.maximum(h @ W.T + b, 0.0)
        acts.append(h)
    return acts


def loss_and_gradient(genome: PolicyGenome, obs, actions, targets) -> tuple[float, np.ndarray]:
    """Mean squared TD error on the taken actions and its gradient w.r.t. the genome.

    ``obs`` is ``(B, d)``, ``actions`` and ``targets`` are length ``B``.  Only
    the output unit of each sample's action receives error signal.
    """
    x = _check_obs(genome, np.atleast_2d(obs))
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    B = x.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    if actions.shape != (B,) or targets.shape != (B,):
        raise ValueError("actions/targets must have one entry per observation")
    if not np.all(np.isfinite(targets)):
        raise ValueError("non-finite targets")
    if np.any(actions < 0) or np.any(actions >= genome.shape.output_dim):
        raise ValueError("action index out of range")
    return _loss_and_gradient(genome, x, actions, targets)


def _loss_and_gradient(genome, x, actions, targets):
    # unchecked core; the training loop calls this directly
    layers = unflatten(genome)
    B = x.shape[0]
    inputs = [x]
    masks = []
    h = x
    for W, b in layers[:-1]:
        z = h @ W.T
        z += b
        mask = z > 0
        h = z * mask
        masks.append(mask)
        inputs.append(h)
    W_out, b_out = layers[-1]
    rows = np.arange(B)
    q_taken = np.einsum("ij,ij->i", h, W_out[actions]) + b_out[actions]
    resid = targets - q_taken
    loss = float(resid @ resid) / B

    delta = np.zeros((B, W_out.shape[0]))
    delta[rows, actions] = -2.0 * resid / B

    grad = np.empty(genome.shape.genome_len)
    offs = genome.shape.offsets()
    for layer in range(len(layers) - 1, -1, -1):
        w0, b0, end = offs[layer]
        np.matmul(delta.T, inputs[layer], out=grad[w0:b0].reshape(layers[layer][0].shape))
        grad[b0:end] = delta.sum(axis=0)
        if layer:
            delta = (delta @ layers[layer][0]) * masks[layer - 1]
    return loss, grad


def clip_gradient(grad: np.ndarray, max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def sgd_step(genome: PolicyGenome, grad: np.ndarray, lr: float) -> PolicyGenome:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != genome.params.shape:
        raise ValueError(f"gradient length {grad.size} != genome length {genome.params.size}")
    return PolicyGenome(genome.shape, genome.params - lr * grad)


class Adam:
    """Adam over a flat parameter vector (bias-corrected moments)."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, genome: PolicyGenome, grad: np.ndarray) -> PolicyGenome:
        if self.m is None:
            self.m = np.zeros_like(genome.params)
            self.v = np.zeros_like(genome.params)
        if grad.shape != self.m.shape:
            raise ValueError("gradient length does not match optimizer state")
        self.t += 1
        m, v = self.m, self.v
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        # bias corrections folded into the step size and epsilon
        c1 = 1 - self.beta1**self.t
        c2 = np.sqrt(1 - self.beta2**self.t)
        denom = np.sqrt(v)
        denom += self.eps * c2
        step = m / denom
        step *= self.lr * c2 / c1
        return PolicyGenome(genome.shape, genome.params - step)


class SGD:
    def __init__(self, lr: float = 0.001):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr

    def step(self, genome: PolicyGenome, grad: np.ndarray) -> PolicyGenome:
        return sgd_step(genome, grad, self.lr)


OPTIMIZERS = {"adam": Adam, "sgd": SGD}

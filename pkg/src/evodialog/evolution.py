"""Genetic operators over flat Q-network genomes.

One generation keeps the top ``max(1, int(psi * m))`` genomes unchanged and
refills the other slots with children of (random elite) x (tournament
winner), each child then passing through the mutation operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .nn import PolicyGenome

SUPER, RESET, NORMAL = 0, 1, 2


@dataclass(frozen=True)
class EvoConfig:
    elite_fraction: float = 0.2
    tournament_size: int = 3
    mut_prob: float = 0.9
    mut_frac: float = 0.1
    supermut_prob: float = 0.05
    reset_prob: float = 0.1
    mut_strength: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.elite_fraction < 1.0:
            raise ValueError("elite_fraction must be in (0, 1)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        for name in ("mut_prob", "mut_frac", "supermut_prob", "reset_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.supermut_prob + self.reset_prob > 1.0:
            raise ValueError("supermut_prob + reset_prob must not exceed 1")
        if self.mut_strength <= 0:
            raise ValueError("mut_strength must be positive")


def n_elites(m: int, elite_fraction: float) -> int:
    return max(1, int(elite_fraction * m))


def rank_and_elites(fitnesses: Sequence[float], elite_fraction: float) -> tuple[list[int], list[int]]:
    """Return (elite indices, all indices best-first); ties go to the lower index."""
    if len(fitnesses) == 0:
        raise ValueError("empty population")
    f = np.asarray(fitnesses, dtype=np.float64)
    ranked = [int(i) for i in np.lexsort((np.arange(len(f)), -f))]
    return ranked[: n_elites(len(f), elite_fraction)], ranked


def tournament_select(fitnesses: Sequence[float], k: int, rng: np.random.Generator) -> int:
    """Best of ``k`` uniform draws with replacement (lower index on ties)."""
    if len(fitnesses) == 0:
        raise ValueError("empty population")
    if k < 1:
        raise ValueError("tournament size must be >= 1")
    players = rng.integers(len(fitnesses), size=k)
    best = int(players[0])
    for p in players[1:]:
        p = int(p)
        if fitnesses[p] > fitnesses[best] or (fitnesses[p] == fitnesses[best] and p < best):
            best = p
    return best


def crossover(parent_a: PolicyGenome, parent_b: PolicyGenome, rng: np.random.Generator) -> PolicyGenome:
    """Unit-wise crossover: each row of each weight matrix, with its bias, comes from one parent."""
    if parent_a.shape != parent_b.shape:
        raise ValueError("parents have different shapes")
    child = parent_a.copy()
    pb = parent_b.params
    for (fi, fo), (w0, b0, end) in zip(child.shape.layer_dims, child.shape.offsets()):
        take_b = rng.random(fo) < 0.5
        W = child.params[w0:b0].reshape(fo, fi)
        W[take_b] = pb[w0:b0].reshape(fo, fi)[take_b]
        child.params[b0:end][take_b] = pb[b0:end][take_b]
    return child


class MutationPlan(NamedTuple):
    """Pre-drawn point mutations for one weight matrix."""

    positions: np.ndarray  # flat indices into the matrix
    branches: np.ndarray  # SUPER / RESET / NORMAL
    draws: np.ndarray  # the normal sample used by each event


def plan_mutations(n_cells: int, cfg: EvoConfig, rng: np.random.Generator) -> MutationPlan:
    count = int(cfg.mut_frac * n_cells)
    positions = rng.integers(n_cells, size=count)
    u = rng.random(count)
    branches = np.where(
        u < cfg.supermut_prob, SUPER, np.where(u < cfg.supermut_prob + cfg.reset_prob, RESET, NORMAL)
    )
    scale = np.where(branches == SUPER, 100.0 * cfg.mut_strength, np.where(branches == RESET, 1.0, cfg.mut_strength))
    draws = rng.standard_normal(count) * scale
    return MutationPlan(positions, branches, draws)


def apply_mutations(weights: np.ndarray, plan: MutationPlan) -> None:
    """Apply events in order, in place on a flat weight view.

    Supermutation and normal events add weight-proportional noise
    (``w += w * N(0, s)``); reset events overwrite the weight with N(0, 1).
    Events hitting the same cell compound in sequence.
    """
    pos, br, dr = plan
    if len(np.unique(pos)) == len(pos):
        w = weights[pos]
        weights[pos] = np.where(br == RESET, dr, w + w * dr)
        return
    for p, b, d in zip(pos.tolist(), br.tolist(), dr.tolist()):
        weights[p] = d if b == RESET else weights[p] * (1.0 + d)


def mutate(genome: PolicyGenome, cfg: EvoConfig, rng: np.random.Generator) -> PolicyGenome:
    """Return a mutated copy; biases are left alone."""
    child = genome.copy()
    if rng.random() >= cfg.mut_prob:
        return child
    for w0, b0, _end in child.shape.offsets():
        weights = child.params[w0:b0]
        apply_mutations(weights, plan_mutations(b0 - w0, cfg, rng))
    return child


def evolve(
    pop: Sequence[PolicyGenome], fitnesses: Sequence[float], cfg: EvoConfig, rng: np.random.Generator
) -> list[PolicyGenome]:
    m = len(pop)
    if m < 2:
        raise ValueError("evolution needs a population of at least 2")
    if len(fitnesses) != m:
        raise ValueError("one fitness per individual required")
    elites, _ = rank_and_elites(fitnesses, cfg.elite_fraction)
    parents = [tournament_select(fitnesses, cfg.tournament_size, rng) for _ in range(m - len(elites))]
    new_pop = [pop[i].copy() for i in elites]
    for j in parents:
        e = elites[int(rng.integers(len(elites)))]
        new_pop.append(mutate(crossover(pop[e], pop[j], rng), cfg, rng))
    return new_pop

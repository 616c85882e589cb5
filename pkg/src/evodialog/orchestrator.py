"""Hybrid population loop: DQN learner + evolved Q-networks + elite injection.

Each epoch:

1. every member of the policy population is overwritten with the learner's
   online weights;
2. every individual (EA population first, then policy population, each in
   index order) plays ``episodes`` dialogues; its fitness is the summed
   reward and the transitions go to the shared buffer with probability
   ``1/(n + m)``;
3. if the best fitness of the epoch beats the running threshold, the best
   individual is copied into every EA slot and the threshold rises to that
   fitness; otherwise the EA population goes through one generation;
4. the learner does one training pass on the buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dqn as dqnlib
from .dialogue import EpisodeResult, KnowledgeBase, run_episode
from .evolution import EvoConfig, evolve
from .nn import PolicyGenome
from .replay import ReplayBuffer


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 1
    epsilon_policy: float = 0.05
    epsilon_evo: float = 0.0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("need at least one evaluation episode")
        for eps in (self.epsilon_policy, self.epsilon_evo):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must be in [0, 1]")


@dataclass
class Populations:
    pop_policy: list[PolicyGenome]
    pop_evo: list[PolicyGenome]

    def __post_init__(self):
        shapes = {g.shape for g in self.pop_policy + self.pop_evo}
        if len(shapes) > 1:
            raise ValueError("all genomes must share one network shape")

    @property
    def n(self) -> int:
        return len(self.pop_policy)

    @property
    def m(self) -> int:
        return len(self.pop_evo)

    @property
    def size(self) -> int:
        return self.n + self.m

    @classmethod
    def create(cls, learner: PolicyGenome, n: int, m: int, rng: np.random.Generator) -> "Populations":
        if n < 0 or m < 1:
            raise ValueError("need n >= 0 policy copies and m >= 1 EA individuals")
        return cls(
            [learner.copy() for _ in range(n)],
            [PolicyGenome.random(learner.shape, rng) for _ in range(m)],
        )


@dataclass
class EliteDiscriminator:
    f_max: float = -math.inf
    best_fitness: float = -math.inf  # f'_max of the latest epoch
    best: PolicyGenome | None = None  # pi_max of the latest epoch

    def should_inject(self) -> bool:
        return self.best_fitness > self.f_max


def load_policy_population(pops: Populations, learner: PolicyGenome) -> None:
    for i, g in enumerate(pops.pop_policy):
        if g.shape != learner.shape:
            raise ValueError("learner shape differs from the policy population")
        pops.pop_policy[i] = learner.copy()


def rollouts(
    genome: PolicyGenome,
    kb: KnowledgeBase,
    episodes: int,
    epsilon: float,
    buffer: ReplayBuffer | None,
    M: int,
    rng: np.random.Generator,
) -> list[EpisodeResult]:
    policy = dqnlib.greedy_policy(genome)
    results = []
    for _ in range(episodes):
        res = run_episode(policy, kb, epsilon, rng)
        if buffer is not None:
            buffer.push_subsampled(res.transitions, M, rng)
        results.append(res)
    return results


def evaluate(
    genome: PolicyGenome,
    kb: KnowledgeBase,
    epsilon: float,
    episodes: int,
    buffer: ReplayBuffer | None,
    M: int,
    rng: np.random.Generator,
) -> float:
    """Fitness = total reward over ``episodes`` epsilon-greedy dialogues."""
    return sum(r.total_return for r in rollouts(genome, kb, episodes, epsilon, buffer, M, rng))


def evolution_fitness_slice(all_fitness, pops: Populations) -> list[float]:
    """EA fitnesses out of ``all_fitness`` ordered EA population first, then policy population."""
    if len(all_fitness) != pops.size:
        raise ValueError(f"expected {pops.size} fitness values, got {len(all_fitness)}")
    return list(all_fitness[: pops.m])


@dataclass
class EpochReport:
    injected: bool
    evolved: bool
    all_fitness: list[float]
    best_fitness: float
    f_max: float
    loss: float
    success_rate: float
    avg_reward: float
    avg_turns: float


@dataclass
class HybridRun:
    """Mutable state of one EIERL-style run.

    ``eii=False`` gives plain ERL (always evolve); ``train=False`` with an
    empty policy population gives the EA-only ablation.
    """

    kb: KnowledgeBase
    pops: Populations
    learner: dqnlib.DqnState
    buffer: ReplayBuffer
    evo_cfg: EvoConfig = field(default_factory=EvoConfig)
    eval_cfg: EvalConfig = field(default_factory=EvalConfig)
    eii: bool = True
    train: bool = True
    discriminator: EliteDiscriminator = field(default_factory=EliteDiscriminator)
    injections: int = 0
    evolutions: int = 0
    epochs: int = 0

    def run_epoch(self, rng: np.random.Generator) -> EpochReport:
        pops = self.pops
        load_policy_population(pops, self.learner.online)
        M = pops.size
        cfg = self.eval_cfg

        members = [(g, cfg.epsilon_evo) for g in pops.pop_evo] + [(g, cfg.epsilon_policy) for g in pops.pop_policy]
        all_fitness = []
        episodes: list[EpisodeResult] = []
        disc = self.discriminator
        disc.best_fitness, disc.best = -math.inf, None
        for genome, eps in members:
            results = rollouts(genome, self.kb, cfg.episodes, eps, self.buffer, M, rng)
            fitness = sum(r.total_return for r in results)
            episodes.extend(results)
            all_fitness.append(fitness)
            if fitness > disc.best_fitness:
                disc.best_fitness, disc.best = fitness, genome

        injected = self.eii and disc.should_inject()
        if injected:
            pops.pop_evo = [disc.best.copy() for _ in range(pops.m)]
            disc.f_max = disc.best_fitness
            self.injections += 1
        else:
            pops.pop_evo = evolve(pops.pop_evo, evolution_fitness_slice(all_fitness, pops), self.evo_cfg, rng)
            self.evolutions += 1

        loss = dqnlib.train_epoch(self.learner, self.buffer, rng) if self.train else 0.0
        self.epochs += 1
        return EpochReport(
            injected=injected,
            evolved=not injected,
            all_fitness=all_fitness,
            best_fitness=disc.best_fitness,
            f_max=disc.f_max,
            loss=loss,
            success_rate=float(np.mean([r.success for r in episodes])),
            avg_reward=float(np.mean([r.total_return for r in episodes])),
            avg_turns=float(np.mean([r.turns for r in episodes])),
        )

"""Seeded multi-run experiments, test-phase evaluation and result files.

Every run of one seed uses independent random streams derived from
``(seed, purpose)``, so two variants run with the same seed share their
network initialisation, warm-start dialogues and test-phase user goals.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import dqn as dqnlib
from . import nn
from .dialogue import KnowledgeBase, build_kb, load_schema, reset, run_episode, sample_goal, step, warm_start_policy
from .evolution import EvoConfig
from .nn import NetworkShape, PolicyGenome
from .orchestrator import EvalConfig, HybridRun, Populations
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

AGENTS = ("eierl", "erl", "ea", "dqn")
CSV_HEADER = "epoch,success_rate,avg_reward,avg_turns"

# stream tags for np.random.default_rng((seed, tag, ...))
_INIT, _WARM, _TRAIN, _TEST = 11, 23, 37, 53


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    schema: str = "movie"
    agent: str = "eierl"
    epsilon: float = 0.05  # DQN variant's exploration rate
    epochs: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    warm_start_epochs: int = 120
    test_episodes: int = 50
    kb_seed: int = 0
    # network / learner
    hidden: tuple[int, ...] = (80, 80)
    gamma: float = 0.99
    lr: float = 0.001
    batch_size: int = 16
    buffer_capacity: int = 5000
    # populations
    pop_evo: int = 3
    pop_drl: int = 1
    eval_episodes: int = 1
    eval_epsilon_policy: float = 0.05
    eval_epsilon_evo: float = 0.0
    # EA
    elite_fraction: float = 0.2
    tournament_size: int = 3
    mut_prob: float = 0.9
    mut_frac: float = 0.1
    supermut_prob: float = 0.05
    reset_prob: float = 0.1
    mut_strength: float = 0.1
    out: str = "results"

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ConfigError(f"unknown agent {self.agent!r}; choose from {AGENTS}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.test_episodes < 1 or self.warm_start_epochs < 0:
            raise ConfigError("test_episodes must be >= 1 and warm_start_epochs >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in [0, 1]")
        if self.agent in ("eierl", "erl", "ea") and self.pop_evo < 2:
            raise ConfigError("population variants need pop_evo >= 2")
        if self.pop_drl < 0:
            raise ConfigError("pop_drl must be >= 0")
        try:
            self.evo_config()
            self.eval_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def evo_config(self) -> EvoConfig:
        return EvoConfig(
            elite_fraction=self.elite_fraction,
            tournament_size=self.tournament_size,
            mut_prob=self.mut_prob,
            mut_frac=self.mut_frac,
            supermut_prob=self.supermut_prob,
            reset_prob=self.reset_prob,
            mut_strength=self.mut_strength,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.eval_episodes, self.eval_epsilon_policy, self.eval_epsilon_evo)

    @property
    def label(self) -> str:
        if self.agent == "dqn":
            return f"dqn_eps{self.epsilon:g}"
        return self.agent

    def updated(self, **overrides) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    raw = raw.strip()
    if kind == "tuple[int, ...]":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.  Returns overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[experiment]\n" + text)
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, raw in cp["experiment"].items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return out


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig(**{**parse_config(text), **{k: v for k, v in overrides.items() if v is not None}})


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    success_rate: float
    avg_reward: float
    avg_turns: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.success_rate:.6f},{self.avg_reward:.6f},{self.avg_turns:.6f}"


# --- phases ----------------------------------------------------------------


def warm_start(buffer: ReplayBuffer, kb: KnowledgeBase, episodes: int, rng: np.random.Generator) -> int:
    """Fill the buffer with rule-policy dialogues; every transition is kept."""
    stored = 0
    for _ in range(episodes):
        stored += buffer.extend(run_episode(warm_start_policy, kb, 0.0, rng).transitions)
    return stored


def test_phase(genome: PolicyGenome, kb: KnowledgeBase, episodes: int, rng: np.random.Generator, epoch: int = 0) -> EpochMetrics:
    """Greedy dialogues with nothing stored anywhere."""
    if episodes < 1:
        raise ValueError("need at least one test episode")
    returns, successes, turns = greedy_rollouts(genome, kb, episodes, rng)
    return EpochMetrics(
        epoch,
        sum(successes) / episodes,
        math.fsum(returns) / episodes,
        sum(turns) / episodes,
    )


def greedy_rollouts(genome: PolicyGenome, kb: KnowledgeBase, episodes: int, rng: np.random.Generator):
    """Play ``episodes`` greedy dialogues in lockstep with one batched forward per turn.

    Greedy play draws no random numbers after reset, so this matches running
    the dialogues one after another with ``run_episode(..., epsilon=0)``.
    """
    states, obs = [], []
    for _ in range(episodes):
        st, o = reset(kb, sample_goal(kb, rng), rng)
        states.append(st)
        obs.append(o)
    returns = [0.0] * episodes
    active = list(range(episodes))
    while active:
        actions = np.argmax(nn.forward(genome, np.stack([obs[i] for i in active])), axis=1)
        still = []
        for i, a in zip(active, actions.tolist()):
            obs[i], r, done, _ = step(states[i], a)
            returns[i] += r
            if not done:
                still.append(i)
        active = still
    return returns, [st.success for st in states], [st.turn for st in states]


@dataclass
class SeedRun:
    metrics: list[EpochMetrics]
    f_max_history: list[float] = field(default_factory=list)
    injections: int = 0
    evolutions: int = 0


def run_seed(cfg: ExperimentConfig, seed: int, kb: KnowledgeBase | None = None) -> SeedRun:
    if kb is None:
        kb = build_kb(load_schema(cfg.schema), cfg.kb_seed)
    schema = kb.schema
    shape = NetworkShape(schema.obs_dim, cfg.hidden, schema.n_actions)
    init_rng = np.random.default_rng((seed, _INIT))
    train_rng = np.random.default_rng((seed, _TRAIN))

    learner = dqnlib.DqnState.create(
        shape, init_rng, gamma=cfg.gamma, lr=cfg.lr, epsilon=cfg.epsilon, batch_size=cfg.batch_size
    )
    buffer = ReplayBuffer(cfg.buffer_capacity, schema.obs_dim)
    if cfg.agent != "ea":
        warm_start(buffer, kb, cfg.warm_start_epochs, np.random.default_rng((seed, _WARM)))

    hybrid = None
    if cfg.agent in ("eierl", "erl", "ea"):
        n = 0 if cfg.agent == "ea" else cfg.pop_drl
        hybrid = HybridRun(
            kb,
            Populations.create(learner.online, n, cfg.pop_evo, init_rng),
            learner,
            buffer,
            cfg.evo_config(),
            cfg.eval_config(),
            eii=cfg.agent == "eierl",
            train=cfg.agent != "ea",
        )

    run = SeedRun([])
    for epoch in range(1, cfg.epochs + 1):
        if hybrid is not None:
            hybrid.run_epoch(train_rng)
            run.f_max_history.append(hybrid.discriminator.f_max)
            # EA-only reports its top-ranked individual; evolve() puts the elite first
            tested = hybrid.pops.pop_evo[0] if cfg.agent == "ea" else learner.online
        else:
            res = run_episode(dqnlib.greedy_policy(learner.online), kb, cfg.epsilon, train_rng)
            buffer.extend(res.transitions)
            dqnlib.train_epoch(learner, buffer, train_rng)
            tested = learner.online
        test_rng = np.random.default_rng((seed, _TEST, epoch))
        run.metrics.append(test_phase(tested, kb, cfg.test_episodes, test_rng, epoch))
    if hybrid is not None:
        run.injections, run.evolutions = hybrid.injections, hybrid.evolutions
    return run


def mean_metrics(per_seed: Sequence[Sequence[EpochMetrics]]) -> list[EpochMetrics]:
    """Epoch-wise arithmetic mean; ``fsum`` keeps it independent of seed order."""
    out = []
    for rows in zip(*per_seed):
        k = len(rows)
        out.append(
            EpochMetrics(
                rows[0].epoch,
                math.fsum(r.success_rate for r in rows) / k,
                math.fsum(r.avg_reward for r in rows) / k,
                math.fsum(r.avg_turns for r in rows) / k,
            )
        )
    return out


# --- output files ----------------------------------------------------------


def emit_csv(path: str | Path, metrics: Iterable[EpochMetrics]) -> Path:
    path = Path(path)
    lines = [CSV_HEADER, *(m.csv_row() for m in metrics)]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
    return path


def read_csv(path: str | Path) -> list[EpochMetrics]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a metrics CSV")
    rows = []
    for line in lines[1:]:
        e, s, r, t = line.split(",")
        rows.append(EpochMetrics(int(e), float(s), float(r), float(t)))
    return rows


_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(curves: dict[str, Sequence[EpochMetrics]], width: int = 640, height: int = 400) -> str:
    """Success rate vs. epoch, one polyline per labelled curve."""
    if not curves or not any(curves.values()):
        raise ValueError("nothing to plot")
    left, right, top, bottom = 50, 130, 20, 40
    pw, ph = width - left - right, height - top - bottom
    last = max(m.epoch for ms in curves.values() for m in ms)
    first = min(m.epoch for ms in curves.values() for m in ms)
    span = max(1, last - first)

    def xy(m: EpochMetrics) -> str:
        x = left + pw * (m.epoch - first) / span
        y = top + ph * (1.0 - m.success_rate)
        return f"{x:.2f},{y:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="14" y="{top + ph / 2:.0f}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {top + ph / 2:.0f})">success rate</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        y = top + ph * (1.0 - frac)
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{frac:.1f}</text>')
    parts.append(f'<text x="{left}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{first}</text>')
    parts.append(f'<text x="{left + pw}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{last}</text>')
    for i, (label, ms) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(xy(m) for m in ms)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 14 * (i + 1)
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 32}" y="{ly}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(path: str | Path, curves: dict[str, Sequence[EpochMetrics]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_svg(curves))
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc
    return path


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_seed: dict[int, SeedRun]
    mean: list[EpochMetrics]
    directory: Path


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    kb = build_kb(load_schema(cfg.schema), cfg.kb_seed)
    out_dir = Path(cfg.out) / cfg.label
    per_seed = {}
    for seed in cfg.seeds:
        log.info("%s seed %d: %d epochs on %s", cfg.label, seed, cfg.epochs, kb.schema.name)
        per_seed[seed] = run_seed(cfg, seed, kb)
    mean = mean_metrics([per_seed[s].metrics for s in cfg.seeds])
    if write:
        for seed, run in per_seed.items():
            emit_csv(out_dir / f"{seed}.csv", run.metrics)
        emit_csv(out_dir / "mean.csv", mean)
        emit_svg(out_dir / "curve.svg", {cfg.label: mean})
    return ExperimentResult(cfg, per_seed, mean, out_dir)


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)

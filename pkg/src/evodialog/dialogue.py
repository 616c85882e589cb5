"""Synthetic slot-filling dialogue domain with an agenda-based simulated user.

A :class:`DomainSchema` declares informable slots (the user constrains
them) and requestable slots (the user asks for them).  A knowledge base of
``kb_size`` random records is built from it; each user goal is read off one
record, so it is always achievable.

System actions, in index order::

    greet, request(<informable>)..., inform(<requestable>)..., offer_match, close

The user keeps an agenda: first its constraints (in a random order fixed at
reset), then its requests (lexicographic).  Specific system acts get a
specific reply; anything else lets the user pop the agenda:

- ``request(s)``: user informs ``s`` if it is a constraint, else ``dontcare``.
- ``inform(s)``: the value comes from the system's current proposal, the
  first KB record consistent with what the user has revealed.  If ``s`` is a
  goal request and the proposal violates the full goal, the dialogue fails.
  Otherwise ``s`` counts as informed and the user pops the agenda.
- ``offer_match``: accepted (``affirm``) when the proposal satisfies the goal,
  else the user rejects it and reveals its next hidden constraint.
- ``close``: success iff the offer was accepted and every goal request has
  been informed; failure otherwise.

Rewards are ``-1`` per turn, plus ``2L`` on a successful final turn or
``-L`` on a failed one (including running out of turns at ``t = L``).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

USER_ACTS = ("inform", "request", "dontcare", "ack", "affirm", "reject")
MATCH_BUCKETS = 4  # 0, 1, 2-5, >5


class DialogueError(RuntimeError):
    pass


@dataclass(frozen=True)
class DomainSchema:
    name: str
    informable: dict[str, tuple[str, ...]]
    requestable: dict[str, tuple[str, ...]]
    kb_size: int = 100
    max_turns: int = 30
    constraint_range: tuple[int, int] = (2, 3)
    request_range: tuple[int, int] = (1, 2)

    def __post_init__(self):
        if not self.informable or not self.requestable:
            raise ValueError("schema needs at least one informable and one requestable slot")
        for slot, vocab in {**self.informable, **self.requestable}.items():
            if not vocab:
                raise ValueError(f"slot {slot!r} has an empty vocabulary")
        if set(self.informable) & set(self.requestable):
            raise ValueError("informable and requestable slots must be disjoint")
        if self.kb_size < 1 or self.max_turns < 1:
            raise ValueError("kb_size and max_turns must be positive")
        lo, hi = self.constraint_range
        if not 1 <= lo <= hi <= len(self.informable):
            raise ValueError(f"bad constraint_range {self.constraint_range}")
        lo, hi = self.request_range
        if not 1 <= lo <= hi <= len(self.requestable):
            raise ValueError(f"bad request_range {self.request_range}")

    @property
    def informable_slots(self) -> list[str]:
        return list(self.informable)

    @property
    def requestable_slots(self) -> list[str]:
        return list(self.requestable)

    @property
    def slots(self) -> list[str]:
        return [*self.informable, *self.requestable]

    @property
    def vocab(self) -> dict[str, tuple[str, ...]]:
        return {**self.informable, **self.requestable}

    @cached_property
    def n_actions(self) -> int:
        return 2 + len(self.informable) + len(self.requestable) + 1

    @cached_property
    def actions(self) -> "Actions":
        return Actions(self)

    @cached_property
    def obs_dim(self) -> int:
        ni, nr = len(self.informable), len(self.requestable)
        return len(USER_ACTS) + ni + nr + self.n_actions + nr + MATCH_BUCKETS + 1

    def action_names(self) -> list[str]:
        return (
            ["greet"]
            + [f"request({s})" for s in self.informable]
            + [f"inform({s})" for s in self.requestable]
            + ["offer_match", "close"]
        )


class Actions:
    """Index arithmetic for a schema's system actions."""

    def __init__(self, schema: DomainSchema):
        ni, nr = len(schema.informable), len(schema.requestable)
        self.greet = 0
        self.request0 = 1
        self.inform0 = 1 + ni
        self.offer = 1 + ni + nr
        self.close = 2 + ni + nr
        self.n = schema.n_actions

    def request(self, slot_idx: int) -> int:
        return self.request0 + slot_idx

    def inform(self, req_idx: int) -> int:
        return self.inform0 + req_idx


# --- schema files ---------------------------------------------------------


def _pair(text: str) -> tuple[int, int]:
    lo, hi = (int(v) for v in text.split(","))
    return lo, hi


def _vocab(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def parse_schema(text: str) -> DomainSchema:
    """Parse the INI-style schema format.

    ::

        [domain]
        name = movie
        kb_size = 100
        max_turns = 30
        constraints = 2, 4     # min, max constraints per goal
        requests = 1, 2        # min, max requests per goal

        [informable]
        city = seattle, boston, ...

        [requestable]
        theater = amc, regal, ...
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    for section in ("domain", "informable", "requestable"):
        if not cp.has_section(section):
            raise ValueError(f"schema is missing the [{section}] section")
    d = cp["domain"]
    return DomainSchema(
        name=d.get("name", "domain"),
        informable={k: _vocab(v) for k, v in cp["informable"].items()},
        requestable={k: _vocab(v) for k, v in cp["requestable"].items()},
        kb_size=d.getint("kb_size", 100),
        max_turns=d.getint("max_turns", 30),
        constraint_range=_pair(d.get("constraints", "2, 3")),
        request_range=_pair(d.get("requests", "1, 2")),
    )


def load_schema(path: str | Path) -> DomainSchema:
    """Load a schema file, or one of the shipped ones by bare name (``movie``)."""
    p = Path(path)
    if p.exists():
        return parse_schema(p.read_text())
    if p.suffix == "" and p.parent == Path("."):
        shipped = resources.files("evodialog") / "schemas" / f"{p.name}.ini"
        if shipped.is_file():
            return parse_schema(shipped.read_text())
    raise FileNotFoundError(f"schema not found: {path}")


SHIPPED_SCHEMAS = ("movie", "restaurant", "taxi")


# --- knowledge base and goals ---------------------------------------------


@dataclass(frozen=True)
class KnowledgeBase:
    schema: DomainSchema
    values: np.ndarray  # (kb_size, n_slots) vocabulary indices, slots in schema.slots order

    @property
    def entries(self) -> list[dict[str, str]]:
        vocab = self.schema.vocab
        slots = self.schema.slots
        return [{s: vocab[s][v] for s, v in zip(slots, row)} for row in self.values]

    def __len__(self) -> int:
        return self.values.shape[0]

    def consistent(self, constraints: dict[int, int]) -> np.ndarray:
        """Boolean mask of records matching ``{slot_index: value_index}``."""
        mask = np.ones(len(self), dtype=bool)
        for slot, value in constraints.items():
            mask &= self.values[:, slot] == value
        return mask


def build_kb(schema: DomainSchema, kb_seed: int) -> KnowledgeBase:
    rng = np.random.default_rng(kb_seed)
    sizes = [len(v) for v in schema.vocab.values()]
    values = np.column_stack([rng.integers(0, n, size=schema.kb_size) for n in sizes])
    values.setflags(write=False)
    return KnowledgeBase(schema, values)


@dataclass(frozen=True)
class UserGoal:
    constraints: dict[int, int]  # informable slot index -> value index
    requests: frozenset[int]  # requestable slot indices (0-based within requestable)

    def describe(self, schema: DomainSchema) -> dict:
        inf = schema.informable_slots
        req = schema.requestable_slots
        return {
            "constraints": {inf[s]: schema.informable[inf[s]][v] for s, v in self.constraints.items()},
            "requests": sorted(req[r] for r in self.requests),
        }


def sample_goal(kb: KnowledgeBase, rng: np.random.Generator) -> UserGoal:
    schema = kb.schema
    ni, nr = len(schema.informable), len(schema.requestable)
    row = kb.values[rng.integers(len(kb))]
    n_c = int(rng.integers(schema.constraint_range[0], schema.constraint_range[1] + 1))
    n_r = int(rng.integers(schema.request_range[0], schema.request_range[1] + 1))
    slots = sorted(int(s) for s in rng.choice(ni, size=n_c, replace=False))
    reqs = frozenset(int(r) for r in rng.choice(nr, size=n_r, replace=False))
    return UserGoal({s: int(row[s]) for s in slots}, reqs)


# --- dialogue state --------------------------------------------------------


@dataclass
class DialogueState:
    schema: DomainSchema
    kb: KnowledgeBase
    goal: UserGoal
    agenda: list[int]  # constraint slots in the order the user volunteers them
    turn: int = 0
    revealed: set[int] = field(default_factory=set)  # constraint slots the user has informed
    dontcare: set[int] = field(default_factory=set)
    asked: set[int] = field(default_factory=set)  # requestable slots the user has requested
    answered: set[int] = field(default_factory=set)  # requestable slots the system has informed
    offer_accepted: bool = False
    last_user_act: int = 0
    last_sys_action: int | None = None
    done: bool = False
    success: bool = False
    goal_mask: np.ndarray = field(init=False, repr=False)
    _known: tuple = field(init=False, repr=False, default=(-1, None))

    def __post_init__(self):
        self.goal_mask = self.kb.consistent(self.goal.constraints)

    def known_mask(self) -> np.ndarray:
        # revealed only ever grows, so its size identifies the cached mask
        if self._known[0] != len(self.revealed):
            mask = self.kb.consistent(self.known_constraints())
            self._known = (len(self.revealed), mask, int(mask.sum()))
        return self._known[1]

    @property
    def max_turns(self) -> int:
        return self.schema.max_turns

    def known_constraints(self) -> dict[int, int]:
        return {s: self.goal.constraints[s] for s in self.revealed}

    def proposal(self) -> int:
        """Index of the first KB record consistent with the revealed constraints."""
        return int(np.argmax(self.known_mask()))

    def proposal_ok(self) -> bool:
        return bool(self.goal_mask[self.proposal()])

    def match_count(self) -> int:
        self.known_mask()
        return self._known[2]

    def hidden_constraints(self) -> list[int]:
        return [s for s in self.agenda if s not in self.revealed]

    def unanswered(self) -> list[int]:
        return sorted(self.goal.requests - self.answered)


def observe(state: DialogueState) -> np.ndarray:
    """Fixed-length feature vector with every entry in [0, 1]."""
    schema = state.schema
    ni, nr = len(schema.informable), len(schema.requestable)
    obs = np.zeros(schema.obs_dim)
    hot = [state.last_user_act]
    pos = len(USER_ACTS)
    hot.extend(pos + s for s in state.revealed | state.dontcare)
    pos += ni
    hot.extend(pos + r for r in state.asked - state.answered)
    pos += nr
    if state.last_sys_action is not None:
        hot.append(pos + state.last_sys_action)
    pos += schema.n_actions
    hot.extend(pos + r for r in state.answered)
    pos += nr
    count = state.match_count()
    hot.append(pos + (0 if count == 0 else 1 if count == 1 else 2 if count <= 5 else 3))
    pos += MATCH_BUCKETS
    obs[hot] = 1.0
    obs[pos] = state.turn / state.max_turns
    return obs


def _user_pop(state: DialogueState) -> None:
    """Let the user say the next thing on its agenda."""
    hidden = state.hidden_constraints()
    if hidden:
        state.revealed.add(hidden[0])
        state.last_user_act = USER_ACTS.index("inform")
        return
    pending = state.unanswered()
    if pending:
        state.asked.add(pending[0])
        state.last_user_act = USER_ACTS.index("request")
        return
    state.last_user_act = USER_ACTS.index("ack")


def reset(kb: KnowledgeBase, goal: UserGoal, rng: np.random.Generator) -> tuple[DialogueState, np.ndarray]:
    """Start a dialogue; the user opens by informing its first agenda constraint."""
    slots = sorted(goal.constraints)
    agenda = [slots[i] for i in rng.permutation(len(slots))]
    state = DialogueState(kb.schema, kb, goal, agenda)
    _user_pop(state)
    return state, observe(state)


class StepInfo(NamedTuple):
    user_act: str
    success: bool
    reason: str


def step(state: DialogueState, action: int) -> tuple[np.ndarray, float, bool, StepInfo]:
    """Apply one system action; mutates ``state`` in place."""
    if state.done:
        raise DialogueError("step() called on a finished dialogue")
    acts = state.schema.actions
    if not 0 <= action < acts.n:
        raise DialogueError(f"action {action} out of range for {acts.n} actions")

    state.turn += 1
    state.last_sys_action = action
    terminal = None  # None, "success" or a failure reason

    if action == acts.greet:
        _user_pop(state)
    elif action < acts.inform0:
        slot = action - acts.request0
        if slot in state.goal.constraints:
            state.revealed.add(slot)
            state.last_user_act = USER_ACTS.index("inform")
        else:
            state.dontcare.add(slot)
            state.last_user_act = USER_ACTS.index("dontcare")
    elif action < acts.offer:
        req = action - acts.inform0
        if req in state.goal.requests and not state.proposal_ok():
            terminal = "wrong value informed"
        else:
            state.answered.add(req)
            _user_pop(state)
    elif action == acts.offer:
        if state.proposal_ok():
            state.offer_accepted = True
            state.last_user_act = USER_ACTS.index("affirm")
        else:
            hidden = state.hidden_constraints()
            state.revealed.add(hidden[0])
            state.last_user_act = USER_ACTS.index("reject")
    else:
        if state.offer_accepted and not state.unanswered():
            terminal = "success"
        else:
            terminal = "closed early"

    if terminal is None and state.turn >= state.max_turns:
        terminal = "out of turns"

    L = state.max_turns
    reward = -1.0
    if terminal is not None:
        state.done = True
        state.success = terminal == "success"
        reward += 2.0 * L if state.success else -float(L)
    info = StepInfo(USER_ACTS[state.last_user_act], state.success, terminal or "")
    return observe(state), reward, state.done, info


# --- episodes --------------------------------------------------------------


class Transition(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class EpisodeResult:
    transitions: list[Transition]
    total_return: float
    success: bool
    turns: int


Policy = Callable[[DialogueState, np.ndarray], int]


def run_episode(
    policy: Policy,
    kb: KnowledgeBase,
    epsilon: float,
    rng: np.random.Generator,
    goal: UserGoal | None = None,
) -> EpisodeResult:
    """Roll out one dialogue; with probability ``epsilon`` per turn the action is uniform random."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if goal is None:
        goal = sample_goal(kb, rng)
    state, obs = reset(kb, goal, rng)
    n_actions = kb.schema.n_actions
    transitions = []
    total = 0.0
    done = False
    while not done:
        if epsilon > 0.0 and rng.random() < epsilon:
            a = int(rng.integers(n_actions))
        else:
            a = int(policy(state, obs))
        nxt, r, done, _ = step(state, a)
        transitions.append(Transition(obs, a, r, nxt, done))
        total += r
        obs = nxt
    return EpisodeResult(transitions, total, state.success, state.turn)


def warm_start_policy(state: DialogueState, obs: np.ndarray | None = None) -> int:
    """Hand-written near-oracle: fill constraints, answer requests, offer, close."""
    acts = state.schema.actions
    hidden = state.hidden_constraints()
    if hidden:
        return acts.request(min(hidden))
    pending = sorted(state.asked - state.answered)
    if pending:
        return acts.inform(pending[0])
    unanswered = state.unanswered()
    if unanswered:
        return acts.inform(unanswered[0])
    if not state.offer_accepted:
        return acts.offer
    return acts.close

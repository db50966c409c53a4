"""Finite MDPs with state-anchored action spaces.

Every action belongs to exactly one state through the anchor map; the set
of actions available at a state is its fiber.  Transition rows are sparse
distributions in canonical form (support sorted by state id, strictly
positive entries, normalized once at construction).  All model objects are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import (
    DuplicateName,
    InvalidPolicy,
    NegativeProbability,
    NoConvergence,
    NonStochasticRow,
    UnknownAction,
    UnknownState,
)

StateId = int
ActionId = int

STOCHASTIC_TOL = 1e-9
DEFAULT_MAX_ITER = 1_000_000


@dataclass(frozen=True)
class Distribution:
    """Sparse probability distribution over state ids, canonical form."""

    ids: tuple[int, ...]
    probs: tuple[float, ...]

    @staticmethod
    def from_pairs(pairs: Iterable[tuple[int, float]]) -> "Distribution":
        """Build a canonical distribution; duplicate ids have mass summed.

        Raises NegativeProbability for entries < 0 and NonStochasticRow when
        the total mass deviates from 1 by more than 1e-9.  Zero entries are
        dropped and the row is renormalized exactly once.
        """
        acc: dict[int, float] = {}
        for sid, p in pairs:
            if p < 0.0:
                raise NegativeProbability(f"probability {p} for state {sid}")
            acc[sid] = acc.get(sid, 0.0) + float(p)
        total = math.fsum(acc.values())
        if abs(total - 1.0) > STOCHASTIC_TOL:
            raise NonStochasticRow(f"row mass {total!r} deviates from 1")
        ids = tuple(sorted(sid for sid, p in acc.items() if p > 0.0))
        probs = tuple(acc[sid] / total for sid in ids)
        return Distribution(ids, probs)

    def mass(self, sid: int) -> float:
        for i, p in zip(self.ids, self.probs):
            if i == sid:
                return p
        return 0.0

    def support(self) -> tuple[int, ...]:
        return self.ids

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.ids, self.probs))


@dataclass(frozen=True)
class Tables:
    """Packed numpy layout of an MDP, shared with the numeric kernels."""

    anchor: np.ndarray      # int64[n_actions]
    reward: np.ndarray      # float64[n_actions]
    indptr: np.ndarray      # int64[n_actions + 1]
    cols: np.ndarray        # int64[nnz]
    probs: np.ndarray       # float64[nnz]
    fiber_ptr: np.ndarray   # int64[n_states + 1]
    fiber_act: np.ndarray   # int64[n_actions], ascending within each fiber


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Immutable finite MDP; build through new_mdp for validation."""

    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    anchor: tuple[int, ...]
    reward: tuple[float, ...]
    transition: tuple[Distribution, ...]

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    def state_index(self, name: str) -> int:
        try:
            return self._state_lookup[name]
        except KeyError:
            raise UnknownState(name) from None

    def action_index(self, name: str) -> int:
        try:
            return self._action_lookup[name]
        except KeyError:
            raise UnknownAction(name) from None

    @cached_property
    def _state_lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.state_names)}

    @cached_property
    def _action_lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.action_names)}

    @cached_property
    def fibers(self) -> tuple[tuple[int, ...], ...]:
        """Per state, the ascending tuple of actions anchored there."""
        buckets: list[list[int]] = [[] for _ in range(self.n_states)]
        for a, s in enumerate(self.anchor):
            buckets[s].append(a)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def tables(self) -> Tables:
        n_s, n_a = self.n_states, self.n_actions
        anchor = np.asarray(self.anchor, dtype=np.int64).reshape(n_a)
        reward = np.asarray(self.reward, dtype=np.float64).reshape(n_a)
        indptr = np.zeros(n_a + 1, dtype=np.int64)
        cols_parts: list[int] = []
        probs_parts: list[float] = []
        for a, dist in enumerate(self.transition):
            cols_parts.extend(dist.ids)
            probs_parts.extend(dist.probs)
            indptr[a + 1] = len(cols_parts)
        fiber_ptr = np.zeros(n_s + 1, dtype=np.int64)
        fiber_act = np.empty(n_a, dtype=np.int64)
        pos = 0
        for s, fib in enumerate(self.fibers):
            for a in fib:
                fiber_act[pos] = a
                pos += 1
            fiber_ptr[s + 1] = pos
        tables = Tables(
            anchor=anchor,
            reward=reward,
            indptr=indptr,
            cols=np.asarray(cols_parts, dtype=np.int64),
            probs=np.asarray(probs_parts, dtype=np.float64),
            fiber_ptr=fiber_ptr,
            fiber_act=fiber_act,
        )
        for arr in (tables.anchor, tables.reward, tables.indptr, tables.cols,
                    tables.probs, tables.fiber_ptr, tables.fiber_act):
            arr.setflags(write=False)
        return tables

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FiniteMdp):
            return NotImplemented
        return (
            self.state_names == other.state_names
            and self.action_names == other.action_names
            and self.anchor == other.anchor
            and self.reward == other.reward
            and self.transition == other.transition
        )

    def __repr__(self) -> str:
        return f"FiniteMdp({self.n_states} states, {self.n_actions} actions)"


@dataclass(frozen=True)
class Policy:
    """Deterministic partial policy: choice[s] is an action id or -1.

    Valid policies choose inside the fiber of each state and cover exactly
    the states with a nonempty fiber.
    """

    choice: tuple[int, ...]

    def action_at(self, s: int) -> int | None:
        a = self.choice[s]
        return None if a < 0 else a

    def covered(self) -> tuple[int, ...]:
        return tuple(s for s, a in enumerate(self.choice) if a >= 0)


@dataclass(frozen=True)
class ValueFunction:
    """Total per-state discounted value; entries are finite by construction."""

    values: tuple[float, ...]

    def __post_init__(self):
        for x in self.values:
            if not math.isfinite(x):
                raise ValueError(f"non-finite value {x}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def __getitem__(self, s: int) -> float:
        return self.values[s]


def new_mdp(
    state_names: Sequence[str],
    action_specs: Sequence[tuple[str, str, Mapping[str, float], float]],
) -> FiniteMdp:
    """Construct a validated FiniteMdp from named parts.

    action_specs rows are (action_name, anchor_state, {state: prob}, reward).
    A state may end up with an empty fiber; such states are absorbing with
    value 0 under every solver in this package.
    """
    states = list(state_names)
    seen: set[str] = set()
    for n in states:
        if n in seen:
            raise DuplicateName(f"state {n!r}")
        seen.add(n)
    state_idx = {n: i for i, n in enumerate(states)}

    action_names: list[str] = []
    anchors: list[int] = []
    rewards: list[float] = []
    trans: list[Distribution] = []
    seen_a: set[str] = set()
    for name, anchor_state, dist, reward in action_specs:
        if name in seen_a:
            raise DuplicateName(f"action {name!r}")
        seen_a.add(name)
        if anchor_state not in state_idx:
            raise UnknownState(f"anchor {anchor_state!r} of action {name!r}")
        pairs = []
        for target, p in dist.items():
            if target not in state_idx:
                raise UnknownState(f"target {target!r} of action {name!r}")
            pairs.append((state_idx[target], p))
        action_names.append(name)
        anchors.append(state_idx[anchor_state])
        rewards.append(float(reward))
        trans.append(Distribution.from_pairs(pairs))
    return FiniteMdp(
        state_names=tuple(states),
        action_names=tuple(action_names),
        anchor=tuple(anchors),
        reward=tuple(rewards),
        transition=tuple(trans),
    )


def raw_mdp(state_names, action_names, anchor, reward, transition) -> FiniteMdp:
    """Assemble an MDP from index-level parts already in canonical form."""
    return FiniteMdp(
        state_names=tuple(state_names),
        action_names=tuple(action_names),
        anchor=tuple(int(a) for a in anchor),
        reward=tuple(float(r) for r in reward),
        transition=tuple(transition),
    )


def fiber(m: FiniteMdp, s: StateId) -> frozenset[int]:
    """Actions anchored at s.  Fibers partition the total action set."""
    if not 0 <= s < m.n_states:
        raise UnknownState(f"state id {s}")
    return frozenset(m.fibers[s])


def make_policy(m: FiniteMdp, mapping: Mapping[int, int]) -> Policy:
    """Validate and freeze a state -> action map as a Policy for m.

    The map must pick inside each fiber and cover exactly the states whose
    fiber is nonempty.
    """
    choice = [-1] * m.n_states
    for s, a in mapping.items():
        if not 0 <= s < m.n_states:
            raise UnknownState(f"state id {s}")
        if not 0 <= a < m.n_actions:
            raise UnknownAction(f"action id {a}")
        if m.anchor[a] != s:
            raise InvalidPolicy(f"action {a} is not anchored at state {s}")
        choice[s] = a
    for s in range(m.n_states):
        if (choice[s] < 0) != (len(m.fibers[s]) == 0):
            raise InvalidPolicy(
                f"state {s}: policy coverage must match nonempty fibers"
            )
    return Policy(choice=tuple(choice))


def evaluate_policy(
    m: FiniteMdp,
    p: Policy,
    gamma: float,
    tol: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ValueFunction:
    """Fixed-point evaluation of a policy; empty-fiber states get value 0.

    The result satisfies the policy Bellman equation with sup-norm residual
    at most tol.  Raises NoConvergence if max_iter sweeps do not reach it.
    """
    if len(p.choice) != m.n_states:
        raise InvalidPolicy("policy length does not match the state count")
    t = m.tables
    choice = np.asarray(p.choice, dtype=np.int64)
    v = np.zeros(m.n_states, dtype=np.float64)
    _, delta = _kernels.policy_sweeps(
        choice, t.reward, t.indptr, t.cols, t.probs, gamma, tol, max_iter, v
    )
    if delta > tol:
        raise NoConvergence(f"policy evaluation stalled at delta={delta!r}")
    return ValueFunction(values=tuple(float(x) for x in v))


class Rng:
    """xorshift32 stream shared with the kernels; one per logical agent."""

    __slots__ = ("state",)

    def __init__(self, seed: int, stream: int = 0):
        self.state = _kernels.rng_init(seed, stream)

    def uniform(self) -> float:
        self.state, u = _kernels.rng_uniform(self.state)
        return u

    def randint(self, n: int) -> int:
        k = int(self.uniform() * n)
        return n - 1 if k >= n else k


def sample_step(m: FiniteMdp, a: ActionId, rng: Rng) -> tuple[int, float]:
    """Draw the next state by inverse CDF over the canonical support order.

    Deterministic given the rng state; the reward is the action's reward.
    """
    if not 0 <= a < m.n_actions:
        raise UnknownAction(f"action id {a}")
    dist = m.transition[a]
    u = rng.uniform()
    acc = 0.0
    nxt = dist.ids[-1]
    for sid, p in zip(dist.ids, dist.probs):
        acc += p
        nxt = sid
        if u < acc:
            break
    return nxt, m.reward[a]

"""Zig-zag chains of task MDPs glued along overlap subprocesses.

A zig-zag alternates stage MDPs M_0..M_n with overlap MDPs N_0..N_{n-1};
each overlap embeds into its stage on the left (a subprocess witness) and
maps into the next stage on the right (any valid morphism).  The composite
is the left fold of pushouts, with embeddings of every stage tracked
through each quotient.

Forward motion means every left leg is full: once the walker reaches an
overlap it can never fall back into the current stage.  ``puncture``
repairs a zig-zag into a forward-moving one by deleting the overlap-image
actions whose support escapes the image.  ``check_monotonic`` is the
second stitching hypothesis: at every stage state, each action that is
optimal for the stage alone must stay optimal under the values of the
full composite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .category import (
    MdpMorphism,
    SubprocessWitness,
    check_morphism,
    compose,
    identity,
    max_subprocess,
    pushout,
    subprocess_witness,
)
from .core import FiniteMdp, raw_mdp
from .errors import (
    BrokenRightLeg,
    IndexOutOfRange,
    NoConvergence,
    PreconditionFailed,
)


@dataclass(frozen=True)
class ZigZag:
    """Alternating stages and overlaps with validated legs."""

    components: tuple[FiniteMdp, ...]
    overlaps: tuple[FiniteMdp, ...]
    left_legs: tuple[SubprocessWitness, ...]
    right_legs: tuple[MdpMorphism, ...]

    @property
    def n_stages(self) -> int:
        return len(self.components)

    @staticmethod
    def build(
        components: Sequence[FiniteMdp],
        overlaps: Sequence[FiniteMdp],
        left_maps: Sequence[MdpMorphism],
        right_maps: Sequence[MdpMorphism],
    ) -> "ZigZag":
        """Assemble and validate a zig-zag from its stages and leg maps.

        Left maps must be valid injective morphisms overlap -> stage i;
        right maps must be valid morphisms overlap -> stage i + 1.
        """
        if not components:
            raise ValueError("a zig-zag needs at least one stage")
        k = len(components) - 1
        if not (len(overlaps) == len(left_maps) == len(right_maps) == k):
            raise ValueError(
                f"{len(components)} stages need {k} overlaps and legs"
            )
        lefts = []
        for i, m in enumerate(left_maps):
            if m.source != overlaps[i] or m.target != components[i]:
                raise ValueError(f"left leg {i} endpoints are wrong")
            lefts.append(subprocess_witness(m))
        for i, m in enumerate(right_maps):
            if m.source != overlaps[i] or m.target != components[i + 1]:
                raise ValueError(f"right leg {i} endpoints are wrong")
            rep = check_morphism(m.source, m.target, m.f, m.g)
            if not rep.ok:
                raise ValueError(
                    f"right leg {i} violates the morphism conditions"
                )
        return ZigZag(
            components=tuple(components),
            overlaps=tuple(overlaps),
            left_legs=tuple(lefts),
            right_legs=tuple(right_maps),
        )


@dataclass(frozen=True)
class Composite:
    """Glued MDP of a zig-zag plus the stage embeddings into it."""

    mdp: FiniteMdp
    embeddings: tuple[MdpMorphism, ...]   # stage i -> mdp
    stage_of_state: tuple[frozenset[int], ...]
    stage_offset: int = 0                 # absolute index of embeddings[0]

    def stages_of(self, s: int) -> frozenset[int]:
        return self.stage_of_state[s]

    def active_stage(self, s: int) -> int:
        return max(self.stage_of_state[s])


def _fold(z: ZigZag, start: int) -> Composite:
    comp = z.components[start]
    embs: list[MdpMorphism] = [identity(comp)]
    for i in range(start, len(z.overlaps)):
        rel = i - start
        left_in_comp = compose(z.left_legs[i].morphism, embs[rel])
        po = pushout(left_in_comp, z.right_legs[i],
                     prefixes=("", f"m{rel + 1}_"))
        embs = [compose(e, po.leg1) for e in embs]
        embs.append(po.leg2)
        comp = po.mdp
    stages: list[set[int]] = [set() for _ in range(comp.n_states)]
    for j, emb in enumerate(embs):
        for s_img in emb.f:
            stages[s_img].add(start + j)
    return Composite(
        mdp=comp,
        embeddings=tuple(embs),
        stage_of_state=tuple(frozenset(s) for s in stages),
        stage_offset=start,
    )


def build_composite(z: ZigZag) -> Composite:
    """Left fold of pushouts over the whole zig-zag."""
    return _fold(z, 0)


def truncated_composite(z: ZigZag, i: int) -> Composite:
    """Composite of the tail stages i..n only."""
    if not 0 <= i < z.n_stages:
        raise IndexOutOfRange(f"stage index {i} not in 0..{z.n_stages - 1}")
    return _fold(z, i)


@dataclass(frozen=True)
class ForwardReport:
    per_stage: tuple[bool, ...]

    @property
    def ok(self) -> bool:
        return all(self.per_stage)


def is_forward_moving(z: ZigZag) -> ForwardReport:
    """True iff every left leg is a full subprocess of its stage."""
    return ForwardReport(per_stage=tuple(w.full for w in z.left_legs))


def _drop_actions(m: FiniteMdp, removed: set[int]) -> tuple[FiniteMdp, dict[int, int]]:
    keep = [a for a in range(m.n_actions) if a not in removed]
    new_of_old = {a: i for i, a in enumerate(keep)}
    out = raw_mdp(
        state_names=m.state_names,
        action_names=[m.action_names[a] for a in keep],
        anchor=[m.anchor[a] for a in keep],
        reward=[m.reward[a] for a in keep],
        transition=[m.transition[a] for a in keep],
    )
    return out, new_of_old


def puncture(z: ZigZag) -> ZigZag:
    """Delete overlap-image actions that can escape the overlap image.

    Every stage with an overlap loses the actions anchored in the overlap
    image whose support leaves it; the overlap is then rebuilt as the
    maximal subprocess on the same states, which is full by construction,
    so the result always satisfies is_forward_moving.  Right legs are
    re-restricted; if a rebuilt overlap holds an action the original right
    leg never covered, or a right-leg target action was itself deleted,
    the repair is impossible and BrokenRightLeg is raised.

    Idempotent: puncturing a punctured zig-zag changes nothing.
    """
    n = z.n_stages
    punctured: list[FiniteMdp] = []
    act_maps: list[dict[int, int]] = []
    for i, m in enumerate(z.components):
        if i < len(z.overlaps):
            image = set(z.left_legs[i].morphism.f)
            removed = {
                a for a in range(m.n_actions)
                if m.anchor[a] in image
                and any(t not in image for t in m.transition[a].ids)
            }
        else:
            removed = set()
        m2, new_of_old = _drop_actions(m, removed)
        punctured.append(m2)
        act_maps.append(new_of_old)

    overlaps: list[FiniteMdp] = []
    left_maps: list[MdpMorphism] = []
    right_maps: list[MdpMorphism] = []
    for i in range(n - 1):
        old_left = z.left_legs[i].morphism
        old_right = z.right_legs[i]
        image_states = set(old_left.f)
        sub, wit = max_subprocess(punctured[i], image_states)
        incl = wit.morphism
        old_state_of = {glob: j for j, glob in enumerate(old_left.f)}
        old_action_of = {glob: j for j, glob in enumerate(old_left.g)}
        # the punctured stage keeps all states, so state ids are unchanged
        f_r = tuple(old_right.f[old_state_of[glob]] for glob in incl.f)
        g_r = []
        kept_of_old_next = act_maps[i + 1]
        old_of_new_i = {v: k for k, v in act_maps[i].items()}
        for new_a in incl.g:
            orig_a = old_of_new_i[new_a]
            if orig_a not in old_action_of:
                raise BrokenRightLeg(
                    f"overlap {i}: rebuilt overlap action "
                    f"{punctured[i].action_names[new_a]!r} was never mapped "
                    f"by the right leg"
                )
            tgt_old = old_right.g[old_action_of[orig_a]]
            if tgt_old not in kept_of_old_next:
                raise BrokenRightLeg(
                    f"overlap {i}: right-leg target action "
                    f"{z.components[i + 1].action_names[tgt_old]!r} was "
                    f"deleted by puncturing stage {i + 1}"
                )
            g_r.append(kept_of_old_next[tgt_old])
        overlaps.append(sub)
        left_maps.append(incl)
        right_maps.append(
            MdpMorphism(source=sub, target=punctured[i + 1],
                        f=f_r, g=tuple(g_r))
        )
    return ZigZag.build(punctured, overlaps, left_maps, right_maps)


def _vi_values(m: FiniteMdp, gamma: float, tol: float,
               max_iter: int = 1_000_000) -> np.ndarray:
    t = m.tables
    v = np.zeros(m.n_states, dtype=np.float64)
    _, delta = _kernels.value_sweeps(
        t.fiber_ptr, t.fiber_act, t.reward, t.indptr, t.cols, t.probs,
        gamma, tol, max_iter, v,
    )
    if delta > tol:
        raise NoConvergence(f"value iteration stalled at delta={delta!r}")
    return v


@dataclass(frozen=True)
class StageStateCheck:
    stage: int
    state: int
    state_name: str
    ok: bool
    local_argmax: tuple[int, ...]
    global_argmax: tuple[int, ...]


@dataclass(frozen=True)
class MonotonicReport:
    entries: tuple[StageStateCheck, ...]

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def failures(self) -> tuple[StageStateCheck, ...]:
        return tuple(e for e in self.entries if not e.ok)


def check_monotonic(z: ZigZag, gamma: float, tol: float) -> MonotonicReport:
    """Per stage state, locally optimal actions must stay globally optimal.

    For each stage i and state s with a nonempty fiber, two one-step
    objectives are compared over the stage fiber: one backed by the
    optimal values of the stage alone (what a per-stage learner optimizes)
    and one backed by the optimal values of the full composite.  The check
    passes at (i, s) when the local argmax set is contained in the global
    argmax set, ties being resolved at tolerance tol.  Containment rather
    than bare intersection is required: stitching may pick any locally
    optimal action, so every one of them has to be globally optimal.

    Values are converged well inside the tie tolerance so that exact ties
    are never split by iteration noise.  Requires a forward-moving input.
    """
    if not is_forward_moving(z).ok:
        raise PreconditionFailed(
            "forward_moving", "check_monotonic needs full left legs"
        )
    vi_tol = max(tol * (1.0 - gamma) * 0.1, 1e-15)
    comp = build_composite(z)
    v_glob = _vi_values(comp.mdp, gamma, vi_tol)
    entries: list[StageStateCheck] = []
    for i, m in enumerate(z.components):
        v_loc = _vi_values(m, gamma, vi_tol)
        emb = comp.embeddings[i]
        for s in range(m.n_states):
            fib = m.fibers[s]
            if not fib:
                continue
            q_loc = {}
            q_glob = {}
            for a in fib:
                d = m.transition[a]
                q_loc[a] = m.reward[a] + gamma * sum(
                    p * v_loc[t] for t, p in zip(d.ids, d.probs)
                )
                q_glob[a] = m.reward[a] + gamma * sum(
                    p * v_glob[emb.f[t]] for t, p in zip(d.ids, d.probs)
                )
            best_loc = max(q_loc.values())
            best_glob = max(q_glob.values())
            arg_loc = tuple(a for a in fib if q_loc[a] >= best_loc - tol)
            arg_glob = tuple(a for a in fib if q_glob[a] >= best_glob - tol)
            entries.append(StageStateCheck(
                stage=i,
                state=s,
                state_name=m.state_names[s],
                ok=set(arg_loc) <= set(arg_glob),
                local_argmax=arg_loc,
                global_argmax=arg_glob,
            ))
    return MonotonicReport(entries=tuple(entries))

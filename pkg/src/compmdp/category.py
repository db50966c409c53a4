"""Morphisms between finite MDPs and the gluing (pushout) construction.

A morphism is a pair of total maps (f on states, g on actions) such that
anchors commute, each transition row pushes forward onto its image row,
and rewards are preserved.  Injective pairs are subprocess witnesses; a
subprocess is full when every target action anchored over the image is
hit, which makes the image a trap set for the dynamics.

Pushouts glue two MDPs along a shared component.  The quotient is built
with a union-find over the tagged disjoint union; class data is resolved
from the least representative and then verified against every other
member, so invalid input morphisms surface as InconsistentGlue instead of
silently producing a broken composite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .core import Distribution, FiniteMdp, raw_mdp
from .errors import (
    DomainMismatch,
    EmptySubset,
    InconsistentGlue,
    NotACocone,
    NotASubprocess,
    UnknownState,
)

GLUE_TOL = 1e-9


class InvalidMorphism(Exception):
    """Raised when an operation requires a valid morphism and gets data
    that fails the compatibility conditions."""


@dataclass(frozen=True)
class MdpMorphism:
    """State map f and action map g between two MDPs.

    The record itself carries no proof of validity; use check_morphism or
    the ``morphism`` helper when the compatibility conditions matter.
    """

    source: FiniteMdp
    target: FiniteMdp
    f: tuple[int, ...]
    g: tuple[int, ...]

    def __post_init__(self):
        if len(self.f) != self.source.n_states:
            raise ValueError("state map is not total on the source")
        if len(self.g) != self.source.n_actions:
            raise ValueError("action map is not total on the source")
        for i in self.f:
            if not 0 <= i < self.target.n_states:
                raise ValueError(f"state map hits invalid index {i}")
        for a in self.g:
            if not 0 <= a < self.target.n_actions:
                raise ValueError(f"action map hits invalid index {a}")


@dataclass(frozen=True)
class Violation:
    kind: str          # "anchor" | "transition" | "reward"
    action: int        # offending source action id
    detail: str


@dataclass(frozen=True)
class MorphismReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def pushforward(f: Sequence[int], d: Distribution) -> Distribution:
    """Image distribution under the state map: mass summed over preimages."""
    return Distribution.from_pairs((f[sid], p) for sid, p in zip(d.ids, d.probs))


def _dist_close(a: Distribution, b: Distribution, tol: float = GLUE_TOL) -> bool:
    keys = set(a.ids) | set(b.ids)
    da, db = a.as_dict(), b.as_dict()
    return all(abs(da.get(k, 0.0) - db.get(k, 0.0)) <= tol for k in keys)


def check_morphism(
    src: FiniteMdp, tgt: FiniteMdp, f: Sequence[int], g: Sequence[int]
) -> MorphismReport:
    """List every compatibility violation of (f, g); empty report == valid.

    Violations are data, not errors: anchor squares that fail to commute,
    transition rows whose pushforward misses the image row beyond 1e-9,
    and rewards that disagree beyond 1e-9.
    """
    m = MdpMorphism(source=src, target=tgt, f=tuple(f), g=tuple(g))
    out: list[Violation] = []
    for a in range(src.n_actions):
        ga = m.g[a]
        if tgt.anchor[ga] != m.f[src.anchor[a]]:
            out.append(Violation(
                "anchor", a,
                f"anchor of image action {ga} is {tgt.anchor[ga]}, "
                f"expected {m.f[src.anchor[a]]}",
            ))
        pushed = pushforward(m.f, src.transition[a])
        if not _dist_close(pushed, tgt.transition[ga]):
            out.append(Violation(
                "transition", a,
                f"pushforward {pushed.as_dict()} != row "
                f"{tgt.transition[ga].as_dict()} of image action {ga}",
            ))
        if abs(src.reward[a] - tgt.reward[ga]) > GLUE_TOL:
            out.append(Violation(
                "reward", a,
                f"{src.reward[a]!r} != {tgt.reward[ga]!r} on image action {ga}",
            ))
    return MorphismReport(violations=tuple(out))


def morphism(
    src: FiniteMdp, tgt: FiniteMdp, f: Sequence[int], g: Sequence[int]
) -> MdpMorphism:
    """Build a morphism and raise InvalidMorphism on any violation."""
    report = check_morphism(src, tgt, f, g)
    if not report.ok:
        raise InvalidMorphism(
            "; ".join(f"[{v.kind} a={v.action}] {v.detail}"
                      for v in report.violations)
        )
    return MdpMorphism(source=src, target=tgt, f=tuple(f), g=tuple(g))


def identity(m: FiniteMdp) -> MdpMorphism:
    return MdpMorphism(
        source=m, target=m,
        f=tuple(range(m.n_states)), g=tuple(range(m.n_actions)),
    )


def compose(m: MdpMorphism, n: MdpMorphism) -> MdpMorphism:
    """Composite of m: A -> B and n: B -> C, evaluated m first."""
    if m.target != n.source:
        raise DomainMismatch("target of the first factor != source of the second")
    return MdpMorphism(
        source=m.source,
        target=n.target,
        f=tuple(n.f[i] for i in m.f),
        g=tuple(n.g[a] for a in m.g),
    )


def point_mdp() -> FiniteMdp:
    """One state, one self-looping action with reward 0."""
    return raw_mdp(
        ("pt",), ("loop",), (0,), (0.0,),
        (Distribution.from_pairs([(0, 1.0)]),),
    )


def terminal_morphism(m: FiniteMdp) -> tuple[MdpMorphism, MorphismReport]:
    """Collapse everything onto the point MDP and report validity.

    The anchor and transition conditions always hold; the reward condition
    holds only when every reward equals the point's reward 0, so the
    report is returned alongside the maps instead of being assumed.
    """
    pt = point_mdp()
    f = (0,) * m.n_states
    g = (0,) * m.n_actions
    return (
        MdpMorphism(source=m, target=pt, f=f, g=g),
        check_morphism(m, pt, f, g),
    )


@dataclass(frozen=True)
class SubprocessWitness:
    """An embedding (injective f and g) together with its fullness bit."""

    morphism: MdpMorphism
    injective_f: bool
    injective_g: bool
    full: bool


def is_full(sub: SubprocessWitness) -> bool:
    """True when every target action anchored over the image is hit by g."""
    m = sub.morphism
    image_f = set(m.f)
    anchored = {a for a in range(m.target.n_actions)
                if m.target.anchor[a] in image_f}
    return anchored == set(m.g)


def subprocess_witness(m: MdpMorphism, require_valid: bool = True) -> SubprocessWitness:
    """Certify m as a subprocess; raises NotASubprocess if f or g repeats."""
    if require_valid:
        report = check_morphism(m.source, m.target, m.f, m.g)
        if not report.ok:
            raise InvalidMorphism(
                f"{len(report.violations)} compatibility violations"
            )
    inj_f = len(set(m.f)) == len(m.f)
    inj_g = len(set(m.g)) == len(m.g)
    if not (inj_f and inj_g):
        raise NotASubprocess("state and action maps must both be injective")
    w = SubprocessWitness(morphism=m, injective_f=True, injective_g=True,
                          full=False)
    return SubprocessWitness(morphism=m, injective_f=True, injective_g=True,
                             full=is_full(w))


def max_subprocess(
    m2: FiniteMdp, s_subset: Iterable[int]
) -> tuple[FiniteMdp, SubprocessWitness]:
    """Largest subprocess of m2 living on the given state subset.

    Keeps exactly the actions anchored in the subset whose transition
    support stays inside it; every other subprocess on the same states
    factors through this one.
    """
    subset = sorted(set(s_subset))
    if not subset:
        raise EmptySubset("state subset must be nonempty")
    for s in subset:
        if not 0 <= s < m2.n_states:
            raise UnknownState(f"state id {s}")
    inside = set(subset)
    local_of = {s: i for i, s in enumerate(subset)}
    kept = [a for a in range(m2.n_actions)
            if m2.anchor[a] in inside
            and all(t in inside for t in m2.transition[a].ids)]
    sub = raw_mdp(
        state_names=[m2.state_names[s] for s in subset],
        action_names=[m2.action_names[a] for a in kept],
        anchor=[local_of[m2.anchor[a]] for a in kept],
        reward=[m2.reward[a] for a in kept],
        transition=[
            Distribution.from_pairs(
                (local_of[t], p)
                for t, p in zip(m2.transition[a].ids, m2.transition[a].probs)
            )
            for a in kept
        ],
    )
    incl = MdpMorphism(source=sub, target=m2, f=tuple(subset), g=tuple(kept))
    return sub, subprocess_witness(incl, require_valid=False)


def factor_through_max(
    sub: SubprocessWitness,
    max_mdp: FiniteMdp,
    max_witness: SubprocessWitness,
) -> MdpMorphism:
    """Unique morphism u with max_inclusion . u == sub_morphism.

    Both witnesses must land in the same target with the same state image.
    Raises NotASubprocess when sub uses an action outside the maximal
    action set, which can only happen with corrupted inputs.
    """
    m_sub, m_max = sub.morphism, max_witness.morphism
    if m_sub.target != m_max.target:
        raise DomainMismatch("witnesses embed into different targets")
    if set(m_sub.f) != set(m_max.f):
        raise ValueError("state images differ; factoring needs equal images")
    state_slot = {glob: i for i, glob in enumerate(m_max.f)}
    action_slot = {glob: i for i, glob in enumerate(m_max.g)}
    f_u = tuple(state_slot[x] for x in m_sub.f)
    g_u = []
    for a, glob in enumerate(m_sub.g):
        if glob not in action_slot:
            raise NotASubprocess(
                f"action {a} maps to {glob}, outside the maximal action set"
            )
        g_u.append(action_slot[glob])
    u = MdpMorphism(source=m_sub.source, target=max_mdp, f=f_u, g=tuple(g_u))
    report = check_morphism(u.source, u.target, u.f, u.g)
    if not report.ok:
        raise InvalidMorphism("factoring map fails the morphism conditions")
    return u


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class Pushout(NamedTuple):
    mdp: FiniteMdp
    leg1: MdpMorphism   # from the first span target
    leg2: MdpMorphism   # from the second span target


def _quotient_classes(n1: int, n2: int, pairs: Iterable[tuple[int, int]]):
    """Union-find closure over the tagged disjoint union {0..n1} + {0..n2}.

    Returns (class_of_1, class_of_2, classes) where classes lists each
    class's members as (tag, index) sorted, ordered by least member.
    """
    uf = _UnionFind(n1 + n2)
    for i, j in pairs:
        uf.union(i, n1 + j)
    members: dict[int, list[tuple[int, int]]] = {}
    for x in range(n1 + n2):
        members.setdefault(uf.find(x), []).append(
            (0, x) if x < n1 else (1, x - n1)
        )
    classes = sorted((sorted(v) for v in members.values()), key=lambda c: c[0])
    class_of_1 = [0] * n1
    class_of_2 = [0] * n2
    for ci, mem in enumerate(classes):
        for tag, idx in mem:
            if tag == 0:
                class_of_1[idx] = ci
            else:
                class_of_2[idx] = ci
    return class_of_1, class_of_2, classes


def _dedupe_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for n in names:
        if n in seen:
            seen[n] += 1
            out.append(f"{n}__{seen[n]}")
        else:
            seen[n] = 0
            out.append(n)
    return out


def pushout(
    m1: MdpMorphism,
    m2: MdpMorphism,
    prefixes: tuple[str, str] = ("a_", "b_"),
) -> Pushout:
    """Glue the targets of a span m1: Z -> X, m2: Z -> Y along Z.

    States and actions are quotiented by the relation generated by
    ``m1(z) ~ m2(z)``.  Anchor, transition, and reward of each class are
    resolved from the least representative and verified against every
    other member (tolerance 1e-9); disagreement raises InconsistentGlue
    and indicates an invalid input morphism.  Class names take the
    representative's name behind the component prefix.
    """
    if m1.source != m2.source:
        raise DomainMismatch("span legs must share their source")
    x, y = m1.target, m2.target
    s_of_x, s_of_y, s_classes = _quotient_classes(
        x.n_states, y.n_states,
        ((m1.f[z], m2.f[z]) for z in range(m1.source.n_states)),
    )
    a_of_x, a_of_y, a_classes = _quotient_classes(
        x.n_actions, y.n_actions,
        ((m1.g[z], m2.g[z]) for z in range(m1.source.n_actions)),
    )

    def state_class(tag: int, idx: int) -> int:
        return s_of_x[idx] if tag == 0 else s_of_y[idx]

    comps = (x, y)
    state_names = _dedupe_names([
        prefixes[mem[0][0]] + comps[mem[0][0]].state_names[mem[0][1]]
        for mem in s_classes
    ])
    action_names = _dedupe_names([
        prefixes[mem[0][0]] + comps[mem[0][0]].action_names[mem[0][1]]
        for mem in a_classes
    ])

    anchors: list[int] = []
    rewards: list[float] = []
    trans: list[Distribution] = []
    for ci, mem in enumerate(a_classes):
        tag0, idx0 = mem[0]
        comp0 = comps[tag0]
        anchor_c = state_class(tag0, comp0.anchor[idx0])
        reward_c = comp0.reward[idx0]
        d0 = comp0.transition[idx0]
        dist_c = Distribution.from_pairs(
            (state_class(tag0, t), p) for t, p in zip(d0.ids, d0.probs)
        )
        for tag, idx in mem[1:]:
            comp = comps[tag]
            if state_class(tag, comp.anchor[idx]) != anchor_c:
                raise InconsistentGlue(
                    f"action class {ci}: members anchor in different classes"
                )
            if abs(comp.reward[idx] - reward_c) > GLUE_TOL:
                raise InconsistentGlue(
                    f"action class {ci}: rewards {comp.reward[idx]!r} vs "
                    f"{reward_c!r}"
                )
            d = comp.transition[idx]
            pushed = Distribution.from_pairs(
                (state_class(tag, t), p) for t, p in zip(d.ids, d.probs)
            )
            if not _dist_close(pushed, dist_c):
                raise InconsistentGlue(
                    f"action class {ci}: transition rows disagree"
                )
        anchors.append(anchor_c)
        rewards.append(reward_c)
        trans.append(dist_c)

    glued = raw_mdp(state_names, action_names, anchors, rewards, trans)
    leg1 = MdpMorphism(source=x, target=glued,
                       f=tuple(s_of_x), g=tuple(a_of_x))
    leg2 = MdpMorphism(source=y, target=glued,
                       f=tuple(s_of_y), g=tuple(a_of_y))
    return Pushout(mdp=glued, leg1=leg1, leg2=leg2)


@dataclass(frozen=True)
class ProbeResult:
    ok: bool
    n_mediating: int
    detail: str


@dataclass(frozen=True)
class UniversalReport:
    probes: tuple[ProbeResult, ...]

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.probes)


_SEARCH_CAP = 10_000


def check_pushout_universal(
    m1: MdpMorphism,
    m2: MdpMorphism,
    candidate: Pushout,
    probe_cocones: Sequence[tuple[MdpMorphism, MdpMorphism]],
) -> UniversalReport:
    """Test the universal property of a candidate pushout against probes.

    Each probe (a0, b0) must commute with the span (a0 . m1 == b0 . m2,
    else NotACocone).  The mediating morphism is forced on the leg images;
    any unforced slots are enumerated exhaustively and each completion is
    validated, so the probe passes exactly when one valid mediating
    morphism exists.
    """
    w, leg1, leg2 = candidate
    results: list[ProbeResult] = []
    for a0, b0 in probe_cocones:
        if a0.target != b0.target:
            raise NotACocone("probe legs land in different MDPs")
        if a0.source != m1.target or b0.source != m2.target:
            raise NotACocone("probe legs do not start at the span targets")
        if compose(m1, a0) != compose(m2, b0):
            raise NotACocone("probe does not commute with the span")
        w0 = a0.target
        wf: list[int | None] = [None] * w.n_states
        wg: list[int | None] = [None] * w.n_actions
        conflict = None
        for pairs, forced, total in (
            (zip(leg1.f, a0.f), wf, w.n_states),
            (zip(leg2.f, b0.f), wf, w.n_states),
            (zip(leg1.g, a0.g), wg, w.n_actions),
            (zip(leg2.g, b0.g), wg, w.n_actions),
        ):
            for tgt_idx, val in pairs:
                if forced[tgt_idx] is None:
                    forced[tgt_idx] = val
                elif forced[tgt_idx] != val:
                    conflict = f"forced assignment clash at index {tgt_idx}"
                    break
            if conflict:
                break
        if conflict:
            results.append(ProbeResult(False, 0, conflict))
            continue
        free_states = [i for i, v in enumerate(wf) if v is None]
        free_actions = [i for i, v in enumerate(wg) if v is None]
        space = (w0.n_states ** len(free_states)) * \
                (w0.n_actions ** len(free_actions))
        if space > _SEARCH_CAP:
            raise ValueError(
                f"mediating search space {space} exceeds cap {_SEARCH_CAP}"
            )
        count = 0
        for s_fill in itertools.product(range(w0.n_states),
                                        repeat=len(free_states)):
            for a_fill in itertools.product(range(w0.n_actions),
                                            repeat=len(free_actions)):
                f_full = list(wf)
                g_full = list(wg)
                for slot, val in zip(free_states, s_fill):
                    f_full[slot] = val
                for slot, val in zip(free_actions, a_fill):
                    g_full[slot] = val
                if check_morphism(w, w0, f_full, g_full).ok:
                    count += 1
        results.append(ProbeResult(
            ok=count == 1,
            n_mediating=count,
            detail="unique mediating morphism" if count == 1
            else f"{count} mediating morphisms",
        ))
    return UniversalReport(probes=tuple(results))

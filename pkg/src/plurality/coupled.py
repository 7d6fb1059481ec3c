"""Plurality by running the ordering protocol and the core side by side.

The ordering layer hands every agent a label ``d``; the core layer runs its
tournament on the label ``l`` the agent currently uses.  When the two differ
the agent is *unstable*: it stops taking part in the duels, withdraws the
mass it has outstanding at every level, and only then switches ``l`` to
``d`` and restarts its core fields.  Withdrawal pairs complementary
deficits, so the per-group conservation of votes and masses holds
throughout, and once the labels freeze every agent eventually becomes
stable.  A departing agent passes tie signals to its partner in the groups
it shares with it; when moving to a larger label it waits for a partner
from every group where it still holds something.

Agents that currently hold every duel on their label's path announce their
own input color as the answer; everybody else copies the answer from such
agents when meeting them.

On non-complete graphs the wrapper swaps the two updated states after each
interaction, so states wander over the graph and eventually meet.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

from .core import (
    TIE,
    CoreState,
    MassEntry,
    duel_step,
    gamma_r,
    init_core,
    is_winner_claimant,
    label_of,
    label_value,
    refresh_votes,
    settle,
    shared_levels,
)
from .engine import InteractionGraph, Protocol
from .ordering import OrderingState, gamma_o, init_ordering, levels


class CoupledState(NamedTuple):
    ic: int
    d: int
    ld: int
    rt: int
    pre: int
    suc: int
    l: tuple[int, ...]
    c: tuple[int, ...]
    s: tuple[MassEntry, ...]
    ans: int

    @property
    def ordering(self) -> OrderingState:
        return OrderingState(self.ic, self.d, self.ld, self.rt, self.pre, self.suc)

    @property
    def core(self) -> CoreState:
        return CoreState(self.l, self.c, self.s)


def _assemble(o: OrderingState, core: CoreState, ans: int) -> CoupledState:
    return CoupledState(o.c, o.d, o.l, o.r, o.pre, o.suc, core.l, core.c, core.s, ans)


def init_coupled(color: int, k: int) -> CoupledState:
    m = levels(k)
    return _assemble(init_ordering(color), init_core(label_of(0, m)), color)


def is_stable(state: CoupledState, m: int) -> bool:
    return state.l == label_of(state.d, m)


def deficits(core: CoreState) -> tuple[frozenset[int], frozenset[int]]:
    """Levels whose vote is below / above the backing mass."""
    below = frozenset(i for i, (v, e) in enumerate(zip(core.c, core.s)) if v < e.w)
    above = frozenset(i for i, (v, e) in enumerate(zip(core.c, core.s)) if v > e.w)
    return below, above


def _withdraw(
    ka: CoreState, kb: CoreState, levels_: frozenset[int]
) -> tuple[CoreState, CoreState]:
    """Duel steps on the given levels that move unstable agents toward w == c."""
    la, ga = deficits(ka)
    lb, gb = deficits(kb)
    pair = (la & gb) | (ga & lb)
    sa = list(ka.s)
    sb = list(kb.s)
    shared = shared_levels(ka.l, kb.l)
    for i in sorted(levels_):
        if i >= shared:
            continue
        if i in pair:
            sa[i] = settle(sa[i], ka.c[i])
            sb[i] = settle(sb[i], kb.c[i])
        else:
            sa[i], sb[i] = duel_step(ka.c[i], sa[i], kb.c[i], sb[i], False)
    return CoreState(ka.l, ka.c, tuple(sa)), CoreState(kb.l, kb.c, tuple(sb))


def _hand_off(leaving: CoreState, other: CoreState) -> CoreState:
    """Leave a tie signal in every shared group that may lose its last mass."""
    s = list(other.s)
    for i in range(shared_levels(leaving.l, other.l)):
        mine = leaving.s[i]
        if (mine.w or mine.tie) and not s[i].w:
            s[i] = TIE
    return CoreState(other.l, other.c, tuple(s))


def _must_wait(leaving: CoreState, target: tuple[int, ...], other: CoreState) -> bool:
    """Whether leaving now would strand a mass or tie signal that has to stay.

    An agent moving to a larger label leaves groups whose labels are all
    smaller than its own target.  Labels are contiguous from 0, so those
    groups keep members for good, and the agent waits until it meets one of
    its group-mates that can take over the levels it holds.
    """
    if label_value(target) < label_value(leaving.l):
        return False
    kept = shared_levels(leaving.l, target)
    reach = shared_levels(leaving.l, other.l)
    return any(
        leaving.s[i].w or leaving.s[i].tie for i in range(kept, len(target)) if i >= reach
    )


def gamma_clique(a: CoupledState, b: CoupledState, m: int) -> tuple[CoupledState, CoupledState]:
    oa, ob = gamma_o(a.ordering, b.ordering, m)
    ka, kb = a.core, b.core

    ans_a, ans_b = a.ans, b.ans
    claim_a = is_winner_claimant(ka)
    claim_b = is_winner_claimant(kb)
    if claim_a and claim_b:
        ans_a, ans_b = a.ic, b.ic
    elif claim_a:
        ans_a = ans_b = a.ic
    elif claim_b:
        ans_a = ans_b = b.ic

    target_a = label_of(oa.d, m)
    target_b = label_of(ob.d, m)
    stable_a = ka.l == target_a
    stable_b = kb.l == target_b
    if stable_a and stable_b:
        ka, kb = gamma_r(ka, kb)
        return _assemble(oa, ka, ans_a), _assemble(ob, kb, ans_b)

    da = frozenset().union(*deficits(ka))
    db = frozenset().union(*deficits(kb))
    # An unstable agent with nothing outstanding switches to its new label
    # right away and sits out the rest of this interaction.
    reset_a = not stable_a and not da and not _must_wait(ka, target_a, kb)
    # Only one agent leaves per interaction, so the one staying behind can
    # carry the departing agent's tie signals.
    reset_b = not stable_b and not db and not reset_a and not _must_wait(kb, target_b, ka)
    if stable_a:
        active = db if not reset_b else frozenset()
    elif stable_b:
        active = da if not reset_a else frozenset()
    elif reset_a or reset_b:
        active = frozenset()
    else:
        active = da & db
    if active:
        ka, kb = _withdraw(ka, kb, active)
    if reset_a:
        kb = _hand_off(ka, kb)
        ka = init_core(target_a)
    if reset_b:
        ka = _hand_off(kb, ka)
        kb = init_core(target_b)
    if stable_a:
        ka = refresh_votes(ka)
    if stable_b:
        kb = refresh_votes(kb)
    return _assemble(oa, ka, ans_a), _assemble(ob, kb, ans_b)


def gamma_general(a: CoupledState, b: CoupledState, m: int) -> tuple[CoupledState, CoupledState]:
    """Clique transition, after which the two endpoints trade states."""
    a2, b2 = gamma_clique(a, b, m)
    return b2, a2


class _CoupledProtocol(Protocol):
    def __init__(self, k: int) -> None:
        super().__init__(k)
        self.m = levels(k)

    def initial_state(self, color: int) -> CoupledState:
        return init_coupled(color, self.k)

    def output(self, state: CoupledState) -> int:
        return state.ans

    def unflatten(self, values: Sequence[int]) -> CoupledState:
        m = self.m
        o = tuple(values[:6])
        l = tuple(values[6 : 6 + m])
        c = tuple(values[6 + m : 6 + 2 * m])
        rest = values[6 + 2 * m :]
        s = tuple(MassEntry(*rest[3 * i : 3 * i + 3]) for i in range(m))
        return CoupledState(*o, l, c, s, rest[3 * m])


class CliqueProtocol(_CoupledProtocol):
    name = "clique"

    def transition(self, a: CoupledState, b: CoupledState) -> tuple[CoupledState, CoupledState]:
        return gamma_clique(a, b, self.m)

    def accepts(self, graph: InteractionGraph) -> bool:
        return graph.is_complete


class GeneralProtocol(_CoupledProtocol):
    name = "general"

    def transition(self, a: CoupledState, b: CoupledState) -> tuple[CoupledState, CoupledState]:
        return gamma_general(a, b, self.m)

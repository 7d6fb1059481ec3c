"""Label-indexed plurality core: a knockout tournament of exact-majority duels.

Colors are named by fixed ``m``-bit labels with bits in {-1, +1}, most
significant bit first.  At level ``i`` the agents sharing an ``i``-bit label
prefix form a group, and their duel decides which half of that subtree
wins: ``-1`` or ``+1`` at bit ``i``.  An agent votes its own bit at level
``i`` only while its label is still alive, i.e. while it holds every duel
deeper down its own path; otherwise it abstains with a 0 vote.  Counts of
supporters are compared pairwise up the tree, so the label surviving the
top duel (level 0) has maximum support.  Exact ties go to the ``-1`` side.

Each level keeps a vote ``c[i]`` and a mass entry ``s[i] = (w, o)``.  The
mass is the conserved token backing the vote: opposite masses annihilate,
and outputs ``o`` spread from the surviving masses.  Votes only change while
the mass is settled (``w == c``); an agent whose mass was annihilated first
re-settles together with a partner of complementary deficit, which keeps
``sum(c) == sum(w)`` in every group.

The module also carries a 4-state exact-majority protocol used as a
baseline for the verification tools.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple, Sequence

from .engine import Protocol
from .ordering import levels


class MassEntry(NamedTuple):
    w: int  # weight in {-1, 0, +1}
    o: int  # output bit in {-1, +1}
    tie: int = 0  # tie signal, only on an empty entry with output -1


class CoreState(NamedTuple):
    l: tuple[int, ...]
    c: tuple[int, ...]
    s: tuple[MassEntry, ...]


def level_count_of(state: CoreState) -> int:
    return len(state.l)


@lru_cache(maxsize=None)
def label_of(d: int, m: int) -> tuple[int, ...]:
    """Binary expansion of ``d`` on ``m`` bits, MSB first, 0 -> -1, 1 -> +1."""
    if not 0 <= d < (1 << m):
        raise ValueError(f"label {d} does not fit in {m} bits")
    return tuple(1 if (d >> (m - 1 - i)) & 1 else -1 for i in range(m))


def label_value(label: Sequence[int]) -> int:
    d = 0
    for bit in label:
        d = 2 * d + (bit > 0)
    return d


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def init_core(label: Sequence[int]) -> CoreState:
    label = tuple(label)
    return CoreState(label, label, tuple(MassEntry(b, b) for b in label))


TIE = MassEntry(0, -1, 1)


def settle(entry: MassEntry, vote: int) -> MassEntry:
    """Back ``vote`` with exactly its own mass; a zero vote keeps the output."""
    if vote:
        return MassEntry(vote, _sign(vote))
    return MassEntry(0, entry.o, entry.tie)


def release(entry: MassEntry) -> MassEntry:
    """Drop the entry's mass along with its vote.

    Removing a mass may leave the group without any, so a released holder
    raises the tie signal; an entry that was already empty keeps its output.
    """
    return TIE if entry.w else entry


def desired_vote(state: CoreState, i: int) -> int:
    l, s = state.l, state.s
    for j in range(i + 1, len(l)):
        if s[j].o != l[j]:
            return 0
    return l[i]


def is_winner_claimant(state: CoreState) -> bool:
    """Whether the agent's label currently wins every duel on its path."""
    return all(e.o == b for e, b in zip(state.s, state.l))


def shared_levels(la: Sequence[int], lb: Sequence[int]) -> int:
    """Number of levels ``i`` at which the two labels share the ``i``-bit prefix."""
    m = len(la)
    for i in range(m):
        if la[i] != lb[i]:
            return i + 1
    return m


def duel_step(
    ca: int, sa: MassEntry, cb: int, sb: MassEntry, gate: bool
) -> tuple[MassEntry, MassEntry]:
    """One level's exact-majority step between two group members.

    ``gate`` allows the settle-swap, which un-cancels two complementary
    deficits so that one of the agents can then move its vote.

    Empty entries follow the surviving masses.  Every event that can empty
    a group (cancellation, release) leaves the tie signal behind, and the
    signal turns empty ``+1`` outputs into plain ``-1`` ones without being
    copied itself.  A mass holder clears the signal, so it dies out while
    masses survive and takes over once they are gone.
    """
    da = sa.w - ca
    db = sb.w - cb
    if da and da == -db:
        if gate:
            return settle(sa, ca), settle(sb, cb)
    wa, wb = sa.w, sb.w
    if wa * wb < 0:
        return TIE, TIE
    if wa and not wb:
        return sa, MassEntry(0, _sign(wa))
    if wb and not wa:
        return MassEntry(0, _sign(wb)), sb
    if not wa and not wb:
        if sa.tie and sb.o > 0:
            return sa, MassEntry(0, -1)
        if sb.tie and sa.o > 0:
            return MassEntry(0, -1), sb
    return sa, sb


def refresh_votes(state: CoreState) -> CoreState:
    """Move settled votes to the desired value, deepest level first."""
    c = list(state.c)
    s = list(state.s)
    changed = False
    for i in range(len(c) - 1, -1, -1):
        if s[i].w != c[i]:
            continue
        want = desired_vote(CoreState(state.l, c, s), i)
        if want != c[i]:
            c[i] = want
            s[i] = settle(s[i], want) if want else release(s[i])
            changed = True
    if not changed:
        return state
    return CoreState(state.l, tuple(c), tuple(s))


def gamma_r(a: CoreState, b: CoreState) -> tuple[CoreState, CoreState]:
    """Transition of the plurality core for two agents with fixed labels."""
    sa = list(a.s)
    sb = list(b.s)
    for i in range(shared_levels(a.l, b.l)):
        gate = desired_vote(a, i) != a.c[i] or desired_vote(b, i) != b.c[i]
        sa[i], sb[i] = duel_step(a.c[i], sa[i], b.c[i], sb[i], gate)
    a2 = refresh_votes(CoreState(a.l, a.c, tuple(sa)))
    b2 = refresh_votes(CoreState(b.l, b.c, tuple(sb)))
    return a2, b2


def core_violations(state: CoreState) -> list[str]:
    """Per-agent legality of votes and mass entries."""
    out = []
    for i, (bit, vote, entry) in enumerate(zip(state.l, state.c, state.s)):
        if vote not in (bit, 0):
            out.append(f"level {i}: vote {vote} is neither own bit nor 0")
        if entry.w not in (vote, vote - _sign(vote)):
            out.append(f"level {i}: mass {entry.w} for vote {vote}")
        if entry.w and entry.o != _sign(entry.w):
            out.append(f"level {i}: output {entry.o} against mass {entry.w}")
        if entry.tie and (entry.w or entry.o != -1):
            out.append(f"level {i}: tie signal on {entry}")
    return out


class CoreProtocol(Protocol):
    """The core on its own, for colors that already are labels ``0..k-1``."""

    name = "core"

    def __init__(self, k: int) -> None:
        super().__init__(k)
        self.m = levels(k)

    def initial_state(self, color: int) -> CoreState:
        return init_core(label_of(color, self.m))

    def transition(self, a: CoreState, b: CoreState) -> tuple[CoreState, CoreState]:
        return gamma_r(a, b)

    def output(self, state: CoreState) -> bool:
        return is_winner_claimant(state)

    def unflatten(self, values: Sequence[int]) -> CoreState:
        m = self.m
        l = tuple(values[:m])
        c = tuple(values[m : 2 * m])
        rest = values[2 * m :]
        s = tuple(MassEntry(*rest[3 * i : 3 * i + 3]) for i in range(m))
        return CoreState(l, c, s)


# --------------------------------------------------------------------------
# 4-state exact majority baseline
# --------------------------------------------------------------------------

STRONG_PLUS = 2
STRONG_MINUS = -2
WEAK_PLUS = 1
WEAK_MINUS = -1

_FOUR_STATE_RULES = {
    (STRONG_PLUS, STRONG_MINUS): (WEAK_MINUS, WEAK_MINUS),
    (STRONG_PLUS, WEAK_MINUS): (STRONG_PLUS, WEAK_PLUS),
    (STRONG_MINUS, WEAK_PLUS): (STRONG_MINUS, WEAK_MINUS),
    (WEAK_PLUS, WEAK_MINUS): (WEAK_MINUS, WEAK_MINUS),
}


def four_state_majority_step(a: int, b: int) -> tuple[int, int]:
    return _FOUR_STATE_RULES.get((a, b), (a, b))


class FourStateMajority(Protocol):
    """Exact majority for k = 2; color 1 is the ``+`` side, color 0 the ``-`` side.

    States are ``S+ = 2, S- = -2, w+ = 1, w- = -1``; the output is the sign.
    """

    name = "baseline4"

    def __init__(self, k: int = 2) -> None:
        if k != 2:
            raise ValueError("the 4-state baseline needs k = 2")
        super().__init__(2)

    def initial_state(self, color: int) -> int:
        return STRONG_PLUS if color == 1 else STRONG_MINUS

    def transition(self, a: int, b: int) -> tuple[int, int]:
        return four_state_majority_step(a, b)

    def output(self, state: int) -> int:
        return 1 if state > 0 else -1

    def output_color(self, state: int) -> int:
        return 1 if state > 0 else 0

    def unflatten(self, values: Sequence[int]) -> int:
        return int(values[0])

"""Ordering protocol: agree on a bijection from present colors to 0..k'-1.

Every color elects one leader.  The leaders form a single linked list
headed by a unique root; an agent's label ``d`` is its position on the list
and followers copy the label of their color's leader.

Agents compare colors for equality only.  Labels live in ``[0, 2**m)`` with
``m = ceil(log2 k)`` and wrap around on overflow.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

from .engine import Protocol


class NotALeader(ValueError):
    pass


class OrderingState(NamedTuple):
    c: int  # input color, never changes
    d: int  # label
    l: int  # leader bit
    r: int  # root bit
    pre: int  # color of the list predecessor, or c
    suc: int  # color of the list successor / follow target, or c


def levels(k: int) -> int:
    """Number of label bits, ``ceil(log2 k)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return (k - 1).bit_length()


def init_ordering(color: int) -> OrderingState:
    return OrderingState(color, 0, 1, 1, color, color)


def clear(s: OrderingState) -> OrderingState:
    """Isolate a leader: drop root bit and both links, reset the label."""
    if not s.l:
        raise NotALeader(f"cannot clear follower {s}")
    return OrderingState(s.c, 0, 1, 0, s.c, s.c)


def is_leader(s: OrderingState) -> bool:
    return bool(s.l)


def is_root(s: OrderingState) -> bool:
    return bool(s.l and s.r)


def is_onlist(s: OrderingState) -> bool:
    return bool(s.l and (s.r or s.pre != s.c))


def is_isolated(s: OrderingState) -> bool:
    return bool(s.l and not s.r and s.pre == s.c)


def _demote(s: OrderingState) -> OrderingState:
    return OrderingState(s.c, s.d, 0, 0, s.c, s.c)


def gamma_o(a: OrderingState, b: OrderingState, m: int) -> tuple[OrderingState, OrderingState]:
    """Transition of the ordering protocol for initiator ``a``, responder ``b``.

    The first matching rule fires.  Followers only ever interact with agents
    of their own color; every rule between different colors needs two
    leaders.
    """
    mod = 1 << m
    if a.c == b.c:
        if a.l and b.l:
            # R1: a root always survives, so no agent ever gains a root bit;
            # otherwise the initiator does
            if b.r and not a.r:
                return _demote(a), b
            return a, _demote(b)
        if a.l:
            return a, b._replace(d=a.d)  # R2
        if b.l:
            return a._replace(d=b.d), b  # R2 mirrored
        return a, b
    if not (a.l and b.l):
        return a, b

    ca, cb = a.c, b.c
    a_root, b_root = bool(a.r), bool(b.r)
    if a_root and b_root:
        return a, clear(b)  # R3
    a_isolated = not a_root and a.pre == ca
    b_onlist = b_root or b.pre != cb

    if a_isolated and a.suc == cb and not b_onlist:
        return clear(a), b  # R4
    if a_root and (a.suc == ca or a.suc == cb):
        return a._replace(suc=cb), b._replace(pre=ca, d=(a.d + 1) % mod)  # R5

    # A forward link is only kept while its target confirms it; a root
    # never does, so these checks run before the root may re-adopt ``a``.
    confirmed = b.d == (a.d + 1) % mod
    if not a_root and not a_isolated and a.suc == cb:
        if b_onlist and b.pre == ca and not confirmed:
            return a._replace(suc=ca), clear(b)  # R9
        if not (b.pre == ca and confirmed):
            return a._replace(suc=ca), b  # R7

    if b_root and (b.suc == cb or b.suc == ca):
        return a._replace(pre=cb, d=(b.d + 1) % mod), b._replace(suc=ca)  # R5 mirrored

    a_onlist = not a_isolated
    if b_onlist and not b_root and b.pre == ca:
        if not (a_onlist and a.suc == cb and confirmed):
            return a, clear(b)  # R8

    if a_isolated:
        if a.suc == cb and b_onlist:
            if b.suc != cb:
                return a._replace(suc=b.suc), b  # R6a climb
            # b is a non-root tail here (a root tail matched R5 mirrored)
            return (
                a._replace(pre=cb, d=(b.d + 1) % mod, suc=ca),
                b._replace(suc=ca),
            )  # R6b append
        if a.suc == ca and b_root:
            return a._replace(suc=b.suc), b  # R6c start climbing at the root
    return a, b


class OrderingProtocol(Protocol):
    """Protocol handle wiring :func:`gamma_o` into the engine."""

    name = "ordering"

    def __init__(self, k: int) -> None:
        super().__init__(k)
        self.m = levels(k)

    def initial_state(self, color: int) -> OrderingState:
        return init_ordering(color)

    def transition(self, a: OrderingState, b: OrderingState) -> tuple[OrderingState, OrderingState]:
        return gamma_o(a, b, self.m)

    def output(self, state: OrderingState) -> int:
        return state.d

    def unflatten(self, values: Sequence[int]) -> OrderingState:
        return OrderingState(*values)


def ordering_state_count(k: int) -> int:
    """Encodable states: color, label, two bits, two link colors."""
    return k * (1 << levels(k)) * 2 * 2 * k * k

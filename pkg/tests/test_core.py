import itertools
from collections import Counter

import pytest

from plurality.analysis import (
    check_duel_invariants,
    stabilization_certificate,
    tournament_winner,
)
from plurality.core import (
    STRONG_MINUS,
    STRONG_PLUS,
    TIE,
    WEAK_MINUS,
    WEAK_PLUS,
    CoreProtocol,
    CoreState,
    FourStateMajority,
    MassEntry as E,
    core_violations,
    desired_vote,
    duel_step,
    four_state_majority_step,
    gamma_r,
    init_core,
    is_winner_claimant,
    label_of,
    label_value,
    refresh_votes,
    release,
    settle,
    shared_levels,
)
from plurality.engine import Instance, QuiescenceWindow, UniformRandom, run


def test_label_of():
    assert label_of(0, 2) == (-1, -1)
    assert label_of(3, 2) == (1, 1)
    assert label_of(2, 2) == (1, -1)
    assert label_of(0, 0) == ()
    with pytest.raises(ValueError):
        label_of(4, 2)
    assert all(label_value(label_of(d, 3)) == d for d in range(8))


def test_init_core():
    assert init_core((-1, -1)) == CoreState((-1, -1), (-1, -1), (E(-1, -1), E(-1, -1)))
    assert init_core((1, -1)) == CoreState((1, -1), (1, -1), (E(1, 1), E(-1, -1)))
    for d in range(8):
        assert core_violations(init_core(label_of(d, 3))) == []


def test_settle_and_release():
    assert settle(E(0, -1), 1) == E(1, 1)
    assert settle(E(0, 1), 0) == E(0, 1)
    assert settle(E(-1, -1), -1) == E(-1, -1)
    assert settle(TIE, 0) == TIE
    assert settle(TIE, 1) == E(1, 1)
    assert release(E(1, 1)) == TIE
    assert release(E(0, 1)) == E(0, 1)


def test_desired_vote():
    assert desired_vote(init_core((1, 1)), 1) == 1
    lost = CoreState((1, 1), (1, 1), (E(1, 1), E(0, -1)))
    assert desired_vote(lost, 0) == 0
    alive = CoreState((1, 1), (1, 1), (E(1, 1), E(1, 1)))
    assert desired_vote(alive, 0) == 1


def test_shared_levels():
    assert shared_levels((-1, -1, 1), (-1, -1, -1)) == 3
    assert shared_levels((-1, 1, 1), (-1, -1, 1)) == 2
    assert shared_levels((1, 1), (-1, 1)) == 1
    assert shared_levels((1,), (1,)) == 1


def test_duel_cancellation_leaves_tie_signal_and_keeps_votes():
    a, b = gamma_r(init_core((1,)), init_core((-1,)))
    assert a == CoreState((1,), (1,), (TIE,))
    assert b == CoreState((-1,), (-1,), (TIE,))
    assert check_duel_invariants([a, b]) == []


def test_duel_correction_from_a_mass():
    a = init_core((1,))
    b = CoreState((-1,), (-1,), (E(0, -1),))
    a2, b2 = gamma_r(a, b)
    assert a2 == a
    assert b2.s[0] == E(0, 1)


def test_duel_settled_pair_unchanged():
    a = init_core((1, -1))
    assert gamma_r(a, a) == (a, a)


@pytest.mark.parametrize(
    "ca, sa, cb, sb, gate, expected",
    [
        # empty +1 output meets the tie signal: it flips, the signal stays put
        (1, E(0, 1), 0, TIE, False, (E(0, -1), TIE)),
        (0, TIE, -1, E(0, 1), False, (TIE, E(0, -1))),
        # plain -1 outputs do not spread
        (1, E(0, 1), 0, E(0, -1), False, (E(0, 1), E(0, -1))),
        (1, E(0, 1), 1, E(0, -1), False, (E(0, 1), E(0, -1))),
        # a mass clears the tie signal
        (1, E(1, 1), -1, TIE, False, (E(1, 1), E(0, 1))),
        (-1, E(-1, -1), 0, TIE, False, (E(-1, -1), E(0, -1))),
        # complementary deficits re-settle only when gated
        (1, E(0, -1), -1, E(0, -1), True, (E(1, 1), E(-1, -1))),
        (1, E(0, -1), -1, E(0, -1), False, (E(0, -1), E(0, -1))),
        (1, E(0, 1), -1, E(0, -1), False, (E(0, 1), E(0, -1))),
        # same-sign masses coexist
        (1, E(1, 1), 1, E(1, 1), False, (E(1, 1), E(1, 1))),
    ],
)
def test_duel_step_rules(ca, sa, cb, sb, gate, expected):
    assert duel_step(ca, sa, cb, sb, gate) == expected


def test_refresh_releases_dead_votes_deepest_first():
    # level 1 lost, so the level-0 vote must go, and its mass with it
    s = CoreState((1, 1), (1, 1), (E(1, 1), E(0, -1)))
    out = refresh_votes(s)
    assert out.c == (0, 1)
    assert out.s[0] == TIE
    # unsettled votes are left alone
    t = CoreState((1, 1), (1, 1), (E(0, -1), E(0, -1)))
    assert refresh_votes(t) == t


def test_winner_claimant():
    assert is_winner_claimant(init_core((1, -1)))
    assert not is_winner_claimant(CoreState((1,), (1,), (E(0, -1),)))


def test_core_violations_catch_illegal_entries():
    assert core_violations(CoreState((1,), (-1,), (E(-1, -1),)))
    assert core_violations(CoreState((1,), (1,), (E(-1, -1),)))
    assert core_violations(CoreState((1,), (1,), (E(1, -1),)))
    assert core_violations(CoreState((1,), (1,), (E(0, 1, 1),)))


def test_tournament_winner():
    # labels 0..3; 0 and 1 tie below, 1 loses the tie; 3 beats 2
    assert tournament_winner({0: 2, 1: 2, 2: 1, 3: 3}, 2) == 3
    assert tournament_winner({0: 2, 1: 2, 3: 2}, 2) == 0
    assert tournament_winner({1: 1, 2: 1}, 2) == 1
    assert tournament_winner({0: 1, 1: 2}, 1) == 1


@pytest.mark.parametrize("k, n", [(2, 3), (2, 4), (3, 3), (4, 3), (4, 4)])
def test_core_certified_against_tournament(k, n):
    """Every census: all fair runs settle with claimants = the oracle's winners."""
    p = CoreProtocol(k)
    for colors in itertools.combinations_with_replacement(range(k), n):
        win = tournament_winner(Counter(colors), p.m)

        def ok(states, colors=colors, win=win):
            return all(is_winner_claimant(s) == (c == win) for s, c in zip(states, colors))

        cert = stabilization_certificate(p, Instance.complete(colors, k), ok, cap=100_000)
        assert cert.verdict, colors


@pytest.mark.parametrize("seed", range(10))
def test_core_silent_runs_match_tournament(seed):
    import numpy as np

    rng = np.random.default_rng(seed)
    k, n = 8, 20
    colors = [int(c) for c in rng.integers(0, k, size=n)]
    p = CoreProtocol(k)
    trace = run(p, Instance.complete(colors, k), UniformRandom(seed), QuiescenceWindow(50 * n * n))
    assert trace.stop_reason == "quiescent"
    win = tournament_winner(Counter(colors), p.m)
    claim = [c for s, c in zip(trace.final.states, colors) if is_winner_claimant(s)]
    assert claim and set(claim) == {win}
    assert claim.count(win) == colors.count(win)


def test_four_state_rules():
    assert four_state_majority_step(STRONG_PLUS, STRONG_MINUS) == (WEAK_MINUS, WEAK_MINUS)
    assert four_state_majority_step(STRONG_PLUS, WEAK_MINUS) == (STRONG_PLUS, WEAK_PLUS)
    assert four_state_majority_step(STRONG_MINUS, WEAK_PLUS) == (STRONG_MINUS, WEAK_MINUS)
    assert four_state_majority_step(WEAK_PLUS, WEAK_MINUS) == (WEAK_MINUS, WEAK_MINUS)
    assert four_state_majority_step(WEAK_PLUS, WEAK_PLUS) == (WEAK_PLUS, WEAK_PLUS)
    p = FourStateMajority()
    assert p.initial_state(1) == STRONG_PLUS and p.initial_state(0) == STRONG_MINUS
    assert p.output(WEAK_MINUS) == -1 and p.output_color(WEAK_PLUS) == 1
    with pytest.raises(ValueError):
        FourStateMajority(3)


def test_core_protocol_serialization():
    p = CoreProtocol(4)
    s = CoreState((1, -1), (0, -1), (TIE, E(-1, -1)))
    assert p.unflatten(p.flatten(s)) == s

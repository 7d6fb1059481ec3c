import pytest

from plurality.analysis import (
    CapExceeded,
    CopyBit,
    DuelViolation,
    EmptyCensus,
    Inconclusive,
    LeadershipMonitor,
    answers_agree_on_plurality,
    check_duel_invariants,
    check_ordering_snapshot,
    common_reachable,
    coupled_state_count,
    labels_form_bijection,
    majority_sign,
    plurality_set,
    reachable_set,
    stabilization_certificate,
    state_space_size,
)
from plurality.core import (
    STRONG_MINUS,
    STRONG_PLUS,
    WEAK_MINUS,
    CoreState,
    FourStateMajority,
    MassEntry as E,
    init_core,
)
from plurality.coupled import init_coupled
from plurality.engine import Instance, InteractionGraph, PredicateWindow, Protocol, UniformRandom, run
from plurality.ordering import OrderingProtocol, OrderingState as S, init_ordering


class Flip(Protocol):
    """Both agents flip their bit on every interaction: outputs never settle."""

    name = "flip"

    def initial_state(self, color):
        return color

    def transition(self, a, b):
        return 1 - a, 1 - b

    def output(self, state):
        return state

    def unflatten(self, values):
        return int(values[0])


def baseline(plus: int, minus: int) -> Instance:
    return Instance.complete([1] * plus + [0] * minus, 2)


def test_plurality_set():
    assert plurality_set({"red": 3}) == {"red"}
    assert plurality_set({"r": 2, "g": 2, "b": 1}) == {"r", "g"}
    assert plurality_set({"a": 1, "b": 1, "c": 1}) == {"a", "b", "c"}
    with pytest.raises(EmptyCensus):
        plurality_set({})


def test_output_oracles():
    assert answers_agree_on_plurality([2, 2, 2], [0, 2, 2])
    assert not answers_agree_on_plurality([0, 0, 0], [0, 2, 2])
    assert not answers_agree_on_plurality([2, 0, 2], [0, 2, 2])
    assert majority_sign([1, 1, 0]) == 1
    assert majority_sign([1, 0]) == -1
    states = [S(0, 1, 1, 0, 2, 0), S(2, 0, 1, 1, 2, 0), S(0, 1, 0, 0, 0, 0)]
    assert labels_form_bijection(states)
    assert not labels_form_bijection(states[:2] + [S(0, 0, 0, 0, 0, 0)])


# -- ordering reports --------------------------------------------------------


def test_snapshot_of_fresh_configuration():
    report = check_ordering_snapshot([init_ordering(c) for c in (0, 1, 2, 1)], 3)
    assert {c: len(v) for c, v in report.leaders.items()} == {0: 1, 1: 2, 2: 1}
    assert len(report.roots) == 4
    assert not report.verdict


def test_snapshot_of_hand_built_list():
    states = [S(0, 0, 1, 1, 0, 1), S(1, 1, 1, 0, 0, 1), S(1, 1, 0, 0, 1, 1)]
    report = check_ordering_snapshot(states, 2)
    assert len(report.lists) == 1
    assert report.lists[0].agents == [0, 1] and report.lists[0].consistent
    assert report.labels == {0: 0, 1: 1}
    assert report.verdict and report.settled


def test_snapshot_flags_open_tail_and_bad_follower():
    open_tail = [S(0, 0, 1, 1, 0, 1), S(1, 1, 1, 0, 0, 0)]
    report = check_ordering_snapshot(open_tail, 2)
    assert report.verdict and not report.settled
    stale = [S(0, 0, 1, 1, 0, 1), S(1, 1, 1, 0, 0, 1), S(1, 0, 0, 0, 1, 1)]
    assert not check_ordering_snapshot(stale, 2).verdict


def test_converged_run_gives_settled_report():
    colors = [0, 1, 2, 3, 2, 1, 2]
    k = 4
    pred = lambda states: check_ordering_snapshot(states, k).settled
    trace = run(OrderingProtocol(k), Instance.complete(colors, k), UniformRandom(0), PredicateWindow(pred, lambda t: 10 * t))
    report = check_ordering_snapshot(trace.final.states, k)
    assert report.settled
    assert sorted(report.labels.values()) == [0, 1, 2, 3]


def test_leadership_monitor_catches_regrowth():
    monitor = LeadershipMonitor()
    monitor.observe(0, [S(0, 0, 0, 0, 0, 0)])
    monitor.observe(1, [S(0, 0, 1, 0, 0, 0)])
    assert monitor.violations == [(1, 0, "leader bit set")]
    counts = LeadershipMonitor(per_agent=False)
    counts.observe(0, [S(0, 0, 1, 1, 0, 0), S(0, 0, 0, 0, 0, 0)])
    counts.observe(1, [S(0, 0, 0, 0, 0, 0), S(0, 0, 1, 1, 0, 0)])
    assert counts.violations == []
    counts.observe(2, [S(0, 0, 1, 1, 0, 0), S(0, 0, 1, 1, 0, 0)])
    assert len(counts.violations) == 2
    structural = LeadershipMonitor()
    structural.observe(0, [S(0, 0, 0, 1, 0, 0)])
    assert structural.violations


# -- duel invariants ---------------------------------------------------------


def test_duel_invariants_fresh_and_corrupted():
    fresh = [init_coupled(c, 4) for c in (0, 1, 2, 3)]
    assert check_duel_invariants(fresh) == []
    cores = [init_core((1, -1)), init_core((1, 1)), CoreState((1, 1), (1, 1), (E(0, 1), E(1, 1)))]
    found = check_duel_invariants(cores)
    assert found == [DuelViolation((), 0, None, "conservation", "sum c=3 sum w=2")]
    gap = check_duel_invariants([CoreState((1,), (1,), (E(-1, -1),))])
    assert {v.kind for v in gap} == {"mass_gap", "conservation"}


# -- reachability ------------------------------------------------------------


def test_reachable_set_baseline_pair():
    result = reachable_set(FourStateMajority(), baseline(1, 1))
    assert set(result.configs.values()) == {(STRONG_PLUS, STRONG_MINUS), (WEAK_MINUS, WEAK_MINUS)}
    assert result.complete and result.verdict == "complete"


def test_reachable_set_single_agent():
    result = reachable_set(OrderingProtocol(1), Instance.complete([0], 1))
    assert len(result) == 1


def test_reachable_set_ordering_k2_n3_and_frontier_independence():
    inst = Instance.complete([0, 1, 1], 2)
    bfs = reachable_set(OrderingProtocol(2), inst)
    dfs = reachable_set(OrderingProtocol(2), inst, frontier="dfs")
    assert bfs.complete and len(bfs) < 1_000_000
    assert set(bfs.configs) == set(dfs.configs)


def test_reachable_set_cap_behaviour():
    inst = Instance.complete([0, 1, 1], 2)
    full = reachable_set(OrderingProtocol(2), inst)
    part = reachable_set(OrderingProtocol(2), inst, cap=10)
    assert not part.complete and part.verdict == "inconclusive"
    assert len(part) == 10
    assert set(part.configs) <= set(full.configs)
    with pytest.raises(CapExceeded) as info:
        reachable_set(OrderingProtocol(2), inst, cap=10, strict=True)
    assert len(info.value.partial) == 10
    with pytest.raises(ValueError):
        reachable_set(OrderingProtocol(2), inst, cap=0)


# -- certificates ------------------------------------------------------------


def _correct_baseline(inst):
    want = majority_sign(inst.colors)
    p = FourStateMajority()
    return lambda states: all(p.output(s) == want for s in states)


def test_certificate_baseline_majority():
    inst = baseline(3, 2)
    cert = stabilization_certificate(FourStateMajority(), inst, _correct_baseline(inst))
    assert cert.verdict and cert.locked > 0


def test_certificate_baseline_tie_goes_minus():
    inst = baseline(2, 2)
    cert = stabilization_certificate(FourStateMajority(), inst, _correct_baseline(inst))
    assert cert.verdict
    wrong = stabilization_certificate(
        FourStateMajority(), inst, lambda states: all(s > 0 for s in states)
    )
    assert not wrong.verdict


def test_certificate_rejects_oscillation():
    inst = Instance.complete([0, 0], 2)
    cert = stabilization_certificate(Flip(2), inst, lambda states: states == (0, 0))
    assert not cert.verdict and cert.stuck


def test_certificate_inconclusive_when_capped():
    inst = Instance.complete([0, 1, 1], 2)
    with pytest.raises(Inconclusive):
        stabilization_certificate(OrderingProtocol(2), inst, labels_form_bijection, cap=5)


def test_common_reachable():
    p = FourStateMajority()
    inst = baseline(2, 1)
    assert common_reachable(p, inst, inst).states == p.initial_configuration(inst).states
    assert common_reachable(p, baseline(2, 1), baseline(1, 2)) is None
    toy = CopyBit()
    a = Instance.complete([1, 1, 0], 2)
    b = Instance.complete([1, 0, 0], 2)
    witness = common_reachable(toy, a, b)
    assert witness is not None
    assert common_reachable(toy, b, a) is not None
    with pytest.raises(ValueError):
        common_reachable(toy, a, Instance.complete([1, 0], 2))


# -- state budgets ------------------------------------------------------------


def test_state_space_size():
    b = state_space_size("ordering", 4)
    assert (b.count, b.budget, b.within) == (1024, 2048, True)
    b = state_space_size("ordering", 1)
    assert (b.count, b.budget) == (4, 8)
    for k in range(2, 9):
        assert state_space_size("coupled", k).within
    with pytest.raises(ValueError):
        state_space_size("ordering", 0)
    with pytest.raises(ValueError):
        state_space_size("nonsense", 3)


def test_cell_count_matches_enumeration():
    """The 11 per-level cells are exactly the legal (c, w, o, tie) tuples."""
    legal = set()
    for bit in (-1, 1):
        for c in (bit, 0):
            for w in (-1, 0, 1):
                for o in (-1, 1):
                    for tie in (0, 1):
                        state = CoreState((bit,), (c,), (E(w, o, tie),))
                        from plurality.core import core_violations

                        if not core_violations(state):
                            legal.add((c, w, o, tie))
    assert len(legal) == 11
    assert coupled_state_count(2) == 64 * 2 * 11 * 2

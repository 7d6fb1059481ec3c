"""Oracles, invariant monitors and exhaustive configuration-space tools."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .core import CoreState, level_count_of
from .engine import Configuration, Instance, Protocol, encode_states
from .ordering import OrderingState, levels, ordering_state_count

DEFAULT_CAP = 1_000_000


class EmptyCensus(ValueError):
    pass


class CapExceeded(RuntimeError):
    def __init__(self, message: str, partial: "ReachabilityResult") -> None:
        super().__init__(message)
        self.partial = partial


# --------------------------------------------------------------------------
# Plurality oracle
# --------------------------------------------------------------------------


def census(colors: Iterable[int]) -> Counter:
    return Counter(colors)


def plurality_set(counts: Mapping[int, int]) -> set[int]:
    """Colors attaining the maximum supporter count."""
    if sum(counts.values()) <= 0:
        raise EmptyCensus("census has no agents")
    top = max(counts.values())
    return {c for c, n in counts.items() if n == top}


def labels_form_bijection(states: Sequence[OrderingState]) -> bool:
    """Same-colored agents share ``d`` and the labels are exactly 0..k'-1."""
    by_color: dict[int, set[int]] = {}
    for s in states:
        by_color.setdefault(s.c, set()).add(s.d)
    if any(len(ds) != 1 for ds in by_color.values()):
        return False
    return sorted(next(iter(ds)) for ds in by_color.values()) == list(range(len(by_color)))


def answers_agree_on_plurality(answers: Sequence[int], colors: Sequence[int]) -> bool:
    """All agents name the same color and it is one of the plurality colors."""
    return len(set(answers)) == 1 and answers[0] in plurality_set(census(colors))


def majority_sign(colors: Sequence[int]) -> int:
    """Expected output of the 4-state baseline: +1 iff color 1 is a strict majority."""
    ones = sum(1 for c in colors if c == 1)
    return 1 if ones > len(colors) - ones else -1


def tournament_winner(counts: Mapping[int, int], m: int) -> int:
    """Winner of the knockout over ``m``-bit labels, ties to the ``-1`` half.

    ``counts`` maps label values (``0..2**m - 1``) to supporter counts.  At
    each node the upper half beats the lower one only with strictly more
    supporters.
    """
    if sum(counts.values()) <= 0:
        raise EmptyCensus("census has no agents")

    def best(lo: int, width: int) -> tuple[int, int]:
        if width == 1:
            return lo, counts.get(lo, 0)
        half = width // 2
        low = best(lo, half)
        high = best(lo + half, half)
        return high if high[1] > low[1] else low

    return best(0, 1 << m)[0]


# --------------------------------------------------------------------------
# Ordering snapshots
# --------------------------------------------------------------------------


@dataclass
class LinkedList:
    agents: list[int]
    consistent: bool


@dataclass
class OrderingReport:
    leaders: dict[int, list[int]]
    roots: list[int]
    lists: list[LinkedList]
    good: list[int]
    labels: dict[int, int]
    present: set[int]
    verdict: bool
    tail_closed: bool = False
    problems: list[str] = field(default_factory=list)

    @property
    def settled(self) -> bool:
        """Verdict holds and the list tail has no dangling successor."""
        return self.verdict and self.tail_closed


def _walk_list(states: Sequence[OrderingState], root: int, mod: int) -> list[int]:
    by_color: dict[int, list[int]] = {}
    for i, s in enumerate(states):
        if s.l:
            by_color.setdefault(s.c, []).append(i)
    chain = [root]
    seen = {states[root].c}
    while True:
        cur = states[chain[-1]]
        if cur.suc == cur.c:
            break
        nxt = [
            j
            for j in by_color.get(cur.suc, [])
            if not states[j].r and states[j].pre == cur.c and states[j].d == (cur.d + 1) % mod
        ]
        if len(nxt) != 1 or len(by_color[cur.suc]) != 1 or cur.suc in seen:
            break
        chain.append(nxt[0])
        seen.add(cur.suc)
    return chain


def check_ordering_snapshot(states: Sequence[OrderingState], k: int) -> OrderingReport:
    """Summarize leaders, roots and root-headed lists of an ordering configuration.

    A list is followed from a root along successor colors while each next
    leader is the unique leader of its color and confirms the link (its
    ``pre`` names the previous color and its label is one larger).  It is
    reported consistent when it is headed by the only root and all its
    members are unique leaders of their colors.
    """
    mod = 1 << levels(k)
    present = {s.c for s in states}
    leaders: dict[int, list[int]] = {c: [] for c in present}
    for i, s in enumerate(states):
        if s.l:
            leaders[s.c].append(i)
    roots = [i for i, s in enumerate(states) if s.l and s.r]
    unique_leaders = all(len(v) == 1 for v in leaders.values())

    lists = []
    for r in roots:
        chain = _walk_list(states, r, mod)
        consistent = len(roots) == 1 and all(len(leaders[states[j].c]) == 1 for j in chain)
        lists.append(LinkedList(chain, consistent))

    on_consistent = {states[j].c for lst in lists if lst.consistent for j in lst.agents}
    good = [
        i
        for i, s in enumerate(states)
        if s.l and not s.r and s.pre == s.c and (s.suc == s.c or s.suc in on_consistent)
        and s.c not in on_consistent
    ]
    labels = {c: states[v[0]].d for c, v in leaders.items() if len(v) == 1}

    problems = []
    if not unique_leaders:
        problems.append("some color has no unique leader")
    if len(roots) != 1:
        problems.append(f"{len(roots)} roots")
    spanning = False
    tail_closed = False
    if len(roots) == 1 and lists[0].consistent:
        chain = lists[0].agents
        spanning = {states[j].c for j in chain} == present
        tail = states[chain[-1]]
        tail_closed = tail.suc == tail.c
        if not spanning:
            problems.append("list does not span the present colors")
    if sorted(labels.values()) != list(range(len(present))) or len(labels) != len(present):
        problems.append("labels are not a bijection onto 0..k'-1")
    followers_ok = all(s.l or (s.c in labels and s.d == labels[s.c]) for s in states)
    if not followers_ok:
        problems.append("a follower disagrees with its leader's label")
    verdict = not problems
    return OrderingReport(
        leaders=leaders,
        roots=roots,
        lists=lists,
        good=good,
        labels=labels,
        present=present,
        verdict=verdict,
        tail_closed=tail_closed and verdict,
        problems=problems,
    )


def ordering_structure_violations(s: OrderingState) -> list[str]:
    """Per-state well-formedness of ordering fields."""
    out = []
    if s.r and not s.l:
        out.append("root bit without leader bit")
    if s.l and s.r and s.pre != s.c:
        out.append("root with a predecessor")
    if not s.l and (s.pre != s.c or s.suc != s.c):
        out.append("follower with links")
    return out


class LeadershipMonitor:
    """Checks that leader and root bits never switch on along a run.

    With ``per_agent`` the bits are followed node by node.  Protocols that
    move states between nodes are checked through the per-color counts of
    leaders and roots instead, which may only shrink.
    """

    def __init__(self, project: Callable = lambda s: s, per_agent: bool = True) -> None:
        self.project = project
        self.per_agent = per_agent
        self.previous: Optional[list[tuple[int, int]]] = None
        self.previous_counts: Optional[Counter] = None
        self.violations: list[tuple[int, Optional[int], str]] = []

    def observe(self, step: int, states: Sequence) -> None:
        view = [self.project(s) for s in states]
        for i, s in enumerate(view):
            for problem in ordering_structure_violations(s):
                self.violations.append((step, i, problem))
        if self.per_agent:
            bits = [(int(s.l), int(s.r)) for s in view]
            if self.previous is not None:
                for i, ((l0, r0), (l1, r1)) in enumerate(zip(self.previous, bits)):
                    if l1 > l0:
                        self.violations.append((step, i, "leader bit set"))
                    if r1 > r0:
                        self.violations.append((step, i, "root bit set"))
            self.previous = bits
            return
        counts = Counter()
        for s in view:
            counts[("leader", s.c)] += int(s.l)
            counts[("root", s.c)] += int(s.r)
        if self.previous_counts is not None:
            for key, value in counts.items():
                if value > self.previous_counts[key]:
                    self.violations.append((step, None, f"{key[0]} count of color {key[1]} grew"))
        self.previous_counts = counts

    def __call__(self, step: int, edge, states: Sequence) -> None:
        self.observe(step, states)


# --------------------------------------------------------------------------
# Duel invariants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DuelViolation:
    prefix: tuple[int, ...]
    level: int
    agent: Optional[int]
    kind: str
    detail: str = ""


def _core_of(state) -> CoreState:
    if isinstance(state, CoreState):
        return state
    return state.core


def check_duel_invariants(states: Sequence) -> list[DuelViolation]:
    """Both per-group invariants of the level duels.

    For each level ``i`` and each realized ``i``-bit label prefix ``x``:
    the votes and masses of the group sum to the same value, and every
    agent's mass is within 1 of its vote.  Accepts core or coupled states.
    """
    cores = [_core_of(s) for s in states]
    if not cores:
        return []
    m = level_count_of(cores[0])
    out: list[DuelViolation] = []
    for i in range(m):
        sums: dict[tuple[int, ...], list[int]] = {}
        for a, s in enumerate(cores):
            x = s.l[:i]
            acc = sums.setdefault(x, [0, 0])
            acc[0] += s.c[i]
            acc[1] += s.s[i][0]
            if abs(s.s[i][0] - s.c[i]) > 1:
                out.append(DuelViolation(x, i, a, "mass_gap", f"w={s.s[i][0]} c={s.c[i]}"))
        for x, (votes, mass) in sums.items():
            if votes != mass:
                out.append(DuelViolation(x, i, None, "conservation", f"sum c={votes} sum w={mass}"))
    return out


# --------------------------------------------------------------------------
# Reachability
# --------------------------------------------------------------------------


@dataclass
class ReachabilityResult:
    """Closure of a start configuration under all single interactions.

    ``configs`` maps canonical bytes to state tuples; ``successors`` holds
    the edge relation (as canonical keys) when it was requested.
    """

    configs: dict[bytes, tuple]
    start: bytes
    complete: bool
    frontier_peak: int = 0
    successors: Optional[dict[bytes, set[bytes]]] = None

    @property
    def verdict(self) -> str:
        return "complete" if self.complete else "inconclusive"

    def __len__(self) -> int:
        return len(self.configs)

    def __contains__(self, key: bytes) -> bool:
        return key in self.configs


def reachable_set(
    protocol: Protocol,
    instance: Instance,
    start: Optional[Configuration] = None,
    cap: int = DEFAULT_CAP,
    *,
    keep_edges: bool = False,
    frontier: str = "bfs",
    strict: bool = False,
) -> ReachabilityResult:
    """Breadth-first (or depth-first) closure over directed-edge applications.

    Stops once ``cap`` configurations are known; the result is then marked
    inconclusive, or :class:`CapExceeded` is raised when ``strict``.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    config = start if start is not None else protocol.initial_configuration(instance)
    directed = instance.graph.directed_edges
    memo: dict = {}

    def step(a, b):
        out = memo.get((a, b))
        if out is None:
            out = memo[(a, b)] = protocol.transition(a, b)
        return out

    def key(states: tuple) -> bytes:
        return encode_states(protocol, states)

    k0 = key(config.states)
    configs = {k0: config.states}
    successors: Optional[dict[bytes, set[bytes]]] = {} if keep_edges else None
    todo = deque([k0])
    peak = 1
    complete = True
    while todo:
        cur = todo.popleft() if frontier == "bfs" else todo.pop()
        states = configs[cur]
        out = set()
        for u, v in directed:
            a, b = step(states[u], states[v])
            if a == states[u] and b == states[v]:
                nk = cur
            else:
                nxt = list(states)
                nxt[u] = a
                nxt[v] = b
                nxt_t = tuple(nxt)
                nk = key(nxt_t)
                if nk not in configs:
                    if len(configs) >= cap:
                        complete = False
                        continue
                    configs[nk] = nxt_t
                    todo.append(nk)
            out.add(nk)
        if successors is not None:
            successors[cur] = out
        peak = max(peak, len(todo))
        if not complete:
            break
    result = ReachabilityResult(configs, k0, complete, peak, successors)
    if not complete and strict:
        raise CapExceeded(f"closure exceeded {cap} configurations", result)
    return result


class Inconclusive(RuntimeError):
    pass


@dataclass
class Certificate:
    verdict: bool
    reachable: int
    locked: int
    bad: int
    stuck: list[tuple] = field(default_factory=list)


def stabilization_certificate(
    protocol: Protocol,
    instance: Instance,
    correct_outputs: Callable[[tuple], bool],
    cap: int = DEFAULT_CAP,
) -> Certificate:
    """Decide whether every globally fair execution ends up always correct.

    A configuration is locked when every configuration reachable from it
    satisfies ``correct_outputs``.  The verdict is true iff a locked
    configuration is reachable from every reachable configuration.
    """
    closure = reachable_set(protocol, instance, cap=cap, keep_edges=True)
    if not closure.complete:
        raise Inconclusive(f"closure capped at {cap} configurations")
    succ = closure.successors
    pred: dict[bytes, list[bytes]] = {c: [] for c in succ}
    for c, outs in succ.items():
        for d in outs:
            pred[d].append(c)

    bad = {c for c, states in closure.configs.items() if not correct_outputs(states)}
    can_fail = _backward_closure(bad, pred)
    locked = set(succ) - can_fail
    reaches_locked = _backward_closure(locked, pred)
    stuck = [closure.configs[c] for c in succ if c not in reaches_locked]
    return Certificate(
        verdict=not stuck,
        reachable=len(succ),
        locked=len(locked),
        bad=len(bad),
        stuck=stuck[:10],
    )


def _backward_closure(seeds: set[bytes], pred: Mapping[bytes, list[bytes]]) -> set[bytes]:
    seen = set(seeds)
    todo = deque(seeds)
    while todo:
        c = todo.popleft()
        for p in pred[c]:
            if p not in seen:
                seen.add(p)
                todo.append(p)
    return seen


def common_reachable(
    protocol: Protocol,
    first: Instance,
    second: Instance,
    cap: int = DEFAULT_CAP,
) -> Optional[Configuration]:
    """A configuration reachable from both instances' initial configurations.

    Identical initial configurations are their own witness; otherwise the
    witness with the smallest canonical encoding is returned, or ``None``
    when the two closures are disjoint.  Raises :class:`CapExceeded` if
    either closure hits ``cap``.
    """
    if first.n != second.n:
        raise ValueError("instances must have the same number of agents")
    a = reachable_set(protocol, first, cap=cap, strict=True)
    b = reachable_set(protocol, second, cap=cap, strict=True)
    start = protocol.initial_configuration(first)
    if start.to_bytes(protocol) in b.configs:
        return start
    shared = a.configs.keys() & b.configs.keys()
    if not shared:
        return None
    witness = min(shared)
    return Configuration(a.configs[witness], 0)


# --------------------------------------------------------------------------
# State budgets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StateBudget:
    kind: str
    k: int
    count: int
    budget: int

    @property
    def within(self) -> bool:
        return self.count <= self.budget


CELL_STATES = 11


def coupled_state_count(k: int) -> int:
    """Ordering fields, label, per-level (vote, mass) cell and answer color.

    The per-level cell ranges over the 11 legal ``(c, w, o, tie)`` tuples:
    a vote in {-1, 0, +1}, a mass in {c, c - sign(c)}, an output bit that
    must equal the sign of a nonzero mass, and a tie flag that may only be
    raised on an empty entry with output -1.
    """
    m = levels(k)
    return ordering_state_count(k) * (1 << m) * CELL_STATES**m * k


def state_space_size(kind: str, k: int) -> StateBudget:
    if k < 1:
        raise ValueError("k must be at least 1")
    if kind == "ordering":
        return StateBudget(kind, k, ordering_state_count(k), 8 * k**4)
    if kind in ("coupled", "clique", "general"):
        return StateBudget("coupled", k, coupled_state_count(k), 8 * k**11)
    raise ValueError(f"unknown protocol kind {kind!r}")


# --------------------------------------------------------------------------
# Under-provisioned toy protocol
# --------------------------------------------------------------------------


class CopyBit(Protocol):
    """Two colors, one bit per agent: the responder copies the initiator.

    With this little memory, configurations reachable from censuses with
    opposite majorities overlap (e.g. everybody holding the same bit), so no
    output function over these states can decide the majority.
    """

    name = "copybit"

    def __init__(self, k: int = 2) -> None:
        if k != 2:
            raise ValueError("the copy-bit toy needs k = 2")
        super().__init__(2)

    def initial_state(self, color: int) -> int:
        return color

    def transition(self, a: int, b: int) -> tuple[int, int]:
        return a, a

    def output(self, state: int) -> int:
        return state

    def unflatten(self, values: Sequence[int]) -> int:
        return int(values[0])

"""Execution substrate for population protocols.

Agents sit on the nodes of a connected undirected graph. Each step the
scheduler picks a directed edge ``(u, v)`` and the protocol's transition
function maps the ordered pair ``(state_u, state_v)`` to new states.

Runs are deterministic given ``(protocol, instance, scheduler, stop)``.
Seeded schedulers draw from numpy's PCG64 bit generator (see
:data:`RNG_ALGORITHM`), so traces can be reproduced anywhere numpy runs.
"""

from __future__ import annotations

import math
import struct
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

RNG_ALGORITHM = "PCG64"
_RNG_BLOCK = 4096
DEFAULT_MAX_STEPS = 10_000_000

State = Any
Edge = tuple[int, int]


class EngineError(Exception):
    pass


class GraphError(EngineError):
    pass


class IdOutOfRange(EngineError):
    pass


class NonAdjacentEdge(EngineError):
    pass


class SameAgent(EngineError):
    pass


class InvalidInstance(EngineError):
    pass


# --------------------------------------------------------------------------
# Graphs and instances
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionGraph:
    """Undirected simple connected graph on agents ``0..n-1``."""

    n: int
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise GraphError(f"graph needs at least one agent, got n={self.n}")
        normalized = []
        for u, v in self.edges:
            if u == v:
                raise GraphError(f"self-loop at {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={self.n}")
            normalized.append((min(u, v), max(u, v)))
        if len(set(normalized)) != len(normalized):
            raise GraphError("duplicate edges")
        object.__setattr__(self, "edges", tuple(sorted(normalized)))
        adjacency: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adjacency[u].append(v)
            adjacency[v].append(u)
        object.__setattr__(self, "_adjacency", tuple(tuple(sorted(a)) for a in adjacency))
        object.__setattr__(
            self,
            "_directed",
            tuple(sorted([(u, v) for u, v in self.edges] + [(v, u) for u, v in self.edges])),
        )
        object.__setattr__(self, "_edge_set", frozenset(self._directed))
        if not _connected(self.n, self._adjacency):
            raise GraphError("graph is not connected")

    @property
    def directed_edges(self) -> tuple[Edge, ...]:
        """Both orientations of every edge, in lexicographic order."""
        return self._directed

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self._adjacency[u]

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._edge_set

    @property
    def is_complete(self) -> bool:
        return len(self.edges) == self.n * (self.n - 1) // 2

    @classmethod
    def complete(cls, n: int) -> "InteractionGraph":
        return cls(n, tuple((u, v) for u in range(n) for v in range(u + 1, n)))

    @classmethod
    def path(cls, n: int) -> "InteractionGraph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def cycle(cls, n: int) -> "InteractionGraph":
        if n < 3:
            return cls.path(n)
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def erdos_renyi(cls, n: int, p: float, seed: int, max_tries: int = 10_000) -> "InteractionGraph":
        """G(n, p) conditioned on connectivity, by rejection sampling."""
        rng = np.random.Generator(np.random.PCG64(seed))
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        for _ in range(max_tries):
            keep = rng.random(len(pairs)) < p
            edges = tuple(e for e, k in zip(pairs, keep) if k)
            try:
                return cls(n, edges)
            except GraphError:
                continue
        raise GraphError(f"no connected G({n}, {p}) sample in {max_tries} tries")


def _connected(n: int, adjacency: Sequence[Sequence[int]]) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


@dataclass(frozen=True)
class Instance:
    graph: InteractionGraph
    colors: tuple[int, ...]
    k: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "colors", tuple(self.colors))
        if self.k < 1:
            raise InvalidInstance("k must be at least 1")
        if len(self.colors) != self.graph.n:
            raise InvalidInstance(
                f"{len(self.colors)} colors given for {self.graph.n} agents"
            )
        for c in self.colors:
            if not 0 <= c < self.k:
                raise InvalidInstance(f"color {c} outside 0..{self.k - 1}")

    @property
    def n(self) -> int:
        return self.graph.n

    @classmethod
    def complete(cls, colors: Sequence[int], k: int) -> "Instance":
        return cls(InteractionGraph.complete(len(colors)), tuple(colors), k)


# --------------------------------------------------------------------------
# Protocols and configurations
# --------------------------------------------------------------------------


def _flatten(value: Any, out: list[int]) -> None:
    if isinstance(value, tuple):
        for item in value:
            _flatten(item, out)
    else:
        out.append(int(value))


class Protocol:
    """A population protocol: initial states, transition, output.

    Subclasses implement :meth:`initial_state`, :meth:`transition`,
    :meth:`output` and :meth:`unflatten`.  States must be hashable, immutable
    and built from (nested) tuples of small integers, which is what the
    canonical serialization relies on.
    """

    name = "protocol"

    def __init__(self, k: int) -> None:
        self.k = k

    def initial_state(self, color: int) -> State:
        raise NotImplementedError

    def transition(self, a: State, b: State) -> tuple[State, State]:
        raise NotImplementedError

    def output(self, state: State) -> Any:
        raise NotImplementedError

    def unflatten(self, values: Sequence[int]) -> State:
        raise NotImplementedError

    def flatten(self, state: State) -> tuple[int, ...]:
        out: list[int] = []
        _flatten(state, out)
        return tuple(out)

    @property
    def state_width(self) -> int:
        return len(self.flatten(self.initial_state(0)))

    def accepts(self, graph: InteractionGraph) -> bool:
        return True

    def initial_configuration(self, instance: Instance) -> "Configuration":
        return Configuration(tuple(self.initial_state(c) for c in instance.colors), 0)


@dataclass(frozen=True)
class Configuration:
    states: tuple
    step: int = 0

    def __len__(self) -> int:
        return len(self.states)

    def to_bytes(self, protocol: Protocol) -> bytes:
        """Canonical encoding of the states (fields in declaration order).

        The step counter is metadata and is not part of the encoding, so two
        configurations compare equal as bytes iff their states agree.
        """
        return encode_states(protocol, self.states)

    def hex(self, protocol: Protocol) -> str:
        return self.to_bytes(protocol).hex()

    @classmethod
    def from_bytes(cls, data: bytes, protocol: Protocol, step: int = 0) -> "Configuration":
        return cls(decode_states(protocol, data), step)


def encode_states(protocol: Protocol, states: Iterable[State]) -> bytes:
    values: list[int] = []
    for s in states:
        values.extend(protocol.flatten(s))
    return struct.pack(f">{len(values)}h", *values)


def decode_states(protocol: Protocol, data: bytes) -> tuple:
    width = protocol.state_width
    count = len(data) // 2
    if count % width:
        raise ValueError(f"{count} values is not a multiple of state width {width}")
    values = struct.unpack(f">{count}h", data)
    return tuple(protocol.unflatten(values[i : i + width]) for i in range(0, count, width))


def apply_interaction(
    config: Configuration, edge: Edge, protocol: Protocol, graph: InteractionGraph
) -> Configuration:
    """Apply one directed interaction, returning a new configuration."""
    u, v = edge
    n = len(config.states)
    if not (0 <= u < n and 0 <= v < n):
        raise IdOutOfRange(f"edge ({u}, {v}) on {n} agents")
    if not graph.has_edge(u, v):
        raise NonAdjacentEdge(f"({u}, {v}) is not an edge")
    a, b = protocol.transition(config.states[u], config.states[v])
    states = list(config.states)
    states[u] = a
    states[v] = b
    return Configuration(tuple(states), config.step + 1)


# --------------------------------------------------------------------------
# Schedulers
# --------------------------------------------------------------------------


class Scheduler:
    kind = "scheduler"

    def stream(self, graph: InteractionGraph) -> Iterator[int]:
        """Yield indices into ``graph.directed_edges``."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class UniformRandom(Scheduler):
    """Every directed edge with probability 1/|E| each step."""

    seed: int
    kind = "uniform_random"

    def stream(self, graph: InteractionGraph) -> Iterator[int]:
        count = len(graph.directed_edges)
        if count == 0:
            return
        rng = np.random.Generator(np.random.PCG64(self.seed))
        while True:
            yield from rng.integers(0, count, size=_RNG_BLOCK).tolist()

    def describe(self) -> dict:
        return {"kind": self.kind, "seed": self.seed}


@dataclass(frozen=True)
class RoundRobin(Scheduler):
    """Cycles through the directed edges in lexicographic order."""

    kind = "round_robin"

    def stream(self, graph: InteractionGraph) -> Iterator[int]:
        count = len(graph.directed_edges)
        if count == 0:
            return
        while True:
            yield from range(count)


@dataclass(frozen=True)
class Scripted(Scheduler):
    """Replays a fixed edge sequence once, or forever when ``cycle`` is set."""

    sequence: tuple[Edge, ...]
    cycle: bool = False
    kind = "scripted"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sequence", tuple(tuple(e) for e in self.sequence))

    def stream(self, graph: InteractionGraph) -> Iterator[int]:
        index = {e: i for i, e in enumerate(graph.directed_edges)}
        try:
            script = [index[e] for e in self.sequence]
        except KeyError as exc:
            raise NonAdjacentEdge(f"scripted edge {exc.args[0]} is not in the graph") from None
        if not script:
            return
        yield from script
        while self.cycle:
            yield from script

    def describe(self) -> dict:
        return {"kind": self.kind, "script": [list(e) for e in self.sequence], "cycle": self.cycle}


# --------------------------------------------------------------------------
# Stop conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxSteps:
    n: int


@dataclass(frozen=True)
class QuiescenceWindow:
    """Stop once ``window`` consecutive steps changed nothing."""

    window: int
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass(frozen=True)
class PredicateWindow:
    """Stop once ``predicate`` has held continuously for a window.

    ``window`` is either a step count or a function of the step at which the
    predicate started holding (e.g. ``lambda t: 10 * t``).  The predicate is
    called on the list of agent states.
    """

    predicate: Callable[[Sequence[State]], bool]
    window: Union[int, Callable[[int], int]]
    max_steps: int = DEFAULT_MAX_STEPS

    def window_for(self, since: int) -> int:
        return self.window(since) if callable(self.window) else self.window


StopCondition = Union[MaxSteps, QuiescenceWindow, PredicateWindow]


# --------------------------------------------------------------------------
# Traces and the run loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    step: int
    edge: Edge
    changed: bool


@dataclass
class Trace:
    directed_edges: tuple[Edge, ...]
    edge_index: array
    changed: bytearray
    snapshots: list[Configuration]
    final: Configuration
    convergence_step: Optional[int] = None
    step_cap_exceeded: bool = False
    stop_reason: str = ""
    last_change_step: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.edge_index)

    @property
    def converged(self) -> bool:
        return self.convergence_step is not None

    def edge_at(self, step: int) -> Edge:
        """Directed edge activated at ``step`` (1-based)."""
        return self.directed_edges[self.edge_index[step - 1]]

    def records(self) -> Iterator[TraceRecord]:
        edges = self.directed_edges
        for i, (e, c) in enumerate(zip(self.edge_index, self.changed)):
            yield TraceRecord(i + 1, edges[e], bool(c))

    def change_count(self) -> int:
        return sum(self.changed)


def default_snapshot_every(n: int) -> int:
    return max(1, math.ceil(n * math.log(n + 1)))


class _Interner:
    """Maps states to dense ids and memoizes the transition on id pairs."""

    def __init__(self, protocol: Protocol) -> None:
        self.transition = protocol.transition
        self.ids: dict = {}
        self.table: list = []
        self.memo: dict = {}

    def intern(self, state: State) -> int:
        i = self.ids.get(state)
        if i is None:
            i = len(self.table)
            self.ids[state] = i
            self.table.append(state)
        return i

    def step(self, i: int, j: int) -> tuple[int, int]:
        key = (i, j)
        out = self.memo.get(key)
        if out is None:
            a, b = self.transition(self.table[i], self.table[j])
            out = (self.intern(a), self.intern(b))
            self.memo[key] = out
        return out


_interners: dict[int, tuple[Protocol, _Interner]] = {}


def _interner_for(protocol: Protocol) -> _Interner:
    # Shared across runs of the same protocol object; safe because
    # transitions are pure.
    entry = _interners.get(id(protocol))
    if entry is None or entry[0] is not protocol:
        if len(_interners) > 64:
            _interners.clear()
        entry = (protocol, _Interner(protocol))
        _interners[id(protocol)] = entry
    return entry[1]


Observer = Callable[[int, Optional[Edge], Sequence[State]], None]


def run(
    protocol: Protocol,
    instance: Instance,
    scheduler: Scheduler,
    stop: StopCondition,
    *,
    start: Optional[Configuration] = None,
    snapshot_every: Optional[int] = None,
    log_states: bool = False,
    observer: Optional[Observer] = None,
) -> Trace:
    """Run ``protocol`` on ``instance`` until ``stop`` triggers.

    ``observer(step, edge, states)`` is called on the initial configuration
    (with ``edge=None``) and after every step that changed some state; the
    ``states`` list is live and must not be mutated.  With ``log_states``
    every configuration is kept as a snapshot.
    """
    graph = instance.graph
    directed = graph.directed_edges
    src = [u for u, _ in directed]
    dst = [v for _, v in directed]
    config = start if start is not None else protocol.initial_configuration(instance)
    if len(config.states) != graph.n:
        raise InvalidInstance("start configuration does not match the graph size")

    interner = _interner_for(protocol)
    table = interner.table
    memo = interner.memo
    cfg = [interner.intern(s) for s in config.states]
    states = list(config.states)

    every = 1 if log_states else (snapshot_every or default_snapshot_every(graph.n))
    snapshots = [Configuration(tuple(states), 0)]
    edge_log = array("I")
    changed_log = bytearray()

    if isinstance(stop, MaxSteps):
        cap = stop.n
    else:
        cap = stop.max_steps
    predicate = stop.predicate if isinstance(stop, PredicateWindow) else None
    quiescence = stop.window if isinstance(stop, QuiescenceWindow) else None

    holds = False
    since = 0
    deadline = 0
    if predicate is not None:
        holds = bool(predicate(states))
        if holds:
            deadline = stop.window_for(0)
    if observer is not None:
        observer(0, None, states)

    step = 0
    last_change = 0
    convergence: Optional[int] = None
    reason = ""
    stream = scheduler.stream(graph)

    while True:
        if predicate is not None and holds and step >= deadline:
            convergence, reason = since, "predicate_window"
            break
        if quiescence is not None and step - last_change >= quiescence:
            convergence, reason = last_change, "quiescent"
            break
        if step >= cap:
            reason = "max_steps"
            break
        e = next(stream, None)
        if e is None:
            reason = "scheduler_exhausted"
            break
        step += 1
        u = src[e]
        v = dst[e]
        iu = cfg[u]
        iv = cfg[v]
        out = memo.get((iu, iv))
        if out is None:
            out = interner.step(iu, iv)
        ju, jv = out
        edge_log.append(e)
        if ju != iu or jv != iv:
            changed_log.append(1)
            last_change = step
            cfg[u] = ju
            cfg[v] = jv
            states[u] = table[ju]
            states[v] = table[jv]
            if observer is not None:
                observer(step, (u, v), states)
            if predicate is not None:
                now = bool(predicate(states))
                if now and not holds:
                    since = step
                    deadline = step + stop.window_for(step)
                holds = now
        else:
            changed_log.append(0)
        if step % every == 0:
            snapshots.append(Configuration(tuple(states), step))

    final = Configuration(tuple(states), step)
    if snapshots[-1].step != step:
        snapshots.append(final)
    capped = convergence is None and not isinstance(stop, MaxSteps)
    return Trace(
        directed_edges=directed,
        edge_index=edge_log,
        changed=changed_log,
        snapshots=snapshots,
        final=final,
        convergence_step=convergence,
        step_cap_exceeded=capped,
        stop_reason=reason,
        last_change_step=last_change,
        metadata={"protocol": protocol.name, "scheduler": scheduler.describe()},
    )


# --------------------------------------------------------------------------
# Path activations and fairness auditing
# --------------------------------------------------------------------------


def shortest_path(graph: InteractionGraph, u: int, v: int) -> list[int]:
    """Lexicographically smallest shortest path from ``u`` to ``v``."""
    for x in (u, v):
        if not 0 <= x < graph.n:
            raise IdOutOfRange(f"agent {x} on {graph.n} agents")
    if u == v:
        raise SameAgent(f"u = v = {u}")
    dist = {v: 0}
    queue = deque([v])
    while queue:
        x = queue.popleft()
        for y in graph.neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    path = [u]
    while path[-1] != v:
        here = path[-1]
        path.append(min(y for y in graph.neighbors(here) if dist.get(y) == dist[here] - 1))
    return path


def path_activation_sequence(graph: InteractionGraph, u: int, v: int) -> list[Edge]:
    """Edges of a shortest u-v path, in path order and then reversed."""
    nodes = shortest_path(graph, u, v)
    forward = list(zip(nodes, nodes[1:]))
    return forward + forward[::-1]


@dataclass
class FairnessReport:
    counts: dict[Edge, int]
    max_gap: dict[Edge, Optional[int]]
    absent: list[Edge]
    steps: int
    note: str = (
        "finite-window heuristic: infinite-often activation cannot be decided "
        "from a finite trace"
    )

    @property
    def all_present(self) -> bool:
        return not self.absent


def audit_fairness(trace: Trace, graph: InteractionGraph) -> FairnessReport:
    """Per-edge activation counts and longest gaps over a finite trace.

    A gap is measured from step 0 to the first activation and between
    consecutive activations.
    """
    directed = graph.directed_edges
    counts = {e: 0 for e in directed}
    last = {e: 0 for e in directed}
    gaps: dict[Edge, Optional[int]] = {e: None for e in directed}
    for record in trace.records():
        e = record.edge
        if e not in counts:
            raise NonAdjacentEdge(f"trace edge {e} is not in the graph")
        gap = record.step - last[e]
        if gaps[e] is None or gap > gaps[e]:
            gaps[e] = gap
        last[e] = record.step
        counts[e] += 1
    absent = [e for e in directed if counts[e] == 0]
    return FairnessReport(counts, gaps, absent, trace.steps)

"""Command line: run experiments, certify small instances, audit state counts.

Instance files are JSON objects::

    {"n": 6, "k": 3, "colors": [0, 1, 2, 2, 1, 2],
     "graph": {"type": "cycle"},
     "scheduler": {"kind": "uniform_random", "seed": 0},
     "stop": {"kind": "predicate_window", "window": 10, "max_steps": 1000000}}

Graph types are ``complete``, ``path``, ``cycle``, ``er`` (with ``p`` and
``seed``) and ``edges`` (with an ``edges`` list).  Scheduler kinds are
``uniform_random``, ``round_robin`` and ``scripted`` (with ``script`` and
optional ``cycle``).  Stop kinds are ``predicate_window`` (window as a
multiple of the convergence step), ``quiescence`` (window in steps) and
``max_steps``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import click

from .analysis import (
    DEFAULT_CAP,
    CapExceeded,
    Inconclusive,
    LeadershipMonitor,
    answers_agree_on_plurality,
    check_duel_invariants,
    check_ordering_snapshot,
    common_reachable,
    labels_form_bijection,
    majority_sign,
    stabilization_certificate,
    state_space_size,
)
from .core import FourStateMajority
from .coupled import CliqueProtocol, GeneralProtocol, is_stable
from .engine import (
    DEFAULT_MAX_STEPS,
    EngineError,
    Instance,
    InteractionGraph,
    MaxSteps,
    PredicateWindow,
    Protocol,
    QuiescenceWindow,
    RoundRobin,
    Scheduler,
    Scripted,
    Trace,
    UniformRandom,
    audit_fairness,
    run,
)
from .ordering import OrderingProtocol

PROTOCOLS = ("ordering", "clique", "general", "baseline4")
CHECKS = ("ordering_report", "duel_invariants", "fairness_audit", "oracle_compare")
DEFAULT_WINDOW = 10
# Below this size every changed step is checked for the duel invariants;
# larger runs are checked on snapshots only.
FULL_CHECK_N = 10


class SpecInvalid(ValueError):
    """An experiment description that cannot be run, with per-field reasons."""

    def __init__(self, problems: dict[str, str]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


@dataclass
class InstanceFile:
    instance: Instance
    scheduler: dict
    stop: dict


@dataclass
class ExperimentSpec:
    instance_path: Path
    protocol: str
    seeds: list[int]
    checks: list[str] = field(default_factory=list)
    out_dir: Optional[Path] = None
    max_steps: Optional[int] = None
    window: Optional[int] = None
    snapshots: Optional[int] = None


@dataclass
class RunSummary:
    seed: int
    converged_step: Optional[int]
    outputs: list
    violations: int
    failed_checks: list[str]

    def record(self) -> dict:
        return {
            "seed": self.seed,
            "converged_step": self.converged_step,
            "outputs": self.outputs,
            "violations": self.violations,
        }

    @property
    def ok(self) -> bool:
        return self.converged_step is not None and not self.failed_checks


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0..9"`` (inclusive) or a comma list of either."""
    seeds: list[int] = []
    try:
        for part in filter(None, (p.strip() for p in text.split(","))):
            if ".." in part:
                lo, hi = part.split("..", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise SpecInvalid({"seeds": f"cannot parse {text!r}"}) from None
    if not seeds:
        raise SpecInvalid({"seeds": "seed list is empty"})
    return seeds


def build_graph(n: int, conf: dict) -> InteractionGraph:
    kind = conf.get("type", "complete")
    if kind == "complete":
        return InteractionGraph.complete(n)
    if kind == "path":
        return InteractionGraph.path(n)
    if kind == "cycle":
        return InteractionGraph.cycle(n)
    if kind == "er":
        return InteractionGraph.erdos_renyi(n, float(conf.get("p", 0.5)), int(conf.get("seed", 0)))
    if kind == "edges":
        return InteractionGraph(n, tuple(tuple(e) for e in conf.get("edges", ())))
    raise SpecInvalid({"graph.type": f"unknown graph type {kind!r}"})


def parse_instance(data: dict) -> InstanceFile:
    problems = {}
    for key in ("n", "k", "colors"):
        if key not in data:
            problems[key] = "missing"
    if problems:
        raise SpecInvalid(problems)
    n, k, colors = int(data["n"]), int(data["k"]), [int(c) for c in data["colors"]]
    if len(colors) != n:
        raise SpecInvalid({"colors": f"{len(colors)} colors for n = {n}"})
    try:
        graph = build_graph(n, data.get("graph", {}))
        instance = Instance(graph, tuple(colors), k)
    except EngineError as exc:
        raise SpecInvalid({"instance": str(exc)}) from None
    return InstanceFile(instance, dict(data.get("scheduler", {})), dict(data.get("stop", {})))


def load_instance(path: Path) -> InstanceFile:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecInvalid({"instance": f"{path}: {exc}"}) from None
    return parse_instance(data)


def make_protocol(name: str, k: int) -> Protocol:
    if name == "ordering":
        return OrderingProtocol(k)
    if name == "clique":
        return CliqueProtocol(k)
    if name == "general":
        return GeneralProtocol(k)
    if name == "baseline4":
        if k != 2:
            raise SpecInvalid({"k": "baseline4 takes k = 2 only"})
        return FourStateMajority(k)
    raise SpecInvalid({"protocol": f"unknown protocol {name!r}, expected one of {PROTOCOLS}"})


def make_scheduler(conf: dict, seed: int) -> Scheduler:
    kind = conf.get("kind", "uniform_random")
    if kind == "uniform_random":
        return UniformRandom(seed)
    if kind == "round_robin":
        return RoundRobin()
    if kind == "scripted":
        return Scripted(tuple(tuple(e) for e in conf.get("script", ())), bool(conf.get("cycle", False)))
    raise SpecInvalid({"scheduler.kind": f"unknown scheduler {kind!r}"})


# --------------------------------------------------------------------------
# Per-protocol predicates
# --------------------------------------------------------------------------


def converged_predicate(protocol: Protocol) -> Callable[[Sequence], bool]:
    """Protocol-internal agreement, without looking at the true answer."""
    if isinstance(protocol, OrderingProtocol):
        k = protocol.k
        return lambda states: check_ordering_snapshot(states, k).settled
    if isinstance(protocol, (CliqueProtocol, GeneralProtocol)):
        m = protocol.m

        def agreed(states: Sequence) -> bool:
            first = states[0].ans
            return all(s.ans == first and is_stable(s, m) for s in states)

        return agreed
    return lambda states: len({protocol.output(s) for s in states}) == 1


def correct_outputs(protocol: Protocol, colors: Sequence[int]) -> Callable[[tuple], bool]:
    """Oracle: whether a configuration's outputs are the right answer."""
    if isinstance(protocol, OrderingProtocol):
        return labels_form_bijection
    if isinstance(protocol, (CliqueProtocol, GeneralProtocol)):
        return lambda states: answers_agree_on_plurality([s.ans for s in states], colors)
    if isinstance(protocol, FourStateMajority):
        want = majority_sign(colors)
        return lambda states: all(protocol.output(s) == want for s in states)
    raise SpecInvalid({"protocol": f"no oracle for {protocol.name}"})


def _ordering_view(protocol: Protocol) -> Optional[Callable]:
    if isinstance(protocol, OrderingProtocol):
        return lambda s: s
    if isinstance(protocol, (CliqueProtocol, GeneralProtocol)):
        return lambda s: s.ordering
    return None


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------


def validate(spec: ExperimentSpec, loaded: InstanceFile) -> Protocol:
    problems = {}
    if not spec.seeds:
        problems["seeds"] = "seed list is empty"
    unknown = [c for c in spec.checks if c not in CHECKS]
    if unknown:
        problems["checks"] = f"unknown checks {unknown}, expected a subset of {CHECKS}"
    if spec.protocol not in PROTOCOLS:
        problems["protocol"] = f"unknown protocol {spec.protocol!r}, expected one of {PROTOCOLS}"
    if problems:
        raise SpecInvalid(problems)
    protocol = make_protocol(spec.protocol, loaded.instance.k)
    graph = loaded.instance.graph
    if not protocol.accepts(graph):
        problems["protocol"] = f"{spec.protocol} needs a complete interaction graph"
    if "duel_invariants" in spec.checks and spec.protocol not in ("clique", "general"):
        problems["checks"] = "duel_invariants applies to the clique and general protocols only"
    if "ordering_report" in spec.checks and _ordering_view(protocol) is None:
        problems["checks"] = f"ordering_report does not apply to {spec.protocol}"
    if spec.protocol == "baseline4" and set(loaded.instance.colors) - {0, 1}:
        problems["colors"] = "baseline4 takes colors 0 and 1 only"
    if problems:
        raise SpecInvalid(problems)
    return protocol


def _stop_for(spec: ExperimentSpec, loaded: InstanceFile, protocol: Protocol):
    conf = loaded.stop
    kind = conf.get("kind", "predicate_window")
    max_steps = spec.max_steps or int(conf.get("max_steps", DEFAULT_MAX_STEPS))
    if kind == "max_steps":
        return MaxSteps(max_steps)
    if kind == "quiescence":
        return QuiescenceWindow(spec.window or int(conf.get("window", 1000)), max_steps)
    if kind == "predicate_window":
        factor = spec.window or int(conf.get("window", DEFAULT_WINDOW))
        return PredicateWindow(converged_predicate(protocol), lambda t: factor * t, max_steps)
    raise SpecInvalid({"stop.kind": f"unknown stop condition {kind!r}"})


def run_one(
    protocol: Protocol, loaded: InstanceFile, spec: ExperimentSpec, seed: int
) -> tuple[RunSummary, Trace]:
    instance = loaded.instance
    checks = set(spec.checks)
    per_step = "duel_invariants" in checks and instance.n <= FULL_CHECK_N
    duel_count = 0

    def observer(step, edge, states):
        nonlocal duel_count
        duel_count += len(check_duel_invariants(states))

    trace = run(
        protocol,
        instance,
        make_scheduler(loaded.scheduler, seed),
        _stop_for(spec, loaded, protocol),
        snapshot_every=spec.snapshots,
        observer=observer if per_step else None,
    )
    states = trace.final.states
    failed = []
    violations = 0

    if "duel_invariants" in checks:
        if not per_step:
            duel_count = sum(len(check_duel_invariants(c.states)) for c in trace.snapshots)
        violations += duel_count
        if duel_count:
            failed.append("duel_invariants")
    if "ordering_report" in checks:
        view = _ordering_view(protocol)
        monitor = LeadershipMonitor(view, per_agent=not isinstance(protocol, GeneralProtocol))
        for snap in trace.snapshots:
            monitor.observe(snap.step, snap.states)
        report = check_ordering_snapshot([view(s) for s in states], instance.k)
        bad = len(monitor.violations) + len(report.problems)
        violations += bad
        if bad or not report.settled:
            failed.append("ordering_report")
    if "fairness_audit" in checks:
        absent = audit_fairness(trace, instance.graph).absent
        violations += len(absent)
        if absent:
            failed.append("fairness_audit")
    if "oracle_compare" in checks:
        if not correct_outputs(protocol, instance.colors)(tuple(states)):
            violations += 1
            failed.append("oracle_compare")

    summary = RunSummary(
        seed=seed,
        converged_step=trace.convergence_step,
        outputs=[_jsonable(protocol.output(s)) for s in states],
        violations=violations,
        failed_checks=failed,
    )
    return summary, trace


def _jsonable(value):
    return value if isinstance(value, (int, bool)) else str(value)


def write_trace(path: Path, trace: Trace, protocol: Protocol) -> None:
    """Interaction records in step order with snapshot lines interleaved."""
    snaps = iter(trace.snapshots)
    pending = next(snaps, None)
    with open(path, "w") as fh:
        for record in trace.records():
            while pending is not None and pending.step < record.step:
                fh.write(json.dumps({"step": pending.step, "config": pending.hex(protocol)}) + "\n")
                pending = next(snaps, None)
            line = {"step": record.step, "edge": list(record.edge), "changed": record.changed}
            fh.write(json.dumps(line) + "\n")
        while pending is not None:
            fh.write(json.dumps({"step": pending.step, "config": pending.hex(protocol)}) + "\n")
            pending = next(snaps, None)


def execute_experiment(spec: ExperimentSpec) -> list[RunSummary]:
    loaded = load_instance(spec.instance_path)
    protocol = validate(spec, loaded)
    if spec.out_dir is not None:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for seed in spec.seeds:
        summary, trace = run_one(protocol, loaded, spec, seed)
        if spec.out_dir is not None:
            write_trace(spec.out_dir / f"trace-{seed}.jsonl", trace, protocol)
        summaries.append(summary)
    if spec.out_dir is not None:
        with open(spec.out_dir / "summary.jsonl", "w") as fh:
            for s in summaries:
                fh.write(json.dumps(s.record()) + "\n")
    return summaries


# --------------------------------------------------------------------------
# Click commands
# --------------------------------------------------------------------------


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


@click.group()
def main() -> None:
    """Population protocols for plurality consensus."""


@main.command("run")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--protocol", required=True)
@click.option("--seeds", default="0", show_default=True, help="e.g. 0..9 or 1,4,7")
@click.option("--max-steps", type=int, default=None)
@click.option("--window", type=int, default=None, help="stability window factor")
@click.option("--snapshots", type=int, default=None, help="snapshot every S steps")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@click.option("--checks", default="", help="comma list of " + ",".join(CHECKS))
def run_cmd(instance_path, protocol, seeds, max_steps, window, snapshots, out_dir, checks):
    """Run one simulation per seed and print a summary line for each."""
    try:
        spec = ExperimentSpec(
            instance_path=instance_path,
            protocol=protocol,
            seeds=parse_seeds(seeds),
            checks=[c for c in (x.strip() for x in checks.split(",")) if c],
            out_dir=out_dir,
            max_steps=max_steps,
            window=window,
            snapshots=snapshots,
        )
        summaries = execute_experiment(spec)
    except (SpecInvalid, EngineError, OSError) as exc:
        _fail(exc)
    for s in summaries:
        click.echo(json.dumps(s.record()))
    sys.exit(0 if all(s.ok for s in summaries) else 1)


@main.command("certify")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--protocol", required=True)
@click.option("--against", type=click.Path(exists=True, path_type=Path), default=None,
              help="second instance: search for a configuration reachable from both")
@click.option("--cap", type=int, default=DEFAULT_CAP, show_default=True)
def certify_cmd(instance_path, protocol, against, cap):
    """Exhaustive stabilization certificate, or a common-reachability search."""
    try:
        first = load_instance(instance_path)
        proto = make_protocol(protocol, first.instance.k)
        if against is not None:
            second = load_instance(against)
            witness = common_reachable(proto, first.instance, second.instance, cap)
            record = {"query": "common_reachable", "witness": None if witness is None else witness.hex(proto)}
            click.echo(json.dumps(record))
            sys.exit(0)
        cert = stabilization_certificate(
            proto, first.instance, correct_outputs(proto, first.instance.colors), cap
        )
    except (Inconclusive, CapExceeded) as exc:
        click.echo(json.dumps({"verdict": "inconclusive", "detail": str(exc)}))
        sys.exit(1)
    except (SpecInvalid, EngineError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps({
        "query": "stabilization_certificate",
        "verdict": cert.verdict,
        "reachable": cert.reachable,
        "locked": cert.locked,
        "stuck": len(cert.stuck),
    }))
    sys.exit(0 if cert.verdict else 1)


@main.command("audit-states")
@click.option("--protocol", "kind", required=True, type=click.Choice(["ordering", "coupled", "clique", "general"]))
@click.option("--k", "k_range", default="2..8", show_default=True)
def audit_states_cmd(kind, k_range):
    """Encodable state counts against their budgets."""
    try:
        ks = parse_seeds(k_range)
    except SpecInvalid as exc:
        _fail(exc)
    ok = True
    for k in ks:
        b = state_space_size(kind, k)
        ok &= b.within
        click.echo(json.dumps({"kind": b.kind, "k": k, "count": b.count, "budget": b.budget, "within": b.within}))
    sys.exit(0 if ok else 1)


@main.command("fairness")
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--protocol", default="ordering", show_default=True)
@click.option("--seeds", default="0", show_default=True)
@click.option("--max-steps", type=int, default=10_000, show_default=True)
def fairness_cmd(instance_path, protocol, seeds, max_steps):
    """Activation counts and longest gaps per directed edge."""
    try:
        loaded = load_instance(instance_path)
        proto = make_protocol(protocol, loaded.instance.k)
        seed_list = parse_seeds(seeds)
        ok = True
        for seed in seed_list:
            trace = run(proto, loaded.instance, make_scheduler(loaded.scheduler, seed), MaxSteps(max_steps))
            report = audit_fairness(trace, loaded.instance.graph)
            ok &= report.all_present
            gaps = [g for g in report.max_gap.values() if g is not None]
            click.echo(json.dumps({
                "seed": seed,
                "steps": report.steps,
                "absent": [list(e) for e in report.absent],
                "max_gap": max(gaps) if gaps else None,
                "min_count": min(report.counts.values()) if report.counts else 0,
            }))
    except (SpecInvalid, EngineError, OSError) as exc:
        _fail(exc)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()

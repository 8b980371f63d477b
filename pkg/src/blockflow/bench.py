"""Latency benchmark harness: repeated oracle-checked runs, central trimmed
mean, CSV export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import random
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .builtin import BUILTIN_MODELS
from .costalloc import Allocation, CostProfile, allocate_cores, annotate_costs, fold_allocation
from .errors import DeadlockedPlan, EmptyInput, OracleMismatch
from .model import BlockGraph, RandomSpec, SequentialSimulator, generate_random_model, parse_model, same_bits
from .nodeconfig import (
    EventAll,
    EventTimeSync,
    EventTrigger,
    NodeConfig,
    Pattern,
    TimerDriven,
    pattern_from_dict,
)
from .planner import ExecutionPlan, build_plan, check_deadlock_free, estimate_makespan
from .runtime import Bus, Node, run_node

log = logging.getLogger(__name__)

KEEP_FRACTION = 0.8
CSV_HEADER = [
    "scenario", "model", "cores", "virtual_cores", "pattern", "reps",
    "trimmed_mean_ns", "min_ns", "max_ns", "coalesced", "drops",
]


def trim_count(n: int, keep_fraction: float = KEEP_FRACTION) -> int:
    """Samples dropped from each end."""
    return math.floor(n * (1 - keep_fraction) / 2 + 1e-9)


def trimmed_mean(samples: Sequence[float], keep_fraction: float = KEEP_FRACTION) -> float:
    if not samples:
        raise EmptyInput("trimmed_mean of an empty sample")
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    xs = sorted(samples)
    k = trim_count(len(xs), keep_fraction)
    kept = xs[k: len(xs) - k]
    return math.fsum(kept) / len(kept)


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    id: str
    model: BlockGraph
    profile: CostProfile
    n_cores: int
    virtual_cores: int
    pattern: Pattern
    reps: int = 1000
    warmup: int = 50
    model_label: str = ""
    allocation: Allocation | None = None
    pinning: bool = True
    stimulus_period_ns: int | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be ≥ 1")
        if self.warmup < 0:
            raise ValueError("warmup must be ≥ 0")
        if self.virtual_cores < self.n_cores:
            raise ValueError("virtual_cores must be ≥ n_cores")
        if not self.model_label:
            self.model_label = self.model.name

    @classmethod
    def from_dict(cls, d: Mapping, base: Path = Path(".")) -> Scenario:
        model, label = load_model_source(d["model"], base)
        prof = d.get("profile", {})
        if isinstance(prof, str):
            profile = CostProfile.load(base / prof)
        else:
            profile = CostProfile.from_dict(prof)
        allocation = None
        if "allocation" in d:
            allocation = Allocation.from_json(json.dumps(d["allocation"]))
        return cls(
            id=str(d["id"]),
            model=model,
            profile=profile,
            n_cores=int(d.get("cores", 1)),
            virtual_cores=int(d.get("virtual_cores", d.get("cores", 1))),
            pattern=pattern_from_dict(d.get("pattern", {"event_all": {}})),
            reps=int(d.get("reps", 1000)),
            warmup=int(d.get("warmup", 50)),
            model_label=label,
            allocation=allocation,
            pinning=bool(d.get("pinning", True)),
            stimulus_period_ns=d.get("stimulus_period_ns"),
        )


def load_model_source(src, base: Path = Path(".")) -> tuple[BlockGraph, str]:
    """Resolve ``{"file": ...}``, ``{"random": {...}}`` or ``{"builtin": name}``."""
    if isinstance(src, str):
        src = {"file": src}
    if "file" in src:
        path = base / src["file"]
        return parse_model(path.read_text()), path.name
    if "random" in src:
        r = dict(src["random"])
        if "compute_weight_range" in r:
            r["compute_weight_range"] = tuple(r["compute_weight_range"])
        spec = RandomSpec(**r)
        return generate_random_model(spec), f"random(n={spec.n_blocks},seed={spec.seed})"
    if "builtin" in src:
        name = src["builtin"]
        return BUILTIN_MODELS[name](**src.get("args", {})), name
    raise ValueError(f"unrecognised model source {src!r}")


def load_grid(path) -> list[Scenario]:
    path = Path(path)
    raw = json.loads(path.read_text())
    items = raw["scenarios"] if isinstance(raw, dict) else raw
    return [Scenario.from_dict(d, path.parent) for d in items]


def plan_for(model: BlockGraph, profile: CostProfile, n_cores: int, virtual_cores: int,
             allocation: Allocation | None = None) -> ExecutionPlan:
    if allocation is None:
        costs = annotate_costs(model, profile)
        allocation = allocate_cores(model, costs, profile, virtual_cores)
        if virtual_cores > n_cores:
            allocation = fold_allocation(allocation, n_cores, profile.max_workers_per_core)
    plan = build_plan(model, allocation)
    verdict = check_deadlock_free(plan)
    if not verdict.ok:
        raise DeadlockedPlan(verdict.stuck_at)
    return plan


# --------------------------------------------------------------------------
# driving a node


class OracleChecker:
    """Replays consumed snapshots through the sequential executor."""

    def __init__(self, g: BlockGraph):
        self.sim = SequentialSimulator(g)
        self.checked = 0

    def check(self, result) -> None:
        expected = self.sim.step(result.inputs)
        for o, v in expected.items():
            got = result.outputs.get(o)
            if got is None or not same_bits(got, v):
                raise OracleMismatch(
                    f"run {result.run_index}: outport {o} = {got!r}, sequential gives {v!r} "
                    f"(inputs {result.inputs})"
                )
        self.checked += 1


@dataclass
class Stimulus:
    """Closed-loop input feeder.

    Each stimulus publishes new input values so that exactly one run is
    triggered, then waits for that run before the next one is released no
    sooner than ``period_ns`` after the previous.
    """

    node: Node
    bus: Bus
    config: NodeConfig
    period_ns: int = 0
    seed: int = 0
    timeout_s: float = 30.0
    vary_timer_inputs: bool = False
    _rng: random.Random = field(init=False)

    def __post_init__(self):
        self._rng = random.Random(self.seed)
        self._pubs = {t: self.bus.publisher(t) for t in sorted(self.config.input_topics)}
        self._count = 0
        self._stamp = 0

    def _value(self):
        return round(self._rng.uniform(-10.0, 10.0), 6)

    def fire(self) -> None:
        p = self.config.pattern
        topics = sorted(self._pubs)
        self._count += 1
        if isinstance(p, EventAll):
            topic = topics[(self._count - 1) % len(topics)]
            self._pubs[topic].publish([self._value()])
        elif isinstance(p, EventTrigger):
            for t in topics:
                if t != p.trigger_topic:
                    self._pubs[t].publish([self._value()])
            self._pubs[p.trigger_topic].publish([self._value()])
        elif isinstance(p, EventTimeSync):
            self._stamp = max(time.monotonic_ns(), self._stamp + 1)
            for t in topics:
                self._pubs[t].publish([self._value()], stamp_ns=self._stamp)
        else:  # timer: only latch; the node's timer decides when to run
            for t in topics:
                self._pubs[t].publish([self._value()])

    def drive(self, n_runs: int) -> None:
        """Produce ``n_runs`` further completed runs."""
        target = self.node.runs + n_runs
        if isinstance(self.config.pattern, TimerDriven):
            self.fire()
            self._wait_latched()
            while self.node.runs < target:
                if not self.node.wait_for_runs(self.node.runs + 1, self.timeout_s):
                    raise TimeoutError("timer node stopped producing runs")
                if self.vary_timer_inputs:
                    self.fire()
            return
        next_at = time.monotonic_ns()
        while self.node.runs < target:
            delay = next_at - time.monotonic_ns()
            if delay > 0:
                time.sleep(delay / 1e9)
            next_at = time.monotonic_ns() + self.period_ns
            want = self.node.runs + 1
            self.fire()
            if not self.node.wait_for_runs(want, self.timeout_s):
                raise TimeoutError(f"no run completed within {self.timeout_s} s of stimulus {self._count}")

    def _wait_latched(self, timeout=5.0):
        deadline = time.monotonic() + timeout
        while any(len(s) for s in self.node._subs) and time.monotonic() < deadline:
            time.sleep(0.0005)


# --------------------------------------------------------------------------
# benchmark


@dataclass
class BenchResult:
    scenario: str
    model: str
    cores: int
    virtual_cores: int
    pattern: str
    samples_ns: list[int]
    trimmed_mean_ns: float
    min_ns: int
    max_ns: int
    raw_mean_ns: float
    coalesced: int
    drops: int
    averaged: int
    estimated_makespan_ns: float = 0.0

    @property
    def reps(self) -> int:
        return len(self.samples_ns)

    def row(self) -> list[str]:
        return [
            self.scenario, self.model, str(self.cores), str(self.virtual_cores), self.pattern,
            str(self.reps), f"{self.trimmed_mean_ns:.1f}", str(self.min_ns), str(self.max_ns),
            str(self.coalesced), str(self.drops),
        ]


def _default_period_ns(pattern: Pattern, est_ns: float) -> int:
    return int(max(2 * est_ns, 1_000_000 if isinstance(pattern, TimerDriven) else 0))


def run_benchmark(s: Scenario) -> BenchResult:
    """Warm up, then collect ``s.reps`` oracle-checked trigger-to-publish latencies."""
    plan = plan_for(s.model, s.profile, s.n_cores, s.virtual_cores, s.allocation)
    costs = annotate_costs(s.model, s.profile)
    est_ns = estimate_makespan(plan, costs, s.profile) * s.profile.cycle_time_ns
    period = s.stimulus_period_ns
    if period is None:
        period = _default_period_ns(s.pattern, est_ns)
    pattern = s.pattern
    if isinstance(pattern, TimerDriven) and s.stimulus_period_ns is not None:
        pattern = TimerDriven(int(period))
    topics = [f"topic/{b}" for b in s.model.inports]
    if isinstance(pattern, EventTrigger) and pattern.trigger_topic not in topics:
        pattern = EventTrigger(topics[0])
    nc = NodeConfig.default_for(s.model, pattern)

    bus = Bus()
    node = run_node(bus, plan, nc, s.profile, pinning=s.pinning,
                    run_timeout_s=max(30.0, 100 * est_ns / 1e9))
    oracle = OracleChecker(s.model)
    try:
        stim = Stimulus(node, bus, nc, period_ns=0 if isinstance(pattern, TimerDriven) else period)
        stim.drive(s.warmup + s.reps)
    finally:
        stats = node.stop()
        bus.close()
    if node.errors:
        raise RuntimeError(f"scenario {s.id}: {node.errors[0]}")
    for r in node.results:
        oracle.check(r)
    measured = node.results[s.warmup: s.warmup + s.reps]
    samples = [r.latency_ns for r in measured]
    k = trim_count(len(samples))
    return BenchResult(
        scenario=s.id,
        model=s.model_label,
        cores=s.n_cores,
        virtual_cores=s.virtual_cores,
        pattern=s.pattern.name,
        samples_ns=samples,
        trimmed_mean_ns=trimmed_mean(samples),
        min_ns=min(samples),
        max_ns=max(samples),
        raw_mean_ns=sum(samples) / len(samples),
        coalesced=stats.coalesced_triggers,
        drops=stats.queue_drops,
        averaged=len(samples) - 2 * k,
        estimated_makespan_ns=est_ns,
    )


def render_csv(results: Iterable[BenchResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(results, key=lambda r: r.scenario):
        w.writerow(r.row())
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_results(results: Sequence[BenchResult], path) -> None:
    if not results:
        raise EmptyInput("no results to export")
    write_atomic(path, render_csv(results))

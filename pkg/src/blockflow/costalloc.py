"""Cycle-cost annotation and block-to-core allocation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import TooManyWorkers
from .model import BlockGraph, PORT_KINDS

MAX_WORKERS_PER_CORE = 32

Slot = tuple[int, int]  # (core, worker)


@dataclass(frozen=True)
class CostProfile:
    cycles_per_kind: Mapping[str, float] = field(default_factory=dict)
    cycles_per_weight_unit: float = 1.0
    comm_cycles_per_message: float = 0.0
    cycle_time_ns: float = 1.0
    max_workers_per_core: int = MAX_WORKERS_PER_CORE

    def __post_init__(self):
        if any(v < 0 for v in self.cycles_per_kind.values()):
            raise ValueError("cycles_per_kind entries must be ≥ 0")
        if self.cycles_per_weight_unit < 0 or self.comm_cycles_per_message < 0:
            raise ValueError("cycle counts must be ≥ 0")
        if self.cycle_time_ns <= 0:
            raise ValueError("cycle_time_ns must be > 0")

    @property
    def comm_ns(self) -> float:
        return self.comm_cycles_per_message * self.cycle_time_ns

    @classmethod
    def from_dict(cls, d: Mapping) -> CostProfile:
        return cls(
            cycles_per_kind=dict(d.get("cycles_per_kind", {})),
            cycles_per_weight_unit=float(d.get("cycles_per_weight_unit", 1.0)),
            comm_cycles_per_message=float(d.get("comm_cycles_per_message", 0.0)),
            cycle_time_ns=float(d.get("cycle_time_ns", 1.0)),
            max_workers_per_core=int(d.get("max_workers_per_core", MAX_WORKERS_PER_CORE)),
        )

    def to_dict(self) -> dict:
        return {
            "cycles_per_kind": dict(sorted(self.cycles_per_kind.items())),
            "cycles_per_weight_unit": self.cycles_per_weight_unit,
            "comm_cycles_per_message": self.comm_cycles_per_message,
            "cycle_time_ns": self.cycle_time_ns,
            "max_workers_per_core": self.max_workers_per_core,
        }

    @classmethod
    def load(cls, path) -> CostProfile:
        return cls.from_dict(json.loads(Path(path).read_text()))


def annotate_costs(g: BlockGraph, p: CostProfile) -> dict[str, float]:
    costs = {}
    for bid, b in g.blocks.items():
        if b.kind in PORT_KINDS:
            costs[bid] = 0
            continue
        c = p.cycles_per_kind.get(b.kind, 0)
        if b.kind == "Compute":
            c += b.value * p.cycles_per_weight_unit
        costs[bid] = c
    return costs


@dataclass
class Allocation:
    """Block placement onto (core, worker) slots."""

    assignment: dict[str, Slot]
    n_cores: int
    n_workers_per_core: dict[int, int]
    modeled_makespan: float | None = None

    def __post_init__(self):
        self.assignment = {b: tuple(s) for b, s in sorted(self.assignment.items())}

    @property
    def slots(self) -> list[Slot]:
        return [(c, w) for c in range(self.n_cores) for w in range(self.n_workers_per_core.get(c, 0))]

    def core_of(self, bid: str) -> int:
        return self.assignment[bid][0]

    def check(self, g: BlockGraph, cap: int = MAX_WORKERS_PER_CORE) -> list[str]:
        """Invariant violations as readable strings; empty when sound."""
        problems = []
        internal = set(g.internal)
        if set(self.assignment) != internal:
            missing = sorted(internal - set(self.assignment))
            extra = sorted(set(self.assignment) - internal)
            problems.append(f"assignment mismatch: missing={missing} extra={extra}")
        for bid, (c, w) in self.assignment.items():
            if not 0 <= c < self.n_cores:
                problems.append(f"{bid}: core {c} out of range")
            elif not 0 <= w < self.n_workers_per_core.get(c, 0):
                problems.append(f"{bid}: worker {w} not declared on core {c}")
        for c, n in self.n_workers_per_core.items():
            if n > cap:
                problems.append(f"core {c} hosts {n} workers (cap {cap})")
        return problems

    def to_json(self) -> str:
        rows = [f"  {json.dumps(b)}: [{c}, {w}]" for b, (c, w) in sorted(self.assignment.items())]
        return "{\n" + ",\n".join(rows) + "\n}\n"

    @classmethod
    def from_json(cls, text: str) -> Allocation:
        raw = json.loads(text)
        assignment = {b: (int(s[0]), int(s[1])) for b, s in raw.items()}
        n_cores = max((c for c, _ in assignment.values()), default=0) + 1
        per_core = {c: 1 for c in range(n_cores)}
        for c, w in assignment.values():
            per_core[c] = max(per_core[c], w + 1)
        return cls(assignment, n_cores, per_core)


def upward_ranks(g: BlockGraph, costs: Mapping[str, float], p: CostProfile) -> dict[str, float]:
    """Longest cost-plus-communication path from each block to a sink."""
    succ = _succ(g)
    rank: dict[str, float] = {}

    def visit(bid):
        if bid not in rank:
            tail = max((p.comm_cycles_per_message + visit(s) for s in succ[bid]), default=0)
            rank[bid] = costs[bid] + tail
        return rank[bid]

    for bid in g.internal:
        visit(bid)
    return rank


def _succ(g):
    internal = set(g.internal)
    succ = {b: [] for b in internal}
    for e in g.edges:
        if e.src in internal and e.dst in internal and not g.is_delay_edge(e):
            succ[e.src].append(e.dst)
    return succ


def _pred(g):
    internal = set(g.internal)
    pred = {b: [] for b in internal}
    for e in g.edges:
        if e.src in internal and e.dst in internal and not g.is_delay_edge(e):
            pred[e.dst].append(e.src)
    return pred


def allocate_cores(
    g: BlockGraph, costs: Mapping[str, float], p: CostProfile, n_cores: int
) -> Allocation:
    """Rank-ordered list scheduling with a communication-aware earliest-finish rule.

    Blocks are taken in decreasing upward rank (ties: smallest id) among those
    whose predecessors are placed, and each goes to the core where it would
    finish first (ties: lowest core). A plan that would be slower than running
    everything on core 0 is replaced by that sequential placement.
    """
    if n_cores < 1:
        raise ValueError("n_cores must be ≥ 1")
    rank = upward_ranks(g, costs, p)
    pred = _pred(g)
    remaining = {b: len(ps) for b, ps in pred.items()}
    succ = _succ(g)
    ready = {b for b, n in remaining.items() if n == 0}

    available = [0.0] * n_cores
    finish: dict[str, float] = {}
    core: dict[str, int] = {}
    while ready:
        bid = min(ready, key=lambda b: (-rank[b], b))
        ready.discard(bid)
        best = None
        for c in range(n_cores):
            start = available[c]
            for q in pred[bid]:
                arrive = finish[q] + (p.comm_cycles_per_message if core[q] != c else 0)
                start = max(start, arrive)
            end = start + costs[bid]
            if best is None or end < best[0]:
                best = (end, c)
        end, c = best
        finish[bid], core[bid] = end, c
        available[c] = end
        for s in succ[bid]:
            remaining[s] -= 1
            if remaining[s] == 0:
                ready.add(s)

    makespan = max(finish.values(), default=0.0)
    sequential = sum(costs[b] for b in g.internal)
    if makespan > sequential:
        core = {b: 0 for b in core}
        makespan = sequential
    return Allocation(
        {b: (c, 0) for b, c in core.items()},
        n_cores,
        {c: 1 for c in range(n_cores)},
        modeled_makespan=makespan,
    )


def fold_allocation(a: Allocation, n_physical: int, cap: int = MAX_WORKERS_PER_CORE) -> Allocation:
    """Fold ``a.n_cores`` virtual cores onto ``n_physical`` cores.

    Virtual core v becomes worker ``v // n_physical`` on core ``v % n_physical``.
    """
    virtual = a.n_cores
    if not 1 <= n_physical <= virtual:
        raise ValueError(f"cannot fold {virtual} virtual cores onto {n_physical}")
    if any(n != 1 for n in a.n_workers_per_core.values()):
        raise ValueError("only single-worker allocations can be folded")
    per_core = {c: math.ceil((virtual - c) / n_physical) for c in range(n_physical)}
    if max(per_core.values()) > cap:
        raise TooManyWorkers(
            f"{virtual} virtual cores on {n_physical} cores needs {max(per_core.values())} workers per core (cap {cap})"
        )
    assignment = {b: (v % n_physical, v // n_physical) for b, (v, _) in a.assignment.items()}
    return Allocation(assignment, n_physical, per_core)


def check_fold(virtual: int, n_physical: int, cap: int = MAX_WORKERS_PER_CORE) -> None:
    """Cheap pre-flight for fold parameters, before any model work."""
    if not 1 <= n_physical <= virtual:
        raise ValueError(f"cannot fold {virtual} virtual cores onto {n_physical}")
    if math.ceil(virtual / n_physical) > cap:
        raise TooManyWorkers(f"{virtual} virtual cores on {n_physical} cores exceeds {cap} workers per core")


def allocation_metrics(g: BlockGraph, costs: Mapping[str, float], a: Allocation) -> dict:
    loads = [0.0] * a.n_cores
    for bid, (c, _) in a.assignment.items():
        loads[c] += costs[bid]
    mean = sum(loads) / a.n_cores
    imbalance = max(loads) / mean if mean > 0 else 1.0
    cross = sum(
        1
        for e in g.edges
        if e.src in a.assignment and e.dst in a.assignment and a.core_of(e.src) != a.core_of(e.dst)
    )
    return {"load_imbalance": imbalance, "cross_core_edges": cross}

"""Per-worker execution plans: construction, deadlock check, makespan
estimate and node scaffold text."""

from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Union

from .costalloc import Allocation, CostProfile, Slot
from .errors import DeadlockedPlan, PatternMismatch
from .model import BlockGraph, parse_model, serialize_model, topological_order
from .nodeconfig import EventAll, EventTimeSync, EventTrigger, NodeConfig, TimerDriven


@dataclass(frozen=True)
class Compute:
    block: str


@dataclass(frozen=True)
class Send:
    channel: int


@dataclass(frozen=True)
class Recv:
    channel: int


Step = Union[Compute, Send, Recv]


@dataclass(frozen=True)
class Channel:
    id: int
    edge: tuple[str, str]
    from_worker: Slot
    to_worker: Slot
    capacity: int = 1
    port: int = 0

    def __post_init__(self):
        if self.from_worker == self.to_worker:
            raise ValueError(f"channel {self.id} connects worker {self.from_worker} to itself")
        if self.capacity < 1:
            raise ValueError("channel capacity must be ≥ 1")


@dataclass(frozen=True)
class WorkerPlan:
    core: int
    worker: int
    steps: tuple[Step, ...]

    @property
    def slot(self) -> Slot:
        return (self.core, self.worker)


@dataclass
class ExecutionPlan:
    graph: BlockGraph
    workers: list[WorkerPlan]
    channels: list[Channel]
    inport_bindings: dict[str, Slot] = field(default_factory=dict)
    outport_bindings: dict[str, Slot] = field(default_factory=dict)
    # (block, from-slot, to-slot) moves made to keep Delay state local
    relocations: list[tuple[str, Slot, Slot]] = field(default_factory=list)

    def placement(self) -> dict[str, Slot]:
        return {
            s.block: w.slot for w in self.workers for s in w.steps if isinstance(s, Compute)
        }

    def to_dict(self) -> dict:
        def enc(step):
            if isinstance(step, Compute):
                return ["compute", step.block]
            return ["send" if isinstance(step, Send) else "recv", step.channel]

        return {
            "model": serialize_model(self.graph),
            "workers": [
                {"core": w.core, "worker": w.worker, "steps": [enc(s) for s in w.steps]}
                for w in self.workers
            ],
            "channels": [
                {
                    "id": c.id,
                    "edge": list(c.edge),
                    "port": c.port,
                    "from": list(c.from_worker),
                    "to": list(c.to_worker),
                    "capacity": c.capacity,
                }
                for c in self.channels
            ],
            "inport_bindings": {k: list(v) for k, v in sorted(self.inport_bindings.items())},
            "outport_bindings": {k: list(v) for k, v in sorted(self.outport_bindings.items())},
            "relocations": [[b, list(f), list(t)] for b, f, t in self.relocations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> ExecutionPlan:
        decode = {"compute": Compute, "send": Send, "recv": Recv}
        return cls(
            graph=parse_model(d["model"]),
            workers=[
                WorkerPlan(w["core"], w["worker"], tuple(decode[k](v) for k, v in w["steps"]))
                for w in d["workers"]
            ],
            channels=[
                Channel(c["id"], tuple(c["edge"]), tuple(c["from"]), tuple(c["to"]),
                        c.get("capacity", 1), c.get("port", 0))
                for c in d["channels"]
            ],
            inport_bindings={k: tuple(v) for k, v in d.get("inport_bindings", {}).items()},
            outport_bindings={k: tuple(v) for k, v in d.get("outport_bindings", {}).items()},
            relocations=[(b, tuple(f), tuple(t)) for b, f, t in d.get("relocations", [])],
        )

    @classmethod
    def from_json(cls, text: str) -> ExecutionPlan:
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# construction


def _colocate_delays(g: BlockGraph, assignment: dict[str, Slot]):
    """Move every Delay consumer onto its Delay's worker.

    Delays and their consumers are grouped with union-find; each group lands
    on the slot of its smallest Delay id.
    """
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in g.edges:
        if g.is_delay_edge(e) and e.dst in assignment:
            a, b = find(e.src), find(e.dst)
            if a != b:
                parent[max(a, b)] = min(a, b)

    groups = defaultdict(list)
    for x in list(parent):
        groups[find(x)].append(x)
    moved = dict(assignment)
    relocations = []
    for members in groups.values():
        anchor = min(m for m in members if g.kind(m) == "Delay")
        target = assignment[anchor]
        for m in sorted(members):
            if moved[m] != target:
                relocations.append((m, moved[m], target))
                moved[m] = target
    return moved, sorted(relocations)


def build_plan(g: BlockGraph, a: Allocation, capacity: int = 1) -> ExecutionPlan:
    assignment, relocations = _colocate_delays(g, a.assignment)
    order = topological_order(g)

    channels: list[Channel] = []
    recv_for: dict[str, list[int]] = defaultdict(list)
    send_for: dict[str, list[int]] = defaultdict(list)
    for e in g.edges:  # sorted by (src, dst, port)
        if e.src not in assignment or e.dst not in assignment:
            continue
        if assignment[e.src] == assignment[e.dst]:
            continue
        ch = Channel(len(channels), (e.src, e.dst), assignment[e.src], assignment[e.dst], capacity, e.port)
        channels.append(ch)
        send_for[e.src].append(ch.id)
        recv_for[e.dst].append(ch.id)
    for ids in recv_for.values():
        ids.sort(key=lambda i: channels[i].port)

    workers = []
    for slot in a.slots:
        steps: list[Step] = []
        for bid in order:
            if assignment.get(bid) != slot:
                continue
            steps.extend(Recv(i) for i in recv_for[bid])
            steps.append(Compute(bid))
            steps.extend(Send(i) for i in send_for[bid])
        workers.append(WorkerPlan(slot[0], slot[1], tuple(steps)))

    first = a.slots[0] if a.slots else (0, 0)
    inport_bindings = {}
    for bid in g.inports:
        consumers = sorted(e.dst for e in g.out_edges(bid) if e.dst in assignment)
        inport_bindings[bid] = assignment[consumers[0]] if consumers else first
    outport_bindings = {}
    for bid in g.outports:
        src = [e.src for e in g.in_edges(bid)]
        outport_bindings[bid] = assignment.get(src[0], first) if src else first
    return ExecutionPlan(g, workers, channels, inport_bindings, outport_bindings, relocations)


# --------------------------------------------------------------------------
# abstract execution


@dataclass(frozen=True)
class DeadlockResult:
    ok: bool
    stuck_at: tuple[int, ...] | None = None

    def __bool__(self):
        return self.ok


def check_deadlock_free(plan: ExecutionPlan) -> DeadlockResult:
    """Run the plan's step lists abstractly until completion or a stall.

    Each worker advances independently (a blocked worker never holds its
    core), so greedy advancement reaches the same frontier as any schedule.
    """
    capacity = {c.id: c.capacity for c in plan.channels}
    held = defaultdict(int)
    pcs = [0] * len(plan.workers)
    progress = True
    while progress:
        progress = False
        for i, w in enumerate(plan.workers):
            while pcs[i] < len(w.steps):
                step = w.steps[pcs[i]]
                if isinstance(step, Send):
                    if held[step.channel] >= capacity.get(step.channel, 1):
                        break
                    held[step.channel] += 1
                elif isinstance(step, Recv):
                    if held[step.channel] == 0:
                        break
                    held[step.channel] -= 1
                pcs[i] += 1
                progress = True
    if all(pc == len(w.steps) for pc, w in zip(pcs, plan.workers)):
        return DeadlockResult(True)
    return DeadlockResult(False, tuple(pcs))


def estimate_makespan(
    plan: ExecutionPlan,
    costs: Mapping[str, float],
    p: CostProfile,
    switch_cycles: float = 0.0,
    n_physical: int | None = None,
) -> float:
    """Cycle-level makespan under cooperative per-core scheduling.

    A core runs one worker until it blocks or finishes, then switches to the
    ready worker with the lowest ordinal. Messages become receivable
    ``comm_cycles_per_message`` after the Send. With ``n_physical`` set, plan
    core c shares processor ``c % n_physical`` the way the runtime pins it.
    """
    if n_physical is not None and n_physical < 1:
        raise ValueError("n_physical must be ≥ 1")
    verdict = check_deadlock_free(plan)
    if not verdict.ok:
        raise DeadlockedPlan(verdict.stuck_at)

    workers = plan.workers
    capacity = {c.id: c.capacity for c in plan.channels}
    receiver = {}
    sender = {}
    for i, w in enumerate(workers):
        for s in w.steps:
            if isinstance(s, Recv):
                receiver[s.channel] = i
            elif isinstance(s, Send):
                sender[s.channel] = i
    def proc(i):
        return workers[i].core if n_physical is None else workers[i].core % n_physical

    by_core = defaultdict(list)
    for i in sorted(range(len(workers)), key=lambda i: (proc(i), workers[i].slot)):
        by_core[proc(i)].append(i)

    pc = [0] * len(workers)
    blocked = [False] * len(workers)
    finished_at = [0.0 if not w.steps else None for w in workers]
    in_flight = defaultdict(int)  # sent, not yet received
    arrived = defaultdict(int)  # receivable now
    running: dict[int, int | None] = {c: None for c in by_core}
    last: dict[int, int | None] = {c: None for c in by_core}
    events: list = []
    seq = 0

    def push(t, kind, arg):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, arg))
        seq += 1

    def dispatch(core, t):
        for i in by_core[core]:
            if finished_at[i] is None and not blocked[i]:
                if last[core] is not None and last[core] != i:
                    t += switch_cycles
                last[core] = i
                running[core] = i
                advance(i, t)
                return
        running[core] = None

    def wake(i, t):
        blocked[i] = False
        push(t, "wake", proc(i))

    def advance(i, t):
        steps = workers[i].steps
        while pc[i] < len(steps):
            step = steps[pc[i]]
            if isinstance(step, Compute):
                pc[i] += 1
                push(t + costs[step.block], "done", i)
                return
            ch = step.channel
            if isinstance(step, Send):
                if in_flight[ch] >= capacity[ch]:
                    break
                in_flight[ch] += 1
                push(t + p.comm_cycles_per_message, "arrive", ch)
            else:
                if not arrived[ch]:
                    break
                arrived[ch] -= 1
                in_flight[ch] -= 1
                j = sender.get(ch)
                if j is not None and blocked[j]:
                    wake(j, t)
            pc[i] += 1
        else:
            finished_at[i] = t
            dispatch(proc(i), t)
            return
        blocked[i] = True
        dispatch(proc(i), t)

    for core in by_core:
        dispatch(core, 0.0)
    while events:
        t, _, kind, arg = heapq.heappop(events)
        if kind == "done":
            advance(arg, t)
        elif kind == "arrive":
            arrived[arg] += 1
            j = receiver.get(arg)
            if j is not None and blocked[j]:
                wake(j, t)
        elif running[arg] is None:
            dispatch(arg, t)

    if any(f is None for f in finished_at):
        raise DeadlockedPlan(tuple(pc))
    return max(finished_at, default=0.0)


def meets_deadline(plan, costs, p: CostProfile, deadline_cycles: float, switch_cycles: float = 0.0) -> bool:
    return estimate_makespan(plan, costs, p, switch_cycles) <= deadline_cycles


# --------------------------------------------------------------------------
# scaffold


def _pattern_label(pattern) -> str:
    if isinstance(pattern, TimerDriven):
        return f"timer-driven, period {pattern.period_ns} ns"
    if isinstance(pattern, EventAll):
        return "event-driven, every input topic triggers"
    if isinstance(pattern, EventTrigger):
        return f"event-driven, trigger topic {pattern.trigger_topic}"
    if pattern.policy == "approximate":
        return f"event-driven, approximate time sync (slop {pattern.slop_ns} ns, queue {pattern.queue_size})"
    return f"event-driven, exact time sync (queue {pattern.queue_size})"


def emit_scaffold(plan: ExecutionPlan, nc: NodeConfig) -> str:
    """Pseudocode outline of the node: callbacks, worker loops and main."""
    if not plan.workers:
        raise PatternMismatch("plan has no workers to notify")
    g = plan.graph
    for topic, inport in nc.input_topics.items():
        if g.blocks.get(inport) is None or g.kind(inport) != "Inport":
            raise PatternMismatch(f"topic {topic!r} is bound to {inport!r}, which is not an inport")
    for outport in nc.output_topics:
        if g.blocks.get(outport) is None or g.kind(outport) != "Outport":
            raise PatternMismatch(f"output binding {outport!r} is not an outport")

    pattern = nc.pattern
    topics = sorted(nc.input_topics)
    notify = "    notify all threads to start (condition variable)"
    out = [
        f"# node {g.name}: {_pattern_label(pattern)}",
        f"# {len(plan.workers)} thread(s), {len(plan.channels)} channel(s)",
        "",
    ]

    if isinstance(pattern, EventTimeSync):
        for n, topic in enumerate(topics, 1):
            out += [f"filter_subscriber{n}:  # {topic} -> {nc.input_topics[topic]}",
                    f"    queue up to {pattern.queue_size} stamped messages", ""]
        policy = "ApproximateTime" if pattern.policy == "approximate" else "ExactTime"
        out += ["sync_callback(matched set):  # " + policy + " policy",
                "    update data from the matched set in one step", notify, ""]
    else:
        triggers = set()
        if isinstance(pattern, EventAll):
            triggers = set(topics)
        elif isinstance(pattern, EventTrigger):
            triggers = {pattern.trigger_topic}
        for n, topic in enumerate(topics, 1):
            name = f"trigger_callback{n}" if topic in triggers else f"callback{n}"
            out += [f"{name}(msg):  # {topic} -> {nc.input_topics[topic]}", "    update data"]
            if topic in triggers:
                out.append(notify)
            out.append("")
        if isinstance(pattern, TimerDriven):
            out += ["timer_callback():", "    snapshot data", notify, ""]

    channels = {c.id: c for c in plan.channels}
    for n, w in enumerate(plan.workers, 1):
        out += [f"thread{n}():  # core {w.core}, worker {w.worker}",
                "    while node is alive:",
                "        wait in standby for notification from callbacks"]
        for s in w.steps:
            if isinstance(s, Compute):
                out.append(f"        process {s.block} ({g.kind(s.block)})")
            else:
                c = channels[s.channel]
                verb = "send" if isinstance(s, Send) else "receive"
                out.append(f"        {verb} channel {c.id} ({c.edge[0]} -> {c.edge[1]})")
        out += ["        signal completion", ""]

    publishers = [f"{o} -> {nc.output_topics[o]}" for o in sorted(nc.output_topics)]
    out += ["main():", "    init node",
            f"    create subscribers: {', '.join(topics)}",
            f"    create publishers: {', '.join(publishers) or 'none'}"]
    if isinstance(pattern, TimerDriven):
        out.append(f"    create timer ({pattern.period_ns} ns) and link with timer_callback")
    if isinstance(pattern, EventTimeSync):
        out.append("    create synchronizer over filter subscribers and register sync_callback")
    out.append(f"    create threads: {', '.join(f'thread{n}' for n in range(1, len(plan.workers) + 1))}")
    for n, w in enumerate(plan.workers, 1):
        out.append(f"    assign thread{n} to core {w.core}")
    out += ["    start threads", "    spin until shutdown", "    shutdown"]
    return "\n".join(out) + "\n"

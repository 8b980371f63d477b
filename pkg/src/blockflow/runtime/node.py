"""Node executors: latch inputs, fire on the activation pattern, run the plan
on pinned workers and publish the outport values."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Mapping

from ..costalloc import CostProfile, annotate_costs
from ..errors import BindingMissing, PlanDeadlocked
from ..model import block_output
from ..nodeconfig import EventAll, EventTimeSync, EventTrigger, NodeConfig, TimerDriven
from ..planner import Compute, ExecutionPlan, Recv, Send, check_deadlock_free
from .bus import Bus, Message
from .spin import burn_ns, calibrate
from .sync import approximate_time_match, exact_time_match

log = logging.getLogger(__name__)

NO_PIN_ENV = "BLOCKFLOW_NO_PIN"
_POLL_S = 0.05


@dataclass
class RunResult:
    run_index: int
    trigger_stamp_ns: int
    publish_stamp_ns: int
    outputs: dict[str, float]
    inputs: dict[str, float]
    start_stamp_ns: int = 0  # when the workers were released

    @property
    def latency_ns(self) -> int:
        return self.publish_stamp_ns - self.trigger_stamp_ns


@dataclass
class NodeStats:
    runs: int = 0
    coalesced_triggers: int = 0
    queue_drops: int = 0
    triggers: int = 0
    failed_runs: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


class RunAborted(Exception):
    pass


class DataArea:
    """Latest value per inport; multi-entry latches are atomic."""

    def __init__(self, inports, defaults: Mapping[str, float]):
        self._lock = threading.Lock()
        self._defaults = {b: float(defaults.get(b, 0.0)) for b in inports}
        self.latest: dict[str, tuple[float, int, int]] = {}

    def latch(self, entries) -> None:
        with self._lock:
            for inport, value, stamp, seq in entries:
                self.latest[inport] = (value, stamp, seq)

    def snapshot(self) -> dict[str, float]:
        with self._lock:
            snap = dict(self._defaults)
            snap.update({b: v[0] for b, v in self.latest.items()})
            return snap


class _LiveChannel:
    """One run's worth of a plan channel, with emulated transfer latency."""

    def __init__(self, capacity: int, delay_ns: float, aborted: threading.Event):
        self.capacity = capacity
        self.delay_ns = delay_ns
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._aborted = aborted

    def send(self, value: float) -> None:
        with self._cond:
            while len(self._items) >= self.capacity:
                if self._aborted.is_set():
                    raise RunAborted
                self._cond.wait(_POLL_S)
            self._items.append((time.monotonic_ns() + self.delay_ns, value))
            self._cond.notify_all()

    def recv(self) -> float:
        with self._cond:
            while True:
                if self._aborted.is_set():
                    raise RunAborted
                if self._items:
                    wait_ns = self._items[0][0] - time.monotonic_ns()
                    if wait_ns <= 0:
                        value = self._items.popleft()[1]
                        self._cond.notify_all()
                        return value
                    self._cond.wait(min(wait_ns / 1e9, _POLL_S))
                else:
                    self._cond.wait(_POLL_S)


class _Run:
    def __init__(self, inputs, channels, n_workers):
        self.inputs = inputs
        self.aborted = threading.Event()
        self.channels = {
            ch.id: _LiveChannel(ch.capacity, delay, self.aborted) for ch, delay in channels
        }
        self.values: list[dict | None] = [None] * n_workers
        self.delay_updates: list[dict] = [{} for _ in range(n_workers)]  # committed on success
        self.error: BaseException | None = None
        self._remaining = n_workers
        self._cond = threading.Condition()

    def finish(self, error=None):
        with self._cond:
            if error is not None and self.error is None:
                self.error = error
            self._remaining -= 1
            self._cond.notify_all()

    def wait(self, timeout):
        with self._cond:
            return self._cond.wait_for(lambda: self._remaining == 0, timeout)


class _Worker:
    def __init__(self, index, core, ops, delays):
        self.index = index
        self.core = core
        self.ops = ops
        self.delays = delays  # Delay block -> current state
        self.start = threading.Semaphore(0)
        self.thread: threading.Thread | None = None


class Node:
    """A running node; create through :func:`run_node`."""

    def __init__(self, bus: Bus, plan: ExecutionPlan, nc: NodeConfig, profile: CostProfile,
                 pinning: bool = True, run_timeout_s: float | None = None):
        self.plan = plan
        self.config = nc
        self.profile = profile
        self.run_timeout_s = run_timeout_s
        self.results: list[RunResult] = []
        self.errors: list[str] = []
        self._warnings: list[str] = []
        g = plan.graph
        self._graph = g

        self._data = DataArea(g.inports, nc.initial_values)
        self._cond = threading.Condition()
        self._pending: tuple[int, dict] | None = None
        self._stopping = False
        self._stats: NodeStats | None = None
        self._triggers = 0
        self._coalesced = 0
        self._runs = 0
        self._failed = 0
        self._sync_drops = 0
        self._stop_evt = threading.Event()
        self._current: _Run | None = None

        costs = annotate_costs(g, profile)
        self._channel_specs = [(ch, profile.comm_ns) for ch in plan.channels]
        if any(costs.values()):
            calibrate()
        self._workers = self._build_workers(costs)
        slot_index = {(w.core, w.worker): i for i, w in enumerate(plan.workers)}
        placement = plan.placement()
        self._outport_source = {}
        for o in g.outports:
            src = g.in_edges(o)[0].src
            self._outport_source[o] = (slot_index[placement[src]] if src in placement else None, src)

        self._pubs = {o: bus.publisher(t) for o, t in sorted(nc.output_topics.items())}
        self._subs = []
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        p = nc.pattern
        if isinstance(p, EventTimeSync):
            self._sync_queues = {t: [] for t in sorted(nc.input_topics)}
        for topic in sorted(nc.input_topics):
            self._subs.append(bus.subscribe(topic, nc.queue_depth, self._inbox.put))

        pin = pinning and os.environ.get(NO_PIN_ENV) != "1"
        try:
            cpus = sorted(os.sched_getaffinity(0)) if pin else []
        except (AttributeError, OSError):
            cpus = []
            self._warn("core pinning unsupported on this platform; running unpinned")
        self._cpus = cpus

        for w in self._workers:
            w.thread = threading.Thread(target=self._worker_main, args=(w,), daemon=True,
                                        name=f"worker-{w.index}")
            w.thread.start()
        self._dispatcher = threading.Thread(target=self._dispatch_loop, daemon=True, name="dispatch")
        self._dispatcher.start()
        self._spinner = threading.Thread(target=self._spin_loop, daemon=True, name="spin")
        self._spinner.start()
        self._timer = None
        if isinstance(p, TimerDriven):
            self._timer = threading.Thread(target=self._timer_loop, daemon=True, name="timer")
            self._timer.start()

    # ---- setup

    def _build_workers(self, costs):
        g = self._graph
        channels = {c.id: c for c in self.plan.channels}
        workers = []
        for i, wp in enumerate(self.plan.workers):
            ops, delays = [], {}
            for step in wp.steps:
                if isinstance(step, Compute):
                    b = g.blocks[step.block]
                    srcs = [e.src for e in g.in_edges(b.id)]
                    burn = costs[b.id] * self.profile.cycle_time_ns
                    ops.append(("compute", b, srcs, burn))
                    if b.kind == "Delay":
                        delays[b.id] = float(b.value)
                elif isinstance(step, Send):
                    ops.append(("send", step.channel, channels[step.channel].edge[0]))
                else:
                    ops.append(("recv", step.channel, channels[step.channel].edge[0]))
            workers.append(_Worker(i, wp.core, ops, delays))
        return workers

    def _warn(self, text):
        log.warning(text)
        self._warnings.append(text)

    # ---- workers

    def _worker_main(self, w: _Worker):
        if self._cpus:
            try:
                os.sched_setaffinity(0, {self._cpus[w.core % len(self._cpus)]})
            except OSError as exc:
                self._warn(f"could not pin worker {w.index} to core {w.core}: {exc}; running unpinned")
        while True:
            w.start.acquire()
            run = self._current
            if run is None:
                return
            try:
                run.values[w.index] = self._execute_steps(w, run)
            except BaseException as exc:  # reported by the dispatcher
                run.finish(exc)
            else:
                run.finish()

    @staticmethod
    def _execute_steps(w: _Worker, run: _Run) -> dict:
        local = dict(run.inputs)
        local.update(w.delays)
        for op in w.ops:
            if op[0] == "compute":
                _, b, srcs, burn = op
                burn_ns(burn)
                args = [local[s] for s in srcs]
                if b.kind == "Delay":
                    run.delay_updates[w.index][b.id] = args[0]
                else:
                    local[b.id] = block_output(b, args)
            elif op[0] == "send":
                run.channels[op[1]].send(local[op[2]])
            else:
                local[op[2]] = run.channels[op[1]].recv()
        return local

    # ---- triggering

    def _trigger(self):
        stamp = time.monotonic_ns()
        snap = self._data.snapshot()
        with self._cond:
            if self._stopping:
                return
            self._triggers += 1
            if self._pending is not None:
                self._coalesced += 1
            self._pending = (stamp, snap)
            self._cond.notify_all()

    def _dispatch_loop(self):
        while True:
            with self._cond:
                self._cond.wait_for(lambda: self._pending is not None or self._stopping)
                if self._pending is None:
                    return
                stamp, snap = self._pending
                self._pending = None
            result = self._execute_run(stamp, snap)
            with self._cond:
                if result is None:
                    self._failed += 1
                else:
                    self._runs += 1
                    self.results.append(result)
                self._cond.notify_all()

    def _execute_run(self, stamp, snap) -> RunResult | None:
        run = _Run(snap, self._channel_specs, len(self._workers))
        self._current = run
        started = time.monotonic_ns()
        for w in self._workers:
            w.start.release()
        if not run.wait(self.run_timeout_s):
            run.aborted.set()
            run.wait(None)
            self.errors.append(f"run {self._runs} exceeded {self.run_timeout_s} s and was aborted")
            return None
        if run.error is not None:
            self.errors.append(f"run {self._runs} failed: {run.error!r}")
            return None
        for w, updates in zip(self._workers, run.delay_updates):
            w.delays.update(updates)
        outputs = {}
        for o, (wi, src) in self._outport_source.items():
            outputs[o] = snap[src] if wi is None else run.values[wi][src]
        published = time.monotonic_ns()
        for o, pub in self._pubs.items():
            pub.publish([outputs[o]], stamp_ns=published)
        return RunResult(self._runs, stamp, published, outputs, snap, started)

    # ---- callbacks

    def _spin_loop(self):
        while True:
            sub = self._inbox.get()
            if sub is None:
                return
            msg = sub.take()
            if msg is not None:
                self._on_message(msg)

    def _on_message(self, msg: Message):
        nc = self.config
        p = nc.pattern
        inport = nc.input_topics[msg.topic]
        value = msg.payload[0] if msg.payload else 0.0
        if isinstance(p, EventTimeSync):
            queues = self._sync_queues
            queues[msg.topic].append(msg)
            while True:
                before = sum(len(q) for q in queues.values())
                if p.policy == "approximate":
                    matched = approximate_time_match(queues, p.slop_ns, p.queue_size)
                else:
                    matched = exact_time_match(queues, p.queue_size)
                after = sum(len(q) for q in queues.values())
                self._sync_drops += before - after - (len(matched) if matched else 0)
                if matched is None:
                    break
                self._data.latch(
                    [(nc.input_topics[t], m.payload[0] if m.payload else 0.0, m.stamp_ns, m.seq)
                     for t, m in matched.items()]
                )
                self._trigger()
            return
        self._data.latch([(inport, value, msg.stamp_ns, msg.seq)])
        if isinstance(p, EventAll) or (isinstance(p, EventTrigger) and msg.topic == p.trigger_topic):
            self._trigger()

    def _timer_loop(self):
        period = self.config.pattern.period_ns / 1e9
        next_t = time.monotonic() + period
        while not self._stop_evt.wait(max(0.0, next_t - time.monotonic())):
            self._trigger()
            next_t += period
            now = time.monotonic()
            while next_t <= now:  # missed ticks are skipped, not burst
                next_t += period

    # ---- public

    def wait_for_runs(self, n: int, timeout: float | None = None) -> bool:
        """Block until ``n`` runs have finished (successfully or not)."""
        with self._cond:
            return self._cond.wait_for(lambda: self._runs + self._failed >= n, timeout)

    def wait_idle(self, timeout: float | None = None) -> bool:
        """Block until every trigger so far has been run or coalesced."""
        with self._cond:
            return self._cond.wait_for(
                lambda: self._runs + self._failed + self._coalesced >= self._triggers, timeout
            )

    @property
    def runs(self) -> int:
        return self._runs

    def stats(self) -> NodeStats:
        with self._cond:
            return NodeStats(
                runs=self._runs,
                coalesced_triggers=self._coalesced,
                queue_drops=sum(s.drops for s in self._subs) + self._sync_drops,
                triggers=self._triggers,
                failed_runs=self._failed,
                warnings=list(self._warnings),
            )

    def stop(self) -> NodeStats:
        if self._stats is not None:
            return self._stats
        self._stop_evt.set()
        if self._timer is not None:
            self._timer.join()
        for sub in self._subs:
            sub.close()
        self._inbox.put(None)
        self._spinner.join()
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        self._dispatcher.join()
        self._current = None
        for w in self._workers:
            w.start.release()
        for w in self._workers:
            w.thread.join()
        self._stats = self.stats()
        return self._stats


def _check_bindings(plan: ExecutionPlan, nc: NodeConfig) -> None:
    g = plan.graph
    bound = set(nc.input_topics.values())
    for topic, inport in nc.input_topics.items():
        if inport not in g.blocks or g.kind(inport) != "Inport":
            raise BindingMissing(f"topic {topic!r} is bound to {inport!r}, which is not an inport")
    missing = sorted(set(g.inports) - bound)
    if missing:
        raise BindingMissing(f"inport(s) {missing} have no input topic")
    missing = sorted(set(g.outports) - set(nc.output_topics))
    if missing:
        raise BindingMissing(f"outport(s) {missing} have no output topic")
    extra = sorted(set(nc.output_topics) - set(g.outports))
    if extra:
        raise BindingMissing(f"output binding(s) {extra} are not outports")


def run_node(
    bus: Bus,
    plan: ExecutionPlan,
    nc: NodeConfig,
    profile: CostProfile,
    pinning: bool = True,
    run_timeout_s: float | None = None,
) -> Node:
    verdict = check_deadlock_free(plan)
    if not verdict.ok:
        raise PlanDeadlocked(f"plan stalls at step indices {verdict.stuck_at}")
    _check_bindings(plan, nc)
    return Node(bus, plan, nc, profile, pinning, run_timeout_s)


def stop_node(node: Node) -> NodeStats:
    return node.stop()

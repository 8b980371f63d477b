import pytest
from hypothesis import given, settings, strategies as st

from blockflow.builtin import IDLE_GAP_ONE_WORKER, IDLE_GAP_TWO_WORKERS, idle_gap_model
from blockflow.costalloc import Allocation, CostProfile, allocate_cores, annotate_costs, fold_allocation
from blockflow.errors import DeadlockedPlan, PatternMismatch
from blockflow.model import Block, BlockGraph, Edge, RandomSpec, generate_random_model, topological_order
from blockflow.nodeconfig import EventAll, EventTimeSync, EventTrigger, NodeConfig, TimerDriven
from blockflow.planner import (
    Channel,
    Compute,
    ExecutionPlan,
    Recv,
    Send,
    WorkerPlan,
    build_plan,
    check_deadlock_free,
    emit_scaffold,
    estimate_makespan,
    meets_deadline,
)

from conftest import chain


def alloc(assignment):
    n_cores = max(c for c, _ in assignment.values()) + 1
    per_core = {c: 1 for c in range(n_cores)}
    for c, w in assignment.values():
        per_core[c] = max(per_core[c], w + 1)
    return Allocation(dict(assignment), n_cores, per_core)


def two_block_chain():
    return chain(("A", "Gain", {"k": 1.0}), ("B", "Gain", {"k": 3.0}))


IDLE_GAP_PROFILE = CostProfile({}, 1, comm_cycles_per_message=1500)


def idle_gap_plan(assignment):
    return build_plan(idle_gap_model(), alloc(assignment))


class TestBuildPlan:
    def test_single_worker_chain(self):
        plan = build_plan(two_block_chain(), alloc({"A": (0, 0), "B": (0, 0)}))
        assert [w.steps for w in plan.workers] == [(Compute("A"), Compute("B"))]
        assert plan.channels == []

    def test_cross_worker_edge(self):
        plan = build_plan(two_block_chain(), alloc({"A": (0, 0), "B": (1, 0)}))
        assert plan.workers[0].steps == (Compute("A"), Send(0))
        assert plan.workers[1].steps == (Recv(0), Compute("B"))
        assert plan.channels == [Channel(0, ("A", "B"), (0, 0), (1, 0))]

    def test_idle_gap_core_two_waits_before_block4(self):
        plan = idle_gap_plan(IDLE_GAP_ONE_WORKER)
        core2 = plan.workers[1].steps
        assert core2 == (Compute("block3"), Recv(0), Compute("block4"), Compute("block5"))
        assert plan.workers[0].steps == (Compute("block1"), Send(0), Compute("block2"))

    def test_delay_consumers_are_co_located(self):
        g = BlockGraph.build(
            "acc",
            [Block("in1", "Inport"), Block("s", "Sum"), Block("d", "Delay"),
             Block("g", "Gain", {"k": 1.0}), Block("out1", "Outport")],
            [Edge("in1", "s", 0), Edge("d", "s", 1), Edge("s", "g"), Edge("g", "d"), Edge("s", "out1")],
        )
        plan = build_plan(g, alloc({"s": (1, 0), "d": (0, 0), "g": (0, 0)}))
        placed = plan.placement()
        assert placed["d"] == placed["s"]
        assert plan.relocations
        assert all(not g.is_delay_edge(Edge(*c.edge, c.port)) for c in plan.channels)
        assert check_deadlock_free(plan).ok

    def test_deterministic(self):
        g = generate_random_model(RandomSpec(40, 2, 2, 0.2, seed=5))
        p = CostProfile({"Gain": 10, "Sum": 10}, 1, 50)
        a = allocate_cores(g, annotate_costs(g, p), p, 4)
        assert build_plan(g, a).to_json() == build_plan(g, a).to_json()

    def test_json_round_trip(self):
        plan = idle_gap_plan(IDLE_GAP_TWO_WORKERS)
        again = ExecutionPlan.from_json(plan.to_json())
        assert again.to_json() == plan.to_json()
        assert again.workers == plan.workers and again.channels == plan.channels


class TestDeadlock:
    def _plan(self, w0, w1, channels):
        g = two_block_chain()
        return ExecutionPlan(g, [WorkerPlan(0, 0, tuple(w0)), WorkerPlan(1, 0, tuple(w1))], channels)

    def test_circular_wait(self):
        chans = [Channel(0, ("A", "B"), (0, 0), (1, 0)), Channel(1, ("B", "A"), (1, 0), (0, 0))]
        verdict = self._plan([Recv(1), Send(0)], [Recv(0), Send(1)], chans)
        result = check_deadlock_free(verdict)
        assert not result.ok and result.stuck_at == (0, 0)

    def test_order_matched_capacity_one(self):
        chans = [Channel(0, ("A", "B"), (0, 0), (1, 0)), Channel(1, ("A", "B"), (0, 0), (1, 0), port=1)]
        plan = self._plan([Send(0), Send(1)], [Recv(0), Recv(1)], chans)
        assert check_deadlock_free(plan).ok

    def test_full_channel_blocks_sender(self):
        chans = [Channel(0, ("A", "B"), (0, 0), (1, 0)), Channel(1, ("B", "A"), (1, 0), (0, 0))]
        plan = self._plan([Send(0), Send(0), Recv(1)], [Send(1), Recv(0), Recv(0)], chans)
        assert check_deadlock_free(plan).ok
        plan = self._plan([Send(0), Send(0), Recv(1)], [Recv(0), Recv(0), Send(1)], chans)
        assert check_deadlock_free(plan).ok
        plan = self._plan([Send(0), Send(0), Recv(1)], [Recv(1), Recv(0), Recv(0)], chans)
        assert check_deadlock_free(plan).stuck_at == (1, 0)

    def test_estimate_refuses_deadlocked_plans(self):
        chans = [Channel(0, ("A", "B"), (0, 0), (1, 0)), Channel(1, ("B", "A"), (1, 0), (0, 0))]
        plan = self._plan([Recv(1), Send(0)], [Recv(0), Send(1)], chans)
        with pytest.raises(DeadlockedPlan):
            estimate_makespan(plan, {"A": 1, "B": 1}, CostProfile())

    @given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4]))
    @settings(max_examples=120, deadline=None)
    def test_generated_plans_are_deadlock_free(self, seed, cores, fold):
        g = generate_random_model(RandomSpec(30, 2, 2, 0.2, seed=seed))
        p = CostProfile({"Gain": 30, "Sum": 50, "Delay": 5}, 1, 200)
        costs = annotate_costs(g, p)
        a = allocate_cores(g, costs, p, cores * fold)
        if fold > 1:
            a = fold_allocation(a, cores)
        plan = build_plan(g, a)
        assert check_deadlock_free(plan).ok
        sends = [s.channel for w in plan.workers for s in w.steps if isinstance(s, Send)]
        recvs = [s.channel for w in plan.workers for s in w.steps if isinstance(s, Recv)]
        assert sorted(sends) == sorted(recvs) == [c.id for c in plan.channels]
        computes = [s.block for w in plan.workers for s in w.steps if isinstance(s, Compute)]
        assert sorted(computes) == sorted(g.internal)
        order = {b: i for i, b in enumerate(topological_order(g))}
        for w in plan.workers:
            mine = [order[s.block] for s in w.steps if isinstance(s, Compute)]
            assert mine == sorted(mine)
        for c in plan.channels:
            assert c.from_worker != c.to_worker
            assert plan.placement()[c.edge[0]] == c.from_worker
            assert plan.placement()[c.edge[1]] == c.to_worker
        assert estimate_makespan(plan, costs, p) > 0 or sum(costs.values()) == 0


class TestEstimate:
    def test_sum_on_one_worker(self):
        g = two_block_chain()
        plan = build_plan(g, alloc({"A": (0, 0), "B": (0, 0)}))
        assert estimate_makespan(plan, {"A": 10, "B": 20}, CostProfile()) == 30

    def test_idle_gap_idle_gap(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        # core 2: block3 to 200, idle until block1's value lands at 200 + 1500,
        # block4 to 2700, block5 to 4700
        assert estimate_makespan(idle_gap_plan(IDLE_GAP_ONE_WORKER), costs, IDLE_GAP_PROFILE) == 4700

    def test_idle_gap_split_worker_fills_the_gap(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        # block5 runs 200..2200 while the first worker waits; block4 then runs 2200..3200
        assert estimate_makespan(idle_gap_plan(IDLE_GAP_TWO_WORKERS), costs, IDLE_GAP_PROFILE) == 3200

    def test_switch_cost(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        # two switches on core 2: into block5's worker, back to block4's
        assert estimate_makespan(idle_gap_plan(IDLE_GAP_TWO_WORKERS), costs, IDLE_GAP_PROFILE, switch_cycles=10) == 3220

    @pytest.mark.parametrize("comm", [0, 500, 1000, 1500, 5000])
    def test_fold_never_hurts_idle_gap(self, comm):
        p = CostProfile({}, 1, comm)
        costs = annotate_costs(idle_gap_model(), p)
        one = estimate_makespan(idle_gap_plan(IDLE_GAP_ONE_WORKER), costs, p)
        two = estimate_makespan(idle_gap_plan(IDLE_GAP_TWO_WORKERS), costs, p)
        assert two <= one

    @pytest.mark.parametrize("seed", range(30))
    def test_one_core_equals_total_cost(self, seed):
        g = generate_random_model(RandomSpec(30, 2, 2, 0.2, seed=seed))
        p = CostProfile({"Gain": 30, "Sum": 50, "Delay": 5}, 1, 200)
        costs = annotate_costs(g, p)
        plan = build_plan(g, allocate_cores(g, costs, p, 1))
        assert estimate_makespan(plan, costs, p) == sum(costs.values())

    def test_deadline(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        plan = idle_gap_plan(IDLE_GAP_TWO_WORKERS)
        assert meets_deadline(plan, costs, IDLE_GAP_PROFILE, 3200)
        assert not meets_deadline(plan, costs, IDLE_GAP_PROFILE, 3199)


def two_input_model():
    return BlockGraph.build(
        "two",
        [Block("in1", "Inport"), Block("in2", "Inport"), Block("s", "Sum"),
         Block("g", "Gain", {"k": 2.0}), Block("out1", "Outport")],
        [Edge("in1", "s", 0), Edge("in2", "g"), Edge("g", "s", 1), Edge("s", "out1")],
    )


class TestScaffold:
    def _plan(self):
        return build_plan(two_input_model(), alloc({"g": (0, 0), "s": (1, 0)}))

    def test_timer_sections(self):
        plan = self._plan()
        text = emit_scaffold(plan, NodeConfig.default_for(plan.graph, TimerDriven(100_000_000)))
        lines = text.splitlines()
        assert sum(l.startswith("callback") for l in lines) == 2
        assert sum(l.startswith("timer_callback") for l in lines) == 1
        assert sum(l.startswith("thread") for l in lines) == 2
        assert "    create timer (100000000 ns) and link with timer_callback" in lines

    def test_trigger_sections(self):
        plan = self._plan()
        text = emit_scaffold(plan, NodeConfig.default_for(plan.graph, EventTrigger("topic/in1")))
        assert "trigger_callback1(msg):  # topic/in1 -> in1" in text
        assert "callback2(msg):  # topic/in2 -> in2" in text
        assert "timer_callback" not in text

    def test_sync_sections(self):
        plan = self._plan()
        text = emit_scaffold(plan, NodeConfig.default_for(plan.graph, EventTimeSync("approximate", 5, 4)))
        assert text.count("filter_subscriber") == 2
        assert "sync_callback(matched set):  # ApproximateTime policy" in text

    def test_event_all_marks_every_topic(self):
        plan = self._plan()
        text = emit_scaffold(plan, NodeConfig.default_for(plan.graph, EventAll()))
        assert text.count("trigger_callback") == 2

    def test_zero_workers(self):
        g = two_input_model()
        with pytest.raises(PatternMismatch):
            emit_scaffold(ExecutionPlan(g, [], []), NodeConfig.default_for(g, EventAll()))

    def test_bad_binding(self):
        plan = self._plan()
        nc = NodeConfig(EventAll(), {"t": "s"}, {})
        with pytest.raises(PatternMismatch):
            emit_scaffold(plan, nc)

    def test_byte_identical(self):
        plan = self._plan()
        nc = NodeConfig.default_for(plan.graph, TimerDriven(1_000_000))
        assert emit_scaffold(plan, nc) == emit_scaffold(ExecutionPlan.from_json(plan.to_json()), nc)


class TestPhysicalFolding:
    @pytest.mark.parametrize("seed", range(10))
    def test_one_processor_without_comm_is_total_cost(self, seed):
        g = generate_random_model(RandomSpec(30, 2, 2, 0.2, seed=seed))
        p = CostProfile({"Gain": 30, "Sum": 50, "Delay": 5}, 1, 0)
        costs = annotate_costs(g, p)
        plan = build_plan(g, allocate_cores(g, costs, p, 4))
        assert estimate_makespan(plan, costs, p, n_physical=1) == sum(costs.values())

    def test_idle_gap_on_one_processor(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        # block1, block2 (core 0) then block3 (core 1) fill 0..600; block5 runs
        # 600..2600 while block4 waits for its input, block4 runs 2600..3600
        assert estimate_makespan(idle_gap_plan(IDLE_GAP_TWO_WORKERS), costs, IDLE_GAP_PROFILE, n_physical=1) == 3600

    def test_enough_processors_changes_nothing(self):
        costs = annotate_costs(idle_gap_model(), IDLE_GAP_PROFILE)
        plan = idle_gap_plan(IDLE_GAP_ONE_WORKER)
        assert estimate_makespan(plan, costs, IDLE_GAP_PROFILE, n_physical=2) == estimate_makespan(plan, costs, IDLE_GAP_PROFILE)

"""Parallelise block-diagram dataflow models onto worker plans and run them
on an in-process publish/subscribe runtime."""

from .costalloc import (
    Allocation,
    CostProfile,
    allocate_cores,
    allocation_metrics,
    annotate_costs,
    fold_allocation,
)
from .model import (
    Block,
    BlockGraph,
    Edge,
    RandomSpec,
    generate_random_model,
    parse_model,
    sequential_execute,
    serialize_model,
    topological_order,
    validate_graph,
)
from .nodeconfig import EventAll, EventTimeSync, EventTrigger, NodeConfig, TimerDriven
from .planner import (
    ExecutionPlan,
    build_plan,
    check_deadlock_free,
    emit_scaffold,
    estimate_makespan,
)

__version__ = "0.1.0"

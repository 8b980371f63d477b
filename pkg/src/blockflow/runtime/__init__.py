"""In-process publish/subscribe runtime and node executors."""

from .bus import Bus, Message, Publisher, Subscription
from .node import DataArea, Node, NodeStats, RunResult, run_node, stop_node
from .sync import approximate_time_match, exact_time_match

__all__ = [
    "Bus",
    "DataArea",
    "Message",
    "Node",
    "NodeStats",
    "Publisher",
    "RunResult",
    "Subscription",
    "approximate_time_match",
    "exact_time_match",
    "run_node",
    "stop_node",
]

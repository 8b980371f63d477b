"""Reference models used by the benchmark grid and the acceptance suite."""

from __future__ import annotations

from .model import Block, BlockGraph, Edge

# block5 sits beside the block1 -> block4 dependency so a second worker on
# block4's core can fill the wait for block1's message
IDLE_GAP_WEIGHTS = {"block1": 200, "block2": 200, "block3": 200, "block4": 1000, "block5": 2000}


def idle_gap_model(weights: dict[str, int] | None = None) -> BlockGraph:
    w = dict(IDLE_GAP_WEIGHTS, **(weights or {}))
    blocks = [Block("in1", "Inport")]
    blocks += [Block(f"block{i}", "Compute", {"w": w[f"block{i}"]}) for i in range(1, 6)]
    blocks += [Block(f"out{i}", "Outport") for i in range(1, 4)]
    edges = [
        Edge("in1", "block1"),
        Edge("block1", "block2"),
        Edge("in1", "block3"),
        Edge("block3", "block4", 0),
        Edge("block1", "block4", 1),
        Edge("in1", "block5"),
        Edge("block2", "out1"),
        Edge("block4", "out2"),
        Edge("block5", "out3"),
    ]
    return BlockGraph.build("idle_gap", blocks, edges)


# block -> (core, worker); the split variant moves block5 onto its own worker
IDLE_GAP_ONE_WORKER = {
    "block1": (0, 0), "block2": (0, 0),
    "block3": (1, 0), "block4": (1, 0), "block5": (1, 0),
}
IDLE_GAP_TWO_WORKERS = dict(IDLE_GAP_ONE_WORKER, block5=(1, 1))


def parallel_chains(k: int = 4, length: int = 4, weight: int = 250) -> BlockGraph:
    """``k`` independent Compute chains fed by one shared inport."""
    blocks = [Block("in0", "Inport")]
    edges = []
    for c in range(k):
        prev = "in0"
        for j in range(length):
            bid = f"c{c}_{j}"
            blocks.append(Block(bid, "Compute", {"w": weight}))
            edges.append(Edge(prev, bid))
            prev = bid
        blocks.append(Block(f"out{c}", "Outport"))
        edges.append(Edge(prev, f"out{c}"))
    return BlockGraph.build(f"chains{k}x{length}", blocks, edges)


BUILTIN_MODELS = {
    "idle_gap": idle_gap_model,
    "chains4": parallel_chains,
}

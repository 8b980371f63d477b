import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blockflow.model import Block, BlockGraph, Edge  # noqa: E402

SAMPLES = Path(__file__).resolve().parent.parent / "samples"
GOLDEN = Path(__file__).resolve().parent / "golden"


def chain(*specs, name="chain"):
    """Build Inport -> blocks... -> Outport from (id, kind, params) triples."""
    blocks = [Block("in1", "Inport")]
    edges = []
    prev = "in1"
    for bid, kind, params in specs:
        blocks.append(Block(bid, kind, params))
        edges.append(Edge(prev, bid))
        prev = bid
    blocks.append(Block("out1", "Outport"))
    edges.append(Edge(prev, "out1"))
    return BlockGraph.build(name, blocks, edges)


@pytest.fixture
def gain_chain():
    return chain(("g", "Gain", {"k": 2.0}))


@pytest.fixture
def samples_dir():
    return SAMPLES

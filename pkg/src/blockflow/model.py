"""Block-diagram model: types, XML format, validation, ordering and the
sequential reference executor."""

from __future__ import annotations

import heapq
import random
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import quoteattr

from .errors import (
    CycleDetected,
    DanglingEdge,
    InfeasibleSpec,
    InvalidModel,
    MalformedXml,
    MissingInput,
    PortConflict,
    UnknownKind,
)

KINDS = ("Inport", "Outport", "Const", "Gain", "Sum", "Delay", "Compute")
PORT_KINDS = frozenset({"Inport", "Outport"})

# kind -> (attribute, type, default); Delay's initial state is optional
_PARAMS = {
    "Const": ("c", float, None),
    "Gain": ("k", float, None),
    "Compute": ("w", int, None),
    "Delay": ("state", float, 0.0),
}

COMPUTE_SCALE = 1e-9


@dataclass(frozen=True)
class Block:
    id: str
    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        """The kind's single numeric parameter (c, k, w or initial state)."""
        name, _, default = _PARAMS[self.kind]
        return self.params.get(name, default)


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    port: int = 0


@dataclass
class BlockGraph:
    name: str
    blocks: dict[str, Block]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        self.blocks = {bid: self.blocks[bid] for bid in sorted(self.blocks)}
        self.edges = tuple(sorted(self.edges))

    @classmethod
    def build(cls, name: str, blocks: Iterable[Block], edges: Iterable[Edge]) -> BlockGraph:
        return cls(name, {b.id: b for b in blocks}, tuple(edges))

    def kind(self, bid: str) -> str:
        return self.blocks[bid].kind

    def ids_of(self, kind: str) -> list[str]:
        return [bid for bid, b in self.blocks.items() if b.kind == kind]

    @property
    def inports(self) -> list[str]:
        return self.ids_of("Inport")

    @property
    def outports(self) -> list[str]:
        return self.ids_of("Outport")

    @property
    def internal(self) -> list[str]:
        return [bid for bid, b in self.blocks.items() if b.kind not in PORT_KINDS]

    def in_edges(self, bid: str) -> list[Edge]:
        """Edges into ``bid`` ordered by destination port."""
        return sorted((e for e in self.edges if e.dst == bid), key=lambda e: e.port)

    def out_edges(self, bid: str) -> list[Edge]:
        return [e for e in self.edges if e.src == bid]

    def is_delay_edge(self, e: Edge) -> bool:
        return self.blocks[e.src].kind == "Delay"


# --------------------------------------------------------------------------
# XML


def parse_model(text: str | bytes, strict: bool = True) -> BlockGraph:
    """Parse the model XML format.

    Structural errors (syntax, unknown kinds, dangling endpoints, port
    clashes) always raise. With ``strict`` the remaining invariants are
    checked too and reported through :class:`InvalidModel`.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "model":
        raise MalformedXml(f"root element must be <model>, got <{root.tag}>")

    blocks: dict[str, Block] = {}
    edges: list[Edge] = []
    for el in root:
        if el.tag == "block":
            bid, kind = _attr(el, "id"), _attr(el, "kind")
            if kind not in KINDS:
                raise UnknownKind(f"block {bid!r} has unknown kind {kind!r}")
            if bid in blocks:
                raise MalformedXml(f"duplicate block id {bid!r}")
            params = {}
            if kind in _PARAMS:
                name, typ, default = _PARAMS[kind]
                raw = el.get(name)
                if raw is None and default is None:
                    raise MalformedXml(f"block {bid!r} ({kind}) lacks attribute {name!r}")
                try:
                    params[name] = typ(raw) if raw is not None else default
                except ValueError as exc:
                    raise MalformedXml(f"block {bid!r}: bad {name}={raw!r}") from exc
            blocks[bid] = Block(bid, kind, params)
        elif el.tag == "edge":
            try:
                port = int(el.get("port", "0"))
            except ValueError as exc:
                raise MalformedXml(f"bad port {el.get('port')!r}") from exc
            if port < 0:
                raise MalformedXml(f"negative port {port}")
            edges.append(Edge(_attr(el, "src"), _attr(el, "dst"), port))
        else:
            raise MalformedXml(f"unexpected element <{el.tag}>")

    seen = set()
    for e in edges:
        for end in (e.src, e.dst):
            if end not in blocks:
                raise DanglingEdge(f"edge {e.src}->{e.dst} references missing block {end!r}")
        if (e.dst, e.port) in seen:
            raise PortConflict(f"port {e.port} of {e.dst!r} is driven twice")
        seen.add((e.dst, e.port))

    g = BlockGraph(root.get("name", ""), blocks, tuple(edges))
    if strict:
        report = validate_graph(g)
        if not report.ok:
            raise InvalidModel(report)
    return g


def _attr(el, name):
    value = el.get(name)
    if value is None:
        raise MalformedXml(f"<{el.tag}> lacks attribute {name!r}")
    return value


def serialize_model(g: BlockGraph) -> str:
    lines = [f"<model name={quoteattr(g.name)}>"]
    for bid, b in sorted(g.blocks.items()):
        attrs = f"id={quoteattr(bid)} kind={quoteattr(b.kind)}"
        if b.kind in _PARAMS:
            name = _PARAMS[b.kind][0]
            attrs += f" {name}={quoteattr(_fmt(b.value))}"
        lines.append(f"  <block {attrs}/>")
    for e in sorted(g.edges):
        lines.append(f"  <edge src={quoteattr(e.src)} dst={quoteattr(e.dst)} port=\"{e.port}\"/>")
    lines.append("</model>")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str

    def __str__(self):
        return f"{self.subject}: {self.rule}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


def validate_graph(g: BlockGraph) -> ValidationReport:
    out = []
    n_in = {bid: 0 for bid in g.blocks}
    n_out = {bid: 0 for bid in g.blocks}
    ports = set()
    for e in g.edges:
        label = f"{e.src}->{e.dst}:{e.port}"
        if e.src not in g.blocks or e.dst not in g.blocks:
            out.append(Violation("edge endpoint missing", label))
            continue
        n_out[e.src] += 1
        n_in[e.dst] += 1
        if (e.dst, e.port) in ports:
            out.append(Violation("duplicate destination port", label))
        ports.add((e.dst, e.port))
        if e.src == e.dst and g.kind(e.src) != "Delay":
            out.append(Violation("self-loop on non-Delay block", label))

    for bid, b in g.blocks.items():
        i, o = n_in[bid], n_out[bid]
        if b.kind == "Inport":
            if i:
                out.append(Violation("Inport must have no inputs", bid))
            if not o:
                out.append(Violation("Inport requires ≥1 output", bid))
        elif b.kind == "Outport":
            if i != 1:
                out.append(Violation("Outport requires exactly 1 input", bid))
            if o:
                out.append(Violation("Outport must have no outputs", bid))
        elif b.kind == "Const" and i:
            out.append(Violation("Const must have no inputs", bid))
        elif b.kind in ("Gain", "Delay") and i != 1:
            out.append(Violation(f"{b.kind} requires exactly 1 input", bid))
        elif b.kind == "Sum" and i < 2:
            out.append(Violation("Sum requires ≥2 inputs", bid))
        elif b.kind == "Compute":
            if i < 1:
                out.append(Violation("Compute requires ≥1 input", bid))
            if b.value < 0:
                out.append(Violation("Compute weight must be ≥0", bid))

    for bid in _cycle_members(g):
        out.append(Violation("algebraic loop", bid))
    return ValidationReport(out)


def _precedence(g: BlockGraph):
    """Successor lists and in-degrees over edges that constrain ordering."""
    succ = {bid: [] for bid in g.blocks}
    indeg = {bid: 0 for bid in g.blocks}
    for e in g.edges:
        if e.src in g.blocks and e.dst in g.blocks and not g.is_delay_edge(e):
            succ[e.src].append(e.dst)
            indeg[e.dst] += 1
    return succ, indeg


def _kahn(g: BlockGraph) -> tuple[list[str], set[str]]:
    succ, indeg = _precedence(g)
    ready = [bid for bid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        bid = heapq.heappop(ready)
        order.append(bid)
        for s in succ[bid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    return order, set(g.blocks) - set(order)


def _cycle_members(g: BlockGraph) -> list[str]:
    _, left = _kahn(g)
    if not left:
        return []
    succ, _ = _precedence(g)
    # peel blocks that merely hang off a cycle
    changed = True
    while changed:
        changed = False
        for bid in sorted(left):
            if not any(s in left for s in succ[bid]):
                left.discard(bid)
                changed = True
    return sorted(left)


def topological_order(g: BlockGraph) -> list[str]:
    """Deterministic topological order; edges leaving Delay blocks are ignored.

    Ties between ready blocks go to the lexicographically smallest id.
    """
    order, left = _kahn(g)
    if left:
        raise CycleDetected(f"algebraic loop through {sorted(left)}")
    return order


# --------------------------------------------------------------------------
# execution


def block_output(block: Block, args: Sequence[float]) -> float:
    """Output of a stateless block given its inputs in port order."""
    kind = block.kind
    if kind == "Const":
        return float(block.value)
    if kind == "Gain":
        return block.value * args[0]
    if kind in ("Sum", "Compute"):
        acc = args[0]
        for a in args[1:]:
            acc = acc + a
        if kind == "Compute":
            acc = acc + block.value * COMPUTE_SCALE
        return acc
    raise ValueError(f"{kind} has no stateless output")


class SequentialSimulator:
    """Single-worker reference executor; one :meth:`step` per model tick."""

    def __init__(self, g: BlockGraph):
        self.graph = g
        self.order = topological_order(g)
        self.sources = {bid: [e.src for e in g.in_edges(bid)] for bid in g.blocks}
        self.state = {bid: float(g.blocks[bid].value) for bid in g.ids_of("Delay")}

    def step(self, inputs: Mapping[str, float]) -> dict[str, float]:
        g = self.graph
        missing = [bid for bid in g.inports if bid not in inputs]
        if missing:
            raise MissingInput(f"no value for inport(s) {missing}")
        values = dict(self.state)
        outputs = {}
        for bid in self.order:
            b = g.blocks[bid]
            args = [values[s] for s in self.sources[bid]]
            if b.kind == "Inport":
                values[bid] = float(inputs[bid])
            elif b.kind == "Outport":
                outputs[bid] = args[0]
            elif b.kind == "Delay":
                self.state[bid] = args[0]
            else:
                values[bid] = block_output(b, args)
        return outputs


def sequential_execute(
    g: BlockGraph,
    inputs: Mapping[str, float | Sequence[float]],
    steps: int = 1,
) -> dict[str, list[float]]:
    """Run ``steps`` ticks on one worker and return per-outport series.

    Each input is either a constant or a per-step sequence of length ``steps``.
    """
    if steps < 1:
        raise ValueError("steps must be ≥ 1")
    sim = SequentialSimulator(g)
    series = {bid: [] for bid in g.outports}
    for t in range(steps):
        tick = {}
        for bid, v in inputs.items():
            if isinstance(v, (int, float)):
                tick[bid] = float(v)
            else:
                tick[bid] = float(v[t])
        for bid, v in sim.step(tick).items():
            series[bid].append(v)
    return series


def same_bits(a: float, b: float) -> bool:
    return struct.pack("<d", a) == struct.pack("<d", b)


# --------------------------------------------------------------------------
# random models


@dataclass(frozen=True)
class RandomSpec:
    n_blocks: int
    n_inports: int = 1
    n_outports: int = 1
    edge_density: float = 0.2
    compute_weight_range: tuple[int, int] = (100, 2000)
    seed: int = 0

    def __post_init__(self):
        if self.n_inports < 1 or self.n_outports < 1:
            raise ValueError("need at least one inport and one outport")
        if self.n_blocks < self.n_inports + self.n_outports:
            raise ValueError("n_blocks must cover the inports and outports")
        if not 0.0 <= self.edge_density <= 1.0:
            raise ValueError("edge_density must lie in [0, 1]")
        lo, hi = self.compute_weight_range
        if lo < 0 or hi < lo:
            raise ValueError("compute_weight_range must satisfy 0 ≤ min ≤ max")


def max_edges(spec: RandomSpec) -> int:
    """Size of the generator's candidate edge space."""
    m = spec.n_blocks - spec.n_inports - spec.n_outports
    return spec.n_inports * m + m * (m - 1) // 2 + spec.n_outports


def generate_random_model(spec: RandomSpec) -> BlockGraph:
    """Random layered DAG where every internal block lies on an in→out path.

    Kinds follow from in-degree: one input gives Gain, Compute or Delay,
    several give Sum or Compute. Const blocks are never drawn since they
    cannot be reached from an inport.
    """
    m = spec.n_blocks - spec.n_inports - spec.n_outports
    if m < 1:
        raise InfeasibleSpec("at least one non-port block is needed to connect inports to outports")
    rng = random.Random(spec.seed)
    width = len(str(m - 1))
    inner = [f"b{i:0{width}d}" for i in range(m)]
    ins = [f"in{i}" for i in range(spec.n_inports)]
    outs = [f"out{i}" for i in range(spec.n_outports)]

    pairs: set[tuple[str, str]] = set()
    for j, dst in enumerate(inner):
        pairs.add((rng.choice(ins + inner[:j]), dst))
    for src in ins:
        if not any(p[0] == src for p in pairs):
            pairs.add((src, rng.choice(inner)))
    for i in range(m - 1):
        if not any(p[0] == inner[i] for p in pairs):
            pairs.add((inner[i], rng.choice(inner[i + 1:])))

    target = round(spec.edge_density * max_edges(spec)) - spec.n_outports
    candidates = {(s, d) for s in ins for d in inner}
    candidates |= {(inner[i], inner[j]) for i in range(m) for j in range(i + 1, m)}
    pool = sorted(candidates - pairs)
    rng.shuffle(pool)
    while len(pairs) < target and pool:
        pairs.add(pool.pop())

    producers = [inner[-1]] + [rng.choice(inner) for _ in outs[1:]]

    blocks = [Block(b, "Inport") for b in ins] + [Block(b, "Outport") for b in outs]
    srcs_of = {d: sorted(s for s, dd in pairs if dd == d) for d in inner}
    lo, hi = spec.compute_weight_range
    for bid in inner:
        if len(srcs_of[bid]) == 1:
            kind = rng.choice(("Gain", "Gain", "Compute", "Compute", "Delay"))
        else:
            kind = rng.choice(("Sum", "Compute"))
        if kind == "Gain":
            params = {"k": round(rng.uniform(-2.0, 2.0), 3)}
        elif kind == "Compute":
            params = {"w": rng.randint(lo, hi)}
        elif kind == "Delay":
            params = {"state": round(rng.uniform(-1.0, 1.0), 3)}
        else:
            params = {}
        blocks.append(Block(bid, kind, params))

    edges = [Edge(s, d, port) for d in inner for port, s in enumerate(srcs_of[d])]
    edges += [Edge(p, o, 0) for p, o in zip(producers, outs)]
    return BlockGraph.build(f"random_{spec.seed}", blocks, edges)

"""Node activation patterns and topic bindings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from .errors import PatternMismatch


@dataclass(frozen=True)
class TimerDriven:
    period_ns: int

    name = "timer"


@dataclass(frozen=True)
class EventAll:
    name = "event_all"


@dataclass(frozen=True)
class EventTrigger:
    trigger_topic: str

    name = "event_trigger"


@dataclass(frozen=True)
class EventTimeSync:
    policy: str = "exact"  # "exact" | "approximate"
    slop_ns: int = 0
    queue_size: int = 10

    @property
    def name(self):
        return f"event_sync_{self.policy}"


Pattern = Union[TimerDriven, EventAll, EventTrigger, EventTimeSync]

_FIELDS = {
    "timer": (TimerDriven, {"period_ns"}),
    "event_all": (EventAll, set()),
    "event_trigger": (EventTrigger, {"trigger_topic"}),
    "event_sync": (EventTimeSync, {"policy", "slop_ns", "queue_size"}),
}


def pattern_from_dict(d: Mapping) -> Pattern:
    if not isinstance(d, Mapping) or len(d) != 1:
        raise PatternMismatch(f"pattern must be an object with exactly one key, got {d!r}")
    (key, params), = d.items()
    if key not in _FIELDS:
        raise PatternMismatch(f"unknown pattern {key!r}; expected one of {sorted(_FIELDS)}")
    cls, allowed = _FIELDS[key]
    params = dict(params or {})
    extra = set(params) - allowed
    if extra:
        raise PatternMismatch(f"pattern {key!r} does not take {sorted(extra)}")
    if cls is TimerDriven and "period_ns" not in params:
        raise PatternMismatch("timer pattern needs period_ns")
    if cls is EventTrigger and "trigger_topic" not in params:
        raise PatternMismatch("event_trigger pattern needs trigger_topic")
    if cls is EventTimeSync and params.get("policy", "exact") not in ("exact", "approximate"):
        raise PatternMismatch(f"unknown sync policy {params['policy']!r}")
    if cls is EventTimeSync and params.get("policy", "exact") == "exact" and params.get("slop_ns", 0):
        raise PatternMismatch("slop_ns only applies to the approximate policy")
    return cls(**params)


def pattern_to_dict(p: Pattern) -> dict:
    if isinstance(p, TimerDriven):
        return {"timer": {"period_ns": p.period_ns}}
    if isinstance(p, EventAll):
        return {"event_all": {}}
    if isinstance(p, EventTrigger):
        return {"event_trigger": {"trigger_topic": p.trigger_topic}}
    d = {"policy": p.policy, "queue_size": p.queue_size}
    if p.policy == "approximate":
        d["slop_ns"] = p.slop_ns
    return {"event_sync": d}


@dataclass(frozen=True)
class NodeConfig:
    pattern: Pattern
    input_topics: Mapping[str, str]  # topic -> inport id
    output_topics: Mapping[str, str]  # outport id -> topic
    queue_depth: int = 10
    initial_values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        p = self.pattern
        if isinstance(p, TimerDriven) and p.period_ns <= 0:
            raise PatternMismatch("timer period_ns must be > 0")
        if isinstance(p, EventTrigger) and p.trigger_topic not in self.input_topics:
            raise PatternMismatch(f"trigger topic {p.trigger_topic!r} is not an input topic")
        if isinstance(p, EventTimeSync):
            if len(self.input_topics) < 2:
                raise PatternMismatch("time synchronisation needs at least two input topics")
            if p.queue_size < 1 or p.slop_ns < 0:
                raise PatternMismatch("queue_size must be ≥ 1 and slop_ns ≥ 0")
        if self.queue_depth < 1:
            raise ValueError("queue_depth must be ≥ 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> NodeConfig:
        return cls(
            pattern=pattern_from_dict(d["pattern"]),
            input_topics=dict(d.get("inputs", {})),
            output_topics=dict(d.get("outputs", {})),
            queue_depth=int(d.get("queue_depth", 10)),
            initial_values={k: float(v) for k, v in d.get("initial", {}).items()},
        )

    def to_dict(self) -> dict:
        d = {
            "pattern": pattern_to_dict(self.pattern),
            "inputs": dict(sorted(self.input_topics.items())),
            "outputs": dict(sorted(self.output_topics.items())),
            "queue_depth": self.queue_depth,
        }
        if self.initial_values:
            d["initial"] = dict(sorted(self.initial_values.items()))
        return d

    @classmethod
    def load(cls, path) -> NodeConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default_for(cls, g, pattern: Pattern, **kw) -> NodeConfig:
        """Bind one topic per port, named after the port."""
        return cls(
            pattern,
            {f"topic/{b}": b for b in g.inports},
            {b: f"topic/{b}" for b in g.outports},
            **kw,
        )

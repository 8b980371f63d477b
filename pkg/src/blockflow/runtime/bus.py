"""In-process publish/subscribe bus with bounded per-subscriber queues."""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

from ..errors import BusClosed


@dataclass(frozen=True)
class Message:
    topic: str
    stamp_ns: int
    seq: int
    payload: tuple[float, ...]


class Subscription:
    """A bounded FIFO of messages on one topic; the oldest is dropped when full."""

    def __init__(self, bus: Bus, topic: str, depth: int, listener: Callable | None = None):
        if depth < 1:
            raise ValueError("queue_depth must be ≥ 1")
        self.bus = bus
        self.topic = topic
        self.depth = depth
        self.drops = 0
        self._listener = listener
        self._queue: deque[Message] = deque()
        self._cond = threading.Condition()

    def _deliver(self, msg: Message) -> None:
        with self._cond:
            if len(self._queue) >= self.depth:
                self._queue.popleft()
                self.drops += 1
            self._queue.append(msg)
            self._cond.notify()
        if self._listener is not None:
            self._listener(self)

    def take(self, block: bool = False, timeout: float | None = None) -> Message | None:
        with self._cond:
            if block and not self._queue:
                self._cond.wait_for(lambda: self._queue, timeout)
            return self._queue.popleft() if self._queue else None

    def __len__(self):
        with self._cond:
            return len(self._queue)

    def close(self) -> None:
        self.bus._unsubscribe(self)


class Publisher:
    """Stamps and sequences messages for one topic."""

    def __init__(self, bus: Bus, topic: str):
        self.bus = bus
        self.topic = topic
        self._seq = 0
        self._last_stamp = 0
        self._lock = threading.Lock()

    def publish(self, payload: Sequence[float], stamp_ns: int | None = None) -> Message:
        with self._lock:
            if stamp_ns is None:
                stamp_ns = max(time.monotonic_ns(), self._last_stamp)
            elif stamp_ns < self._last_stamp:
                raise ValueError(f"stamp {stamp_ns} precedes previous stamp {self._last_stamp} on {self.topic!r}")
            self._seq += 1
            self._last_stamp = stamp_ns
            msg = Message(self.topic, stamp_ns, self._seq, tuple(float(v) for v in payload))
        self.bus.publish(msg)
        return msg


class Bus:
    def __init__(self):
        self._subs: dict[str, list[Subscription]] = {}
        self._lock = threading.Lock()
        self.closed = False

    def subscribe(self, topic: str, queue_depth: int = 10, listener: Callable | None = None) -> Subscription:
        sub = Subscription(self, topic, queue_depth, listener)
        with self._lock:
            if self.closed:
                raise BusClosed("bus is closed")
            self._subs.setdefault(topic, []).append(sub)
        return sub

    def publish(self, msg: Message) -> None:
        with self._lock:
            if self.closed:
                raise BusClosed("bus is closed")
            subs = list(self._subs.get(msg.topic, ()))
        for sub in subs:
            sub._deliver(msg)

    def publisher(self, topic: str) -> Publisher:
        if self.closed:
            raise BusClosed("bus is closed")
        return Publisher(self, topic)

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._subs.clear()

"""Timestamp matching across per-topic message queues.

Both matchers take ``{topic: queue}`` where each queue is a mutable sequence
of stamped messages in arrival order. On a match the chosen message and every
older one are removed from each queue.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import MutableMapping, MutableSequence


def _trim(queues, queue_size):
    dropped = 0
    if queue_size is not None:
        for q in queues.values():
            while len(q) > queue_size:
                del q[0]
                dropped += 1
    return dropped


def _consume(queues, picks):
    matched = {}
    for topic, idx in picks.items():
        q = queues[topic]
        matched[topic] = q[idx]
        del q[: idx + 1]
    return matched


def exact_time_match(
    queues: MutableMapping[str, MutableSequence], queue_size: int | None = None
) -> dict | None:
    if len(queues) < 2:
        raise ValueError("matching needs at least two queues")
    _trim(queues, queue_size)
    common = None
    for q in queues.values():
        stamps = {m.stamp_ns for m in q}
        common = stamps if common is None else common & stamps
    if not common:
        return None
    stamp = min(common)
    picks = {t: next(i for i, m in enumerate(q) if m.stamp_ns == stamp) for t, q in queues.items()}
    return _consume(queues, picks)


def _best_approximate(queues, slop_ns):
    topics = sorted(queues)
    views = []
    for t in topics:
        # (stamp, index) sorted, so arrival order need not be stamp order
        v = [(m.stamp_ns, i) for i, m in enumerate(queues[t])]
        if not v:
            return None
        v.sort()
        views.append(([s for s, _ in v], [i for _, i in v]))
    best_key = best_idx = None
    for low in sorted({s for stamps, _ in views for s in stamps}):
        chosen, idx = [], []
        for stamps, order in views:
            j = bisect_left(stamps, low)
            if j == len(stamps):
                # nothing at or after this stamp here, nor after any later one
                return None if best_idx is None else dict(zip(topics, best_idx))
            chosen.append(stamps[j])
            idx.append(order[j])
        hi = max(chosen)
        if hi - low > slop_ns:
            continue
        key = (hi - low, hi, chosen, idx)
        if best_key is None or key < best_key:
            best_key, best_idx = key, idx
            if hi == low:
                break  # zero spread at the smallest such stamp cannot be beaten
    return None if best_idx is None else dict(zip(topics, best_idx))


def approximate_time_match(
    queues: MutableMapping[str, MutableSequence],
    slop_ns: int,
    queue_size: int | None = None,
) -> dict | None:
    """Pick one message per queue with stamp spread within ``slop_ns``.

    The set with the smallest spread wins, then the smallest latest stamp,
    then the smallest stamps in topic order. When nothing matches and a queue
    is full, its oldest message is discarded and matching is retried.
    """
    if len(queues) < 2:
        raise ValueError("matching needs at least two queues")
    if slop_ns < 0:
        raise ValueError("slop_ns must be ≥ 0")
    while True:
        _trim(queues, queue_size)
        picks = _best_approximate(queues, slop_ns)
        if picks is not None:
            return _consume(queues, picks)
        full = [t for t in sorted(queues) if queue_size is not None and len(queues[t]) >= queue_size]
        if not full:
            return None
        del queues[full[0]][0]

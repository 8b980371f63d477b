"""CPU-load emulation: burn a given number of nanoseconds of CPU work.

The loop is compiled with numba and releases the GIL, so workers on
different cores really run in parallel. Work is counted in loop iterations
calibrated once per process, not wall time, so a worker that shares its
core with others takes proportionally longer.
"""

from __future__ import annotations

import threading
import time

import numba

_lock = threading.Lock()
_ns_per_iter: float | None = None


@numba.njit(nogil=True, cache=True)
def _burn(n):
    x = 1.0
    for _ in range(n):
        x = x * 0.999999 + 1e-7
    return x


def calibrate(sample_ns: int = 20_000_000) -> float:
    """Measure and cache nanoseconds per loop iteration."""
    global _ns_per_iter
    with _lock:
        if _ns_per_iter is None:
            _burn(1000)  # compile
            n = 100_000
            while True:
                t0 = time.perf_counter_ns()
                _burn(n)
                took = time.perf_counter_ns() - t0
                if took >= sample_ns // 4:
                    break
                n *= 4
            best = took
            for _ in range(2):
                t0 = time.perf_counter_ns()
                _burn(n)
                best = min(best, time.perf_counter_ns() - t0)
            _ns_per_iter = best / n
    return _ns_per_iter


def burn_ns(ns: float) -> None:
    if ns <= 0:
        return
    per = _ns_per_iter or calibrate()
    _burn(int(ns / per))

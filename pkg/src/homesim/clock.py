"""Simulation time source and timer scheduler.

The scenario driver is the single owner of simulation time; everything that
needs a delayed callback (hub timeouts, poll ticks, script actions, slave
reply slots) registers here.  Timers due at the same instant fire in
registration order, which keeps runs reproducible.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field


@dataclass(order=True)
class _Timer:
    at: int
    order: int
    fn: object = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class Scheduler:
    def __init__(self):
        self.now = 0
        self._heap: list[_Timer] = []
        self._order = 0

    def schedule(self, at: int, fn) -> _Timer:
        if at < self.now:
            raise ValueError(f"schedule at {at} before current time {self.now}")
        t = _Timer(at, self._order, fn)
        self._order += 1
        heapq.heappush(self._heap, t)
        return t

    def cancel(self, timer: _Timer) -> None:
        timer.cancelled = True

    def peek_next(self) -> int | None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].at if self._heap else None

    def sync(self, until: int) -> None:
        """Advance the clock without running timers.

        Only valid up to the next pending timer; the driver uses this to keep
        this clock in lockstep with the channel while deliveries dispatch.
        """
        nxt = self.peek_next()
        if nxt is not None and nxt < until:
            raise ValueError(f"sync to {until} would skip a timer at {nxt}")
        if until > self.now:
            self.now = until

    def run_due(self, until: int) -> int:
        """Run every non-cancelled timer with at <= until; returns count run.

        Current time becomes `until`.  Timers registered while running (at
        times <= until) are executed in the same call.
        """
        ran = 0
        while True:
            nxt = self.peek_next()
            if nxt is None or nxt > until:
                break
            t = heapq.heappop(self._heap)
            if t.cancelled:
                continue
            self.now = max(self.now, t.at)
            t.fn()
            ran += 1
        self.now = until
        return ran


class WallClock:
    """Milliseconds since construction; used only outside the simulation."""

    def __init__(self):
        self._t0 = time.monotonic()

    @property
    def now(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

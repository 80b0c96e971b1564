"""Deterministic discrete-event broadcast channel standing in for the sub-GHz medium.

Every transmission reaches every other attached endpoint subject to seeded
loss and latency.  All randomness comes from one splitmix64 stream over the
config seed, consumed in a fixed order (per receiver in ascending endpoint-id
order: one loss draw, then one latency draw), which makes delivery schedules
bit-identical across runs for identical call sequences.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 over a 64-bit seed; k-th call returns the k-th output."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_unit(self) -> float:
        """Uniform float in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53


@dataclass(frozen=True)
class ChannelConfig:
    loss_probability: float = 0.0
    latency_min_ms: int = 5
    latency_max_ms: int = 25
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.loss_probability < 1.0:
            raise ValueError(f"loss_probability {self.loss_probability} outside [0, 1)")
        if self.latency_min_ms < 0 or self.latency_min_ms > self.latency_max_ms:
            raise ValueError("latency bounds must satisfy 0 <= min <= max")


@dataclass(frozen=True)
class Delivery:
    data: bytes
    src: str
    dst: str
    deliver_at: int


# Receiver callback: (data, deliver_time_ms) -> None
Handler = Callable[[bytes, int], None]


@dataclass
class _Pending:
    deliver_at: int
    dst: str
    order: int
    data: bytes
    src: str

    def __lt__(self, other: "_Pending") -> bool:
        return (self.deliver_at, self.dst, self.order) < (other.deliver_at, other.dst, other.order)


class ChannelError(Exception):
    pass


class Channel:
    def __init__(self, config: ChannelConfig, trace=None):
        config.validate()
        self.config = config
        self.now = 0
        self._rng = SplitMix64(config.seed)
        self._endpoints: dict[str, Handler | None] = {}
        self._queue: list[_Pending] = []
        self._order = 0
        self._trace = trace

    def attach(self, endpoint_id: str, handler: Handler | None = None) -> None:
        if endpoint_id in self._endpoints:
            raise ChannelError(f"endpoint {endpoint_id!r} already attached")
        self._endpoints[endpoint_id] = handler

    def detach(self, endpoint_id: str) -> None:
        if endpoint_id not in self._endpoints:
            raise ChannelError(f"endpoint {endpoint_id!r} not attached")
        del self._endpoints[endpoint_id]

    def attached(self, endpoint_id: str) -> bool:
        return endpoint_id in self._endpoints

    def transmit(self, src: str, data: bytes, at: int) -> list[Delivery]:
        """Broadcast `data` at time `at`; returns the scheduled (non-lost) copies.

        The sender never receives its own transmission.  One loss draw and one
        latency draw are consumed per receiver whether or not the copy is lost,
        so the random stream position depends only on the transmit sequence.
        """
        if src not in self._endpoints:
            raise ChannelError(f"unattached sender {src!r}")
        if at < self.now:
            raise ChannelError(f"transmit at {at} before current time {self.now}")
        if self._trace is not None:
            self._trace.emit("transmit", t=at, src=src, data=data.hex().upper())
        span = self.config.latency_max_ms - self.config.latency_min_ms + 1
        scheduled = []
        for dst in sorted(self._endpoints):
            if dst == src:
                continue
            lost = self._rng.next_unit() < self.config.loss_probability
            latency = self.config.latency_min_ms + self._rng.next_u64() % span
            if lost:
                if self._trace is not None:
                    self._trace.emit("drop", t=at, src=src, dst=dst, data=data.hex().upper())
                continue
            d = Delivery(data=data, src=src, dst=dst, deliver_at=at + latency)
            heapq.heappush(
                self._queue, _Pending(d.deliver_at, dst, self._order, data, src)
            )
            self._order += 1
            scheduled.append(d)
        return scheduled

    def peek_next(self) -> int | None:
        """Time of the earliest pending delivery, or None."""
        return self._queue[0].deliver_at if self._queue else None

    def advance(self, until: int) -> list[tuple[str, bytes, int]]:
        """Deliver everything scheduled at or before `until`, in (time, receiver) order.

        Endpoint handlers are invoked synchronously as each copy is delivered;
        they may transmit further frames, which are processed in the same call
        if due.  Current time becomes `until`.
        """
        if until < self.now:
            raise ChannelError(f"advance to {until} before current time {self.now}")
        delivered = []
        while self._queue and self._queue[0].deliver_at <= until:
            p = heapq.heappop(self._queue)
            self.now = max(self.now, p.deliver_at)
            if p.dst not in self._endpoints:
                continue  # receiver detached after scheduling
            if self._trace is not None:
                self._trace.emit(
                    "deliver", t=p.deliver_at, src=p.src, dst=p.dst, data=p.data.hex().upper()
                )
            delivered.append((p.dst, p.data, p.deliver_at))
            handler = self._endpoints[p.dst]
            if handler is not None:
                handler(p.data, p.deliver_at)
        self.now = until
        return delivered

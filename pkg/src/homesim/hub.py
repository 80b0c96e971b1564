"""Central hub: alternates a Wi-Fi phase (fetch commands / report status over
HTTP) with an RF phase (discover nodes, relay commands sequentially with ack
and retry), exactly one radio active at a time.

The hub is a single-threaded event machine: poll ticks, HTTP responses,
channel deliveries and timers all arrive as events and run to completion one
at a time.  At most one CONTROL frame is in flight; retransmissions reuse the
same sequence number so slaves can deduplicate, and `max_retries` bounds the
total number of transmission attempts per command.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum

from .httpkit import TransportError
from .protocol import (
    AckStatus,
    ApplianceState,
    BROADCAST_ADDR,
    DecodeError,
    Frame,
    FrameType,
    MASTER_ADDR,
    Opcode,
    build_control_payload,
    decode_frame,
    encode_frame,
    parse_control_ack_payload,
    parse_init_ack_payload,
)

HUB_ENDPOINT = "hub"


class Phase(Enum):
    IDLE = "IDLE"
    WIFI = "WIFI"
    RF = "RF"


@dataclass
class HubConfig:
    ack_timeout_ms: int = 200
    max_retries: int = 3  # total transmission attempts per command
    init_window_ms: int = 500
    poll_period_ms: int = 1000
    turnaround_ms: int = 1  # gap between a final outcome and the next transmit
    cursor_path: str | None = None

    def validate(self) -> None:
        for name in ("ack_timeout_ms", "max_retries", "init_window_ms", "poll_period_ms",
                     "turnaround_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Outcome:
    seq: int
    ok: bool
    state: ApplianceState | None = None
    reason: str | None = None

    def to_json(self) -> dict:
        out: dict = {"seq": self.seq, "ok": self.ok}
        if self.state is not None:
            out["state"] = self.state.to_json()
        if self.reason is not None:
            out["reason"] = self.reason
        return out


@dataclass
class _InFlight:
    command: dict  # {"seq": int, "node": int, "appliance": int, "opcode": int, "value": int}
    data: bytes
    rf_seq: int
    attempts: int
    timer: object | None = None


class Hub:
    def __init__(self, config: HubConfig, server, channel, scheduler, trace=None):
        config.validate()
        self.config = config
        self._server = server  # transport to the control server
        self._channel = channel
        self._scheduler = scheduler
        self._trace = trace
        self.phase = Phase.IDLE
        self.registry: dict[int, list[ApplianceState]] = {}
        self.epoch = 0
        self.next_seq = 0
        self.pending: _InFlight | None = None
        self.reinit_requested = False
        self.after_cursor = 0
        self._peer_last_seq: dict[int, int] = {}
        self._batch: list[dict] = []
        self._outcomes: list[Outcome] = []  # final but not yet reported
        self._collecting_init = False
        self._load_cursor()

    # Wiring -------------------------------------------------------------------

    def attach(self) -> None:
        self._channel.attach(HUB_ENDPOINT, self.on_receive)

    def start(self) -> None:
        self._schedule_tick()

    def request_reinit(self) -> None:
        self.reinit_requested = True

    @property
    def now(self) -> int:
        return self._scheduler.now

    def _emit(self, ev: str, **fields) -> None:
        if self._trace is not None:
            self._trace.emit(ev, t=self.now, **fields)

    def _set_phase(self, phase: Phase) -> None:
        self.phase = phase
        self._emit("phase", who=HUB_ENDPOINT, phase=phase.value)

    def _load_cursor(self) -> None:
        path = self.config.cursor_path
        if path and os.path.exists(path):
            with open(path) as f:
                self.after_cursor = json.load(f)["after"]

    def _persist_cursor(self) -> None:
        path = self.config.cursor_path
        if path:
            with open(path, "w") as f:
                json.dump({"after": self.after_cursor}, f)

    def _next_rf_seq(self) -> int:
        seq = self.next_seq
        self.next_seq = (self.next_seq + 1) & 0xFF
        return seq

    # Cycle --------------------------------------------------------------------

    def _schedule_tick(self) -> None:
        self._scheduler.schedule(self.now + self.config.poll_period_ms, self._tick)

    def _tick(self) -> None:
        self._schedule_tick()
        if self.phase != Phase.IDLE:
            return  # previous RF phase still running; try again next period
        batch = self._wifi_phase()
        if batch is None:
            self._set_phase(Phase.IDLE)
            return
        self._batch = batch
        self._set_phase(Phase.RF)
        if not self.registry or self.reinit_requested:
            self._init_begin()
        else:
            self._send_next()

    def _wifi_phase(self) -> list[dict] | None:
        """Fetch a command batch and report previous outcomes; None on failure."""
        self._set_phase(Phase.WIFI)
        try:
            resp = self._server.request(
                "GET", "/api/commands", query={"after": str(self.after_cursor)}
            )
            if resp.status != 200:
                raise TransportError(f"commands endpoint returned {resp.status}")
            batch = list(resp.body["commands"])
            report = {
                "acks": [o.to_json() for o in self._outcomes],
                "nodes": [
                    {"node": n, "appliances": [s.to_json() for s in self.registry[n]]}
                    for n in sorted(self.registry)
                ],
            }
            resp = self._server.request("POST", "/api/status", body=report)
            if resp.status != 200:
                raise TransportError(f"status endpoint returned {resp.status}")
        except TransportError as e:
            self._emit("server_error", error=str(e))
            return None
        if self._outcomes:
            self.after_cursor = max(self.after_cursor, max(o.seq for o in self._outcomes))
            self._persist_cursor()
            self._outcomes = []
        return batch

    # Initialization -----------------------------------------------------------

    def _init_begin(self) -> None:
        self.epoch += 1
        self.reinit_requested = False
        self.registry = {}
        self._peer_last_seq = {}
        self._collecting_init = True
        frame = Frame(FrameType.INIT, MASTER_ADDR, BROADCAST_ADDR, self._next_rf_seq())
        self._channel.transmit(HUB_ENDPOINT, encode_frame(frame), self.now)
        self._scheduler.schedule(self.now + self.config.init_window_ms, self._init_done)

    def _init_done(self) -> None:
        self._collecting_init = False
        self._emit("registry", epoch=self.epoch, nodes=sorted(self.registry))
        self._send_next()

    # Relay --------------------------------------------------------------------

    def _send_next(self) -> None:
        if not self._batch:
            self._rf_end()
            return
        cmd = self._batch.pop(0)
        if cmd["node"] not in self.registry:
            self._finish(cmd, Outcome(cmd["seq"], False, reason="UNKNOWN_NODE"), transmitted=False)
            return
        rf_seq = self._next_rf_seq()
        frame = Frame(
            FrameType.CONTROL, MASTER_ADDR, cmd["node"], rf_seq,
            payload=build_control_payload(cmd["appliance"], Opcode(cmd["opcode"]), cmd["value"]),
        )
        self.pending = _InFlight(cmd, encode_frame(frame), rf_seq, attempts=1)
        self._channel.transmit(HUB_ENDPOINT, self.pending.data, self.now)
        self.pending.timer = self._scheduler.schedule(
            self.now + self.config.ack_timeout_ms, self._on_timeout
        )

    def _on_timeout(self) -> None:
        p = self.pending
        if p is None:
            return
        if p.attempts < self.config.max_retries:
            p.attempts += 1
            self._channel.transmit(HUB_ENDPOINT, p.data, self.now)  # same seq: dedupable
            p.timer = self._scheduler.schedule(
                self.now + self.config.ack_timeout_ms, self._on_timeout
            )
            return
        cmd = p.command
        self.pending = None
        self._finish(cmd, Outcome(cmd["seq"], False, reason="TIMEOUT"))

    def _finish(self, cmd: dict, outcome: Outcome, transmitted: bool = True) -> None:
        self._outcomes.append(outcome)
        self._emit(
            "outcome", seq=cmd["seq"], ok=outcome.ok,
            reason=outcome.reason, transmitted=transmitted,
        )
        # Command k+1 never hits the air at the same instant as command k's
        # final outcome; the relay order stays visible in trace timestamps.
        self._scheduler.schedule(self.now + self.config.turnaround_ms, self._send_next)

    def _rf_end(self) -> None:
        self._set_phase(Phase.IDLE)

    # Frame handling -------------------------------------------------------------

    def on_receive(self, data: bytes, now: int) -> None:
        try:
            frame = decode_frame(data)
        except DecodeError as e:
            self._emit("decode_error", who=HUB_ENDPOINT, reason=e.reason)
            return
        if frame.dst != MASTER_ADDR:
            return
        if frame.ftype == FrameType.INIT_ACK:
            self._on_init_ack(frame)
        elif frame.ftype == FrameType.CONTROL_ACK:
            self._on_control_ack(frame)

    def _on_init_ack(self, frame: Frame) -> None:
        if not self._collecting_init:
            self._emit("frame_ignored", who=HUB_ENDPOINT, ftype="INIT_ACK", reason="no window")
            return
        try:
            addr, states = parse_init_ack_payload(frame.payload)
        except DecodeError as e:
            self._emit("decode_error", who=HUB_ENDPOINT, reason=e.reason)
            return
        self.registry[addr] = states  # duplicates within the window: last wins
        self._peer_last_seq[frame.src] = frame.seq

    def _on_control_ack(self, frame: Frame) -> None:
        if self._peer_last_seq.get(frame.src) == frame.seq:
            return  # duplicate of an ack we already handled
        self._peer_last_seq[frame.src] = frame.seq
        p = self.pending
        if p is None:
            return
        try:
            appliance, opcode, status, flags, level = parse_control_ack_payload(frame.payload)
        except DecodeError as e:
            self._emit("decode_error", who=HUB_ENDPOINT, reason=e.reason)
            return
        if frame.src != p.command["node"] or appliance != p.command["appliance"]:
            return  # stale ack from an earlier command
        if p.timer is not None:
            self._scheduler.cancel(p.timer)
        cmd = p.command
        self.pending = None
        if status == AckStatus.OK:
            state = self._update_registry_state(frame.src, appliance, flags, level)
            self._finish(cmd, Outcome(cmd["seq"], True, state=state))
        else:
            self._finish(cmd, Outcome(cmd["seq"], False, reason=f"NACK_{status.name}"))

    def _update_registry_state(self, node: int, appliance: int, flags: int, level: int) -> ApplianceState | None:
        for state in self.registry.get(node, []):
            if state.appliance == appliance:
                state.on = bool(flags & 0x01)
                state.level = level
                return state
        return None

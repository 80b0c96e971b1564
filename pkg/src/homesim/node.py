"""Wireless slave node: owns appliance models, answers INIT with its address
and status, applies CONTROL commands and acknowledges with updated state.

Each node speaks only to the master (star discipline): it never originates a
frame except as a reply to a frame addressed to it or broadcast.  INIT starts
a new epoch: appliances reset to their configured initial state and the
duplicate-detection memory clears.  A duplicate CONTROL (same master seq)
re-sends the previous ack bytes unchanged without re-applying the command.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .protocol import (
    AckStatus,
    ApplianceKind,
    ApplianceState,
    BROADCAST_ADDR,
    DEFAULT_ON_LEVEL,
    DecodeError,
    Frame,
    FrameType,
    LEVEL_RANGE,
    MASTER_ADDR,
    Opcode,
    build_control_ack_payload,
    build_init_ack_payload,
    decode_frame,
    encode_frame,
    parse_control_payload,
)


@dataclass
class ApplianceSpec:
    appliance: int
    kind: ApplianceKind
    on: bool = False
    level: int = 0

    @classmethod
    def from_json(cls, obj: dict) -> "ApplianceSpec":
        return cls(
            appliance=int(obj["id"]),
            kind=ApplianceKind[obj["kind"]],
            on=bool(obj.get("on", False)),
            level=int(obj.get("level", 0)),
        )


@dataclass
class NodeConfig:
    address: int
    appliances: list[ApplianceSpec]
    init_slot_ms: int | None = None  # default: address * 10
    attached: bool = True

    @property
    def slot_ms(self) -> int:
        return self.address * 10 if self.init_slot_ms is None else self.init_slot_ms

    @classmethod
    def from_json(cls, obj: dict) -> "NodeConfig":
        return cls(
            address=int(obj["address"]),
            appliances=[ApplianceSpec.from_json(a) for a in obj["appliances"]],
            init_slot_ms=obj.get("init_slot_ms"),
            attached=bool(obj.get("attached", True)),
        )


class ApplianceModel:
    """One appliance with restore-on-ON semantics: OFF keeps the last non-zero
    level so a later bare ON restores it (or the kind default if none)."""

    def __init__(self, spec: ApplianceSpec):
        self.spec = spec
        self.state = ApplianceState(spec.appliance, spec.kind, spec.on, spec.level)
        self.retained_level = spec.level if spec.level > 0 else 0

    def reset(self) -> None:
        self.state = ApplianceState(
            self.spec.appliance, self.spec.kind, self.spec.on, self.spec.level
        )
        self.retained_level = self.spec.level if self.spec.level > 0 else 0

    def apply(self, opcode: Opcode, value: int = 0) -> AckStatus:
        lo, hi = LEVEL_RANGE[self.state.kind]
        if opcode == Opcode.ON:
            self.state.on = True
            self.state.level = (
                self.retained_level if self.retained_level > 0
                else DEFAULT_ON_LEVEL[self.state.kind]
            )
            self.retained_level = self.state.level
        elif opcode == Opcode.OFF:
            self.state.on = False
        elif opcode == Opcode.SET_LEVEL:
            if not lo <= value <= hi:
                return AckStatus.BAD_VALUE
            self.state.on = True
            self.state.level = value
            if value > 0:
                self.retained_level = value
        elif opcode == Opcode.QUERY:
            pass
        return AckStatus.OK


class SlaveNode:
    """Event-driven node; handlers run only from the channel scheduler."""

    def __init__(self, config: NodeConfig, channel, scheduler, trace=None):
        self.config = config
        self.address = config.address
        self.endpoint_id = f"n{config.address}"
        self._channel = channel
        self._scheduler = scheduler
        self._trace = trace
        self.appliances = {a.appliance: ApplianceModel(a) for a in config.appliances}
        self._seq = 0
        self.epoch = 0
        self._last_control: tuple[int, int] | None = None  # (src, seq) last applied
        self._last_ack: bytes | None = None

    def attach(self) -> None:
        self._channel.attach(self.endpoint_id, self.on_receive)

    def _next_seq(self) -> int:
        seq = self._seq
        self._seq = (self._seq + 1) & 0xFF
        return seq

    def states(self) -> list[ApplianceState]:
        return [self.appliances[k].state for k in sorted(self.appliances)]

    def on_receive(self, data: bytes, now: int) -> None:
        try:
            frame = decode_frame(data)
        except DecodeError as e:
            if self._trace is not None:
                self._trace.emit("decode_error", t=now, who=self.endpoint_id, reason=e.reason)
            return
        if frame.dst not in (self.address, BROADCAST_ADDR):
            return  # not for us; star discipline
        if frame.ftype == FrameType.INIT:
            self._handle_init(now)
        elif frame.ftype == FrameType.CONTROL and frame.dst == self.address:
            self._handle_control(frame, now)
        elif self._trace is not None:
            self._trace.emit("frame_ignored", t=now, who=self.endpoint_id,
                             ftype=frame.ftype.name)

    def _handle_init(self, now: int) -> None:
        for model in self.appliances.values():
            model.reset()
        self.epoch += 1
        self._last_control = None
        self._last_ack = None
        reply = Frame(
            FrameType.INIT_ACK, src=self.address, dst=MASTER_ADDR, seq=self._next_seq(),
            payload=build_init_ack_payload(self.address, self.states()),
        )
        data = encode_frame(reply)
        at = now + self.config.slot_ms
        self._scheduler.schedule(at, lambda: self._transmit(data, at))

    def _transmit(self, data: bytes, at: int) -> None:
        if self._channel.attached(self.endpoint_id):
            self._channel.transmit(self.endpoint_id, data, at)

    def _handle_control(self, frame: Frame, now: int) -> None:
        key = (frame.src, frame.seq)
        if self._last_control == key and self._last_ack is not None:
            self._transmit(self._last_ack, now)  # duplicate: same ack, no re-apply
            return
        appliance_id, opcode, value = parse_control_payload(frame.payload)
        status, flags, level = self.apply_command(appliance_id, opcode, value)
        reply = Frame(
            FrameType.CONTROL_ACK, src=self.address, dst=MASTER_ADDR,
            seq=self._next_seq(),
            payload=build_control_ack_payload(appliance_id, opcode, status, flags, level),
        )
        self._last_control = key
        self._last_ack = encode_frame(reply)
        self._transmit(self._last_ack, now)

    def apply_command(self, appliance_id: int, opcode: Opcode, value: int) -> tuple[AckStatus, int, int]:
        """Apply one opcode; errors are status bytes, never exceptions."""
        model = self.appliances.get(appliance_id)
        if model is None:
            return AckStatus.UNKNOWN_APPLIANCE, 0, 0
        status = model.apply(opcode, value)
        return status, model.state.flags_byte(), model.state.level

"""Binary frame codec for the simulated sub-GHz link.

Wire layout (the contract between hub and slave nodes, bit-exact):

    [sync=0xA5][ver=0x01][ftype][src][dst][seq][len][payload...][crc_hi][crc_lo]

CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final XOR)
over ver..payload inclusive.  Total encoded length is always 9 + len.

Payload layouts:
    INIT         empty
    INIT_ACK     [node_addr][n_appliances] then n entries of
                 [appliance_id][kind][flags][level]
    CONTROL      [appliance_id][opcode][value]
    CONTROL_ACK  [appliance_id][opcode][status][flags][level]
"""

from __future__ import annotations

import binascii
from dataclasses import dataclass
from enum import IntEnum

SYNC = 0xA5
VERSION = 0x01
MASTER_ADDR = 0x00
BROADCAST_ADDR = 0xFF
MAX_PAYLOAD = 64
HEADER_LEN = 7  # sync..len
FRAME_OVERHEAD = 9  # header + 2 crc bytes


class FrameType(IntEnum):
    INIT = 0x01
    INIT_ACK = 0x02
    CONTROL = 0x03
    CONTROL_ACK = 0x04


class Opcode(IntEnum):
    OFF = 0x00
    ON = 0x01
    SET_LEVEL = 0x02
    QUERY = 0x03


class AckStatus(IntEnum):
    OK = 0
    UNKNOWN_APPLIANCE = 1
    BAD_VALUE = 2


class ApplianceKind(IntEnum):
    LIGHT = 0x01
    FAN = 0x02
    BLINDS = 0x03


# Inclusive level range per appliance kind.
LEVEL_RANGE = {
    ApplianceKind.LIGHT: (0, 100),
    ApplianceKind.FAN: (0, 3),
    ApplianceKind.BLINDS: (0, 100),
}

# Level applied on a bare ON when no non-zero level was ever retained.
DEFAULT_ON_LEVEL = {
    ApplianceKind.LIGHT: 100,
    ApplianceKind.FAN: 1,
    ApplianceKind.BLINDS: 100,
}


class EncodeError(ValueError):
    """Frame violates an invariant; no bytes were produced."""


class DecodeError(ValueError):
    """Raw bytes rejected; .reason is one of the BAD_* constants."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason


BAD_SYNC = "BAD_SYNC"
BAD_VERSION = "BAD_VERSION"
BAD_LENGTH = "BAD_LENGTH"
BAD_CRC = "BAD_CRC"
BAD_INVARIANT = "BAD_INVARIANT"


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE checksum (crc16("123456789") == 0x29B1)."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Frame:
    ftype: FrameType
    src: int
    dst: int
    seq: int
    payload: bytes = b""

    def validate(self) -> None:
        if not 0 <= self.src <= 0xFF or not 0 <= self.dst <= 0xFF:
            raise EncodeError(f"address out of byte range: src={self.src} dst={self.dst}")
        if not 0 <= self.seq <= 0xFF:
            raise EncodeError(f"seq out of byte range: {self.seq}")
        if len(self.payload) > MAX_PAYLOAD:
            raise EncodeError(f"payload too long: {len(self.payload)} > {MAX_PAYLOAD}")
        if self.ftype == FrameType.INIT:
            if self.src != MASTER_ADDR or self.dst != BROADCAST_ADDR or self.payload:
                raise EncodeError("INIT must be src=0x00 dst=0xFF with empty payload")
        elif self.ftype == FrameType.CONTROL:
            if self.src != MASTER_ADDR:
                raise EncodeError("CONTROL must originate from master")
            if not 0x01 <= self.dst <= 0xFE:
                raise EncodeError(f"CONTROL dst must be a slave address, got {self.dst:#04x}")
            if len(self.payload) != 3:
                raise EncodeError(f"CONTROL payload must be 3 bytes, got {len(self.payload)}")
        elif self.ftype in (FrameType.INIT_ACK, FrameType.CONTROL_ACK):
            if self.dst != MASTER_ADDR:
                raise EncodeError(f"{self.ftype.name} dst must be master, got {self.dst:#04x}")
        else:
            raise EncodeError(f"unknown frame type {self.ftype}")


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame; raises EncodeError rather than emit malformed bytes."""
    frame.validate()
    body = bytes(
        [VERSION, frame.ftype, frame.src, frame.dst, frame.seq, len(frame.payload)]
    ) + frame.payload
    crc = crc16(body)
    return bytes([SYNC]) + body + bytes([crc >> 8, crc & 0xFF])


def decode_frame(data: bytes) -> Frame:
    """Inverse of encode_frame; never crashes on arbitrary bytes."""
    if len(data) < FRAME_OVERHEAD:
        raise DecodeError(BAD_LENGTH, f"{len(data)} bytes < minimum {FRAME_OVERHEAD}")
    if data[0] != SYNC:
        raise DecodeError(BAD_SYNC, f"{data[0]:#04x}")
    if data[1] != VERSION:
        raise DecodeError(BAD_VERSION, f"{data[1]:#04x}")
    plen = data[6]
    if len(data) != FRAME_OVERHEAD + plen:
        raise DecodeError(BAD_LENGTH, f"{len(data)} bytes, header says {FRAME_OVERHEAD + plen}")
    expected = crc16(data[1 : 7 + plen])
    got = (data[7 + plen] << 8) | data[8 + plen]
    if expected != got:
        raise DecodeError(BAD_CRC, f"computed {expected:#06x}, frame carries {got:#06x}")
    try:
        ftype = FrameType(data[2])
    except ValueError:
        raise DecodeError(BAD_INVARIANT, f"unknown frame type {data[2]:#04x}") from None
    frame = Frame(ftype=ftype, src=data[3], dst=data[4], seq=data[5], payload=bytes(data[7 : 7 + plen]))
    try:
        frame.validate()
    except EncodeError as e:
        raise DecodeError(BAD_INVARIANT, str(e)) from None
    return frame


@dataclass
class ApplianceState:
    """Live appliance state as carried in ack payloads (2 bytes: flags, level)."""

    appliance: int
    kind: ApplianceKind
    on: bool
    level: int

    def validate(self) -> None:
        lo, hi = LEVEL_RANGE[self.kind]
        if not lo <= self.level <= hi:
            raise ValueError(f"{self.kind.name} level {self.level} outside [{lo}, {hi}]")
        if not 0 <= self.appliance <= 0xFF:
            raise ValueError(f"appliance id {self.appliance} out of byte range")

    def flags_byte(self) -> int:
        return 0x01 if self.on else 0x00

    def to_json(self) -> dict:
        return {
            "appliance": self.appliance,
            "kind": self.kind.name,
            "on": self.on,
            "level": self.level,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ApplianceState":
        state = cls(
            appliance=int(obj["appliance"]),
            kind=ApplianceKind[obj["kind"]],
            on=bool(obj["on"]),
            level=int(obj["level"]),
        )
        state.validate()
        return state


def build_init_ack_payload(node_addr: int, states: list[ApplianceState]) -> bytes:
    out = bytearray([node_addr, len(states)])
    for s in states:
        s.validate()
        out += bytes([s.appliance, s.kind, s.flags_byte(), s.level])
    return bytes(out)


def parse_init_ack_payload(payload: bytes) -> tuple[int, list[ApplianceState]]:
    if len(payload) < 2:
        raise DecodeError(BAD_LENGTH, "INIT_ACK payload shorter than 2 bytes")
    node_addr, n = payload[0], payload[1]
    if len(payload) != 2 + 4 * n:
        raise DecodeError(BAD_LENGTH, f"INIT_ACK payload {len(payload)} bytes for {n} appliances")
    states = []
    for i in range(n):
        aid, kind, flags, level = payload[2 + 4 * i : 6 + 4 * i]
        try:
            states.append(ApplianceState(aid, ApplianceKind(kind), bool(flags & 0x01), level))
        except ValueError:
            raise DecodeError(BAD_INVARIANT, f"bad appliance entry {i}") from None
    return node_addr, states


def build_control_payload(appliance: int, opcode: Opcode, value: int) -> bytes:
    return bytes([appliance, opcode, value])


def parse_control_payload(payload: bytes) -> tuple[int, Opcode, int]:
    if len(payload) != 3:
        raise DecodeError(BAD_LENGTH, "CONTROL payload must be 3 bytes")
    try:
        opcode = Opcode(payload[1])
    except ValueError:
        raise DecodeError(BAD_INVARIANT, f"unknown opcode {payload[1]:#04x}") from None
    return payload[0], opcode, payload[2]


def build_control_ack_payload(
    appliance: int, opcode: Opcode, status: AckStatus, flags: int, level: int
) -> bytes:
    return bytes([appliance, opcode, status, flags, level])


def parse_control_ack_payload(payload: bytes) -> tuple[int, Opcode, AckStatus, int, int]:
    if len(payload) != 5:
        raise DecodeError(BAD_LENGTH, "CONTROL_ACK payload must be 5 bytes")
    try:
        opcode = Opcode(payload[1])
        status = AckStatus(payload[2])
    except ValueError:
        raise DecodeError(BAD_INVARIANT, "unknown opcode or status") from None
    return payload[0], opcode, status, payload[3], payload[4]


def format_frame(frame: Frame) -> dict:
    """Human-readable frame description (CLI `frame decode` output)."""
    out: dict = {
        "ftype": frame.ftype.name,
        "src": frame.src,
        "dst": frame.dst,
        "seq": frame.seq,
        "payload": frame.payload.hex().upper(),
    }
    if frame.ftype == FrameType.INIT_ACK:
        addr, states = parse_init_ack_payload(frame.payload)
        out["node"] = addr
        out["appliances"] = [s.to_json() for s in states]
    elif frame.ftype == FrameType.CONTROL:
        aid, opcode, value = parse_control_payload(frame.payload)
        out["appliance"], out["opcode"], out["value"] = aid, opcode.name, value
    elif frame.ftype == FrameType.CONTROL_ACK:
        aid, opcode, status, flags, level = parse_control_ack_payload(frame.payload)
        out.update(
            appliance=aid, opcode=opcode.name, status=status.name,
            on=bool(flags & 0x01), level=level,
        )
    return out

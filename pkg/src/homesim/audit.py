"""Trace auditing: checks that hold over a recorded event trace.

All audits work on the parsed trace lines in file order (already sorted by
timestamp, stable on emission order), so events sharing a timestamp are
attributed to the phase that was active when they were emitted.
"""

from __future__ import annotations

import json

from .protocol import FrameType, decode_frame


def load_trace(path: str) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def phase_violations(events: list[dict], hub: str = "hub") -> list[dict]:
    """Radio exclusivity: no channel traffic inside a WIFI phase and no
    hub-issued HTTP exchange inside an RF phase."""
    violations = []
    phase = "IDLE"
    for e in events:
        if e["ev"] == "phase" and e.get("who") == hub:
            phase = e["phase"]
        elif e["ev"] in ("transmit", "deliver", "drop") and phase == "WIFI":
            violations.append(e)
        elif e["ev"] == "http" and e.get("client") == hub and phase == "RF":
            violations.append(e)
    return violations


def sequencing_violations(events: list[dict]) -> list[dict]:
    """Strict relay order: a command's first CONTROL transmit must come after
    the previous command's final outcome.

    Retransmissions reuse the rf seq and the hub keeps at most one command in
    flight, so all transmits of one command are consecutive among hub CONTROL
    transmits; a seq change marks a new command even across mod-256 wrap.
    """
    violations = []
    last_rf_seq: int | None = None
    last_outcome: dict | None = None
    for e in events:
        if e["ev"] == "transmit" and e.get("from") == "hub":
            frame = decode_frame(bytes.fromhex(e["bytes"]))
            if frame.ftype != FrameType.CONTROL:
                continue
            if frame.seq != last_rf_seq:  # first attempt of a new command
                if last_outcome is not None and e["t"] <= last_outcome["t"]:
                    violations.append({"outcome": last_outcome, "transmit": e})
                last_rf_seq = frame.seq
        elif e["ev"] == "outcome":
            last_outcome = e
    return violations


def count_frames(events: list[dict], ftype: FrameType, src: str | None = None) -> int:
    n = 0
    for e in events:
        if e["ev"] != "transmit":
            continue
        if src is not None and e.get("from") != src:
            continue
        if decode_frame(bytes.fromhex(e["bytes"])).ftype == ftype:
            n += 1
    return n


def control_attempt_runs(events: list[dict], src: str = "hub") -> list[tuple[int, int]]:
    """(rf_seq, transmit count) per command, in relay order; one run per
    command since attempts of one command are consecutive."""
    runs: list[tuple[int, int]] = []
    for e in events:
        if e["ev"] != "transmit" or e.get("from") != src:
            continue
        frame = decode_frame(bytes.fromhex(e["bytes"]))
        if frame.ftype != FrameType.CONTROL:
            continue
        if runs and runs[-1][0] == frame.seq:
            runs[-1] = (frame.seq, runs[-1][1] + 1)
        else:
            runs.append((frame.seq, 1))
    return runs


def star_discipline_violations(events: list[dict]) -> list[dict]:
    """No frame with a slave src may carry a dst other than the master."""
    bad = []
    for e in events:
        if e["ev"] != "transmit" or e.get("from") == "hub":
            continue
        frame = decode_frame(bytes.fromhex(e["bytes"]))
        if frame.dst != 0x00:
            bad.append(e)
    return bad

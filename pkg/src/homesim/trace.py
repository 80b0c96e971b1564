"""Line-delimited JSON event trace shared by channel, hub, server and driver.

One line per event, e.g.:

    {"t":12,"ev":"deliver","from":"hub","to":"n1","bytes":"A501..."}

Lines are written sorted by timestamp (stable on emission order) so the file
reads in time order even when a component logs a future event.  `replay_check`
compares two trace files after stripping wall-clock metadata.
"""

from __future__ import annotations

import json

# Keys carrying wall-clock metadata; stripped before replay comparison.
VOLATILE_KEYS = ("wall",)

# Internal field names mapped to the wire spelling used in trace lines.
_FIELD_NAMES = {"src": "from", "dst": "to", "data": "bytes"}


class TraceRecorder:
    def __init__(self, clock=None):
        self._clock = clock
        self.events: list[dict] = []

    def emit(self, ev: str, t: int | None = None, **fields) -> dict:
        if t is None:
            t = self._clock.now if self._clock is not None else 0
        event = {"t": t, "ev": ev}
        for key, value in fields.items():
            event[_FIELD_NAMES.get(key, key)] = value
        self.events.append(event)
        return event

    def lines(self) -> list[str]:
        ordered = sorted(enumerate(self.events), key=lambda p: (p[1]["t"], p[0]))
        return [json.dumps(e, separators=(",", ":")) for _, e in ordered]

    def write(self, path: str) -> None:
        with open(path, "w") as f:
            for line in self.lines():
                f.write(line + "\n")


def canonical_line(raw: str) -> str:
    """Re-serialize a trace line with volatile metadata removed."""
    obj = json.loads(raw)
    for key in VOLATILE_KEYS:
        obj.pop(key, None)
    return json.dumps(obj, separators=(",", ":"))


def replay_check(path_a: str, path_b: str) -> tuple[int, str, str] | None:
    """Compare two traces; None if identical, else (line_no, line_a, line_b).

    Missing lines are reported with an empty string on the shorter side.
    """
    with open(path_a) as f:
        lines_a = [canonical_line(l) for l in f if l.strip()]
    with open(path_b) as f:
        lines_b = [canonical_line(l) for l in f if l.strip()]
    for i in range(max(len(lines_a), len(lines_b))):
        a = lines_a[i] if i < len(lines_a) else ""
        b = lines_b[i] if i < len(lines_b) else ""
        if a != b:
            return (i + 1, a, b)
    return None

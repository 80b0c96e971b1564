#!/usr/bin/env python3
"""Regenerate the golden handshake trace (golden/handshake_two_nodes.jsonl).

Runs the bundled two-slave discovery scenario at its pinned seed and freezes
the full event trace.  Sanity-checks the semantics before writing: exactly
one INIT broadcast, an INIT_ACK from each address staggered by the per-node
slot, registry of size 2.  Run from the repo root:

    python scripts/gen_golden.py
"""

import os
import sys

from homesim import audit
from homesim.protocol import FrameType, decode_frame
from homesim.scenario import run_scenario

ROOT = os.path.join(os.path.dirname(__file__), "..")
SCENARIO = os.path.join(ROOT, "scenarios", "handshake_two_nodes.json")
GOLDEN = os.path.join(ROOT, "golden", "handshake_two_nodes.jsonl")


def main():
    result = run_scenario(SCENARIO)
    if result.exit_code != 0:
        print(f"scenario failed: {result.failures}", file=sys.stderr)
        return 1
    events = result.trace.events
    inits = audit.count_frames(events, FrameType.INIT, src="hub")
    assert inits == 1, f"expected exactly one INIT, saw {inits}"
    ack_times = {}
    for e in events:
        if e["ev"] == "transmit" and e["from"] != "hub":
            frame = decode_frame(bytes.fromhex(e["bytes"]))
            if frame.ftype == FrameType.INIT_ACK:
                ack_times[frame.src] = e["t"]
    assert sorted(ack_times) == [1, 2], f"INIT_ACK sources: {sorted(ack_times)}"
    assert ack_times[1] < ack_times[2], "slot staggering broken"
    assert result.report["registry"] == [1, 2]
    os.makedirs(os.path.dirname(GOLDEN), exist_ok=True)
    result.trace.write(GOLDEN)
    print(f"wrote {len(result.trace.lines())} trace lines to {GOLDEN}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

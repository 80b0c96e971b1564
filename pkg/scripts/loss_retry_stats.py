#!/usr/bin/env python3
"""Sweep channel loss against delivery statistics for the hub's ack/retry loop.

For each loss probability, relays N single-command batches through a real
hub + channel + slave rig and compares the measured acked fraction with the
analytic chain: per-attempt success (1-p)^2 (command out, ack back), overall
1 - (1 - (1-p)^2)^attempts.

    python scripts/loss_retry_stats.py [--commands 500] [--retries 5] [--seed 1]
"""

import argparse
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from homesim.clock import Scheduler
from homesim.channel import Channel, ChannelConfig
from homesim.hub import Hub, HubConfig
from homesim.node import ApplianceSpec, NodeConfig, SlaveNode
from homesim.protocol import ApplianceKind
from homesim.scenario import drive
from homesim.trace import TraceRecorder

from test_hub import StubServer, cmd


def measure(loss: float, n: int, retries: int, seed: int) -> tuple[float, float]:
    sched = Scheduler()
    tracer = TraceRecorder(clock=sched)
    channel = Channel(ChannelConfig(loss, 5, 25, seed), tracer)
    server = StubServer([[cmd(i, 1)] for i in range(1, n + 1)])
    hub = Hub(HubConfig(ack_timeout_ms=60, max_retries=retries, poll_period_ms=1000),
              server, channel, sched, tracer)
    hub.attach()
    node = SlaveNode(NodeConfig(1, [ApplianceSpec(1, ApplianceKind.LIGHT)]),
                     channel, sched, tracer)
    node.attach()
    hub.registry = {1: list(node.states())}
    hub.start()
    drive(sched, channel, (n + 2) * 1000)
    acked = sum(1 for r in server.reports for a in r["acks"] if a["ok"])
    total = sum(len(r["acks"]) for r in server.reports)
    p_attempt = (1 - loss) ** 2
    analytic = 1 - (1 - p_attempt) ** retries
    return acked / total, analytic


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--commands", type=int, default=500)
    ap.add_argument("--retries", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    print(f"{'loss':>6} {'measured':>9} {'analytic':>9} {'3sigma':>8}  verdict")
    for loss in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        measured, analytic = measure(loss, args.commands, args.retries, args.seed)
        sigma = math.sqrt(analytic * (1 - analytic) / args.commands)
        ok = abs(measured - analytic) <= 3 * sigma
        print(f"{loss:>6.2f} {measured:>9.4f} {analytic:>9.4f} {3*sigma:>8.4f}"
              f"  {'ok' if ok else 'OUTSIDE'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

import math

import pytest

from homesim.channel import Channel, ChannelConfig
from homesim.clock import Scheduler
from homesim.httpkit import Response, TransportError
from homesim.hub import Hub, HubConfig, Phase
from homesim.node import ApplianceSpec, NodeConfig, SlaveNode
from homesim.protocol import ApplianceKind, FrameType, Opcode
from homesim.scenario import drive
from homesim.trace import TraceRecorder
from homesim import audit


class StubServer:
    """Server transport double: scripted batches, records status reports."""

    def __init__(self, batches=None):
        self.batches = list(batches or [])
        self.reports = []
        self.down = False

    def request(self, method, path, query=None, headers=None, body=None):
        if self.down:
            raise TransportError("server down")
        if method == "GET" and path == "/api/commands":
            batch = self.batches.pop(0) if self.batches else []
            return Response(200, {"commands": batch})
        if method == "POST" and path == "/api/status":
            self.reports.append(body)
            return Response(200, {"ok": True})
        return Response(404, {})


def cmd(seq, node, appliance=1, opcode=int(Opcode.ON), value=0):
    return {"seq": seq, "node": node, "appliance": appliance,
            "opcode": opcode, "value": value}


def make_rig(batches=None, loss=0.0, seed=0, n_nodes=2, config=None, lat=(5, 25)):
    sched = Scheduler()
    tracer = TraceRecorder(clock=sched)
    channel = Channel(ChannelConfig(loss, lat[0], lat[1], seed), tracer)
    server = StubServer(batches)
    hub = Hub(config or HubConfig(), server, channel, sched, tracer)
    hub.attach()
    nodes = []
    for addr in range(1, n_nodes + 1):
        node = SlaveNode(
            NodeConfig(addr, [ApplianceSpec(1, ApplianceKind.LIGHT),
                              ApplianceSpec(2, ApplianceKind.FAN)]),
            channel, sched, tracer,
        )
        node.attach()
        nodes.append(node)
    return hub, server, channel, sched, tracer, nodes


class TestInitializeNetwork:
    def test_two_slaves_lossless_registry_of_two(self):
        hub, server, channel, sched, tracer, nodes = make_rig()
        hub.start()
        drive(sched, channel, 1600)
        assert sorted(hub.registry) == [1, 2]
        assert [s.appliance for s in hub.registry[1]] == [1, 2]
        assert hub.epoch == 1

    def test_no_slaves_empty_registry_not_fatal(self):
        hub, server, channel, sched, tracer, _ = make_rig(n_nodes=0)
        hub.start()
        drive(sched, channel, 1600)
        assert hub.registry == {}
        assert hub.phase == Phase.IDLE

    def test_empty_registry_retried_next_cycle(self):
        hub, server, channel, sched, tracer, _ = make_rig(n_nodes=0)
        hub.start()
        drive(sched, channel, 2600)
        events = [e for e in tracer.events if e["ev"] == "transmit"]
        assert len(events) == 2  # one INIT per cycle while undiscovered

    def test_late_attached_node_joins_after_reinit(self):
        hub, server, channel, sched, tracer, nodes = make_rig(n_nodes=2)
        extra = SlaveNode(
            NodeConfig(3, [ApplianceSpec(1, ApplianceKind.LIGHT)]), channel, sched, tracer
        )
        hub.start()
        sched.schedule(1800, extra.attach)
        sched.schedule(1900, hub.request_reinit)
        drive(sched, channel, 3600)
        assert sorted(hub.registry) == [1, 2, 3]
        assert hub.epoch == 2

    def test_without_reinit_registry_stays(self):
        hub, server, channel, sched, tracer, nodes = make_rig(n_nodes=2)
        extra = SlaveNode(
            NodeConfig(3, [ApplianceSpec(1, ApplianceKind.LIGHT)]), channel, sched, tracer
        )
        hub.start()
        sched.schedule(1800, extra.attach)
        drive(sched, channel, 3600)
        assert sorted(hub.registry) == [1, 2]
        assert hub.epoch == 1


class TestSendWithAck:
    def test_lossless_acked_first_attempt(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 1)]])
        hub.start()
        drive(sched, channel, 2600)
        assert len(server.reports) >= 2
        acks = server.reports[1]["acks"]
        assert acks == [{"seq": 1, "ok": True,
                         "state": {"appliance": 1, "kind": "LIGHT", "on": True, "level": 100}}]
        runs = audit.control_attempt_runs(tracer.events)
        assert runs == [(1, 1)]  # rf seq 1 (0 was INIT), single attempt

    def test_unknown_node_fails_without_transmitting(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 9)]])
        hub.start()
        drive(sched, channel, 2600)
        acks = server.reports[1]["acks"]
        assert acks == [{"seq": 1, "ok": False, "reason": "UNKNOWN_NODE"}]
        assert audit.control_attempt_runs(tracer.events) == []

    def test_nack_statuses_reported(self):
        batch = [[cmd(1, 1, appliance=9), cmd(2, 1, appliance=2,
                                              opcode=int(Opcode.SET_LEVEL), value=9)]]
        hub, server, channel, sched, tracer, nodes = make_rig(batches=batch)
        hub.start()
        drive(sched, channel, 2600)
        acks = server.reports[1]["acks"]
        assert acks[0] == {"seq": 1, "ok": False, "reason": "NACK_UNKNOWN_APPLIANCE"}
        assert acks[1] == {"seq": 2, "ok": False, "reason": "NACK_BAD_VALUE"}

    def test_timeout_exhausts_retries_with_same_seq(self):
        # Detach the target after its INIT_ACK but before the init window
        # closes: it stays in the registry yet never hears the CONTROL.
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 1)]])
        hub.start()
        sched.schedule(1400, lambda: channel.detach("n1"))
        drive(sched, channel, 6000)
        acks = [r["acks"] for r in server.reports if r["acks"]]
        assert acks and acks[0][0] == {"seq": 1, "ok": False, "reason": "TIMEOUT"}
        runs = audit.control_attempt_runs(tracer.events)
        assert runs == [(1, 3)]  # exactly max_retries attempts, one rf seq

    def test_retry_conservation_bound(self):
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=[[cmd(i, 1) for i in range(1, 9)]], loss=0.4, seed=5,
            config=HubConfig(ack_timeout_ms=120, max_retries=5),
        )
        hub.start()
        drive(sched, channel, 30_000)
        for seq, attempts in audit.control_attempt_runs(tracer.events):
            assert attempts <= 5

    def test_one_outstanding_at_all_times(self):
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=[[cmd(i, 1 + i % 2) for i in range(1, 9)]], loss=0.3, seed=8,
            config=HubConfig(ack_timeout_ms=120, max_retries=5),
        )
        hub.start()
        drive(sched, channel, 30_000)
        assert audit.sequencing_violations(tracer.events) == []


class TestRelayBatch:
    def test_strict_order_next_after_previous_outcome(self):
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=[[cmd(1, 1), cmd(2, 2)]]
        )
        hub.start()
        drive(sched, channel, 2600)
        assert audit.sequencing_violations(tracer.events) == []
        acked = [a["seq"] for r in server.reports for a in r["acks"] if a["ok"]]
        assert acked == [1, 2]

    def test_empty_batch_no_control_frames(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[]])
        hub.start()
        drive(sched, channel, 1600)
        assert audit.count_frames(tracer.events, FrameType.CONTROL) == 0

    def test_first_timeout_second_still_attempted(self):
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=[[cmd(1, 9), cmd(2, 1)]]  # node 9 unknown, node 1 fine
        )
        hub.start()
        drive(sched, channel, 2600)
        acks = server.reports[1]["acks"]
        assert [a["seq"] for a in acks] == [1, 2]
        assert [a["ok"] for a in acks] == [False, True]


class TestRunCycle:
    def test_phase_sequence_and_reporting(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 1)]])
        hub.start()
        drive(sched, channel, 2600)
        phases = [e["phase"] for e in tracer.events if e["ev"] == "phase"]
        assert phases[:3] == ["WIFI", "RF", "IDLE"]
        assert audit.phase_violations(tracer.events) == []

    def test_no_commands_rf_silent_after_init(self):
        hub, server, channel, sched, tracer, nodes = make_rig()
        hub.start()
        drive(sched, channel, 1600)
        assert audit.count_frames(tracer.events, FrameType.CONTROL, src="hub") == 0
        assert audit.count_frames(tracer.events, FrameType.INIT, src="hub") == 1

    def test_server_down_no_rf_that_cycle(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 1)]])
        server.down = True
        hub.start()
        drive(sched, channel, 1600)
        assert audit.count_frames(tracer.events, FrameType.INIT, src="hub") == 0
        assert hub.phase == Phase.IDLE
        # outcomes retained for the next report once the server recovers
        server.down = False
        drive(sched, channel, 2600)
        assert sorted(hub.registry) == [1, 2]

    def test_outcomes_retained_when_report_fails(self):
        hub, server, channel, sched, tracer, nodes = make_rig(batches=[[cmd(1, 1)]])
        hub.start()
        drive(sched, channel, 1600)  # command acked during cycle 1
        server.down = True
        drive(sched, channel, 2600)  # cycle 2 report fails
        server.down = False
        drive(sched, channel, 3600)  # cycle 3 reports the retained outcome
        all_acks = [a for r in server.reports for a in r["acks"]]
        assert [a["seq"] for a in all_acks] == [1]

    def test_after_cursor_advances_only_after_report(self, tmp_path):
        path = str(tmp_path / "cursor.json")
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=[[cmd(7, 1)]], config=HubConfig(cursor_path=path)
        )
        hub.start()
        drive(sched, channel, 1600)
        assert hub.after_cursor == 0  # outcome not yet reported
        drive(sched, channel, 2600)
        assert hub.after_cursor == 7
        reborn = Hub(HubConfig(cursor_path=path), server, channel, sched)
        assert reborn.after_cursor == 7

    def test_registry_reported_to_server(self):
        hub, server, channel, sched, tracer, nodes = make_rig()
        hub.start()
        drive(sched, channel, 2600)
        nodes_report = server.reports[1]["nodes"]
        assert [n["node"] for n in nodes_report] == [1, 2]
        assert len(nodes_report[0]["appliances"]) == 2


class TestRetryStatistics:
    def test_analytic_ack_probability_within_3_sigma(self):
        # Chain: attempt succeeds iff CONTROL survives (0.7) and its ack
        # survives (0.7); five independent attempts.
        p_attempt = 0.7 * 0.7
        p_acked = 1 - (1 - p_attempt) ** 5
        assert abs(p_acked - 0.9655) < 1e-4

        n = 1000
        batches = [[cmd(i, 1)] for i in range(1, n + 1)]
        # ack timeout must exceed the worst round trip (2 x 25 ms) so a late
        # ack can never rescue a timed-out attempt, and the full retry run
        # (5 x 60 ms) must fit in one poll period so no cycle is skipped.
        hub, server, channel, sched, tracer, nodes = make_rig(
            batches=batches, loss=0.3, seed=4242, n_nodes=1,
            config=HubConfig(ack_timeout_ms=60, max_retries=5, poll_period_ms=1000),
        )
        hub.registry = {1: [s for s in nodes[0].states()]}  # skip discovery
        hub.start()
        drive(sched, channel, (n + 2) * 1000)
        acked = sum(1 for r in server.reports for a in r["acks"] if a["ok"])
        total = sum(len(r["acks"]) for r in server.reports)
        assert total == n
        sigma = math.sqrt(n * p_acked * (1 - p_acked))
        assert abs(acked - n * p_acked) <= 3 * sigma

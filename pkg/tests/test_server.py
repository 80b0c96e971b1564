import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homesim.feed import FeedClient, FeedService
from homesim.httpkit import InProcessTransport
from homesim.intent import ControlWord
from homesim.protocol import Opcode
from homesim.server import (
    CommandRejected,
    CommandStatus,
    ControlServer,
    ServerConfig,
)

from conftest import SimClock


def make_server(table, lexicon, clock=None, persistence_path=None, with_feed=True,
                **cfg_overrides):
    clock = clock or SimClock()
    config = ServerConfig(persistence_path=persistence_path, **cfg_overrides)
    feed_client = None
    feed = None
    if with_feed:
        feed = FeedService(clock, {config.client_id: config.client_secret},
                           rng=random.Random(7))
        feed_client = FeedClient(InProcessTransport(feed.router()),
                                 config.client_id, config.client_secret)
    server = ControlServer(config, table, lexicon, feed_client, clock)
    return server, feed, clock


WORD = ControlWord(1, 1, Opcode.ON)


class TestIngest:
    def test_no_new_posts(self, table, lexicon):
        server, feed, _ = make_server(table, lexicon)
        assert server.ingest_cycle() == 0
        assert server.cursor == 0

    def test_one_command_post(self, table, lexicon):
        server, feed, _ = make_server(table, lexicon)
        feed.inject_post("alice", "turn on the bedroom light at 70%")
        assert server.ingest_cycle() == 1
        cmd = server.commands[1]
        assert cmd.status == CommandStatus.PENDING
        assert cmd.source == "FEED"
        assert cmd.word == ControlWord(1, 1, Opcode.SET_LEVEL, 70)
        assert server.cursor == 1

    def test_scene_post_marks_source_scene(self, table, lexicon):
        server, feed, _ = make_server(table, lexicon)
        feed.inject_post("alice", "what a wonderful lovely day")
        assert server.ingest_cycle() == 2
        assert {c.source for c in server.commands.values()} == {"SCENE"}
        assert {c.post for c in server.commands.values()} == {1}

    def test_feed_unreachable_skips_cycle(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)

        class DownTransport:
            def request(self, *a, **k):
                from homesim.httpkit import TransportError

                raise TransportError("connection refused")

        server.feed_client = FeedClient(DownTransport(), "hub-app", "s3cret")
        assert server.ingest_cycle() == 0
        assert server.cursor == 0

    def test_posts_processed_in_id_order(self, table, lexicon):
        server, feed, _ = make_server(table, lexicon)
        feed.inject_post("a", "turn the bedroom light on")
        feed.inject_post("a", "turn the bedroom light off")
        server.ingest_cycle()
        words = [server.commands[s].word.opcode for s in sorted(server.commands)]
        assert words == [Opcode.ON, Opcode.OFF]


class TestGetCommands:
    def test_empty_queue(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        assert server.handle_get_commands(0) == []

    def test_serves_pending_and_marks_delivered(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server._enqueue(WORD, "MANUAL", None)
        batch = server.handle_get_commands(0)
        assert [c.seq for c in batch] == [1, 2]
        assert all(c.status == CommandStatus.DELIVERED for c in batch)

    def test_delivered_not_reserved(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        assert [c.seq for c in server.handle_get_commands(0)] == [1]
        assert server.handle_get_commands(0) == []

    def test_after_filter(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        for _ in range(3):
            server._enqueue(WORD, "MANUAL", None)
        assert [c.seq for c in server.handle_get_commands(2)] == [3]

    def test_batch_cap(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False, batch_cap=16)
        for _ in range(20):
            server._enqueue(WORD, "MANUAL", None)
        assert len(server.handle_get_commands(0)) == 16

    def test_no_seq_served_twice(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        for _ in range(40):
            server._enqueue(WORD, "MANUAL", None)
        seen = []
        while batch := server.handle_get_commands(0):
            seen.extend(c.seq for c in batch)
        assert sorted(seen) == list(range(1, 41))
        assert len(set(seen)) == 40


def ack(seq, ok=True, state=None):
    return {"acks": [{"seq": seq, "ok": ok, "state": state}], "nodes": []}


class TestPostStatus:
    def test_ack_transitions_to_acked(self, table, lexicon):
        server, _, clock = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        clock.tick(50)
        server.handle_post_status(ack(1, True))
        cmd = server.commands[1]
        assert cmd.status == CommandStatus.ACKED
        assert cmd.resolved_at == 50

    def test_nack_transitions_to_failed(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        server.handle_post_status(ack(1, False))
        assert server.commands[1].status == CommandStatus.FAILED

    def test_duplicate_ack_is_idempotent(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        server.handle_post_status(ack(1, True))
        server.handle_post_status(ack(1, False))  # terminal states absorb
        assert server.commands[1].status == CommandStatus.ACKED

    def test_unknown_seq_ignored_not_fatal(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server.handle_post_status(ack(99, True))

    def test_malformed_body_rejected_atomically(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        bad = {"acks": [{"seq": 1, "ok": True}, {"nonsense": True}], "nodes": []}
        with pytest.raises(CommandRejected):
            server.handle_post_status(bad)
        assert server.commands[1].status == CommandStatus.DELIVERED  # nothing applied

    def test_ack_state_updates_mirror(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        state = {"appliance": 1, "kind": "LIGHT", "on": True, "level": 70}
        server.handle_post_status(ack(1, True, state))
        assert server.nodes[1].appliances[0].level == 70

    def test_node_records_update_mirror_and_last_seen(self, table, lexicon):
        server, _, clock = make_server(table, lexicon, with_feed=False)
        clock.now = 777
        report = {"acks": [], "nodes": [{
            "node": 2,
            "appliances": [{"appliance": 1, "kind": "LIGHT", "on": False, "level": 0}],
        }]}
        server.handle_post_status(report)
        assert server.nodes[2].last_seen == 777


class TestRequeue:
    def test_fresh_delivery_untouched(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        assert server.requeue_stale(1000) == 0

    def test_stale_delivery_requeued(self, table, lexicon):
        server, _, clock = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        clock.tick(1001)
        assert server.requeue_stale(1000) == 1
        assert server.commands[1].status == CommandStatus.PENDING
        # and it is served again with the same seq
        assert [c.seq for c in server.handle_get_commands(0)] == [1]

    def test_terminal_states_never_requeued(self, table, lexicon):
        server, _, clock = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        server.handle_post_status(ack(1, True))
        clock.tick(10_000)
        assert server.requeue_stale(1000) == 0
        assert server.commands[1].status == CommandStatus.ACKED


class TestManual:
    def test_valid_word_enqueued(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        seq = server.handle_manual_command(ControlWord(1, 1, Opcode.ON))
        assert server.commands[seq].source == "MANUAL"
        assert server.commands[seq].status == CommandStatus.PENDING

    def test_out_of_range_level_rejected(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        with pytest.raises(CommandRejected):
            server.handle_manual_command(ControlWord(1, 1, Opcode.SET_LEVEL, 150))

    def test_unknown_node_rejected(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        with pytest.raises(CommandRejected):
            server.handle_manual_command(ControlWord(99, 1, Opcode.ON))

    def test_unknown_appliance_rejected(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        with pytest.raises(CommandRejected):
            server.handle_manual_command(ControlWord(1, 9, Opcode.ON))

    def test_fan_level_range(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server.handle_manual_command(ControlWord(1, 2, Opcode.SET_LEVEL, 3))
        with pytest.raises(CommandRejected):
            server.handle_manual_command(ControlWord(1, 2, Opcode.SET_LEVEL, 4))


class TestGetState:
    def test_fresh_server_empty(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        assert server.handle_get_state() == {"nodes": [], "recent": []}

    def test_recent_contains_acked_command(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        server._enqueue(WORD, "MANUAL", None)
        server.handle_get_commands(0)
        server.handle_post_status(ack(1, True))
        snap = server.handle_get_state()
        assert snap["recent"][0]["status"] == "ACKED"

    def test_recent_caps_at_50(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        for _ in range(60):
            server._enqueue(WORD, "MANUAL", None)
        snap = server.handle_get_state()
        assert len(snap["recent"]) == 50
        assert snap["recent"][0]["seq"] == 11  # latest 50, ascending


class TestConservation:
    @given(st.lists(st.sampled_from(["enqueue", "fetch", "ack", "fail", "requeue"]),
                    min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_every_seq_in_exactly_one_status(self, ops):
        from homesim.intent import LookupTable, Lexicon as Lex
        from homesim.scenario import default_lexicon_path, default_table_path

        table = LookupTable.from_file(default_table_path())
        lexicon = Lex.from_file(default_lexicon_path())
        server, _, clock = make_server(table, lexicon, with_feed=False)
        delivered: list[int] = []
        enqueued = 0
        for op in ops:
            clock.tick(100)
            if op == "enqueue":
                server._enqueue(WORD, "MANUAL", None)
                enqueued += 1
            elif op == "fetch":
                delivered.extend(c.seq for c in server.handle_get_commands(0))
            elif op in ("ack", "fail") and delivered:
                seq = delivered.pop(0)
                server.handle_post_status(ack(seq, op == "ack"))
            elif op == "requeue":
                requeued = {
                    c.seq for c in server.commands.values()
                    if c.status == CommandStatus.DELIVERED
                    and clock.now - c.delivered_at > 200
                }
                server.requeue_stale(200)
                delivered = [s for s in delivered if s not in requeued]
            counts = server.counts_by_status()
            assert sum(counts.values()) == enqueued == len(server.commands)


class TestPersistence:
    def test_round_trip_restores_everything(self, table, lexicon, tmp_path):
        path = str(tmp_path / "snap.json")
        server, feed, clock = make_server(table, lexicon, persistence_path=path)
        feed.inject_post("alice", "turn on the bedroom light at 70%")
        server.ingest_cycle()
        server._enqueue(WORD, "MANUAL", None)
        server.persist()
        server.handle_get_commands(0)
        server.handle_post_status(ack(1, True, {
            "appliance": 1, "kind": "LIGHT", "on": True, "level": 70,
        }))

        reborn, _, _ = make_server(table, lexicon, clock=clock, persistence_path=path,
                                   with_feed=False)
        assert reborn.next_seq == server.next_seq
        assert reborn.cursor == server.cursor == 1
        assert {s: c.status for s, c in reborn.commands.items()} == \
               {s: c.status for s, c in server.commands.items()}
        assert reborn.nodes[1].appliances[0].level == 70

    def test_seq_high_water_mark_survives_restart(self, table, lexicon, tmp_path):
        path = str(tmp_path / "snap.json")
        server, _, clock = make_server(table, lexicon, persistence_path=path,
                                       with_feed=False)
        for _ in range(5):
            server._enqueue(WORD, "MANUAL", None)
        server.persist()
        reborn, _, _ = make_server(table, lexicon, clock=clock, persistence_path=path,
                                   with_feed=False)
        new_cmd = reborn._enqueue(WORD, "MANUAL", None)
        assert new_cmd.seq == 6  # never reused

    def test_snapshot_is_valid_json_after_every_mutation(self, table, lexicon, tmp_path):
        path = str(tmp_path / "snap.json")
        server, _, _ = make_server(table, lexicon, persistence_path=path, with_feed=False)
        server.handle_manual_command(ControlWord(1, 1, Opcode.ON))
        with open(path) as f:
            snap = json.load(f)
        assert snap["next_seq"] == 2


class TestHttpApi:
    def test_commands_endpoint_shape(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        transport = InProcessTransport(server.router())
        server._enqueue(ControlWord(1, 1, Opcode.SET_LEVEL, 70), "FEED", 1)
        resp = transport.request("GET", "/api/commands", query={"after": "0"})
        assert resp.status == 200
        assert resp.body["commands"] == [
            {"seq": 1, "node": 1, "appliance": 1, "opcode": 2, "value": 70}
        ]

    def test_manual_endpoint_codes(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        transport = InProcessTransport(server.router())
        ok = transport.request("POST", "/api/manual",
                               body={"node": 1, "appliance": 1, "opcode": 1, "value": 0})
        assert (ok.status, ok.body["seq"]) == (202, 1)
        bad = transport.request("POST", "/api/manual",
                                body={"node": 1, "appliance": 1, "opcode": 2, "value": 150})
        assert bad.status == 422
        garbage = transport.request("POST", "/api/manual", body={"node": "zap"})
        assert garbage.status == 422

    def test_status_endpoint_codes(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        transport = InProcessTransport(server.router())
        assert transport.request("POST", "/api/status",
                                 body={"acks": [], "nodes": []}).status == 200
        assert transport.request("POST", "/api/status",
                                 body={"acks": [{"bad": 1}], "nodes": []}).status == 400

    def test_state_endpoint(self, table, lexicon):
        server, _, _ = make_server(table, lexicon, with_feed=False)
        transport = InProcessTransport(server.router())
        resp = transport.request("GET", "/api/state")
        assert resp.status == 200
        assert resp.body == {"nodes": [], "recent": []}

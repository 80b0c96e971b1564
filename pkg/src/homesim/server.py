"""Control server: polls the feed, runs the intent pipeline, owns the command
queue and node-state mirror, and serves the hub-polling / manual-control API.

Queue statuses move only along PENDING -> DELIVERED -> (ACKED | FAILED);
requeue_stale is the single path back from DELIVERED to PENDING.  Every
mutating handler persists the snapshot *before* replying, so a killed and
restarted server never re-serves a batch a hub has already received and never
reuses a sequence number.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

from .feed import AuthError, FeedClient
from .httpkit import Request, Response, Router, TransportError, static_file_handler
from .intent import ControlWord, Lexicon, LookupTable, process_post
from .protocol import ApplianceState, Opcode


class CommandStatus(Enum):
    PENDING = "PENDING"
    DELIVERED = "DELIVERED"
    ACKED = "ACKED"
    FAILED = "FAILED"


TERMINAL = {CommandStatus.ACKED, CommandStatus.FAILED}


@dataclass
class QueuedCommand:
    seq: int
    word: ControlWord
    source: str  # FEED | MANUAL | SCENE
    post: int | None
    status: CommandStatus
    created_at: int
    delivered_at: int | None = None
    resolved_at: int | None = None

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            **self.word.to_json(),
            "source": self.source,
            "post": self.post,
            "status": self.status.value,
            "created_at": self.created_at,
            "delivered_at": self.delivered_at,
            "resolved_at": self.resolved_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QueuedCommand":
        return cls(
            seq=int(obj["seq"]),
            word=ControlWord.from_json(obj),
            source=obj["source"],
            post=obj.get("post"),
            status=CommandStatus(obj["status"]),
            created_at=int(obj["created_at"]),
            delivered_at=obj.get("delivered_at"),
            resolved_at=obj.get("resolved_at"),
        )


@dataclass
class NodeStatusRecord:
    node: int
    appliances: list[ApplianceState]
    last_seen: int

    def to_json(self) -> dict:
        return {
            "node": self.node,
            "appliances": [a.to_json() for a in self.appliances],
            "last_seen": self.last_seen,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NodeStatusRecord":
        # Hub reports carry no last_seen; the server stamps receipt time.
        return cls(
            node=int(obj["node"]),
            appliances=[ApplianceState.from_json(a) for a in obj["appliances"]],
            last_seen=int(obj.get("last_seen", 0)),
        )


@dataclass
class ServerConfig:
    client_id: str = "hub-app"
    client_secret: str = "s3cret"
    poll_period_ms: int = 1000
    batch_cap: int = 16
    requeue_timeout_ms: int = 5000
    failsafe_enabled: bool = True
    persistence_path: str | None = None
    panel_dir: str | None = None
    listen_port: int = 0  # networked mode only; 0 = ephemeral


class CommandRejected(Exception):
    pass


class ControlServer:
    def __init__(self, config: ServerConfig, table: LookupTable, lexicon: Lexicon,
                 feed_client: FeedClient | None, clock, trace=None):
        self.config = config
        self.table = table
        self.lexicon = lexicon
        self.feed_client = feed_client
        self._clock = clock
        self._trace = trace
        self.commands: dict[int, QueuedCommand] = {}
        self.next_seq = 1
        self.cursor = 0
        self.nodes: dict[int, NodeStatusRecord] = {}
        self._load()

    @property
    def now(self) -> int:
        return self._clock.now

    def _emit(self, ev: str, **fields) -> None:
        if self._trace is not None:
            self._trace.emit(ev, t=self.now, **fields)

    # Persistence -------------------------------------------------------------

    def _load(self) -> None:
        path = self.config.persistence_path
        if not path or not os.path.exists(path):
            return
        with open(path) as f:
            snap = json.load(f)
        self.next_seq = snap["next_seq"]
        self.cursor = snap["cursor"]
        self.commands = {c["seq"]: QueuedCommand.from_json(c) for c in snap["commands"]}
        self.nodes = {r["node"]: NodeStatusRecord.from_json(r) for r in snap["nodes"]}

    def persist(self) -> None:
        path = self.config.persistence_path
        if not path:
            return
        snap = {
            "next_seq": self.next_seq,
            "cursor": self.cursor,
            "commands": [self.commands[s].to_json() for s in sorted(self.commands)],
            "nodes": [self.nodes[n].to_json() for n in sorted(self.nodes)],
        }
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".snap-")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(snap, f)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)  # atomic; a kill mid-write leaves the old snapshot
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # Queue -------------------------------------------------------------------

    def _enqueue(self, word: ControlWord, source: str, post: int | None) -> QueuedCommand:
        cmd = QueuedCommand(
            seq=self.next_seq, word=word, source=source, post=post,
            status=CommandStatus.PENDING, created_at=self.now,
        )
        self.next_seq += 1
        self.commands[cmd.seq] = cmd
        self._emit("enqueue", seq=cmd.seq, source=source, node=word.node,
                   appliance=word.appliance, opcode=int(word.opcode), value=word.value)
        return cmd

    def ingest_cycle(self) -> int:
        """Fetch new posts, run the pipeline on each in id order, enqueue.

        The cursor advances only together with the enqueued commands (one
        atomic snapshot), so a crash in between re-processes the same posts
        exactly once after restart.
        """
        if self.feed_client is None:
            return 0
        try:
            posts, new_cursor = self.feed_client.fetch(self.cursor)
        except (TransportError, AuthError) as e:
            self._emit("feed_error", error=str(e))
            return 0
        enqueued = 0
        for p in posts:
            try:
                words, ptrace = process_post(
                    p.text, self.table, self.lexicon, self.config.failsafe_enabled
                )
            except Exception as e:  # malformed post must not wedge the cycle
                self._emit("post_error", post=p.id, error=repr(e))
                continue
            source = "FEED" if ptrace.path == "NLP" else "SCENE"
            self._emit("pipeline", post=p.id, path=ptrace.path,
                       intents=len(ptrace.intents), words=len(words),
                       dropped=len(ptrace.dropped))
            for word in words:
                self._enqueue(word, source, p.id)
                enqueued += 1
        self.cursor = new_cursor
        self.persist()
        return enqueued

    def handle_get_commands(self, after: int) -> list[QueuedCommand]:
        """Serve PENDING commands with seq > after (ascending, capped) and mark
        them DELIVERED.  Persisted before the caller sees the batch."""
        batch = [
            self.commands[s]
            for s in sorted(self.commands)
            if s > after and self.commands[s].status == CommandStatus.PENDING
        ][: self.config.batch_cap]
        for cmd in batch:
            cmd.status = CommandStatus.DELIVERED
            cmd.delivered_at = self.now
            self._emit("command", seq=cmd.seq, status="DELIVERED")
        if batch:
            self.persist()
        return batch

    def handle_post_status(self, report: dict) -> None:
        """Apply hub-reported outcomes and node statuses.

        Raises CommandRejected on a malformed body (nothing applied); unknown
        seqs and illegal transitions are ignored per entry and logged.
        """
        acks, nodes = _validate_status_report(report)
        for ack in acks:
            cmd = self.commands.get(ack["seq"])
            if cmd is None:
                self._emit("status_ignored", seq=ack["seq"], reason="unknown seq")
                continue
            if cmd.status in TERMINAL:
                continue  # terminal states absorb duplicate reports
            if cmd.status != CommandStatus.DELIVERED:
                self._emit("status_ignored", seq=ack["seq"], reason=f"status {cmd.status.value}")
                continue
            cmd.status = CommandStatus.ACKED if ack["ok"] else CommandStatus.FAILED
            cmd.resolved_at = self.now
            self._emit("command", seq=cmd.seq, status=cmd.status.value)
            state = ack.get("state")
            if state is not None:
                self._apply_state(cmd.word.node, ApplianceState.from_json(state))
        for rec in nodes:
            self.nodes[rec.node] = NodeStatusRecord(rec.node, rec.appliances, self.now)
        self.persist()

    def _apply_state(self, node: int, state: ApplianceState) -> None:
        rec = self.nodes.get(node)
        if rec is None:
            rec = NodeStatusRecord(node, [], self.now)
            self.nodes[node] = rec
        rec.last_seen = self.now
        for i, existing in enumerate(rec.appliances):
            if existing.appliance == state.appliance:
                rec.appliances[i] = state
                return
        rec.appliances.append(state)
        rec.appliances.sort(key=lambda a: a.appliance)

    def requeue_stale(self, timeout_ms: int | None = None) -> int:
        """Return DELIVERED commands older than the timeout to PENDING."""
        timeout = self.config.requeue_timeout_ms if timeout_ms is None else timeout_ms
        count = 0
        for cmd in self.commands.values():
            if (cmd.status == CommandStatus.DELIVERED
                    and cmd.delivered_at is not None
                    and self.now - cmd.delivered_at > timeout):
                cmd.status = CommandStatus.PENDING
                cmd.delivered_at = None
                self._emit("command", seq=cmd.seq, status="PENDING", requeued=True)
                count += 1
        if count:
            self.persist()
        return count

    def handle_manual_command(self, word: ControlWord) -> int:
        """Validate against the registered devices and enqueue with source MANUAL."""
        app = self.table.find_appliance(word.node, word.appliance)
        if word.node not in self.table.appliances:
            raise CommandRejected(f"unknown node {word.node}")
        if app is None:
            raise CommandRejected(f"unknown appliance {word.appliance} on node {word.node}")
        if word.opcode == Opcode.SET_LEVEL:
            from .protocol import LEVEL_RANGE

            lo, hi = LEVEL_RANGE[app.kind]
            if not lo <= word.value <= hi:
                raise CommandRejected(
                    f"value {word.value} outside {app.kind.name} range [{lo}, {hi}]"
                )
        cmd = self._enqueue(word, "MANUAL", None)
        self.persist()
        return cmd.seq

    def handle_get_state(self) -> dict:
        recent = [self.commands[s].to_json() for s in sorted(self.commands)[-50:]]
        return {
            "nodes": [self.nodes[n].to_json() for n in sorted(self.nodes)],
            "recent": recent,
        }

    def tick(self) -> None:
        """One poll-period turn: ingest the feed, then requeue stale deliveries."""
        self.ingest_cycle()
        self.requeue_stale()

    def counts_by_status(self) -> dict[str, int]:
        counts = {s.value: 0 for s in CommandStatus}
        for cmd in self.commands.values():
            counts[cmd.status.value] += 1
        return counts

    # HTTP surface -------------------------------------------------------------

    def router(self) -> Router:
        router = Router()
        router.add("GET", "/api/commands", self._http_commands)
        router.add("POST", "/api/status", self._http_status)
        router.add("POST", "/api/manual", self._http_manual)
        router.add("GET", "/api/state", self._http_state)
        if self.config.panel_dir:
            router.add("GET", "/panel", static_file_handler(self.config.panel_dir, "/panel"), prefix=True)
        return router

    def _http_commands(self, req: Request) -> Response:
        try:
            after = int(req.query.get("after", "0"))
        except ValueError:
            return Response(400, {"error": "after must be an integer"})
        batch = self.handle_get_commands(after)
        return Response(200, {
            "commands": [{"seq": c.seq, **c.word.to_json()} for c in batch]
        })

    def _http_status(self, req: Request) -> Response:
        try:
            self.handle_post_status(req.body or {})
        except CommandRejected as e:
            return Response(400, {"error": str(e)})
        return Response(200, {"ok": True})

    def _http_manual(self, req: Request) -> Response:
        try:
            word = ControlWord.from_json(req.body or {})
        except (ValueError, KeyError, TypeError) as e:
            return Response(422, {"error": f"malformed control word: {e}"})
        try:
            seq = self.handle_manual_command(word)
        except CommandRejected as e:
            return Response(422, {"error": str(e)})
        return Response(202, {"seq": seq})

    def _http_state(self, req: Request) -> Response:
        return Response(200, self.handle_get_state())


def _validate_status_report(report: dict) -> tuple[list[dict], list[NodeStatusRecord]]:
    if not isinstance(report, dict):
        raise CommandRejected("report must be an object")
    acks_in = report.get("acks", [])
    nodes_in = report.get("nodes", [])
    if not isinstance(acks_in, list) or not isinstance(nodes_in, list):
        raise CommandRejected("acks and nodes must be lists")
    acks = []
    for entry in acks_in:
        try:
            ack = {"seq": int(entry["seq"]), "ok": bool(entry["ok"]),
                   "state": entry.get("state")}
            if ack["state"] is not None:
                ApplianceState.from_json(ack["state"])  # reject bad states up front
        except (KeyError, TypeError, ValueError) as e:
            raise CommandRejected(f"malformed ack entry: {e}") from None
        acks.append(ack)
    nodes = []
    for entry in nodes_in:
        try:
            nodes.append(NodeStatusRecord.from_json(entry))
        except (KeyError, TypeError, ValueError) as e:
            raise CommandRejected(f"malformed node record: {e}") from None
    return acks, nodes

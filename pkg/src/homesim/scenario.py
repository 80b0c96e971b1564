"""End-to-end scenario runs: wires feed service, control server, hub, channel
and slave nodes from one JSON file, injects posts at scheduled times, advances
simulation time, and writes the merged event trace plus a final-state report.

In-process mode is entirely single-threaded and wall-clock free: HTTP
exchanges execute synchronously at the current simulation timestamp, so the
same scenario and seed always produce the same trace.  `--networked` serves
the feed and control server on real loopback sockets and paces the simulation
against the wall clock (integration smoke only; determinism is not guaranteed
there).
"""

from __future__ import annotations

import importlib.resources
import json
import os
import random
import time
from dataclasses import dataclass, field

from .channel import Channel, ChannelConfig
from .clock import Scheduler
from .feed import FeedClient, FeedService
from .httpkit import HttpTransport, InProcessTransport, serve_router
from .hub import Hub, HubConfig
from .intent import Lexicon, LookupTable
from .node import NodeConfig, SlaveNode
from .server import ControlServer, ServerConfig
from .trace import TraceRecorder

ACTIONS = {"inject_post", "manual_command", "reinit", "attach_node", "assert"}


class ScenarioError(Exception):
    """Scenario file failed to parse or validate (CLI exit 2)."""


def drive(sched: Scheduler, channel: Channel, until_ms: int,
          pace_start: float | None = None) -> None:
    """Advance timers and channel deliveries in global time order up to until_ms.

    The scheduler clock is synced before each channel advance so handlers
    invoked from deliveries observe the correct current time.  With
    `pace_start` (a time.monotonic() origin) the loop sleeps so simulation
    time tracks the wall clock (networked mode).
    """
    while True:
        nexts = [t for t in (sched.peek_next(), channel.peek_next()) if t is not None]
        if not nexts:
            break
        t_next = min(nexts)
        if t_next > until_ms:
            break
        if pace_start is not None:
            lag = t_next / 1000 - (time.monotonic() - pace_start)
            if lag > 0:
                time.sleep(lag)
        sched.sync(t_next)
        channel.advance(t_next)
        sched.run_due(t_next)
    sched.sync(until_ms)
    channel.advance(until_ms)
    sched.run_due(until_ms)


def default_table_path() -> str:
    return str(importlib.resources.files("homesim").joinpath("data/lookup_table.json"))


def default_lexicon_path() -> str:
    return str(importlib.resources.files("homesim").joinpath("data/sentiment_lexicon.txt"))


@dataclass
class ScriptAction:
    at_ms: int
    action: str
    params: dict


@dataclass
class Scenario:
    name: str
    duration_ms: int
    channel: ChannelConfig
    nodes: list[NodeConfig]
    hub: HubConfig
    server: ServerConfig
    feed_lifetime_ms: int
    script: list[ScriptAction]
    table_path: str
    lexicon_path: str

    @classmethod
    def from_json(cls, obj: dict, name: str = "scenario") -> "Scenario":
        try:
            duration = int(obj["duration_ms"])
        except KeyError:
            raise ScenarioError("duration_ms is required") from None
        chan = obj.get("channel", {})
        try:
            channel = ChannelConfig(
                loss_probability=float(chan.get("loss_probability", 0.0)),
                latency_min_ms=int(chan.get("latency_min_ms", 5)),
                latency_max_ms=int(chan.get("latency_max_ms", 25)),
                seed=int(chan.get("seed", obj.get("seed", 0))),
            )
            channel.validate()
        except ValueError as e:
            raise ScenarioError(f"bad channel config: {e}") from None
        try:
            nodes = [NodeConfig.from_json(n) for n in obj.get("nodes", [])]
        except (KeyError, ValueError) as e:
            raise ScenarioError(f"bad node config: {e}") from None
        addresses = [n.address for n in nodes]
        if len(addresses) != len(set(addresses)):
            raise ScenarioError("node addresses must be unique")
        for n in nodes:
            if not 1 <= n.address <= 254:
                raise ScenarioError(f"node address {n.address} outside 1..254")
            ids = [a.appliance for a in n.appliances]
            if len(ids) != len(set(ids)):
                raise ScenarioError(f"duplicate appliance ids on node {n.address}")
        hub_cfg = obj.get("hub", {})
        try:
            hub = HubConfig(
                ack_timeout_ms=int(hub_cfg.get("ack_timeout_ms", 200)),
                max_retries=int(hub_cfg.get("max_retries", 3)),
                init_window_ms=int(hub_cfg.get("init_window_ms", 500)),
                poll_period_ms=int(hub_cfg.get("poll_period_ms", 1000)),
                turnaround_ms=int(hub_cfg.get("turnaround_ms", 1)),
                cursor_path=hub_cfg.get("cursor_path"),
            )
            hub.validate()
        except ValueError as e:
            raise ScenarioError(f"bad hub config: {e}") from None
        srv = obj.get("server", {})
        server = ServerConfig(
            client_id=srv.get("client_id", "hub-app"),
            client_secret=srv.get("client_secret", "s3cret"),
            poll_period_ms=int(srv.get("poll_period_ms", 1000)),
            batch_cap=int(srv.get("batch_cap", 16)),
            requeue_timeout_ms=int(srv.get("requeue_timeout_ms", 5000)),
            failsafe_enabled=bool(srv.get("failsafe_enabled", True)),
            persistence_path=srv.get("persistence_path"),
            panel_dir=srv.get("panel_dir"),
            listen_port=int(srv.get("listen_port", 0)),
        )
        script = []
        last_at = -1
        for i, raw in enumerate(obj.get("script", [])):
            try:
                at = int(raw["at_ms"])
                action = raw["action"]
            except (KeyError, TypeError) as e:
                raise ScenarioError(f"script entry {i}: {e}") from None
            if action not in ACTIONS:
                raise ScenarioError(f"script entry {i}: unknown action {action!r}")
            if at < last_at:
                raise ScenarioError("script must be sorted by at_ms")
            if at > duration:
                raise ScenarioError(f"script entry {i} at {at} ms is beyond duration")
            last_at = at
            params = {k: v for k, v in raw.items() if k not in ("at_ms", "action")}
            script.append(ScriptAction(at, action, params))
        scenario = cls(
            name=obj.get("name", name),
            duration_ms=duration,
            channel=channel,
            nodes=nodes,
            hub=hub,
            server=server,
            feed_lifetime_ms=int(obj.get("feed", {}).get("token_lifetime_ms", 3600_000)),
            script=script,
            table_path=obj.get("table_path") or default_table_path(),
            lexicon_path=obj.get("lexicon_path") or default_lexicon_path(),
        )
        scenario._validate_script_refs()
        return scenario

    def _validate_script_refs(self) -> None:
        defined = {n.address for n in self.nodes}
        for entry in self.script:
            ref = None
            if entry.action in ("manual_command", "attach_node"):
                ref = entry.params.get("node")
            elif entry.action == "assert" and entry.params.get("check", {}).get("kind") == "appliance":
                ref = entry.params["check"].get("node")
            if ref is not None and int(ref) not in defined:
                raise ScenarioError(f"script references undefined node {ref}")

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        try:
            with open(path) as f:
                obj = json.load(f)
        except OSError as e:
            raise ScenarioError(f"cannot read scenario: {e}") from None
        except ValueError as e:
            raise ScenarioError(f"scenario is not valid JSON: {e}") from None
        base = os.path.dirname(os.path.abspath(path))
        # Paths inside a scenario resolve relative to the scenario file.
        for key in ("table_path", "lexicon_path"):
            if obj.get(key) and not os.path.isabs(obj[key]):
                obj[key] = os.path.join(base, obj[key])
        for section, key in (("server", "persistence_path"), ("server", "panel_dir"),
                             ("hub", "cursor_path")):
            val = obj.get(section, {}).get(key)
            if val and not os.path.isabs(val):
                obj[section][key] = os.path.join(base, val)
        return cls.from_json(obj, name=os.path.splitext(os.path.basename(path))[0])


@dataclass
class RunResult:
    exit_code: int
    failures: list[str]
    report: dict
    trace: TraceRecorder


class ScenarioRunner:
    def __init__(self, scenario: Scenario, seed: int | None = None, networked: bool = False):
        self.scenario = scenario
        if seed is not None:
            scenario.channel = ChannelConfig(
                loss_probability=scenario.channel.loss_probability,
                latency_min_ms=scenario.channel.latency_min_ms,
                latency_max_ms=scenario.channel.latency_max_ms,
                seed=seed,
            )
        self.networked = networked
        self.failures: list[str] = []
        self._sockets = []

    def run(self) -> RunResult:
        sc = self.scenario
        sched = Scheduler()
        tracer = TraceRecorder(clock=sched)
        channel = Channel(sc.channel, tracer)
        table = LookupTable.from_file(sc.table_path)
        lexicon = Lexicon.from_file(sc.lexicon_path)
        token_rng = random.Random(sc.channel.seed ^ 0x5EED_F00D)
        feed = FeedService(
            sched, {sc.server.client_id: sc.server.client_secret},
            token_lifetime_ms=sc.feed_lifetime_ms, rng=token_rng,
        )
        feed_router = feed.router()

        if self.networked:
            feed_sock = serve_router(feed_router)
            feed_base = f"http://127.0.0.1:{feed_sock.server_address[1]}"
            feed_transport = HttpTransport(feed_base, clock=sched, trace=tracer, client="server")
            script_feed = HttpTransport(feed_base, clock=sched, trace=tracer, client="script")
            self._sockets.append(feed_sock)
        else:
            feed_transport = InProcessTransport(feed_router, sched, tracer, client="server")
            script_feed = InProcessTransport(feed_router, sched, tracer, client="script")

        server = ControlServer(
            sc.server, table, lexicon,
            FeedClient(feed_transport, sc.server.client_id, sc.server.client_secret),
            sched, tracer,
        )
        server_router = server.router()

        if self.networked:
            srv_sock = serve_router(server_router, port=sc.server.listen_port)
            srv_base = f"http://127.0.0.1:{srv_sock.server_address[1]}"
            hub_transport = HttpTransport(srv_base, clock=sched, trace=tracer, client="hub")
            script_server = HttpTransport(srv_base, clock=sched, trace=tracer, client="script")
            self._sockets.append(srv_sock)
            self.server_url = srv_base
            print(f"control server on {srv_base}", flush=True)
        else:
            hub_transport = InProcessTransport(server_router, sched, tracer, client="hub")
            script_server = InProcessTransport(server_router, sched, tracer, client="script")
            self.server_url = None

        hub = Hub(sc.hub, hub_transport, channel, sched, tracer)
        hub.attach()
        nodes = {}
        for cfg in sc.nodes:
            node = SlaveNode(cfg, channel, sched, tracer)
            nodes[cfg.address] = node
            if cfg.attached:
                node.attach()

        self.server, self.hub, self.nodes, self.channel = server, hub, nodes, channel

        tracer.emit("boot", t=0, who="channel", seed=sc.channel.seed)
        tracer.emit("boot", t=0, who="feed")
        tracer.emit("boot", t=0, who="server")
        tracer.emit("boot", t=0, who="hub")
        for addr in sorted(nodes):
            tracer.emit("boot", t=0, who=f"n{addr}", attached=nodes[addr].config.attached)

        def server_tick():
            with server_router.lock:
                server.tick()
            sched.schedule(sched.now + sc.server.poll_period_ms, server_tick)

        sched.schedule(sc.server.poll_period_ms, server_tick)
        hub.start()

        for entry in sc.script:
            sched.schedule(entry.at_ms, self._make_action(entry, tracer, script_feed, script_server))

        drive(sched, channel, sc.duration_ms,
              pace_start=time.monotonic() if self.networked else None)

        for sock in self._sockets:
            sock.shutdown()

        report = self._report()
        exit_code = 1 if self.failures else 0
        return RunResult(exit_code, self.failures, report, tracer)

    def _make_action(self, entry: ScriptAction, tracer, script_feed, script_server):
        def run_action():
            p = entry.params
            if entry.action == "inject_post":
                resp = script_feed.request(
                    "POST", "/feed/inject",
                    body={"author": p.get("author", "user"), "text": p.get("text", "")},
                )
                tracer.emit("inject", post=resp.body.get("id") if resp.body else None,
                            status=resp.status)
            elif entry.action == "manual_command":
                resp = script_server.request(
                    "POST", "/api/manual",
                    body={"node": p["node"], "appliance": p["appliance"],
                          "opcode": p["opcode"], "value": p.get("value", 0)},
                )
                tracer.emit("manual", status=resp.status,
                            seq=(resp.body or {}).get("seq"))
            elif entry.action == "reinit":
                self.hub.request_reinit()
                tracer.emit("reinit")
            elif entry.action == "attach_node":
                node = self.nodes[int(p["node"])]
                node.attach()
                tracer.emit("attach", endpoint=node.endpoint_id)
            elif entry.action == "assert":
                ok, detail = self._check(p.get("check", {}))
                tracer.emit("assert", ok=ok, check=p.get("check", {}))
                if not ok:
                    self.failures.append(f"t={entry.at_ms}: {detail}")

        return run_action

    def _check(self, check: dict) -> tuple[bool, str]:
        kind = check.get("kind")
        if kind == "appliance":
            node = self.nodes.get(int(check["node"]))
            if node is None:
                return False, f"node {check['node']} not defined"
            model = node.appliances.get(int(check["appliance"]))
            if model is None:
                return False, f"appliance {check['appliance']} missing on node {check['node']}"
            state = model.state
            for key in ("on", "level"):
                if key in check and getattr(state, key) != check[key]:
                    return False, (
                        f"appliance n{check['node']}/{check['appliance']}: "
                        f"{key}={getattr(state, key)}, expected {check[key]}"
                    )
            return True, ""
        if kind == "command":
            cmds = list(self.server.commands.values())
            if "seq" in check:
                cmds = [c for c in cmds if c.seq == int(check["seq"])]
            if "source" in check:
                cmds = [c for c in cmds if c.source == check["source"]]
            matching = [c for c in cmds if c.status.value == check.get("status", c.status.value)]
            if "count" in check:
                ok = len(matching) == int(check["count"])
                return ok, (
                    "" if ok else
                    f"{len(matching)} commands match {check}, expected {check['count']}"
                )
            return (len(matching) > 0), (f"no command matches {check}" if not matching else "")
        if kind == "registry":
            expected = sorted(int(a) for a in check.get("addresses", []))
            actual = sorted(self.hub.registry)
            ok = actual == expected
            return ok, "" if ok else f"registry {actual}, expected {expected}"
        return False, f"unknown assert kind {kind!r}"

    def _report(self) -> dict:
        return {
            "name": self.scenario.name,
            "duration_ms": self.scenario.duration_ms,
            "seed": self.scenario.channel.seed,
            "assert_failures": self.failures,
            "registry": sorted(self.hub.registry),
            "epoch": self.hub.epoch,
            "commands": self.server.counts_by_status(),
            "nodes": {
                str(addr): [m.state.to_json() for _, m in sorted(node.appliances.items())]
                for addr, node in sorted(self.nodes.items())
            },
        }


def run_scenario(path: str, seed: int | None = None, trace_path: str | None = None,
                 networked: bool = False) -> RunResult:
    """Load, validate and execute a scenario file; see CLI for exit codes."""
    scenario = Scenario.from_file(path)
    runner = ScenarioRunner(scenario, seed=seed, networked=networked)
    result = runner.run()
    if trace_path:
        result.trace.write(trace_path)
    return result

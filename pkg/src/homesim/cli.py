"""Command-line entry points.

    homesim run <scenario.json> [--seed N] [--trace out.jsonl] [--networked]
    homesim parse <text>
    homesim frame decode <hex>
    homesim replay-check a.jsonl b.jsonl
    homesim serve feed|control ...       (standalone services for networked runs)
    homesim hub --server-url ... --nodes nodes.json

Exit codes for `run`: 0 all asserts held, 1 first failed assert (named on
stderr), 2 scenario parse/validation failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time

from . import scenario as scenario_mod
from .channel import Channel, ChannelConfig
from .clock import Scheduler, WallClock
from .feed import FeedClient, FeedService
from .httpkit import HttpTransport, serve_router
from .hub import Hub, HubConfig
from .intent import Lexicon, LookupTable, process_post
from .protocol import DecodeError, decode_frame, format_frame
from .server import ControlServer, ServerConfig
from .trace import replay_check


def _cmd_run(args) -> int:
    try:
        result = scenario_mod.run_scenario(
            args.scenario, seed=args.seed, trace_path=args.trace, networked=args.networked
        )
    except scenario_mod.ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(result.report, indent=2))
    if args.report:
        with open(args.report, "w") as f:
            json.dump(result.report, f, indent=2)
    if result.failures:
        print(f"assert failed: {result.failures[0]}", file=sys.stderr)
    return result.exit_code


def _cmd_parse(args) -> int:
    table = LookupTable.from_file(args.table or scenario_mod.default_table_path())
    lexicon = Lexicon.from_file(args.lexicon or scenario_mod.default_lexicon_path())
    _, ptrace = process_post(args.text, table, lexicon)
    print(json.dumps(ptrace.to_json(), indent=2))
    return 0


def _cmd_frame_decode(args) -> int:
    try:
        frame = decode_frame(bytes.fromhex(args.hex))
    except ValueError as e:
        reason = e.reason if isinstance(e, DecodeError) else str(e)
        print(json.dumps({"error": reason}), file=sys.stderr)
        return 1
    print(json.dumps(format_frame(frame), indent=2))
    return 0


def _cmd_replay_check(args) -> int:
    diff = replay_check(args.trace_a, args.trace_b)
    if diff is None:
        print("identical")
        return 0
    line, a, b = diff
    print(f"divergence at line {line}:\n- {a}\n+ {b}")
    return 1


def _cmd_serve_feed(args) -> int:
    clock = WallClock()
    service = FeedService(
        clock, {args.client_id: args.client_secret},
        rng=random.Random(args.seed) if args.seed is not None else None,
    )
    sock = serve_router(service.router(), port=args.port)
    print(f"feed service on http://127.0.0.1:{sock.server_address[1]}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        return 0


def _cmd_serve_control(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    clock = WallClock()
    config = ServerConfig(
        client_id=cfg.get("client_id", "hub-app"),
        client_secret=cfg.get("client_secret", "s3cret"),
        poll_period_ms=int(cfg.get("poll_period_ms", 1000)),
        batch_cap=int(cfg.get("batch_cap", 16)),
        requeue_timeout_ms=int(cfg.get("requeue_timeout_ms", 5000)),
        failsafe_enabled=bool(cfg.get("failsafe_enabled", True)),
        persistence_path=cfg.get("persistence_path"),
        panel_dir=cfg.get("panel_dir"),
    )
    table = LookupTable.from_file(cfg.get("table_path") or scenario_mod.default_table_path())
    lexicon = Lexicon.from_file(cfg.get("lexicon_path") or scenario_mod.default_lexicon_path())
    feed_client = None
    if cfg.get("feed_url"):
        feed_client = FeedClient(
            HttpTransport(cfg["feed_url"]), config.client_id, config.client_secret
        )
    server = ControlServer(config, table, lexicon, feed_client, clock)
    router = server.router()
    sock = serve_router(router, port=int(cfg.get("listen_port", 0)))
    print(f"control server on http://127.0.0.1:{sock.server_address[1]}", flush=True)
    try:
        while True:
            time.sleep(config.poll_period_ms / 1000)
            with router.lock:
                server.tick()
    except KeyboardInterrupt:
        return 0


def _cmd_hub(args) -> int:
    """Standalone hub against a live control server; RF side simulated in-process."""
    from .node import NodeConfig, SlaveNode
    from .trace import TraceRecorder

    with open(args.nodes) as f:
        node_cfgs = [NodeConfig.from_json(n) for n in json.load(f)]
    sched = Scheduler()
    tracer = TraceRecorder(clock=sched)
    channel = Channel(ChannelConfig(seed=args.seed), tracer)
    config = HubConfig(
        ack_timeout_ms=args.ack_timeout, max_retries=args.retries,
        poll_period_ms=args.poll_period,
    )
    hub = Hub(config, HttpTransport(args.server_url, clock=sched, trace=tracer, client="hub"),
              channel, sched, tracer)
    hub.attach()
    if args.reinit:
        hub.request_reinit()
    for cfg in node_cfgs:
        node = SlaveNode(cfg, channel, sched, tracer)
        if cfg.attached:
            node.attach()
    hub.start()
    duration = args.duration or 2**31
    scenario_mod.drive(sched, channel, duration, pace_start=time.monotonic())
    if args.trace:
        tracer.write(args.trace)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homesim")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", default=None, help="write the event trace here")
    p.add_argument("--report", default=None, help="write the final report JSON here")
    p.add_argument("--networked", action="store_true",
                   help="serve feed and control server on real sockets, wall-clock paced")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("parse", help="run the intent pipeline on one text")
    p.add_argument("text")
    p.add_argument("--table", default=None)
    p.add_argument("--lexicon", default=None)
    p.set_defaults(fn=_cmd_parse)

    p = sub.add_parser("frame", help="frame tools")
    frame_sub = p.add_subparsers(dest="frame_command", required=True)
    pd = frame_sub.add_parser("decode", help="pretty-print a hex-encoded frame")
    pd.add_argument("hex")
    pd.set_defaults(fn=_cmd_frame_decode)

    p = sub.add_parser("replay-check", help="compare two traces for divergence")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.set_defaults(fn=_cmd_replay_check)

    p = sub.add_parser("serve", help="standalone services")
    serve_sub = p.add_subparsers(dest="serve_command", required=True)
    pf = serve_sub.add_parser("feed")
    pf.add_argument("--port", type=int, default=0)
    pf.add_argument("--client-id", default="hub-app")
    pf.add_argument("--client-secret", default="s3cret")
    pf.add_argument("--seed", type=int, default=None)
    pf.set_defaults(fn=_cmd_serve_feed)
    pc = serve_sub.add_parser("control")
    pc.add_argument("--config", required=True)
    pc.set_defaults(fn=_cmd_serve_control)

    p = sub.add_parser("hub", help="standalone hub against a live control server")
    p.add_argument("--server-url", required=True)
    p.add_argument("--nodes", required=True, help="JSON file with node configs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ack-timeout", type=int, default=200)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--poll-period", type=int, default=1000)
    p.add_argument("--reinit", action="store_true",
                   help="force re-initialization on the next cycle")
    p.add_argument("--duration", type=int, default=0, help="stop after this many ms (0: run forever)")
    p.add_argument("--trace", default=None)
    p.set_defaults(fn=_cmd_hub)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Minimal HTTP machinery shared by the feed service and the control server.

Services are plain routers (method + path -> handler).  In simulation the
transport invokes the router synchronously at the current simulation time; in
networked mode the same router is served over a real socket and called through
urllib.  Both transports record one trace event per exchange.
"""

from __future__ import annotations

import json
import mimetypes
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, str] = field(default_factory=dict)
    headers: dict[str, str] = field(default_factory=dict)
    body: Any = None


@dataclass
class Response:
    status: int
    body: Any = None
    content_type: str = "application/json"
    raw: bytes | None = None

    def payload(self) -> bytes:
        if self.raw is not None:
            return self.raw
        return json.dumps(self.body).encode() if self.body is not None else b""


Handler = Callable[[Request], Response]


class TransportError(Exception):
    """Peer unreachable (connection refused, timeout, reset)."""


class Router:
    def __init__(self):
        self._routes: list[tuple[str, str, bool, Handler]] = []
        self.lock = threading.RLock()  # handlers mutate service state; serialize

    def add(self, method: str, path: str, handler: Handler, prefix: bool = False) -> None:
        self._routes.append((method.upper(), path, prefix, handler))

    def handle(self, req: Request) -> Response:
        with self.lock:
            for method, path, prefix, handler in self._routes:
                if method != req.method.upper():
                    continue
                if (prefix and req.path.startswith(path)) or req.path == path:
                    return handler(req)
            return Response(404, {"error": f"no route for {req.method} {req.path}"})


class InProcessTransport:
    """Synchronous loopback to a router; models HTTP without sockets."""

    def __init__(self, router: Router, clock=None, trace=None, client: str = "client"):
        self.router = router
        self._clock = clock
        self._trace = trace
        self._client = client

    def request(self, method: str, path: str, query: dict | None = None,
                headers: dict | None = None, body: Any = None) -> Response:
        req = Request(method, path, query or {}, headers or {}, body)
        resp = self.router.handle(req)
        if self._trace is not None:
            self._trace.emit(
                "http",
                t=self._clock.now if self._clock else 0,
                client=self._client,
                method=method.upper(),
                path=path + (("?" + urllib.parse.urlencode(query)) if query else ""),
                status=resp.status,
            )
        return resp


class HttpTransport:
    """urllib client for networked mode; same interface as InProcessTransport."""

    def __init__(self, base_url: str, timeout: float = 5.0, clock=None, trace=None,
                 client: str = "client"):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._clock = clock
        self._trace = trace
        self._client = client

    def request(self, method: str, path: str, query: dict | None = None,
                headers: dict | None = None, body: Any = None) -> Response:
        url = self.base_url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(url, data=data, method=method.upper())
        req.add_header("Content-Type", "application/json")
        for k, v in (headers or {}).items():
            req.add_header(k, v)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
                status = resp.status
        except urllib.error.HTTPError as e:
            raw = e.read()
            status = e.code
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as e:
            raise TransportError(str(e)) from e
        parsed = None
        if raw:
            try:
                parsed = json.loads(raw)
            except ValueError:
                parsed = None
        if self._trace is not None:
            self._trace.emit(
                "http",
                t=self._clock.now if self._clock else 0,
                client=self._client,
                method=method.upper(),
                path=path + (("?" + urllib.parse.urlencode(query)) if query else ""),
                status=status,
            )
        return Response(status, parsed, raw=raw)


class _RouterHTTPHandler(BaseHTTPRequestHandler):
    router: Router  # set on the subclass by serve_router

    protocol_version = "HTTP/1.1"

    def _dispatch(self, method: str) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        query = {k: v[-1] for k, v in urllib.parse.parse_qs(parsed.query).items()}
        body = None
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw)
            except ValueError:
                body = None
        req = Request(method, parsed.path, query, dict(self.headers.items()), body)
        try:
            resp = self.router.handle(req)
        except Exception as e:  # never kill the server thread on a handler bug
            resp = Response(500, {"error": repr(e)})
        payload = resp.payload()
        self.send_response(resp.status)
        self.send_header("Content-Type", resp.content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def log_message(self, fmt, *args):
        pass  # keep stdout clean; the trace is the log


def serve_router(router: Router, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Serve a router on a real socket in a daemon thread; returns the server."""
    handler = type("Handler", (_RouterHTTPHandler,), {"router": router})
    server = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def static_file_handler(root: str, strip_prefix: str) -> Handler:
    """Serve files under `root` for paths below `strip_prefix` (panel assets)."""
    import os

    def handler(req: Request) -> Response:
        rel = req.path[len(strip_prefix):].lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(root, rel))
        if not full.startswith(os.path.realpath(root)) or not os.path.isfile(full):
            return Response(404, {"error": "not found"})
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as f:
            return Response(200, raw=f.read(), content_type=ctype)

    return handler

"""Mock social feed service and the client that polls it.

The service models the feed provider: client-credentials auth issuing bearer
tokens, cursor-based retrieval of the latest posts, and a loopback-only
injection hook standing in for a human posting.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .httpkit import Request, Response, Router, TransportError

MAX_POST_CHARS = 280
DEFAULT_TOKEN_LIFETIME_MS = 3600_000
MIN_TOKEN_CHARS = 16


@dataclass(frozen=True)
class FeedPost:
    id: int
    author: str
    text: str
    posted_at: int

    def to_json(self) -> dict:
        return {"id": self.id, "author": self.author, "text": self.text,
                "posted_at": self.posted_at}


@dataclass(frozen=True)
class AuthToken:
    token: str
    expires_at: int


class AuthError(Exception):
    pass


class ValidationError(Exception):
    pass


class FeedService:
    """In-memory feed: ids are unique and strictly increasing in post order."""

    def __init__(self, clock, clients: dict[str, str],
                 token_lifetime_ms: int = DEFAULT_TOKEN_LIFETIME_MS,
                 rng: random.Random | None = None):
        self._clock = clock
        self._clients = dict(clients)
        self._lifetime = token_lifetime_ms
        self._rng = rng if rng is not None else random.SystemRandom()
        self._posts: list[FeedPost] = []
        self._tokens: dict[str, int] = {}  # token -> expires_at

    @property
    def now(self) -> int:
        return self._clock.now

    def authenticate(self, client_id: str, client_secret: str) -> AuthToken:
        if self._clients.get(client_id) != client_secret:
            raise AuthError("bad client credentials")
        token = "".join(self._rng.choice("0123456789abcdef") for _ in range(32))
        expires_at = self.now + self._lifetime
        self._tokens[token] = expires_at
        return AuthToken(token, expires_at)

    def _check_token(self, token: str) -> None:
        expires_at = self._tokens.get(token)
        if expires_at is None or self.now >= expires_at:
            raise AuthError("token unknown or expired")

    def fetch_latest(self, token: str, since_id: int) -> list[FeedPost]:
        """All posts with id > since_id, ascending; read-only."""
        self._check_token(token)
        return [p for p in self._posts if p.id > since_id]

    def inject_post(self, author: str, text: str) -> FeedPost:
        if len(text) > MAX_POST_CHARS:
            raise ValidationError(f"text is {len(text)} chars, maximum {MAX_POST_CHARS}")
        next_id = self._posts[-1].id + 1 if self._posts else 1
        post = FeedPost(next_id, author, text, self.now)
        self._posts.append(post)
        return post

    # HTTP surface -----------------------------------------------------------

    def router(self) -> Router:
        router = Router()
        router.add("POST", "/oauth/token", self._http_token)
        router.add("GET", "/feed/latest", self._http_latest)
        router.add("POST", "/feed/inject", self._http_inject)
        return router

    def _http_token(self, req: Request) -> Response:
        body = req.body or {}
        try:
            tok = self.authenticate(str(body.get("client_id")), str(body.get("client_secret")))
        except AuthError as e:
            return Response(401, {"error": str(e)})
        return Response(200, {"token": tok.token, "expires_in": self._lifetime // 1000})

    def _bearer(self, req: Request) -> str:
        for key, value in req.headers.items():
            if key.lower() == "authorization" and value.startswith("Bearer "):
                return value[len("Bearer "):]
        return ""

    def _http_latest(self, req: Request) -> Response:
        try:
            since_id = int(req.query.get("since_id", "0"))
            self._check_token(self._bearer(req))
        except AuthError as e:
            return Response(401, {"error": str(e)})
        except ValueError:
            return Response(400, {"error": "since_id must be an integer"})
        posts = [p for p in self._posts if p.id > since_id]
        return Response(200, {"posts": [p.to_json() for p in posts]})

    def _http_inject(self, req: Request) -> Response:
        body = req.body or {}
        try:
            post = self.inject_post(str(body.get("author", "")), str(body.get("text", "")))
        except ValidationError as e:
            return Response(400, {"error": str(e)})
        return Response(201, {"id": post.id})


class FeedClient:
    """Authenticated poller; re-authenticates once on a 401 and retries."""

    def __init__(self, transport, client_id: str, client_secret: str):
        self._transport = transport
        self._client_id = client_id
        self._client_secret = client_secret
        self._token: str | None = None

    def _authenticate(self) -> None:
        resp = self._transport.request(
            "POST", "/oauth/token",
            body={"client_id": self._client_id, "client_secret": self._client_secret},
        )
        if resp.status != 200:
            raise AuthError(f"authentication rejected ({resp.status})")
        self._token = resp.body["token"]

    def fetch(self, since_id: int) -> tuple[list[FeedPost], int]:
        """Posts with id > since_id plus the advanced cursor (unchanged if none)."""
        for attempt in range(2):
            if self._token is None:
                self._authenticate()
            resp = self._transport.request(
                "GET", "/feed/latest", query={"since_id": str(since_id)},
                headers={"Authorization": f"Bearer {self._token}"},
            )
            if resp.status == 401 and attempt == 0:
                self._token = None  # expired server-side; one fresh try
                continue
            if resp.status != 200:
                raise TransportError(f"feed returned {resp.status}")
            posts = [
                FeedPost(int(p["id"]), p["author"], p["text"], int(p["posted_at"]))
                for p in resp.body["posts"]
            ]
            cursor = max((p.id for p in posts), default=since_id)
            return posts, cursor
        raise AuthError("authentication loop exhausted")

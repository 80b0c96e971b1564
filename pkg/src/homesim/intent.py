"""Keyword decision-tree parsing of feed posts into appliance control words.

The pipeline is tokenize -> parse_intent -> (analyze_sentiment when no intent
parses) -> resolve.  All functions are pure in (text, table, lexicon); the
sentiment fail-safe fires exactly when the parser extracts no intent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .protocol import ApplianceKind, LEVEL_RANGE, Opcode

# Tokens the parser scans on each side of a device mention.
WINDOW = 4

NEGATION_WORDS = frozenset({"don't", "dont", "not", "never"})

POSITIVE_THRESHOLD = 0.25
NEGATIVE_THRESHOLD = -0.25

_WORD_RE = re.compile(r"[#@]?[a-z0-9']+%?")


class TokenKind(Enum):
    DEVICE = "DEVICE"
    ACTION = "ACTION"
    LEVEL = "LEVEL"
    LOCATION = "LOCATION"
    NEGATION = "NEGATION"
    SENTIMENT_POS = "SENTIMENT_POS"
    SENTIMENT_NEG = "SENTIMENT_NEG"
    OTHER = "OTHER"


class ActionKind(Enum):
    ON = "ON"
    OFF = "OFF"
    SET_LEVEL = "SET_LEVEL"


class SentimentLabel(Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    NEUTRAL = "NEUTRAL"


@dataclass(frozen=True)
class Token:
    surface: str
    kind: TokenKind
    device: ApplianceKind | None = None
    action: ActionKind | None = None
    level: int | None = None

    def to_json(self) -> dict:
        out: dict = {"surface": self.surface, "kind": self.kind.value}
        if self.device is not None:
            out["device"] = self.device.name
        if self.action is not None:
            out["action"] = self.action.value
        if self.level is not None:
            out["level"] = self.level
        return out


@dataclass(frozen=True)
class Intent:
    device: ApplianceKind
    action: ActionKind
    level: int | None = None
    location: str | None = None

    def __post_init__(self):
        if self.action == ActionKind.SET_LEVEL:
            lo, hi = LEVEL_RANGE[self.device]
            if self.level is None or not lo <= self.level <= hi:
                raise ValueError(f"SET_LEVEL on {self.device.name} needs level in [{lo}, {hi}]")
        elif self.level is not None:
            raise ValueError(f"{self.action.value} must not carry a level")

    def to_json(self) -> dict:
        return {
            "device": self.device.name,
            "action": self.action.value,
            "level": self.level,
            "location": self.location,
        }


@dataclass(frozen=True)
class SentimentScore:
    positives: int
    negatives: int

    @property
    def score(self) -> float:
        total = self.positives + self.negatives
        return (self.positives - self.negatives) / total if total else 0.0

    @property
    def label(self) -> SentimentLabel:
        if self.score > POSITIVE_THRESHOLD:
            return SentimentLabel.POSITIVE
        if self.score < NEGATIVE_THRESHOLD:
            return SentimentLabel.NEGATIVE
        return SentimentLabel.NEUTRAL

    def to_json(self) -> dict:
        return {
            "positives": self.positives,
            "negatives": self.negatives,
            "score": self.score,
            "label": self.label.value,
        }


@dataclass(frozen=True)
class ControlWord:
    """Node-addressed appliance command (the server-level command unit)."""

    node: int
    appliance: int
    opcode: Opcode
    value: int = 0

    def __post_init__(self):
        if not 1 <= self.node <= 254:
            raise ValueError(f"node address {self.node} outside 1..254")
        if not 0 <= self.appliance <= 255:
            raise ValueError(f"appliance id {self.appliance} outside 0..255")
        if not 0 <= self.value <= 255:
            raise ValueError(f"value {self.value} outside 0..255")
        if self.opcode != Opcode.SET_LEVEL and self.value != 0:
            raise ValueError(f"{self.opcode.name} must carry value 0")

    def to_json(self) -> dict:
        return {"node": self.node, "appliance": self.appliance,
                "opcode": int(self.opcode), "value": self.value}

    @classmethod
    def from_json(cls, obj: dict) -> "ControlWord":
        return cls(node=int(obj["node"]), appliance=int(obj["appliance"]),
                   opcode=Opcode(int(obj["opcode"])), value=int(obj.get("value", 0)))


@dataclass(frozen=True)
class RegisteredAppliance:
    appliance: int
    kind: ApplianceKind


@dataclass
class Lexicon:
    positive: frozenset[str]
    negative: frozenset[str]

    @classmethod
    def from_file(cls, path: str) -> "Lexicon":
        """Plain-text lexicon, one word per line, [positive] / [negative] sections."""
        positive, negative = set(), set()
        section = None
        with open(path) as f:
            for raw in f:
                word = raw.strip().lower()
                if not word or word.startswith(";"):
                    continue
                if word == "[positive]":
                    section = positive
                elif word == "[negative]":
                    section = negative
                elif section is not None:
                    section.add(word)
                else:
                    raise ValueError(f"word {word!r} before any section header")
        return cls(frozenset(positive), frozenset(negative))


@dataclass
class LookupTable:
    """Keyword and address tables matching parsed intents to control words."""

    device_keywords: dict[str, ApplianceKind]
    action_keywords: dict[str, ActionKind]
    location_map: dict[str, int]
    fan_level_words: dict[str, int]
    appliances: dict[int, list[RegisteredAppliance]]
    scenes: dict[SentimentLabel, list[Intent]]

    def validate(self) -> None:
        for loc, node in self.location_map.items():
            if not 1 <= node <= 254:
                raise ValueError(f"location {loc!r} maps to invalid node address {node}")
        for node, apps in self.appliances.items():
            if not 1 <= node <= 254:
                raise ValueError(f"registered node address {node} outside 1..254")
            ids = [a.appliance for a in apps]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate appliance ids on node {node}")
        for word, level in self.fan_level_words.items():
            if not 0 <= level <= 3:
                raise ValueError(f"fan level word {word!r} maps to {level}, outside 0..3")
        # Scene entries are Intents, so range rules were checked on construction.

    def nodes_with_kind(self, kind: ApplianceKind) -> list[int]:
        return sorted(n for n, apps in self.appliances.items() if any(a.kind == kind for a in apps))

    def appliances_of_kind(self, node: int, kind: ApplianceKind) -> list[RegisteredAppliance]:
        return sorted(
            (a for a in self.appliances.get(node, []) if a.kind == kind),
            key=lambda a: a.appliance,
        )

    def find_appliance(self, node: int, appliance: int) -> RegisteredAppliance | None:
        for a in self.appliances.get(node, []):
            if a.appliance == appliance:
                return a
        return None

    @classmethod
    def from_json(cls, obj: dict) -> "LookupTable":
        scenes: dict[SentimentLabel, list[Intent]] = {label: [] for label in SentimentLabel}
        for label_name, entries in obj.get("scenes", {}).items():
            label = SentimentLabel[label_name]
            for e in entries:
                scenes[label].append(
                    Intent(
                        device=ApplianceKind[e["device"]],
                        action=ActionKind[e["action"]],
                        level=e.get("level"),
                        location=e.get("location"),
                    )
                )
        table = cls(
            device_keywords={w.lower(): ApplianceKind[k] for w, k in obj["devices"].items()},
            action_keywords={w.lower(): ActionKind[k] for w, k in obj["actions"].items()},
            location_map={w.lower(): int(n) for w, n in obj["locations"].items()},
            fan_level_words={w.lower(): int(v) for w, v in obj.get("fan_levels", {}).items()},
            appliances={
                int(node): [RegisteredAppliance(int(a["id"]), ApplianceKind[a["kind"]]) for a in apps]
                for node, apps in obj["appliances"].items()
            },
            scenes=scenes,
        )
        table.validate()
        return table

    @classmethod
    def from_file(cls, path: str) -> "LookupTable":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass
class ProcessingTrace:
    """Everything the pipeline decided for one post, for debugging and audits."""

    text: str
    tokens: list[Token] = field(default_factory=list)
    intents: list[Intent] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)
    sentiment: SentimentScore | None = None
    path: str = "NLP"  # NLP | FAILSAFE
    words: list[ControlWord] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "tokens": [t.to_json() for t in self.tokens],
            "intents": [i.to_json() for i in self.intents],
            "dropped": self.dropped,
            "sentiment": self.sentiment.to_json() if self.sentiment else None,
            "path": self.path,
            "words": [w.to_json() for w in self.words],
        }


def tokenize(text: str, table: LookupTable, lexicon: Lexicon) -> list[Token]:
    """Split on whitespace/punctuation, lowercase, classify by table membership.

    `#`/`@` prefixes are stripped; a percent sign attaches to the preceding
    number ("70%" -> LEVEL 70).  Kind assignment is a pure function of the
    surface, checked in a fixed precedence: number, device, action, fan level
    word, location, negation, sentiment.
    """
    tokens = []
    for raw in _WORD_RE.findall(text.lower()):
        word = raw.lstrip("#@").strip("'")
        if not word:
            continue
        bare = word.rstrip("%")
        if bare.isdigit():
            tokens.append(Token(bare, TokenKind.LEVEL, level=int(bare)))
            continue
        word = word.rstrip("%")
        if word in table.device_keywords:
            tokens.append(Token(word, TokenKind.DEVICE, device=table.device_keywords[word]))
        elif word in table.action_keywords:
            tokens.append(Token(word, TokenKind.ACTION, action=table.action_keywords[word]))
        elif word in table.fan_level_words:
            tokens.append(Token(word, TokenKind.LEVEL, level=table.fan_level_words[word]))
        elif word in table.location_map:
            tokens.append(Token(word, TokenKind.LOCATION))
        elif word in NEGATION_WORDS:
            tokens.append(Token(word, TokenKind.NEGATION))
        elif word in lexicon.positive:
            tokens.append(Token(word, TokenKind.SENTIMENT_POS))
        elif word in lexicon.negative:
            tokens.append(Token(word, TokenKind.SENTIMENT_NEG))
        else:
            tokens.append(Token(word, TokenKind.OTHER))
    return tokens


def _nearest(tokens: list[Token], center: int, kind: TokenKind) -> Token | None:
    """Nearest token of `kind` within WINDOW of `center`; ties prefer the left."""
    best = None
    best_dist = None
    for i in range(max(0, center - WINDOW), min(len(tokens), center + WINDOW + 1)):
        if i == center or tokens[i].kind != kind:
            continue
        dist = abs(i - center)
        if best_dist is None or dist < best_dist:
            best, best_dist = tokens[i], dist
    return best


def _window_has(tokens: list[Token], center: int, kind: TokenKind) -> bool:
    return _nearest(tokens, center, kind) is not None


def parse_intent(tokens: list[Token], table: LookupTable) -> list[Intent]:
    """Decision tree applied per device mention, left to right.

    For each DEVICE token, the 4 tokens on each side are scanned: the nearest
    ACTION decides the action; a LEVEL token forces SET_LEVEL with that level
    clamped to the device range; a NEGATION flips ON<->OFF; a SET-class action
    without a level degrades to ON; a device with neither action nor level is
    discarded.  No device token at all yields an empty list (the caller then
    falls back to sentiment).
    """
    intents = []
    for i, tok in enumerate(tokens):
        if tok.kind != TokenKind.DEVICE:
            continue
        device = tok.device
        assert device is not None
        action_tok = _nearest(tokens, i, TokenKind.ACTION)
        level_tok = _nearest(tokens, i, TokenKind.LEVEL)
        if action_tok is None and level_tok is None:
            continue  # mention without any directive
        location_tok = _nearest(tokens, i, TokenKind.LOCATION)
        location = location_tok.surface if location_tok else None
        if level_tok is not None:
            lo, hi = LEVEL_RANGE[device]
            level = min(max(level_tok.level, lo), hi)
            intents.append(Intent(device, ActionKind.SET_LEVEL, level, location))
            continue
        action = action_tok.action
        if action == ActionKind.SET_LEVEL:
            action = ActionKind.ON  # SET without a level degrades
        if _window_has(tokens, i, TokenKind.NEGATION):
            action = ActionKind.OFF if action == ActionKind.ON else ActionKind.ON
        intents.append(Intent(device, action, None, location))
    return intents


def analyze_sentiment(tokens: list[Token]) -> SentimentScore:
    """Count sentiment-bearing tokens; score = (pos - neg) / (pos + neg)."""
    return SentimentScore(
        positives=sum(1 for t in tokens if t.kind == TokenKind.SENTIMENT_POS),
        negatives=sum(1 for t in tokens if t.kind == TokenKind.SENTIMENT_NEG),
    )


def _expand(intent: Intent, table: LookupTable, dropped: list[str]) -> dict[tuple[int, int], ControlWord]:
    """Map one intent to control words keyed by (node, appliance)."""
    if intent.location is not None:
        node = table.location_map.get(intent.location)
        if node is None:
            dropped.append(f"unknown location {intent.location!r}")
            return {}
        nodes = [node]
    else:
        nodes = table.nodes_with_kind(intent.device)
    words: dict[tuple[int, int], ControlWord] = {}
    for node in nodes:
        for app in table.appliances_of_kind(node, intent.device):
            if intent.action == ActionKind.SET_LEVEL:
                word = ControlWord(node, app.appliance, Opcode.SET_LEVEL, intent.level)
            elif intent.action == ActionKind.ON:
                word = ControlWord(node, app.appliance, Opcode.ON)
            else:
                word = ControlWord(node, app.appliance, Opcode.OFF)
            words[(node, app.appliance)] = word
    return words


def resolve(
    intents: list[Intent],
    sentiment: SentimentScore | None,
    table: LookupTable,
    dropped: list[str] | None = None,
) -> list[ControlWord]:
    """Expand intents (or the sentiment scene when there are none) to control words.

    Later intents overwrite earlier ones targeting the same (node, appliance);
    output is sorted ascending by (node, appliance).
    """
    if dropped is None:
        dropped = []
    if intents:
        entries = intents
    elif sentiment is not None:
        entries = table.scenes.get(sentiment.label, [])
    else:
        entries = []
    merged: dict[tuple[int, int], ControlWord] = {}
    for intent in entries:
        merged.update(_expand(intent, table, dropped))
    return [merged[key] for key in sorted(merged)]


def process_post(
    text: str, table: LookupTable, lexicon: Lexicon, failsafe_enabled: bool = True
) -> tuple[list[ControlWord], ProcessingTrace]:
    """Full pipeline for one post; trace records which path fired and why."""
    ptrace = ProcessingTrace(text=text)
    ptrace.tokens = tokenize(text, table, lexicon)
    ptrace.intents = parse_intent(ptrace.tokens, table)
    if ptrace.intents:
        ptrace.path = "NLP"
        ptrace.words = resolve(ptrace.intents, None, table, ptrace.dropped)
    else:
        ptrace.path = "FAILSAFE"
        ptrace.sentiment = analyze_sentiment(ptrace.tokens)
        if failsafe_enabled:
            ptrace.words = resolve([], ptrace.sentiment, table, ptrace.dropped)
    return ptrace.words, ptrace

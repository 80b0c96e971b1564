#!/usr/bin/env python3
"""Regenerate the intent-extraction corpus fixture (tests/data/corpus.json).

60 base sentences drawn from the command grammar and from sentiment chatter,
each with its expected pipeline path and intent list fixed at generation time
(ground truth comes from the template that produced the sentence, never from
running the parser).  Every base sentence also gets noise-augmented variants:
case changes, punctuation, hashtags, fillers, and occasional mid-sentence
insertions that may push keywords out of the parser's window - those variants
keep the original expectation and simply count against extraction accuracy.

Deterministic: fixed seed, stable output. Run from the repo root:

    python scripts/gen_corpus.py
"""

import json
import os
import random

SEED = 20140614
VARIANTS_PER_SENTENCE = 3

LOCATIONS = ["bedroom", "living", "kitchen"]
FAN_WORDS = {"low": 1, "medium": 2, "high": 3}
FILLERS = ["please", "kindly", "now", "really", "just", "quickly", "today", "folks"]
POSITIVE = ["wonderful", "lovely", "great", "happy", "awesome", "fantastic", "joyful"]
NEGATIVE = ["awful", "terrible", "sad", "gloomy", "miserable", "dreadful", "horrible"]
NEUTRAL = ["day", "morning", "world", "weather", "coffee", "tuesday", "afternoon"]


def intent(device, action, level=None, location=None):
    return {"device": device, "action": action, "level": level, "location": location}


def command_sentences(rng):
    """(text, [intent]) pairs; keyword distances verified against the
    4-token window by construction of each template."""
    out = []
    for loc in LOCATIONS:
        out.append((f"turn on the {loc} light", [intent("LIGHT", "ON", None, loc)]))
        out.append((f"turn off the {loc} fan", [intent("FAN", "OFF", None, loc)]))
        lvl = rng.choice([20, 35, 55, 70, 85])
        out.append((f"set the {loc} light to {lvl}%",
                    [intent("LIGHT", "SET_LEVEL", lvl, loc)]))
        word, value = rng.choice(sorted(FAN_WORDS.items()))
        out.append((f"set the {loc} fan to {word}",
                    [intent("FAN", "SET_LEVEL", value, loc)]))
        lvl = rng.choice([10, 40, 60, 90])
        out.append((f"dim the {loc} light to {lvl}%",
                    [intent("LIGHT", "SET_LEVEL", lvl, loc)]))
        out.append((f"open the {loc} blinds", [intent("BLINDS", "ON", None, loc)]))
        out.append((f"turn the {loc} light on", [intent("LIGHT", "ON", None, loc)]))
        lvl = rng.choice([15, 45, 75])
        out.append((f"{loc} light {lvl}%", [intent("LIGHT", "SET_LEVEL", lvl, loc)]))
    out.append(("close the blinds", [intent("BLINDS", "OFF")]))
    out.append(("don't turn on the fan", [intent("FAN", "OFF")]))
    out.append(("never turn off the light", [intent("LIGHT", "ON")]))
    out.append(("set the fan to high", [intent("FAN", "SET_LEVEL", 3)]))
    out.append(("turn on the light and turn off the fan",
                [intent("LIGHT", "ON"), intent("FAN", "OFF")]))
    out.append(("stop the fan", [intent("FAN", "OFF")]))
    out.append(("turn on the lights", [intent("LIGHT", "ON")]))
    out.append(("blinds 50%", [intent("BLINDS", "SET_LEVEL", 50)]))
    return out


def chatter_sentences(rng, n):
    out = []
    for i in range(n):
        mood = ("positive", "negative", "neutral")[i % 3]
        pool = {"positive": POSITIVE, "negative": NEGATIVE, "neutral": []}[mood]
        words = []
        if pool:
            words += rng.sample(pool, rng.randint(2, 3))
        words += rng.sample(NEUTRAL, rng.randint(1, 3))
        rng.shuffle(words)
        out.append(("what a " + " ".join(words), []))
    return out


def augment(text, rng):
    ops = rng.sample(["case", "punct", "hashtag", "mention", "prefix", "suffix", "insert"],
                     rng.randint(1, 2))
    for op in ops:
        if op == "case":
            text = rng.choice([text.upper(), text.title()])
        elif op == "punct":
            text = text + rng.choice(["!", "!!!", "...", "?"])
        elif op == "hashtag":
            text = text + " " + rng.choice(["#home", "#auto #cozy", "#smart"])
        elif op == "mention":
            text = "@house " + text
        elif op == "prefix":
            text = rng.choice(FILLERS) + " " + text
        elif op == "suffix":
            text = text + " " + " ".join(rng.sample(FILLERS, rng.randint(1, 2)))
        elif op == "insert":
            words = text.split()
            pos = rng.randint(1, max(1, len(words) - 1))
            words[pos:pos] = rng.sample(FILLERS, rng.randint(1, 2))
            text = " ".join(words)
    return text


def main():
    rng = random.Random(SEED)
    commands = command_sentences(rng)
    chatter = chatter_sentences(rng, 60 - len(commands))
    base = []
    for text, intents in commands + chatter:
        base.append({"text": text, "path": "NLP" if intents else "FAILSAFE",
                     "intents": intents})
    assert len(base) == 60, len(base)

    variants = []
    for idx, entry in enumerate(base):
        for _ in range(VARIANTS_PER_SENTENCE):
            variants.append({
                "base_index": idx,
                "text": augment(entry["text"], rng),
                "intents": entry["intents"],
            })

    out = {"seed": SEED, "base": base, "variants": variants}
    path = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "corpus.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")
    print(f"wrote {len(base)} base sentences and {len(variants)} variants to {path}")


if __name__ == "__main__":
    main()

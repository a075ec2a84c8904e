"""Synthetic search-log generator.

Emits (user, query, timestamp) logs shaped like shopping-search sessions.
Queries follow a brand-modifier-category pattern ("zorbel wireless dock"),
and a session walks that space: the user keeps refining the long modifier
word for one brand and category ("zorbel wireless dock" -> "zorbel
bluetooth dock"), occasionally hops to another category of the same brand,
and rarely switches brands. The previous query therefore narrows the
candidate set a lot while the typed prefix resolves the rest, and the
discriminating modifier sits in the middle of the string where order-blind
character statistics blur it.

Everything is derived from one seed; identical configs give byte-identical
logs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import LogRecord

# Long mid-query refinement words (8+ chars each).
MODIFIERS = [
    "wireless", "bluetooth", "waterproof", "ergonomic", "mechanical",
    "refurbished", "industrial", "adjustable", "rechargeable",
    "programmable", "collapsible", "convertible", "lightweight",
    "heavyweight", "transparent", "insulated", "ventilated", "reinforced",
    "compostable", "recyclable", "magnetized", "oversized", "compact",
    "foldable", "stackable", "washable", "portable", "reversible",
    "retractable", "detachable", "weighted", "cordless", "antislip",
    "softgrip", "highspeed", "lowprofile",
]

# Short category nouns (3-6 chars each).
CATEGORIES = [
    "dock", "case", "mouse", "lamp", "desk", "chair", "stand", "cable",
    "mount", "shelf", "rack", "bin", "tray", "hook", "strap", "pouch",
    "sleeve", "cover", "mat", "pad", "bag", "box", "jar", "pot", "pan",
    "mug", "cup", "bowl", "plate", "knife", "fork", "spoon", "whisk",
    "grater", "peeler", "ladle", "tongs", "timer", "scale", "kettle",
    "pitcher", "flask", "opener", "holder", "basket", "caddy", "crate",
    "stool", "bench", "easel", "frame", "board", "clip", "pin", "tape",
    "glue", "rope", "chain", "lock", "latch", "hinge", "knob", "lever",
    "wedge",
]

_SYLLABLES = [
    "an", "bel", "cor", "dan", "el", "fin", "gor", "hal", "ir", "jen",
    "kor", "lum", "mar", "nor", "ol", "pra", "quin", "rol", "sta", "tor",
    "ul", "ver", "wil", "xen", "yor", "zan",
]


@dataclass
class SynthConfig:
    n_sessions: int = 15000
    n_users: int = 400
    n_brands: int = 100
    cats_per_brand: int = 16
    mods_per_pair: int = 12
    topic_zipf: float = 0.8
    brand_switch_prob: float = 0.05
    modifier_step_prob: float = 0.55
    bare_prob: float = 0.3
    stylize_prob: float = 0.02
    start_ts: int = 1141171200  # 2006-03-01
    span_days: int = 90
    seed: int = 0


@dataclass
class Universe:
    topics: list[dict]
    topic_weights: list[float]
    queries: set = field(default_factory=set)


def _make_brands(rng: random.Random, count: int) -> list[str]:
    taken = set(MODIFIERS) | set(CATEGORIES)
    brands = set()
    while len(brands) < count:
        name = "".join(rng.choice(_SYLLABLES) for _ in range(2))
        if name not in taken:
            brands.add(name)
    return sorted(brands)


def _zipf_weights(n: int, s: float) -> list[float]:
    weights = [1.0 / (i + 1) ** s for i in range(n)]
    total = sum(weights)
    return [w / total for w in weights]


def build_universe(cfg: SynthConfig) -> Universe:
    """Brand topics, each with its own category lineup and, per category,
    a fixed palette of modifier words."""
    if cfg.n_brands < 1:
        raise ValueError("n_brands must be >= 1")
    if cfg.cats_per_brand < 2 or cfg.mods_per_pair < 2:
        # The session walk resamples "a different category/modifier".
        raise ValueError("cats_per_brand and mods_per_pair must be >= 2")
    rng = random.Random(cfg.seed)
    brands = _make_brands(rng, cfg.n_brands)
    topics = []
    universe = Universe(topics=topics,
                        topic_weights=_zipf_weights(cfg.n_brands, cfg.topic_zipf))
    for brand in brands:
        cats = rng.sample(CATEGORIES, min(cfg.cats_per_brand, len(CATEGORIES)))
        mods = {c: rng.sample(MODIFIERS, min(cfg.mods_per_pair, len(MODIFIERS)))
                for c in cats}
        topics.append({"brand": brand, "cats": cats, "mods": mods})
        for c in cats:
            universe.queries.add(f"{brand} {c}")
            universe.queries.update(f"{brand} {m} {c}" for m in mods[c])
    return universe


def _stylize(rng: random.Random, query: str) -> str:
    roll = rng.random()
    if roll < 0.4:
        return query.upper()
    if roll < 0.7:
        return query.title()
    return query + "."


def generate_logs(cfg: SynthConfig) -> tuple[list[LogRecord], dict]:
    """Full log corpus plus metadata (universe size, suggested temporal
    split boundaries at 80%/90% of the time span)."""
    universe = build_universe(cfg)
    span_seconds = cfg.span_days * 86400
    records: list[LogRecord] = []
    topic_ids = list(range(cfg.n_brands))

    def fresh(rng: random.Random, topic: dict) -> tuple[str, str | None]:
        cat = rng.choice(topic["cats"])
        mod = None if rng.random() < cfg.bare_prob else rng.choice(topic["mods"][cat])
        return cat, mod

    for session_idx in range(cfg.n_sessions):
        # str seeds hash via sha512, stable across processes; tuple seeds
        # would fall back to salted hash() and break reproducibility.
        rng = random.Random(f"{cfg.seed}:session:{session_idx}")
        user = f"u{rng.randrange(cfg.n_users):04d}"
        ts = cfg.start_ts + int(rng.random() * span_seconds)
        topic = universe.topics[rng.choices(topic_ids, weights=universe.topic_weights, k=1)[0]]
        if rng.random() < 0.08:
            length = 1
        else:
            length = 2
            while length < 8 and rng.random() < 0.55:
                length += 1
        cat, mod = fresh(rng, topic)
        prev = None
        for _ in range(length):
            query = (f"{topic['brand']} {mod} {cat}" if mod
                     else f"{topic['brand']} {cat}")
            if query == prev:
                # Consecutive duplicates would be collapsed at ingest.
                mod = rng.choice([m for m in topic["mods"][cat] if m != mod])
                query = f"{topic['brand']} {mod} {cat}"
            raw = _stylize(rng, query) if rng.random() < cfg.stylize_prob else query
            records.append(LogRecord(user, raw, ts))
            prev = query
            ts += rng.randint(5, 180)
            roll = rng.random()
            if roll < cfg.brand_switch_prob:
                topic = universe.topics[rng.choices(topic_ids, weights=universe.topic_weights, k=1)[0]]
                cat, mod = fresh(rng, topic)
            elif roll < cfg.brand_switch_prob + cfg.modifier_step_prob:
                mod = rng.choice([m for m in topic["mods"][cat] if m != mod])
            else:
                cat = rng.choice([c for c in topic["cats"] if c != cat])
                mod = None if rng.random() < cfg.bare_prob else rng.choice(topic["mods"][cat])
    records.sort(key=lambda r: (r.user_id, r.timestamp))
    meta = {
        "n_sessions": cfg.n_sessions,
        "universe_size": len(universe.queries),
        "suggested_dev_boundary": cfg.start_ts + int(span_seconds * 0.8),
        "suggested_test_boundary": cfg.start_ts + int(span_seconds * 0.9),
    }
    return records, meta


def write_logs_tsv(path, records: list[LogRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.user_id}\t{rec.query}\t{rec.timestamp}\n")

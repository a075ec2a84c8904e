"""Search-log ingestion: normalization, sessionization, triplet sampling, splits.

Raw logs are (user_id, query, timestamp) records. Queries are normalized,
grouped into sessions at a 30-minute idle gap, and each session of k queries
yields k-1 (previous query, sampled prefix, next query) training triplets.
Splits are temporal: sessions are assigned to train/dev/test by their first
timestamp and the label vocabulary is built from train next-queries only.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

SESSION_GAP_SECONDS = 1800

_STRIP_RE = re.compile(r"[^a-z0-9 ]+")
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class LogRecord:
    user_id: str
    query: str
    timestamp: int


@dataclass
class Session:
    user_id: str
    queries: list[str]
    timestamps: list[int]

    def __len__(self) -> int:
        return len(self.queries)


@dataclass(frozen=True)
class QueryTriplet:
    prev_query: str
    prefix: str
    next_query: str

    def validate(self) -> None:
        if not self.prev_query:
            raise ValueError("prev_query must be non-empty")
        if not self.prefix or not self.next_query.startswith(self.prefix):
            raise ValueError(f"prefix {self.prefix!r} is not a prefix of {self.next_query!r}")


@dataclass
class DatasetSplit:
    name: str
    triplets: list[QueryTriplet]
    label_vocab: dict[str, int] | None = field(default=None)


def normalize_query(raw: str) -> str:
    """Lowercase, periods to spaces, strip non-[a-z0-9 ], collapse whitespace.

    Returns "" for inputs that normalize to nothing; such records are dropped
    by the caller.
    """
    text = raw.lower().replace(".", " ")
    text = _STRIP_RE.sub("", text)
    return _WS_RE.sub(" ", text).strip()


def split_sessions(records: list[LogRecord]) -> list[Session]:
    """Group records into sessions: a user change or an idle gap >= 30 min
    starts a new session. Consecutive duplicate queries collapse to one.

    `records` must be sorted by (user_id, timestamp).
    """
    sessions: list[Session] = []
    current: Session | None = None
    for rec in records:
        query = normalize_query(rec.query)
        if not query:
            continue
        new_session = (
            current is None
            or rec.user_id != current.user_id
            or rec.timestamp - current.timestamps[-1] >= SESSION_GAP_SECONDS
        )
        if new_session:
            current = Session(rec.user_id, [query], [rec.timestamp])
            sessions.append(current)
        elif query != current.queries[-1]:
            current.queries.append(query)
            current.timestamps.append(rec.timestamp)
    return sessions


def _session_seed(base_seed: int, session: Session) -> int:
    # Stable per-session seed so triplet files are byte-identical regardless
    # of how ingestion was sharded.
    key = f"{base_seed}\x00{session.user_id}\x00{session.timestamps[0]}\x00{session.queries[0]}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def make_triplets(session: Session, rng_seed: int) -> list[QueryTriplet]:
    """Emit k-1 triplets from a k-query session, sampling each prefix length
    uniformly from 1..len(next_query). Deterministic for a given seed."""
    if len(session) < 2:
        return []
    rng = random.Random(rng_seed)
    out = []
    for prev, nxt in zip(session.queries, session.queries[1:]):
        plen = rng.randint(1, len(nxt))
        out.append(QueryTriplet(prev_query=prev, prefix=nxt[:plen], next_query=nxt))
    return out


def temporal_split(
    sessions: list[Session],
    boundaries: tuple[int, int],
    seed: int = 0,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit, float]:
    """Assign sessions to train/dev/test by first timestamp, generate triplets,
    and build the train label vocabulary.

    Returns (train, dev, test, coverage) where coverage is the fraction of
    test triplets whose next_query appears in the train vocabulary.
    """
    t_dev, t_test = boundaries
    if not t_dev < t_test:
        raise ValueError("boundaries must be ordered")
    buckets: dict[str, list[QueryTriplet]] = {"train": [], "dev": [], "test": []}
    for session in sessions:
        start = session.timestamps[0]
        name = "train" if start < t_dev else ("dev" if start < t_test else "test")
        buckets[name].extend(make_triplets(session, _session_seed(seed, session)))
    for name, triplets in buckets.items():
        if not triplets:
            raise ValueError(f"temporal split produced an empty {name} split")

    label_vocab = build_label_vocab(t.next_query for t in buckets["train"])
    covered = sum(1 for t in buckets["test"] if t.next_query in label_vocab)
    coverage = covered / len(buckets["test"])
    train = DatasetSplit("train", buckets["train"], label_vocab)
    return train, DatasetSplit("dev", buckets["dev"]), DatasetSplit("test", buckets["test"]), coverage


def build_label_vocab(next_queries) -> dict[str, int]:
    """Dense label ids 0..L-1, assigned in lexicographic order."""
    return {q: i for i, q in enumerate(sorted(set(next_queries)))}


# ---------------------------------------------------------------------------
# File formats: TSV logs in, JSONL triplets + labels.txt out.

def read_log_tsv(path) -> list[LogRecord]:
    """Read `user_id \\t query \\t epoch_seconds` lines; blank queries dropped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
            user_id, query, ts = parts
            if not query.strip():
                continue
            timestamp = int(ts)
            if timestamp < 0:
                raise ValueError(f"{path}:{line_no}: negative timestamp")
            records.append(LogRecord(user_id, query, timestamp))
    records.sort(key=lambda r: (r.user_id, r.timestamp))
    return records


def write_triplets_jsonl(path, triplets: list[QueryTriplet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(
                {"prev_query": t.prev_query, "prefix": t.prefix, "next_query": t.next_query},
                ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_triplets_jsonl(path) -> list[QueryTriplet]:
    triplets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            t = QueryTriplet(obj["prev_query"], obj["prefix"], obj["next_query"])
            t.validate()
            triplets.append(t)
    return triplets


def write_labels(path, label_vocab: dict[str, int]) -> None:
    """One label per line; line number = label id."""
    by_id = sorted(label_vocab.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as fh:
        for label, _ in by_id:
            fh.write(label + "\n")


def read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def ingest(
    logs_path,
    out_dir,
    boundaries: tuple[int, int],
    seed: int = 0,
) -> dict:
    """Full ingestion: TSV logs -> train/dev/test.jsonl + labels.txt.

    Returns summary statistics (counts and test-label coverage).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = read_log_tsv(logs_path)
    sessions = split_sessions(records)
    train, dev, test, coverage = temporal_split(sessions, boundaries, seed=seed)
    for split in (train, dev, test):
        write_triplets_jsonl(out / f"{split.name}.jsonl", split.triplets)
    write_labels(out / "labels.txt", train.label_vocab)
    stats = {
        "sessions": len(sessions),
        "train_triplets": len(train.triplets),
        "dev_triplets": len(dev.triplets),
        "test_triplets": len(test.triplets),
        "labels": len(train.label_vocab),
        "coverage": coverage,
    }
    with open(out / "split_meta.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    return stats

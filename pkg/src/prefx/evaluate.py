"""Evaluation: MRR, reciprocal-rank weighted BLEU, latency percentiles,
bucketed breakdowns, and the most-frequent-query (MFQ) baseline.

MRR uses the 1-based rank of the ground truth among the top-k suggestions,
reciprocal 0 when absent. BLEU_rr weights each suggestion slot j by 1/j:
sum_j (1/j) BLEU(truth, suggestion_j) / sum_j (1/j), averaged over examples.
BLEU is token-level up to 4-grams with smoothing method 1 (zero-match
numerators replaced by epsilon = 0.1) and the usual brevity penalty; the
n-gram order is capped at min(4, len(hyp), len(ref)) so one-word queries
are not judged on bigrams they cannot contain.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import QueryTriplet
from .model import SuggestionList, predict

BLEU_EPS = 0.1
PREFIX_BANDS = ["1", "2", "3", "4", "5", "6", "7+"]
FREQ_BAND_EDGES = [1, 4, 16, 64, 256, 1024, 4096]


def _queries(prediction) -> list[str]:
    if isinstance(prediction, SuggestionList):
        return prediction.queries()
    return list(prediction)


def mrr(predictions, truths, k: int) -> float:
    """Mean reciprocal rank of the truth within the top-k suggestions."""
    if not truths:
        raise ValueError("cannot evaluate an empty test set")
    if len(predictions) != len(truths):
        raise ValueError("one prediction list per truth required")
    total = 0.0
    for pred, truth in zip(predictions, truths):
        queries = _queries(pred)[:k]
        if truth in queries:
            total += 1.0 / (queries.index(truth) + 1)
    return total / len(truths)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(reference: str, hypothesis: str, eps: float = BLEU_EPS) -> float:
    """Sentence BLEU over whitespace tokens, smoothing method 1."""
    ref = reference.split()
    hyp = hypothesis.split()
    if not ref or not hyp:
        return 0.0
    n_max = min(4, len(hyp), len(ref))
    log_sum = 0.0
    for n in range(1, n_max + 1):
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        matches = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = len(hyp) - n + 1
        p = matches / total if matches > 0 else eps / total
        log_sum += math.log(p) / n_max
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_sum)


def _rr_weighted_average(predictions, truths, k: int, score_fn, normalize: bool = True) -> float:
    # With score_fn = exact match and normalize off, this reduces to mrr;
    # kept as an internal hook so that identity stays testable.
    if not truths:
        raise ValueError("cannot evaluate an empty test set")
    denom = sum(1.0 / j for j in range(1, k + 1)) if normalize else 1.0
    total = 0.0
    for pred, truth in zip(predictions, truths):
        queries = _queries(pred)[:k]
        num = sum(score_fn(truth, q) / (j + 1) for j, q in enumerate(queries))
        total += num / denom
    return total / len(truths)


def bleu_rr(predictions, truths, k: int) -> float:
    """Reciprocal-rank weighted average BLEU; missing slots contribute 0."""
    return _rr_weighted_average(predictions, truths, k, bleu, normalize=True)


def latency_percentiles(samples_ms) -> tuple[float, float]:
    """Nearest-rank p50/p99: the value at 1-based index ceil(P/100 * n)."""
    n = len(samples_ms)
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    ordered = sorted(samples_ms)

    def nearest_rank(p: float) -> float:
        return float(ordered[math.ceil(p / 100.0 * n) - 1])

    return nearest_rank(50), nearest_rank(99)


# ---------------------------------------------------------------------------
# MFQ baseline: trie over train next-queries with per-node cached top-k.

class _MfqNode:
    __slots__ = ("children", "top")

    def __init__(self):
        self.children: dict[str, _MfqNode] = {}
        self.top: list[tuple[str, int]] = []


class MfqIndex:
    """Most-frequent completions of a prefix from the train distribution.

    Every node caches the k most frequent train queries under it (ties
    lexicographic), so lookup costs O(|prefix| + k).
    """

    def __init__(self, root: _MfqNode, k: int):
        self._root = root
        self.k = k

    def lookup(self, prefix: str) -> list[tuple[str, int]]:
        node = self._root
        for ch in prefix:
            node = node.children.get(ch)
            if node is None:
                return []
        return list(node.top)

    def suggest(self, prefix: str, k: int | None = None) -> list[str]:
        top = self.lookup(prefix)
        return [q for q, _ in (top if k is None else top[:k])]


def build_mfq(train_triplets, k: int) -> MfqIndex:
    counts: Counter = Counter(
        t.next_query if isinstance(t, QueryTriplet) else t for t in train_triplets
    )
    root = _MfqNode()
    terminal: dict[int, tuple[str, int]] = {}
    for query, count in counts.items():
        node = root
        for ch in query:
            node = node.children.setdefault(ch, _MfqNode())
        terminal[id(node)] = (query, count)

    stack: list[tuple[_MfqNode, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if not done:
            stack.append((node, True))
            for child in node.children.values():
                stack.append((child, False))
            continue
        merged = [entry for child in node.children.values() for entry in child.top]
        own = terminal.get(id(node))
        if own is not None:
            merged.append(own)
        merged.sort(key=lambda e: (-e[1], e[0]))
        node.top = merged[:k]
    return MfqIndex(root, k)


# ---------------------------------------------------------------------------
# Bucketed breakdowns.

def prefix_band(prefix_length: int) -> str:
    return str(prefix_length) if prefix_length <= 6 else "7+"


def frequency_band(freq: int, edges=None) -> str:
    edges = FREQ_BAND_EDGES if edges is None else edges
    if freq < edges[0]:
        return f"[0,{edges[0]})"
    for lo, hi in zip(edges, edges[1:]):
        if lo <= freq < hi:
            return f"[{lo},{hi})"
    return f"[{edges[-1]},inf)"


def _band_keys(axis: str, edges=None) -> list[str]:
    if axis == "prefix_length":
        return list(PREFIX_BANDS)
    edges = FREQ_BAND_EDGES if edges is None else edges
    keys = [f"[0,{edges[0]})"]
    keys += [f"[{lo},{hi})" for lo, hi in zip(edges, edges[1:])]
    keys.append(f"[{edges[-1]},inf)")
    return keys


def bucket_report(results: list[dict], axis: str, edges=None) -> dict[str, dict]:
    """Group per-example results into bands and report MRR, count, and the
    fraction of the data each band holds. Empty bands get MRR null."""
    if axis not in ("prefix_length", "label_frequency"):
        raise ValueError(f"unknown bucket axis {axis!r}")
    groups: dict[str, list[float]] = {key: [] for key in _band_keys(axis, edges)}
    for res in results:
        if axis == "prefix_length":
            key = prefix_band(res["prefix_length"])
        else:
            key = frequency_band(res["truth_freq"], edges)
        groups[key].append(res["rr"])
    n = len(results)
    return {
        key: {
            "mrr": (sum(rrs) / len(rrs)) if rrs else None,
            "count": len(rrs),
            "fraction": (len(rrs) / n) if n else 0.0,
        }
        for key, rrs in groups.items()
    }


# ---------------------------------------------------------------------------
# End-to-end evaluation drivers.

@dataclass
class EvalReport:
    mrr: float
    bleu_rr: float
    n_examples: int
    k: int
    latency_p50_ms: float | None = None
    latency_p99_ms: float | None = None
    coverage: float | None = None
    mrr_seen: float | None = None
    buckets: dict = field(default_factory=dict)
    baseline: dict | None = None
    config: dict = field(default_factory=dict)
    content_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "bleu_rr": self.bleu_rr,
            "n_examples": self.n_examples,
            "k": self.k,
            "latency_p50_ms": self.latency_p50_ms,
            "latency_p99_ms": self.latency_p99_ms,
            "coverage": self.coverage,
            "mrr_seen": self.mrr_seen,
            "buckets": self.buckets,
            "baseline": self.baseline,
            "config": self.config,
            "content_hash": self.content_hash,
        }


def score_predictions(pred_queries: list[list[str]], truths: list[str], k: int):
    """(mrr, bleu_rr, per-example reciprocal ranks) for fixed predictions."""
    rrs = []
    for queries, truth in zip(pred_queries, truths):
        topk = queries[:k]
        rrs.append(1.0 / (topk.index(truth) + 1) if truth in topk else 0.0)
    return (
        sum(rrs) / len(rrs),
        bleu_rr(pred_queries, truths, k),
        rrs,
    )


def evaluate_model(model, encoder, triplets: list[QueryTriplet], k: int = 10,
                   B: int = 10, train_counts: dict | None = None,
                   mfq: MfqIndex | None = None, warmup: int = 50,
                   config: dict | None = None) -> EvalReport:
    """Predict every test triplet, collect metrics, latency, and buckets.

    Latency is wall-clock per predict call, single-threaded, after `warmup`
    unmeasured calls; percentiles are reported only with >= 100 samples.
    """
    if not triplets:
        raise ValueError("cannot evaluate an empty test set")
    train_counts = train_counts or {}
    for t in triplets[:min(warmup, len(triplets))]:
        predict(model, encoder.encode(t.prev_query, t.prefix), t.prefix, B, k)

    pred_queries: list[list[str]] = []
    truths: list[str] = []
    latencies: list[float] = []
    meta: list[dict] = []
    for t in triplets:
        x = encoder.encode(t.prev_query, t.prefix)
        start = time.perf_counter()
        suggestions = predict(model, x, t.prefix, B, k)
        latencies.append((time.perf_counter() - start) * 1000.0)
        pred_queries.append(suggestions.queries())
        truths.append(t.next_query)
        meta.append({
            "prefix_length": len(t.prefix),
            "truth_freq": train_counts.get(t.next_query, 0),
        })

    mrr_value, bleu_value, rrs = score_predictions(pred_queries, truths, k)
    results = [
        {**m, "rr": rr} for m, rr in zip(meta, rrs)
    ]
    seen_rrs = [r["rr"] for r in results if r["truth_freq"] > 0]
    p50 = p99 = None
    if len(latencies) >= 100:
        p50, p99 = latency_percentiles(latencies)

    baseline = None
    if mfq is not None:
        mfq_queries = [mfq.suggest(t.prefix, k) for t in triplets]
        mfq_mrr, mfq_bleu, _ = score_predictions(mfq_queries, truths, k)
        baseline = {"name": "mfq", "mrr": mfq_mrr, "bleu_rr": mfq_bleu}

    return EvalReport(
        mrr=mrr_value,
        bleu_rr=bleu_value,
        n_examples=len(triplets),
        k=k,
        latency_p50_ms=p50,
        latency_p99_ms=p99,
        coverage=len(seen_rrs) / len(results),
        mrr_seen=(sum(seen_rrs) / len(seen_rrs)) if seen_rrs else None,
        buckets={
            "prefix_length": bucket_report(results, "prefix_length"),
            "label_frequency": bucket_report(results, "label_frequency"),
        },
        baseline=baseline,
        config=config or {},
    )


def model_content_hash(model_dir) -> str:
    """Order-independent digest of every file under the model directory."""
    model_dir = Path(model_dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in model_dir.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(model_dir)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Report files: JSON + TSV table + rendered figures.

def write_report(report: EvalReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "report.json"]
    with open(written[0], "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    tsv = out_dir / "buckets.tsv"
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write("axis\tband\tmrr\tcount\tfraction\n")
        for axis, buckets in report.buckets.items():
            for band, cell in buckets.items():
                mrr_cell = "" if cell["mrr"] is None else f"{cell['mrr']:.6f}"
                fh.write(f"{axis}\t{band}\t{mrr_cell}\t{cell['count']}\t{cell['fraction']:.6f}\n")
    written.append(tsv)
    written.extend(render_figures(report, out_dir))
    return written


def render_figures(report: EvalReport, out_dir) -> list[Path]:
    """Render the bucketed MRR breakdowns to PNG files next to the tables."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    paths = []
    for axis, fname, xlabel in (
        ("prefix_length", "mrr_by_prefix_length.png", "prefix length"),
        ("label_frequency", "mrr_by_label_frequency.png", "train frequency of truth"),
    ):
        buckets = report.buckets.get(axis)
        if not buckets:
            continue
        bands = list(buckets)
        mrrs = [buckets[b]["mrr"] or 0.0 for b in bands]
        fractions = [buckets[b]["fraction"] for b in bands]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(range(len(bands)), mrrs, color="#4878cf", label="MRR")
        ax.set_xticks(range(len(bands)))
        ax.set_xticklabels(bands, rotation=30, ha="right")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("MRR")
        ax.set_ylim(0, 1)
        ax2 = ax.twinx()
        ax2.plot(range(len(bands)), fractions, color="#d65f5f", marker="o",
                 label="fraction of data")
        ax2.set_ylabel("fraction of data")
        ax2.set_ylim(0, 1)
        handles1, labels1 = ax.get_legend_handles_labels()
        handles2, labels2 = ax2.get_legend_handles_labels()
        ax.legend(handles1 + handles2, labels1 + labels2, loc="upper right")
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths

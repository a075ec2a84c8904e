"""Sparse TF-IDF vectorizers and the model input encoder.

Two vectorizer families: token unigrams (whitespace split) for previous
queries, and character 1-3 grams for prefixes and label text. Character
vectorizers come in a simple and a position-weighted variant; the latter
counts an occurrence starting at 1-based character position i as 1/i rather
than 1, so string beginnings dominate the vector.

The model input is the token vector of the previous query concatenated with
the character vector of the typed prefix, each block Euclidean-normalized
independently before concatenation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse import SparseVector

TOKEN_UNIGRAM = "token-unigram"
CHAR_NGRAM = "char-ngram(1..3)"
_CHAR_NS = (1, 2, 3)

PREV_ONLY = "prev_only"
PREV_CONCAT_PREFIX = "prev_concat_prefix"

VOCAB_FORMAT = "prefx-tfidf-vocab"
ENCODER_FORMAT = "prefx-input-encoder"


def iter_terms(text: str, kind: str):
    """All term occurrences of `text` under `kind`, in reading order."""
    if kind == TOKEN_UNIGRAM:
        return text.split()
    if kind == CHAR_NGRAM:
        return [text[i:i + n] for n in _CHAR_NS for i in range(len(text) - n + 1)]
    raise ValueError(f"unknown vectorizer kind {kind!r}")


def iter_positional_terms(text: str, kind: str):
    """(term, 1-based start position) pairs; position of an n-gram is the
    position of its first character."""
    if kind == TOKEN_UNIGRAM:
        pos = 1
        out = []
        for tok in text.split(" "):
            if tok:
                out.append((tok, pos))
            pos += len(tok) + 1
        return out
    if kind == CHAR_NGRAM:
        return [(text[i:i + n], i + 1) for n in _CHAR_NS for i in range(len(text) - n + 1)]
    raise ValueError(f"unknown vectorizer kind {kind!r}")


@dataclass(frozen=True)
class TfidfVocab:
    kind: str
    term_ids: dict[str, int]
    idf: np.ndarray
    position_weighted: bool = False

    @property
    def dim(self) -> int:
        return len(self.term_ids)

    def validate(self) -> None:
        ids = sorted(self.term_ids.values())
        if ids != list(range(len(ids))):
            raise ValueError("feature ids must be dense 0..dim-1")
        if len(self.idf) != len(ids):
            raise ValueError("idf length mismatch")
        if not (np.isfinite(self.idf).all() and (self.idf > 0).all()):
            raise ValueError("idf values must be finite and positive")


def fit_vocab(corpus, kind: str, min_df: int = 1, position_weighted: bool = False) -> TfidfVocab:
    """Fit term -> id and idf from a corpus of strings.

    Terms with document frequency < min_df are dropped. idf(t) =
    ln((1+N)/(1+df(t))) + 1 with N the document count. Feature ids are
    assigned in lexicographic term order so vocabularies are canonical.
    """
    df: dict[str, int] = {}
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        for term in set(iter_terms(doc, kind)):
            df[term] = df.get(term, 0) + 1
    if n_docs == 0:
        raise ValueError("cannot fit a vocabulary on an empty corpus")
    kept = sorted(t for t, c in df.items() if c >= min_df)
    if not kept:
        raise ValueError(f"no terms survive min_df={min_df}")
    term_ids = {t: i for i, t in enumerate(kept)}
    idf = np.array([math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in kept])
    return TfidfVocab(kind, term_ids, idf, position_weighted)


def _counts_to_vector(counts: dict[int, float], vocab: TfidfVocab) -> SparseVector:
    if not counts:
        return SparseVector.zeros(vocab.dim)
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices]) * vocab.idf[indices]
    return SparseVector(indices, values, vocab.dim).unit()


def vectorize_simple(text: str, vocab: TfidfVocab) -> SparseVector:
    """count(t) * idf(t), Euclidean-normalized; out-of-vocab terms ignored.

    Texts with no in-vocab terms yield the zero vector (left unnormalized).
    """
    counts: dict[int, float] = {}
    ids = vocab.term_ids
    for term in iter_terms(text, vocab.kind):
        fid = ids.get(term)
        if fid is not None:
            counts[fid] = counts.get(fid, 0.0) + 1.0
    return _counts_to_vector(counts, vocab)


def vectorize_position_weighted(text: str, vocab: TfidfVocab) -> SparseVector:
    """Like vectorize_simple but each occurrence at 1-based start position i
    contributes 1/i to the term count before the idf multiply."""
    if not vocab.position_weighted:
        raise ValueError("vocab was not fitted with position_weighted=True")
    counts: dict[int, float] = {}
    ids = vocab.term_ids
    for term, pos in iter_positional_terms(text, vocab.kind):
        fid = ids.get(term)
        if fid is not None:
            counts[fid] = counts.get(fid, 0.0) + 1.0 / pos
    return _counts_to_vector(counts, vocab)


def vectorize(text: str, vocab: TfidfVocab) -> SparseVector:
    if vocab.position_weighted:
        return vectorize_position_weighted(text, vocab)
    return vectorize_simple(text, vocab)


@dataclass(frozen=True)
class InputEncoder:
    """prev-query token vectorizer + prefix char vectorizer + combination mode."""

    prev_vocab: TfidfVocab
    prefix_vocab: TfidfVocab
    mode: str = PREV_CONCAT_PREFIX

    @property
    def dim(self) -> int:
        if self.mode == PREV_ONLY:
            return self.prev_vocab.dim
        return self.prev_vocab.dim + self.prefix_vocab.dim

    def encode(self, prev_query: str, prefix: str) -> SparseVector:
        prev_vec = vectorize(prev_query, self.prev_vocab)
        if self.mode == PREV_ONLY:
            return prev_vec
        pfx_vec = vectorize(prefix, self.prefix_vocab)
        # Both blocks already unit-normalized (or zero); just shift and stack.
        indices = np.concatenate([prev_vec.indices, pfx_vec.indices + self.prev_vocab.dim])
        values = np.concatenate([prev_vec.values, pfx_vec.values])
        return SparseVector(indices, values, self.dim, normalized=False)


def encode_input(prev_query: str, prefix: str, enc: InputEncoder) -> SparseVector:
    return enc.encode(prev_query, prefix)


# ---------------------------------------------------------------------------
# Serialization: vocab JSON files and the encoder directory layout.

def save_vocab(path, vocab: TfidfVocab) -> None:
    payload = {
        "format": VOCAB_FORMAT,
        "version": 1,
        "kind": vocab.kind,
        "position_weighted": vocab.position_weighted,
        "terms": vocab.term_ids,
        "idf": vocab.idf.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_vocab(path) -> TfidfVocab:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != VOCAB_FORMAT or payload.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 vocab file")
    vocab = TfidfVocab(
        kind=payload["kind"],
        term_ids={t: int(i) for t, i in payload["terms"].items()},
        idf=np.array(payload["idf"], dtype=np.float64),
        position_weighted=bool(payload["position_weighted"]),
    )
    vocab.validate()
    return vocab


def save_encoder(enc_dir, enc: InputEncoder) -> None:
    enc_dir = Path(enc_dir)
    enc_dir.mkdir(parents=True, exist_ok=True)
    save_vocab(enc_dir / "prev_vocab.json", enc.prev_vocab)
    save_vocab(enc_dir / "prefix_vocab.json", enc.prefix_vocab)
    with open(enc_dir / "encoder.json", "w", encoding="utf-8") as fh:
        json.dump({"format": ENCODER_FORMAT, "version": 1, "mode": enc.mode}, fh)


def load_encoder(enc_dir) -> InputEncoder:
    enc_dir = Path(enc_dir)
    with open(enc_dir / "encoder.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != ENCODER_FORMAT or meta.get("version") != 1:
        raise ValueError(f"{enc_dir}: not a version-1 encoder directory")
    return InputEncoder(
        prev_vocab=load_vocab(enc_dir / "prev_vocab.json"),
        prefix_vocab=load_vocab(enc_dir / "prefix_vocab.json"),
        mode=meta["mode"],
    )

"""Label embeddings for the indexing stage.

Each of the L labels gets one sparse unit-norm row, either by PIFA
(sum of the label's positive training inputs, then normalized) or from the
label's own text via character n-gram TF-IDF (simple or position-weighted).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sparse import load_csr, rows_to_csr, save_csr
from .vectorize import TfidfVocab, vectorize

PIFA = "pifa"
LABEL_TEXT_SIMPLE = "label_text_simple"
LABEL_TEXT_POSWEIGHTED = "label_text_posweighted"

EMBED_FORMAT = "prefx-label-embeddings"


@dataclass
class LabelEmbeddings:
    matrix: sp.csr_matrix
    source: str
    zero_rows: np.ndarray

    @property
    def n_labels(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def validate(self) -> None:
        norms = np.sqrt(np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel())
        nonzero = norms > 0
        if not np.allclose(norms[nonzero], 1.0, atol=1e-6):
            raise ValueError("nonzero embedding rows must have unit norm")
        if sorted(np.flatnonzero(~nonzero)) != sorted(self.zero_rows.tolist()):
            raise ValueError("zero_rows flag does not match the matrix")


def _normalize_rows(matrix: sp.csr_matrix, source: str) -> LabelEmbeddings:
    matrix = matrix.tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
    zero_rows = np.flatnonzero(norms == 0)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    matrix = sp.diags(scale) @ matrix
    return LabelEmbeddings(matrix.tocsr(), source, zero_rows)


def pifa_embed(inputs, label_ids, n_labels: int | None = None) -> LabelEmbeddings:
    """Row l = unit-normed sum of inputs whose example is labeled l.

    `inputs` is a CSR matrix (or a list of SparseVectors); every label id in
    0..L-1 must have at least one positive example.
    """
    if not sp.issparse(inputs):
        inputs = rows_to_csr(list(inputs), inputs[0].dim if inputs else 0)
    label_ids = np.asarray(label_ids, dtype=np.int64)
    if len(label_ids) != inputs.shape[0]:
        raise ValueError("one label id per input row required")
    if n_labels is None:
        n_labels = int(label_ids.max()) + 1
    counts = np.bincount(label_ids, minlength=n_labels)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"label {missing} has no positive training example")
    indicator = sp.csr_matrix(
        (np.ones(len(label_ids)), (label_ids, np.arange(len(label_ids)))),
        shape=(n_labels, inputs.shape[0]),
    )
    return _normalize_rows(indicator @ inputs, PIFA)


def label_text_embed(labels: list[str], vocab: TfidfVocab) -> LabelEmbeddings:
    """Row l = char n-gram TF-IDF vector of label string l; the vocab's
    position_weighted flag picks the counting rule."""
    rows = [vectorize(label, vocab) for label in labels]
    source = LABEL_TEXT_POSWEIGHTED if vocab.position_weighted else LABEL_TEXT_SIMPLE
    return _normalize_rows(rows_to_csr(rows, vocab.dim), source)


def save_embeddings(path, emb: LabelEmbeddings) -> None:
    save_csr(path, emb.matrix)
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        json.dump({"format": EMBED_FORMAT, "version": 1, "source": emb.source}, fh)


def load_embeddings(path) -> LabelEmbeddings:
    matrix = load_csr(path)
    meta_path = Path(f"{path}.meta.json")
    source = "unknown"
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("format") != EMBED_FORMAT or meta.get("version") != 1:
            raise ValueError(f"{meta_path}: not a version-1 embeddings sidecar")
        source = meta["source"]
    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
    emb = LabelEmbeddings(matrix, source, np.flatnonzero(norms == 0))
    emb.validate()
    return emb

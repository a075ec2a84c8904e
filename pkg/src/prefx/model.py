"""Tree model: per-node linear classifiers and beam-search inference.

Training walks the label tree with teacher forcing: an example routes along
the path to its ground-truth label's leaf, so a node's positives are the
examples whose label lies in its subtree and its negatives are the sibling
subtrees' examples that reach the same parent. Each binary problem is a
squared-hinge + L2 objective solved over the union of features its examples
touch (optimal weights vanish elsewhere, so this is exact, not a heuristic).

Inference is a beam search: per level, keep the top-B nodes by path score
(product of transformed margins from the root); leaves already in the beam
keep competing on their final score. Leaf labels are then scored, filtered
to the request prefix, and the top-k returned.

The contiguous layout from the index module does the heavy lifting: sorting
examples once by their label's tree position makes every node's positives
and negatives contiguous row ranges of one CSR matrix.
"""

from __future__ import annotations

import json
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .index import LabelTree, load_tree, save_tree
from .sparse import SparseVector, load_csr, save_csr
from .vectorize import InputEncoder, load_encoder, save_encoder

HINGE_EXP3 = "hinge_exp3"
SIGMOID = "sigmoid"

MODEL_FORMAT = "prefx-tree-model"

DEFAULT_REG_C = 1.0
DEFAULT_TOL = 1e-4
DEFAULT_BEAM = 10
DEFAULT_K = 10


def transform_scores(name: str, margins: np.ndarray) -> np.ndarray:
    """Monotone map from raw margin to (0, 1]."""
    margins = np.asarray(margins, dtype=np.float64)
    if name == HINGE_EXP3:
        return np.exp(-np.maximum(0.0, 1.0 - margins) ** 3)
    if name == SIGMOID:
        return 1.0 / (1.0 + np.exp(-margins))
    raise ValueError(f"unknown score transform {name!r}")


@dataclass(frozen=True)
class Suggestion:
    query: str
    score: float
    label_id: int


@dataclass
class SuggestionList:
    entries: list[Suggestion]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def queries(self) -> list[str]:
        return [e.query for e in self.entries]

    def validate(self, prefix: str) -> None:
        scores = [e.score for e in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        if any(not e.query.startswith(prefix) for e in self.entries):
            raise ValueError("every suggestion must extend the prefix")
        ids = [e.label_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate label ids in suggestions")


@dataclass
class TreeModel:
    tree: LabelTree
    node_weights: sp.csr_matrix
    label_weights: sp.csr_matrix
    labels: list[str]
    score_transform: str = HINGE_EXP3
    reg_C: float = DEFAULT_REG_C
    leaf_prefixes: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self):
        # Longest common prefix per leaf: if it contradicts a request prefix
        # no label in the leaf can survive the post-filter, so the leaf's
        # label scoring can be skipped without changing output.
        self.leaf_prefixes = {}
        for leaf in self.tree.leaf_ids():
            ids = self.tree.leaf_labels(int(leaf))
            first = self.labels[ids[0]]
            if len(ids) == 1:
                self.leaf_prefixes[int(leaf)] = first
                continue
            lo = min(self.labels[i] for i in ids)
            hi = max(self.labels[i] for i in ids)
            n = 0
            for a, b in zip(lo, hi):
                if a != b:
                    break
                n += 1
            self.leaf_prefixes[int(leaf)] = lo[:n]

    @property
    def dim(self) -> int:
        return self.node_weights.shape[1]

    def validate(self) -> None:
        if self.node_weights.shape[0] != self.tree.n_nodes:
            raise ValueError("one weight row per tree node required")
        if self.label_weights.shape[0] != self.tree.n_labels:
            raise ValueError("one weight row per label required")
        if self.node_weights.shape[1] != self.label_weights.shape[1]:
            raise ValueError("node and label weights must share the feature space")
        if len(self.labels) != self.tree.n_labels:
            raise ValueError("label strings do not match the tree")
        if not (np.isfinite(self.node_weights.data).all()
                and np.isfinite(self.label_weights.data).all()):
            raise ValueError("weights must be finite")


# ---------------------------------------------------------------------------
# Training.

def svm_objective(w: np.ndarray, X: sp.csr_matrix, y: np.ndarray, C: float) -> float:
    """0.5 ||w||^2 + C * sum max(0, 1 - y * Xw)^2 — the per-node objective."""
    slack = np.maximum(0.0, 1.0 - y * (X @ w))
    return 0.5 * float(w @ w) + C * float(slack @ slack)


def _solve_lbfgs(X: sp.csr_matrix, y: np.ndarray, C: float, tol: float) -> np.ndarray:
    def fun(w):
        margins = y * (X @ w)
        slack = np.maximum(0.0, 1.0 - margins)
        obj = 0.5 * (w @ w) + C * (slack @ slack)
        grad = w - 2.0 * C * (X.T @ (slack * y))
        return obj, grad

    res = minimize(fun, np.zeros(X.shape[1]), jac=True, method="L-BFGS-B",
                   options={"ftol": tol, "maxiter": 500})
    return res.x


def _solve_binary(X: sp.csr_matrix, y: np.ndarray, C: float, tol: float, solver: str) -> np.ndarray:
    if (y > 0).all() or solver == "lbfgs":
        # One-class problems (chain nodes, single-label leaves) have no
        # second class for liblinear; the generic solver handles them.
        return _solve_lbfgs(X, y, C, tol)
    if solver != "liblinear":
        raise ValueError(f"unknown solver {solver!r}")
    svc = LinearSVC(loss="squared_hinge", dual=False, fit_intercept=False,
                    C=C, tol=tol, max_iter=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        svc.fit(X, y)
    return svc.coef_.ravel()


def _restrict(X: sp.csr_matrix, row_start: int, row_end: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Contiguous row slice compressed onto its own column support."""
    lo, hi = int(X.indptr[row_start]), int(X.indptr[row_end])
    indices = X.indices[lo:hi]
    support = np.unique(indices)
    sub = sp.csr_matrix(
        (X.data[lo:hi], np.searchsorted(support, indices), X.indptr[row_start:row_end + 1] - lo),
        shape=(row_end - row_start, len(support)),
    )
    return sub, support


def _fit_slice(X, out_lo, out_hi, pos_lo, pos_hi, C, tol, solver):
    if out_hi == out_lo or pos_hi == pos_lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    sub, support = _restrict(X, out_lo, out_hi)
    if len(support) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    y = np.full(out_hi - out_lo, -1.0)
    y[pos_lo - out_lo:pos_hi - out_lo] = 1.0
    w = _solve_binary(sub, y, C, tol, solver)
    nz = np.flatnonzero(w)
    return support[nz].astype(np.int64), w[nz]


def _assemble_csr(rows: list[tuple[np.ndarray, np.ndarray]], dim: int) -> sp.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(idx) for idx, _ in rows])
    indices = np.concatenate([idx for idx, _ in rows]) if rows else np.zeros(0, dtype=np.int64)
    data = np.concatenate([val for _, val in rows]) if rows else np.zeros(0)
    return sp.csr_matrix((data, indices.astype(np.int32), indptr), shape=(len(rows), dim))


def train(tree: LabelTree, inputs: sp.csr_matrix, label_ids, labels: list[str],
          reg_C: float = DEFAULT_REG_C, tol: float = DEFAULT_TOL,
          solver: str = "liblinear", score_transform: str = HINGE_EXP3) -> TreeModel:
    """Fit all node and label classifiers with teacher-forced routing."""
    X = inputs.tocsr()
    label_ids = np.asarray(label_ids, dtype=np.int64)
    if label_ids.min(initial=0) < 0 or label_ids.max(initial=-1) >= tree.n_labels:
        raise ValueError("label id outside the tree's label set")
    if len(labels) != tree.n_labels:
        raise ValueError("label strings do not match the tree")
    dim = X.shape[1]

    # Position of each label in the tree's flat DFS layout; sorting examples
    # by it makes every subtree's examples one contiguous row range.
    pos_of_label = np.empty(tree.n_labels, dtype=np.int64)
    pos_of_label[tree.label_order] = np.arange(tree.n_labels)
    example_pos = pos_of_label[label_ids]
    example_order = np.argsort(example_pos, kind="stable")
    X_sorted = X[example_order].tocsr()
    sorted_pos = example_pos[example_order]
    bounds = np.searchsorted(sorted_pos, np.arange(tree.n_labels + 1))

    empty = (np.empty(0, dtype=np.int64), np.empty(0))
    node_rows = [empty]
    for node in range(1, tree.n_nodes):
        p = int(tree.parent[node])
        node_rows.append(_fit_slice(
            X_sorted,
            bounds[tree.label_start[p]], bounds[tree.label_end[p]],
            bounds[tree.label_start[node]], bounds[tree.label_end[node]],
            reg_C, tol, solver))

    label_rows: list = [empty] * tree.n_labels
    for leaf in tree.leaf_ids():
        f_lo, f_hi = bounds[tree.label_start[leaf]], bounds[tree.label_end[leaf]]
        for pos in range(int(tree.label_start[leaf]), int(tree.label_end[leaf])):
            label_rows[tree.label_order[pos]] = _fit_slice(
                X_sorted, f_lo, f_hi, bounds[pos], bounds[pos + 1],
                reg_C, tol, solver)

    model = TreeModel(tree, _assemble_csr(node_rows, dim), _assemble_csr(label_rows, dim),
                      list(labels), score_transform, reg_C)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Inference.

def _compatible(leaf_prefix: str, prefix: str) -> bool:
    return leaf_prefix.startswith(prefix) or prefix.startswith(leaf_prefix)


def _top_candidates(cand_ids, cand_scores, labels, prefix, k):
    order = np.lexsort((cand_ids, -cand_scores))
    entries = []
    for idx in order:
        label_id = int(cand_ids[idx])
        query = labels[label_id]
        if query.startswith(prefix):
            entries.append(Suggestion(query, float(cand_scores[idx]), label_id))
            if len(entries) == k:
                break
    return SuggestionList(entries)


def predict(model: TreeModel, x: SparseVector, prefix: str,
            B: int = DEFAULT_BEAM, k: int = DEFAULT_K,
            prefilter: bool = True, return_stats: bool = False):
    """Beam search for the top-k labels extending `prefix`.

    With B >= the number of leaves this is exhaustive and matches
    brute_force_predict exactly. An empty prefix disables filtering.
    """
    if B < 1 or k < 1:
        raise ValueError("B and k must be >= 1")
    tree = model.tree
    xdense = np.zeros(model.dim)
    if x.nnz:
        xdense[x.indices] = x.values
    stats = {"nodes_scored": 0, "labels_scored": 0, "levels": 0}

    frontier_ids = np.zeros(1, dtype=np.int64)
    frontier_scores = np.ones(1)
    while True:
        internal = ~tree.is_leaf[frontier_ids]
        if not internal.any():
            break
        stats["levels"] += 1
        parents = frontier_ids[internal]
        counts = tree.child_count[parents]
        child_ids = np.concatenate([
            np.arange(fc, fc + cc)
            for fc, cc in zip(tree.first_child[parents], counts)
        ])
        margins = model.node_weights[child_ids] @ xdense
        child_scores = np.repeat(frontier_scores[internal], counts) * \
            transform_scores(model.score_transform, margins)
        stats["nodes_scored"] += len(child_ids)
        pool_ids = np.concatenate([frontier_ids[~internal], child_ids])
        pool_scores = np.concatenate([frontier_scores[~internal], child_scores])
        if len(pool_ids) > B:
            keep = np.lexsort((pool_ids, -pool_scores))[:B]
            pool_ids, pool_scores = pool_ids[keep], pool_scores[keep]
        frontier_ids, frontier_scores = pool_ids, pool_scores

    spans = []
    span_scores = []
    for leaf, score in zip(frontier_ids, frontier_scores):
        if prefilter and prefix and not _compatible(model.leaf_prefixes[int(leaf)], prefix):
            continue
        spans.append(np.arange(tree.label_start[leaf], tree.label_end[leaf]))
        span_scores.append((score, len(spans[-1])))
    if not spans:
        result = SuggestionList([])
        return (result, stats) if return_stats else result

    positions = np.concatenate(spans)
    cand_ids = tree.label_order[positions]
    margins = model.label_weights[cand_ids] @ xdense
    stats["labels_scored"] += len(cand_ids)
    path_scores = np.repeat([s for s, _ in span_scores], [n for _, n in span_scores])
    cand_scores = path_scores * transform_scores(model.score_transform, margins)

    result = _top_candidates(cand_ids, cand_scores, model.labels, prefix, k)
    result.validate(prefix)
    return (result, stats) if return_stats else result


def brute_force_predict(model: TreeModel, x: SparseVector, prefix: str,
                        k: int = DEFAULT_K) -> SuggestionList:
    """Score every label through its full root-to-leaf path, no beam. The
    reference predictor for equivalence tests; linear in the label count."""
    tree = model.tree
    xdense = np.zeros(model.dim)
    if x.nnz:
        xdense[x.indices] = x.values
    sig = transform_scores(model.score_transform, model.node_weights @ xdense)
    path = np.ones(tree.n_nodes)
    for node in range(1, tree.n_nodes):  # BFS ids: parent always precedes child
        path[node] = path[tree.parent[node]] * sig[node]
    per_label_path = np.empty(tree.n_labels)
    for leaf in tree.leaf_ids():
        span = slice(int(tree.label_start[leaf]), int(tree.label_end[leaf]))
        per_label_path[tree.label_order[span]] = path[leaf]
    label_sig = transform_scores(model.score_transform, model.label_weights @ xdense)
    scores = per_label_path * label_sig
    result = _top_candidates(np.arange(tree.n_labels), scores, model.labels, prefix, k)
    result.validate(prefix)
    return result


def path_score(model: TreeModel, x: SparseVector, label_id: int) -> float:
    """Product of transformed margins along root -> leaf -> label; the
    factorization every returned score must reproduce."""
    tree = model.tree
    pos = int(np.flatnonzero(tree.label_order == label_id)[0])
    leaf = None
    for node in tree.leaf_ids():
        if tree.label_start[node] <= pos < tree.label_end[node]:
            leaf = int(node)
            break
    xdense = np.zeros(model.dim)
    if x.nnz:
        xdense[x.indices] = x.values
    score = float(transform_scores(
        model.score_transform, np.atleast_1d(model.label_weights[label_id] @ xdense))[0])
    node = leaf
    while node != 0:
        margin = model.node_weights[node] @ xdense
        score *= float(transform_scores(model.score_transform, np.atleast_1d(margin))[0])
        node = int(tree.parent[node])
    return score


# ---------------------------------------------------------------------------
# Model directory.

def save_model(model_dir, model: TreeModel, encoder: InputEncoder | None = None) -> None:
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    save_tree(model_dir / "tree.bin", model.tree)
    save_csr(model_dir / "node_weights.bin", model.node_weights)
    save_csr(model_dir / "label_weights.bin", model.label_weights)
    with open(model_dir / "labels.txt", "w", encoding="utf-8") as fh:
        for label in model.labels:
            fh.write(label + "\n")
    config = {
        "format": MODEL_FORMAT,
        "version": 1,
        "score_transform": model.score_transform,
        "reg_C": model.reg_C,
        "encoder": "encoder",
    }
    with open(model_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
    if encoder is not None:
        enc_dir = model_dir / "encoder"
        if enc_dir.exists():
            shutil.rmtree(enc_dir)
        save_encoder(enc_dir, encoder)


def load_model(model_dir) -> tuple[TreeModel, InputEncoder | None]:
    model_dir = Path(model_dir)
    with open(model_dir / "config.json", encoding="utf-8") as fh:
        config = json.load(fh)
    if config.get("format") != MODEL_FORMAT or config.get("version") != 1:
        raise ValueError(f"{model_dir}: not a version-1 model directory")
    with open(model_dir / "labels.txt", encoding="utf-8") as fh:
        labels = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    model = TreeModel(
        tree=load_tree(model_dir / "tree.bin"),
        node_weights=load_csr(model_dir / "node_weights.bin"),
        label_weights=load_csr(model_dir / "label_weights.bin"),
        labels=labels,
        score_transform=config["score_transform"],
        reg_C=config["reg_C"],
    )
    model.validate()
    enc_dir = model_dir / config.get("encoder", "encoder")
    encoder = load_encoder(enc_dir) if (enc_dir / "encoder.json").exists() else None
    return model, encoder

"""Shared test helpers: reference metric implementations, structural
checkers, random model rigs, and small pipeline builders.

The reference metrics are deliberately structured differently from the
package code (clipped counting via list removal instead of Counter
intersections, geometric means instead of log sums, explicit rank loops)
so that agreement between the two is evidence rather than tautology.
"""

from __future__ import annotations

import math
import random
import time

import numpy as np
import scipy.sparse as sp

from prefx import corpus, embed, index, synth, vectorize
from prefx import model as model_mod
from prefx.index import LabelTree, _BuildNode, _freeze
from prefx.model import HINGE_EXP3, SIGMOID, TreeModel
from prefx.sparse import SparseVector, rows_to_csr


# ---------------------------------------------------------------------------
# Reference metrics.

def ref_mrr(prediction_lists, truths, k: int) -> float:
    total = 0.0
    for preds, truth in zip(prediction_lists, truths):
        for rank, query in enumerate(list(preds)[:k], start=1):
            if query == truth:
                total += 1.0 / rank
                break
    return total / len(truths)


def ref_bleu(reference: str, hypothesis: str, eps: float = 0.1) -> float:
    """Sentence BLEU with method-1 smoothing (epsilon replaces zero-match
    numerators only), order capped at min(4, |hyp|, |ref|), brevity penalty
    for short hypotheses."""
    ref_tokens = reference.split()
    hyp_tokens = hypothesis.split()
    if not ref_tokens or not hyp_tokens:
        return 0.0
    order = min(4, len(ref_tokens), len(hyp_tokens))
    product = 1.0
    for n in range(1, order + 1):
        grams = [tuple(hyp_tokens[i:i + n]) for i in range(len(hyp_tokens) - n + 1)]
        pool = [tuple(ref_tokens[i:i + n]) for i in range(len(ref_tokens) - n + 1)]
        hits = 0
        for gram in grams:
            if gram in pool:
                pool.remove(gram)
                hits += 1
        product *= (hits if hits else eps) / len(grams)
    score = product ** (1.0 / order)
    if len(hyp_tokens) < len(ref_tokens):
        score *= math.exp(1.0 - len(ref_tokens) / len(hyp_tokens))
    return score


def ref_bleu_rr(prediction_lists, truths, k: int) -> float:
    weights = [1.0 / rank for rank in range(1, k + 1)]
    scale = sum(weights)
    total = 0.0
    for preds, truth in zip(prediction_lists, truths):
        got = sum(w * ref_bleu(truth, q) for w, q in zip(weights, list(preds)[:k]))
        total += got / scale
    return total / len(truths)


def ref_percentile(samples, p: float) -> float:
    ordered = sorted(samples)
    rank = math.ceil(len(ordered) * p / 100.0)
    return float(ordered[rank - 1])


def ref_top_completions(next_queries, prefix: str, k: int) -> list[tuple[str, int]]:
    """Brute-force most-frequent completions of `prefix`: count every train
    query extending it, sort by (-count, query), take k."""
    counts: dict[str, int] = {}
    for q in next_queries:
        if q.startswith(prefix):
            counts[q] = counts.get(q, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def random_prediction_cases(rng: random.Random, n_cases: int, k: int,
                            unique: bool = False):
    """(prediction list, truth) pairs over short multi-word queries. About
    half the cases plant the truth somewhere in the list; lists may run
    longer than k to exercise the top-k cap."""
    words = ["red", "blue", "dock", "case", "wireless", "mini", "pro",
             "max", "hub", "pad", "ultra", "twin"]

    def query() -> str:
        return " ".join(rng.choice(words) for _ in range(rng.randint(1, 4)))

    cases = []
    for _ in range(n_cases):
        truth = query()
        size = rng.randint(0, k + 2)
        if unique:
            pool: set[str] = set()
            while len(pool) < size:
                pool.add(query())
            preds = sorted(pool)  # set order is salted; sort for reproducibility
            rng.shuffle(preds)
        else:
            preds = [query() for _ in range(size)]
        if preds and rng.random() < 0.5:
            slot = rng.randrange(len(preds))
            if not unique or truth not in preds:
                preds[slot] = truth
        cases.append((preds, truth))
    return cases


# ---------------------------------------------------------------------------
# Reference tree shapes and structural checkers.

def ref_trie_shape(labels: list[str], d_trie: int):
    """The nested structure a depth-capped character trie must produce,
    derived by recursive first-character grouping rather than by building
    and collapsing an actual trie.

    Leaves are lists of label ids (lexicographic by label string), internal
    nodes are lists of children. A label ending above the cap while others
    continue becomes a single-label leaf placed before its siblings.
    """

    def grow(members: list[tuple[int, str]], depth: int):
        if depth >= d_trie:
            return [lid for lid, _ in sorted(members, key=lambda m: m[1])]
        ended = [lid for lid, lab in members if len(lab) == depth]
        rest = [(lid, lab) for lid, lab in members if len(lab) > depth]
        if not rest:
            return ended
        groups: dict[str, list[tuple[int, str]]] = {}
        for lid, lab in rest:
            groups.setdefault(lab[depth], []).append((lid, lab))
        children: list = [ended] if ended else []
        children.extend(grow(groups[ch], depth + 1) for ch in sorted(groups))
        return children

    return grow(list(enumerate(labels)), 0)


def tree_shape(tree: LabelTree):
    """The same nested leaf/internal structure read out of a frozen tree."""

    def node(nid: int):
        if tree.is_leaf[nid]:
            return [int(lid) for lid in tree.leaf_labels(nid)]
        return [node(c) for c in tree.children(nid)]

    return node(0)


def subtree_label_ids(tree: LabelTree, node: int) -> list[int]:
    span = slice(int(tree.label_start[node]), int(tree.label_end[node]))
    return sorted(int(i) for i in tree.label_order[span])


def check_partition(tree: LabelTree, n_labels: int) -> None:
    assert tree.n_labels == n_labels
    assert sorted(tree.label_order.tolist()) == list(range(n_labels))
    covered: list[int] = []
    for leaf in tree.leaf_ids():
        covered.extend(int(i) for i in tree.leaf_labels(int(leaf)))
    assert sorted(covered) == list(range(n_labels))
    tree.validate()


def check_balanced_binary(tree: LabelTree, root: int = 0) -> None:
    """Every internal node under `root` splits into exactly two children
    whose label counts differ by at most one."""
    stack = [root]
    while stack:
        node = stack.pop()
        if tree.is_leaf[node]:
            continue
        kids = list(tree.children(node))
        assert len(kids) == 2, f"node {node} has {len(kids)} children"
        sizes = [int(tree.label_end[c] - tree.label_start[c]) for c in kids]
        assert abs(sizes[0] - sizes[1]) <= 1, f"node {node} split {sizes}"
        stack.extend(kids)


def check_hc_invariants(tree: LabelTree, n_labels: int, M: int) -> None:
    check_partition(tree, n_labels)
    check_balanced_binary(tree)
    assert tree.max_leaf_size() <= max(M - 1, 1)


def check_trie_invariants(tree: LabelTree, labels: list[str], d_trie: int) -> None:
    check_partition(tree, len(labels))
    assert tree.depth() <= d_trie
    assert tree_shape(tree) == ref_trie_shape(labels, d_trie)


def check_hybrid_invariants(tree: LabelTree, labels: list[str],
                            d_trie: int, M: int) -> None:
    """Top region matches the reference trie grouping; every group is then
    a balanced binary subtree over exactly that group's labels."""
    check_partition(tree, len(labels))

    def is_ref_leaf(node) -> bool:
        return all(isinstance(x, int) for x in node)

    def compare(node_id: int, ref_node) -> None:
        if is_ref_leaf(ref_node):
            assert subtree_label_ids(tree, node_id) == sorted(ref_node)
            check_balanced_binary(tree, node_id)
            if not tree.is_leaf[node_id]:
                assert max(
                    int(tree.label_end[leaf] - tree.label_start[leaf])
                    for leaf in _subtree_leaves(tree, node_id)
                ) <= max(M - 1, 1)
            return
        kids = list(tree.children(node_id))
        assert len(kids) == len(ref_node)
        for child, ref_child in zip(kids, ref_node):
            compare(child, ref_child)

    compare(0, ref_trie_shape(labels, d_trie))


def _subtree_leaves(tree: LabelTree, root: int) -> list[int]:
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if tree.is_leaf[node]:
            out.append(node)
        else:
            stack.extend(tree.children(node))
    return out


def check_mlc_invariants(tree: LabelTree, labels: list[str], d_mlc: int) -> None:
    """Labels sharing a prefix of length d' <= d_mlc never split across
    siblings at depth d'. Balance relaxations must be on the record."""
    check_partition(tree, len(labels))
    depths = np.zeros(tree.n_nodes, dtype=np.int64)
    for node in range(1, tree.n_nodes):
        depths[node] = depths[tree.parent[node]] + 1
    for node in range(tree.n_nodes):
        if tree.is_leaf[node] or depths[node] >= d_mlc:
            continue
        plen = int(depths[node]) + 1
        seen: dict[str, int] = {}
        for child in tree.children(node):
            for lid in subtree_label_ids(tree, child):
                key = labels[lid][:plen]
                owner = seen.setdefault(key, child)
                assert owner == child, (
                    f"prefix {key!r} split across nodes {owner} and {child}")
    assert "relaxed_splits" in tree.diagnostics
    for entry in tree.diagnostics["relaxed_splits"]:
        assert set(entry) == {"depth", "group_size", "total"}
        assert entry["group_size"] > entry["total"] // 2


# ---------------------------------------------------------------------------
# Random toy models for beam-vs-brute and prefilter checks.

def random_labels(rng: random.Random, max_labels: int = 64,
                  alphabet: str = "abc", max_len: int = 6) -> list[str]:
    pool = sum(len(alphabet) ** n for n in range(1, max_len + 1))
    count = rng.randint(1, min(max_labels, pool))
    labels: set[str] = set()
    while len(labels) < count:
        length = rng.randint(1, max_len)
        labels.add("".join(rng.choice(alphabet) for _ in range(length)))
    return sorted(labels)


def random_sparse_rows(rng: random.Random, n_rows: int, dim: int,
                       max_nnz: int, min_nnz: int = 0) -> sp.csr_matrix:
    rows = []
    for _ in range(n_rows):
        nnz = rng.randint(min_nnz, min(max_nnz, dim))
        idx = np.array(sorted(rng.sample(range(dim), nnz)), dtype=np.int32)
        val = np.array([rng.gauss(0.0, 1.0) or 0.3 for _ in range(nnz)])
        rows.append(SparseVector(idx, val, dim))
    return rows_to_csr(rows, dim)


def random_input(rng: random.Random, dim: int, max_nnz: int = 6) -> SparseVector:
    nnz = rng.randint(0, min(max_nnz, dim))
    idx = np.array(sorted(rng.sample(range(dim), nnz)), dtype=np.int32)
    val = np.array([rng.gauss(0.0, 1.0) or 0.3 for _ in range(nnz)])
    return SparseVector(idx, val, dim)


def random_toy_model(seed: int, max_labels: int = 64) -> TreeModel:
    """A structurally valid model with random weights: real tree (balanced
    2-means over random unit embeddings), random sparse classifiers."""
    rng = random.Random(seed)
    labels = random_labels(rng, max_labels)
    n = len(labels)
    emb = random_sparse_rows(rng, n, 16, max_nnz=5, min_nnz=1)
    emb = sp.diags(1.0 / np.sqrt(np.asarray(emb.multiply(emb).sum(axis=1)).ravel())) @ emb
    tree = index.build_hc(emb.tocsr(), M=rng.randint(2, 8), seed=seed)
    dim = rng.randint(8, 24)
    model = TreeModel(
        tree=tree,
        node_weights=random_sparse_rows(rng, tree.n_nodes, dim, max_nnz=5),
        label_weights=random_sparse_rows(rng, n, dim, max_nnz=5),
        labels=labels,
        score_transform=rng.choice([HINGE_EXP3, SIGMOID]),
    )
    model.validate()
    return model


def random_toy_prefix(rng: random.Random, labels: list[str]) -> str:
    roll = rng.random()
    if roll < 0.25:
        return ""
    if roll < 0.85:
        label = rng.choice(labels)
        return label[:rng.randint(1, len(label))]
    return "".join(rng.choice("abcz") for _ in range(rng.randint(1, 4)))


# ---------------------------------------------------------------------------
# Pipeline builders shared by fixtures and acceptance tests.

def build_dataset(n_sessions: int, seed: int = 0, **cfg_kwargs) -> dict:
    """Generate logs, sessionize, split temporally, and encode nothing yet;
    the returned bundle carries the splits, label list, and timing."""
    start = time.perf_counter()
    cfg = synth.SynthConfig(n_sessions=n_sessions, seed=seed, **cfg_kwargs)
    records, meta = synth.generate_logs(cfg)
    sessions = corpus.split_sessions(records)
    train, dev, test, coverage = corpus.temporal_split(
        sessions,
        (meta["suggested_dev_boundary"], meta["suggested_test_boundary"]),
        seed=seed,
    )
    labels = sorted(train.label_vocab)
    return {
        "train": train,
        "dev": dev,
        "test": test,
        "labels": labels,
        "coverage": coverage,
        "meta": meta,
        "prep_seconds": time.perf_counter() - start,
    }


def fit_encoder(train_triplets, mode: str, pos_weighted: bool = False):
    prev_vocab = vectorize.fit_vocab(
        (t.prev_query for t in train_triplets), vectorize.TOKEN_UNIGRAM, min_df=2)
    prefix_vocab = vectorize.fit_vocab(
        (t.prefix for t in train_triplets), vectorize.CHAR_NGRAM, min_df=1,
        position_weighted=pos_weighted)
    return vectorize.InputEncoder(prev_vocab, prefix_vocab, mode)


def encode_split(encoder, triplets) -> sp.csr_matrix:
    return rows_to_csr(
        [encoder.encode(t.prev_query, t.prefix) for t in triplets], encoder.dim)


def train_ids(ds: dict) -> np.ndarray:
    vocab = ds["train"].label_vocab
    return np.array([vocab[t.next_query] for t in ds["train"].triplets], dtype=np.int64)


def train_arm(ds: dict, X: sp.csr_matrix, embeddings, algo: str, *,
              M: int = 100, d_trie: int = 3, seed: int = 0):
    """Build one index + model arm; the wall covers index construction and
    classifier training together."""
    start = time.perf_counter()
    tree = index.build_index(algo, ds["labels"], embeddings,
                             M=M, d_trie=d_trie, seed=seed)
    model = model_mod.train(tree, X, train_ids(ds), ds["labels"])
    return model, time.perf_counter() - start


def eval_mrr(model: TreeModel, encoder, triplets, B: int, k: int = 10) -> float:
    from prefx.evaluate import mrr

    preds = []
    for t in triplets:
        x = encoder.encode(t.prev_query, t.prefix)
        preds.append(model_mod.predict(model, x, t.prefix, B, k).queries())
    return mrr(preds, [t.next_query for t in triplets], k)


# ---------------------------------------------------------------------------
# Half-million-label latency rig.

def _base26(i: int, width: int) -> str:
    out = []
    for _ in range(width):
        out.append(chr(ord("a") + i % 26))
        i //= 26
    return "".join(reversed(out))


def build_latency_rig(n_labels: int = 500_000, M: int = 100,
                      dim: int = 120_000, row_nnz: int = 40,
                      seed: int = 7) -> TreeModel:
    """A structurally faithful large model without the training cost: label
    strings with a unique sorted head, a balanced halving tree at leaf cap
    M, and random sparse classifier rows of realistic density."""
    gen = np.random.default_rng(seed)
    tails = gen.integers(0, 26, size=(n_labels, 4))
    tail_len = gen.integers(2, 5, size=n_labels)
    labels = [
        _base26(i, 5) + "".join(chr(ord("a") + c) for c in tails[i, :tail_len[i]])
        for i in range(n_labels)
    ]

    ids = np.arange(n_labels, dtype=np.int64)

    def split(lo: int, hi: int) -> _BuildNode:
        if hi - lo < M or hi - lo == 1:
            return _BuildNode(labels=ids[lo:hi])
        mid = (lo + hi) // 2
        return _BuildNode(children=[split(lo, mid), split(mid, hi)])

    tree = _freeze(split(0, n_labels),
                   {"algorithm": index.HC, "M": M, "k_b": 2, "seed": seed},
                   n_labels)

    def random_weights(n_rows: int) -> sp.csr_matrix:
        indices = np.sort(gen.integers(0, dim, size=n_rows * row_nnz,
                                       dtype=np.int32).reshape(n_rows, row_nnz), axis=1)
        data = gen.standard_normal(n_rows * row_nnz) * 0.5
        indptr = np.arange(n_rows + 1, dtype=np.int64) * row_nnz
        return sp.csr_matrix((data, indices.ravel(), indptr), shape=(n_rows, dim))

    model = TreeModel(
        tree=tree,
        node_weights=random_weights(tree.n_nodes),
        label_weights=random_weights(n_labels),
        labels=labels,
        score_transform=HINGE_EXP3,
    )
    model.validate()
    return model


def rig_query(gen: np.random.Generator, model: TreeModel) -> tuple[SparseVector, str]:
    nnz = int(gen.integers(8, 25))
    idx = np.unique(gen.integers(0, model.dim, size=nnz, dtype=np.int32))
    val = gen.standard_normal(len(idx))
    x = SparseVector(idx, val, model.dim).unit()
    label = model.labels[int(gen.integers(len(model.labels)))]
    return x, label[:int(gen.integers(1, 7))]

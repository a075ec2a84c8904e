"""Hierarchical label index builders.

Four algorithms produce the same LabelTree shape:

- hc: recursive balanced spherical 2-means over label embeddings; the two
  children of every split differ by at most one label.
- trie: character trie over label strings, depth-capped, with dummy leaves
  for labels that terminate at internal nodes.
- hybrid: trie to depth d_trie, then hc inside each trie group.
- mlc: hc where labels sharing a prefix of length d' stay in the same node
  for all depths d' <= d_mlc (prefix groups clustered as atomic units).

Trees are frozen into flat arrays: nodes are numbered breadth-first so each
node's children occupy consecutive ids, and leaf label lists are laid out
depth-first in one flat array so every subtree covers a contiguous range.
"""

from __future__ import annotations

import io
import json
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

HC = "hc"
TRIE = "trie"
HYBRID = "hybrid"
MLC = "mlc"

TREE_MAGIC = b"PXTR"
TREE_VERSION = 1

_LLOYD_MAX_ITERS = 20


class _BuildNode:
    __slots__ = ("children", "labels")

    def __init__(self, children=None, labels=None):
        self.children = children if children is not None else []
        self.labels = labels


@dataclass
class LabelTree:
    """Flattened label hierarchy; node 0 is the root.

    label_order is a permutation of 0..L-1; node n owns the slice
    label_order[label_start[n]:label_end[n]], and a leaf's slice is exactly
    its label list.
    """

    parent: np.ndarray
    first_child: np.ndarray
    child_count: np.ndarray
    is_leaf: np.ndarray
    label_start: np.ndarray
    label_end: np.ndarray
    label_order: np.ndarray
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def n_labels(self) -> int:
        return len(self.label_order)

    def children(self, node: int) -> range:
        start = int(self.first_child[node])
        return range(start, start + int(self.child_count[node]))

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    def leaf_labels(self, node: int) -> np.ndarray:
        if not self.is_leaf[node]:
            raise ValueError(f"node {node} is not a leaf")
        return self.label_order[self.label_start[node]:self.label_end[node]]

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(1, self.n_nodes):
            depths[node] = depths[self.parent[node]] + 1
        return int(depths.max()) if self.n_nodes else 0

    def max_fanout(self) -> int:
        return int(self.child_count.max())

    def max_leaf_size(self) -> int:
        sizes = self.label_end[self.is_leaf] - self.label_start[self.is_leaf]
        return int(sizes.max())

    def validate(self) -> None:
        order = np.sort(self.label_order)
        if not np.array_equal(order, np.arange(self.n_labels)):
            raise ValueError("label_order must be a permutation of 0..L-1")
        if self.parent[0] != -1:
            raise ValueError("node 0 must be the root")
        covered = np.zeros(self.n_labels, dtype=bool)
        for leaf in self.leaf_ids():
            span = slice(int(self.label_start[leaf]), int(self.label_end[leaf]))
            if covered[self.label_order[span]].any():
                raise ValueError("leaf label ranges overlap")
            covered[self.label_order[span]] = True
        if not covered.all():
            raise ValueError("leaves do not cover all labels")
        for node in range(self.n_nodes):
            for child in self.children(node):
                if self.parent[child] != node:
                    raise ValueError("parent/child arrays disagree")
                if not (self.label_start[node] <= self.label_start[child]
                        and self.label_end[child] <= self.label_end[node]):
                    raise ValueError("child label range not nested in parent")


def _freeze(root: _BuildNode, params: dict, n_labels: int, diagnostics: dict | None = None) -> LabelTree:
    # BFS ids (children consecutive), then DFS over the frozen structure to
    # lay out labels so every subtree covers one contiguous slice.
    nodes = [root]
    parent = [-1]
    queue = deque([(0, root)])
    while queue:
        node_id, node = queue.popleft()
        for child in node.children:
            child_id = len(nodes)
            nodes.append(child)
            parent.append(node_id)
            queue.append((child_id, child))
    n = len(nodes)
    parent_arr = np.array(parent, dtype=np.int32)
    first_child = np.full(n, -1, dtype=np.int32)
    child_count = np.zeros(n, dtype=np.int32)
    for node_id in range(n - 1, 0, -1):
        p = parent_arr[node_id]
        first_child[p] = node_id  # overwritten until the lowest child id wins
        child_count[p] += 1
    is_leaf = child_count == 0
    label_start = np.zeros(n, dtype=np.int64)
    label_end = np.zeros(n, dtype=np.int64)
    order: list[np.ndarray] = []
    cursor = 0
    stack = [(0, False)]
    while stack:
        node_id, done = stack.pop()
        if done:
            kids = range(first_child[node_id], first_child[node_id] + child_count[node_id])
            label_start[node_id] = label_start[kids[0]]
            label_end[node_id] = label_end[kids[-1]]
            continue
        if is_leaf[node_id]:
            labels = np.asarray(nodes[node_id].labels, dtype=np.int64)
            label_start[node_id] = cursor
            cursor += len(labels)
            label_end[node_id] = cursor
            order.append(labels)
        else:
            stack.append((node_id, True))
            kids = range(first_child[node_id], first_child[node_id] + child_count[node_id])
            for child in reversed(kids):
                stack.append((child, False))
    label_order = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
    tree = LabelTree(parent_arr, first_child, child_count, is_leaf,
                     label_start, label_end, label_order,
                     params=params, diagnostics=diagnostics or {})
    if tree.n_labels != n_labels:
        raise ValueError("tree does not cover the label set")
    tree.validate()
    return tree


# ---------------------------------------------------------------------------
# Balanced spherical 2-means.

def _as_matrix(embeddings) -> sp.csr_matrix:
    matrix = embeddings if sp.issparse(embeddings) else embeddings.matrix
    return matrix.tocsr()


def _split_rng(seed: int, group: np.ndarray) -> np.random.Generator:
    # Seed derived from the group itself so the recursion order (or any
    # future parallel build) cannot change the draws.
    return np.random.default_rng([seed, len(group), int(group[0]), int(group[-1])])


def _balanced_2means(matrix: sp.csr_matrix, group: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split `group` (sorted label ids) into halves differing by <= 1,
    maximizing cosine coherence. Ties and degenerate geometry fall back to
    label-id order, keeping the build deterministic."""
    rows = matrix[group]
    n = len(group)
    rng = _split_rng(seed, group)
    c1 = rows[int(rng.integers(n))].toarray().ravel()
    sims = rows @ c1
    c2 = rows[int(np.argmin(sims))].toarray().ravel()
    half = (n + 1) // 2
    left_pos = None
    for _ in range(_LLOYD_MAX_ITERS):
        margin = rows @ c1 - rows @ c2
        order = np.lexsort((group, -margin))
        new_left = np.sort(order[:half])
        if left_pos is not None and np.array_equal(new_left, left_pos):
            break
        left_pos = new_left
        right_pos = np.sort(order[half:])
        c1 = _mean_direction(rows[left_pos], c1)
        c2 = _mean_direction(rows[right_pos], c2)
    right_pos = np.setdiff1d(np.arange(n), left_pos, assume_unique=True)
    return group[left_pos], group[right_pos]


def _mean_direction(rows: sp.csr_matrix, fallback: np.ndarray) -> np.ndarray:
    center = np.asarray(rows.sum(axis=0)).ravel() / rows.shape[0]
    norm = np.linalg.norm(center)
    return center / norm if norm > 0 else fallback


def build_hc(embeddings, M: int, seed: int = 0) -> LabelTree:
    """Recursive balanced 2-means; recursion stops below M labels."""
    matrix = _as_matrix(embeddings)
    n_labels = matrix.shape[0]
    if n_labels < 1:
        raise ValueError("need at least one label")

    def split(group: np.ndarray) -> _BuildNode:
        if len(group) < M or len(group) == 1:
            return _BuildNode(labels=group)
        left, right = _balanced_2means(matrix, group, seed)
        return _BuildNode(children=[split(left), split(right)])

    root = split(np.arange(n_labels, dtype=np.int64))
    params = {"algorithm": HC, "M": M, "k_b": 2, "seed": seed}
    return _freeze(root, params, n_labels)


# ---------------------------------------------------------------------------
# Depth-capped character trie.

class _TrieNode:
    __slots__ = ("edges", "terminal")

    def __init__(self):
        self.edges: dict[str, _TrieNode] = {}
        self.terminal: int | None = None

    def subtree_labels(self, out: list[int]) -> list[int]:
        if self.terminal is not None:
            out.append(self.terminal)
        for ch in sorted(self.edges):
            self.edges[ch].subtree_labels(out)
        return out


def _raw_trie(labels: list[str]) -> _TrieNode:
    root = _TrieNode()
    seen = set()
    for label_id, label in enumerate(labels):
        if label in seen:
            raise ValueError(f"duplicate label {label!r}")
        seen.add(label)
        node = root
        for ch in label:
            node = node.edges.setdefault(ch, _TrieNode())
        node.terminal = label_id
    return root


def _collapse(node: _TrieNode, depth: int, d_trie: int) -> _BuildNode:
    if depth >= d_trie or not node.edges:
        return _BuildNode(labels=np.array(node.subtree_labels([]), dtype=np.int64))
    children = []
    if node.terminal is not None:
        # Label ends here but the node has descendants: park it in a dummy
        # leaf so every label lives in a leaf.
        children.append(_BuildNode(labels=np.array([node.terminal], dtype=np.int64)))
    for ch in sorted(node.edges):
        children.append(_collapse(node.edges[ch], depth + 1, d_trie))
    return _BuildNode(children=children)


def build_trie(labels: list[str], d_trie: int) -> LabelTree:
    """Character trie over unique normalized labels, collapsed to leaves at
    depth d_trie. Unary chains are kept: a plain trie, no path compression."""
    if d_trie < 1:
        raise ValueError("d_trie must be >= 1")
    if not labels:
        raise ValueError("need at least one label")
    root = _collapse(_raw_trie(labels), 0, d_trie)
    params = {"algorithm": TRIE, "d_trie": d_trie}
    return _freeze(root, params, len(labels))


def _collapse_hybrid(node: _TrieNode, depth: int, d_trie: int, grafts: dict) -> _BuildNode:
    if depth >= d_trie or not node.edges:
        return grafts[id(node)]
    children = []
    if node.terminal is not None:
        children.append(_BuildNode(labels=np.array([node.terminal], dtype=np.int64)))
    for ch in sorted(node.edges):
        children.append(_collapse_hybrid(node.edges[ch], depth + 1, d_trie, grafts))
    return _BuildNode(children=children)


def build_hybrid(labels: list[str], embeddings, d_trie: int, M: int, seed: int = 0) -> LabelTree:
    """Trie to depth d_trie, then balanced 2-means inside each trie group."""
    if not labels:
        raise ValueError("need at least one label")
    matrix = _as_matrix(embeddings)
    if d_trie == 0:
        tree = build_hc(matrix, M, seed)
        tree.params.update({"algorithm": HYBRID, "d_trie": 0})
        return tree
    raw = _raw_trie(labels)

    def hc_subtree(group: np.ndarray) -> _BuildNode:
        if len(group) < M or len(group) == 1:
            return _BuildNode(labels=group)
        left, right = _balanced_2means(matrix, group, seed)
        return _BuildNode(children=[hc_subtree(left), hc_subtree(right)])

    grafts: dict[int, _BuildNode] = {}

    def collect(node: _TrieNode, depth: int) -> None:
        if depth >= d_trie or not node.edges:
            group = np.array(sorted(node.subtree_labels([])), dtype=np.int64)
            grafts[id(node)] = hc_subtree(group)
            return
        for ch in sorted(node.edges):
            collect(node.edges[ch], depth + 1)

    collect(raw, 0)
    root = _collapse_hybrid(raw, 0, d_trie, grafts)
    params = {"algorithm": HYBRID, "d_trie": d_trie, "M": M, "k_b": 2, "seed": seed}
    return _freeze(root, params, len(labels))


# ---------------------------------------------------------------------------
# Must-link constrained clustering.

def build_mlc(labels: list[str], embeddings, M: int, d_mlc: int, seed: int = 0) -> LabelTree:
    """Balanced 2-means where labels sharing a d'-character prefix stay in
    the same node at every depth d' <= d_mlc; prefix groups are clustered as
    atomic units weighted by size. Below d_mlc this is plain hc."""
    matrix = _as_matrix(embeddings)
    n_labels = matrix.shape[0]
    if n_labels != len(labels):
        raise ValueError("one embedding row per label required")
    relaxed: list[dict] = []

    def hc_subtree(group: np.ndarray) -> _BuildNode:
        if len(group) < M or len(group) == 1:
            return _BuildNode(labels=group)
        left, right = _balanced_2means(matrix, group, seed)
        return _BuildNode(children=[hc_subtree(left), hc_subtree(right)])

    def split(group: np.ndarray, depth: int) -> _BuildNode:
        if len(group) < M or len(group) == 1:
            return _BuildNode(labels=group)
        if depth >= d_mlc:
            return hc_subtree(group)
        keyed: dict[str, list[int]] = {}
        for label_id in group:
            keyed.setdefault(labels[label_id][:depth + 1], []).append(int(label_id))
        groups = [np.array(keyed[k], dtype=np.int64) for k in sorted(keyed)]
        if len(groups) == 1:
            # Constraint forbids any split: chain down one level.
            return _BuildNode(children=[split(group, depth + 1)])
        left_ids, right_ids = _split_groups(matrix, groups, seed, relaxed, depth)
        return _BuildNode(children=[split(left_ids, depth + 1), split(right_ids, depth + 1)])

    root = split(np.arange(n_labels, dtype=np.int64), 0)
    params = {"algorithm": MLC, "M": M, "k_b": 2, "d_mlc": d_mlc, "seed": seed}
    return _freeze(root, params, n_labels, diagnostics={"relaxed_splits": relaxed})


def _split_groups(matrix, groups, seed, relaxed, depth) -> tuple[np.ndarray, np.ndarray]:
    """Assign atomic label groups to two children, filling the preferred
    child in margin order under a ceil(n/2) label-weight capacity."""
    weights = np.array([len(g) for g in groups])
    total = int(weights.sum())
    capacity = (total + 1) // 2
    reps = sp.vstack([
        _unit_sum(matrix, g) for g in groups
    ]).tocsr()
    all_ids = np.concatenate(groups)
    rng = _split_rng(seed, np.sort(all_ids))
    oversized = np.flatnonzero(weights > capacity)
    if len(oversized):
        # One group alone outweighs half the labels: isolate it and give
        # everything else to the sibling, noting the balance relaxation.
        big = int(oversized[0])
        relaxed.append({"depth": depth, "group_size": int(weights[big]), "total": total})
        left = groups[big]
        right = np.concatenate([g for i, g in enumerate(groups) if i != big])
        return np.sort(left), np.sort(right)
    c1 = reps[int(rng.integers(len(groups)))].toarray().ravel()
    c2 = reps[int(np.argmin(reps @ c1))].toarray().ravel()
    first_ids = np.array([int(g[0]) for g in groups])
    assign = None
    for _ in range(_LLOYD_MAX_ITERS):
        margin = reps @ c1 - reps @ c2
        order = np.lexsort((first_ids, -margin))
        new_assign = _greedy_fill(order, weights, capacity)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        c1 = _weighted_direction(reps, weights, assign, c1)
        c2 = _weighted_direction(reps, weights, ~assign, c2)
    left = np.sort(np.concatenate([g for i, g in enumerate(groups) if assign[i]]))
    right = np.sort(np.concatenate([g for i, g in enumerate(groups) if not assign[i]]))
    return left, right


def _greedy_fill(order: np.ndarray, weights: np.ndarray, capacity: int) -> np.ndarray:
    assign = np.zeros(len(weights), dtype=bool)
    used = 0
    for idx in order:
        if used + weights[idx] <= capacity:
            assign[idx] = True
            used += weights[idx]
    return assign


def _unit_sum(matrix: sp.csr_matrix, group: np.ndarray) -> sp.csr_matrix:
    summed = sp.csr_matrix(matrix[group].sum(axis=0))
    norm = np.sqrt(summed.multiply(summed).sum())
    return summed / norm if norm > 0 else summed


def _weighted_direction(reps, weights, mask, fallback) -> np.ndarray:
    if not mask.any():
        return fallback
    center = np.asarray(reps[mask].T @ weights[mask]).ravel()
    norm = np.linalg.norm(center)
    return center / norm if norm > 0 else fallback


def build_index(algorithm: str, labels: list[str], embeddings, *, M: int = 100,
                d_trie: int = 3, d_mlc: int = 5, seed: int = 0) -> LabelTree:
    if algorithm == HC:
        return build_hc(embeddings, M, seed)
    if algorithm == TRIE:
        return build_trie(labels, d_trie)
    if algorithm == HYBRID:
        return build_hybrid(labels, embeddings, d_trie, M, seed)
    if algorithm == MLC:
        return build_mlc(labels, embeddings, M, d_mlc, seed)
    raise ValueError(f"unknown index algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# Versioned binary tree file.

def save_tree(path, tree: LabelTree) -> None:
    meta = json.dumps({"params": tree.params, "diagnostics": tree.diagnostics}).encode()
    with open(path, "wb") as fh:
        fh.write(TREE_MAGIC)
        fh.write(struct.pack("<IQQ", TREE_VERSION, tree.n_nodes, tree.n_labels))
        fh.write(tree.parent.astype("<i4").tobytes())
        fh.write(tree.first_child.astype("<i4").tobytes())
        fh.write(tree.child_count.astype("<i4").tobytes())
        fh.write(tree.is_leaf.astype("<u1").tobytes())
        fh.write(tree.label_start.astype("<i8").tobytes())
        fh.write(tree.label_end.astype("<i8").tobytes())
        fh.write(tree.label_order.astype("<i8").tobytes())
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)


def load_tree(path) -> LabelTree:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != TREE_MAGIC:
        raise ValueError(f"{path}: not a label tree file")
    version, n_nodes, n_labels = struct.unpack("<IQQ", buf.read(20))
    if version != TREE_VERSION:
        raise ValueError(f"{path}: unsupported tree version {version}")

    def arr(dtype, count):
        return np.frombuffer(buf.read(np.dtype(dtype).itemsize * count), dtype=dtype).copy()

    parent = arr("<i4", n_nodes)
    first_child = arr("<i4", n_nodes)
    child_count = arr("<i4", n_nodes)
    is_leaf = arr("<u1", n_nodes).astype(bool)
    label_start = arr("<i8", n_nodes)
    label_end = arr("<i8", n_nodes)
    label_order = arr("<i8", n_labels)
    (meta_len,) = struct.unpack("<Q", buf.read(8))
    meta = json.loads(buf.read(meta_len).decode())
    tree = LabelTree(parent, first_child, child_count, is_leaf,
                     label_start, label_end, label_order,
                     params=meta["params"], diagnostics=meta["diagnostics"])
    tree.validate()
    return tree

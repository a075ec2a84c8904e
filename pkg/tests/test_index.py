"""Label tree builders: balance, trie shape, hybrid grafting, must-link
atomicity, and the binary tree file."""

from __future__ import annotations

import random

import numpy as np
import pytest

from prefx.index import (
    HC,
    HYBRID,
    LabelTree,
    build_hc,
    build_hybrid,
    build_index,
    build_mlc,
    build_trie,
    load_tree,
    save_tree,
)

import util


def random_embeddings(rng: random.Random, n: int):
    import scipy.sparse as sp

    m = util.random_sparse_rows(rng, n, 16, max_nnz=5, min_nnz=1)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    return (sp.diags(1.0 / norms) @ m).tocsr()


def assert_trees_equal(a: LabelTree, b: LabelTree) -> None:
    np.testing.assert_array_equal(a.parent, b.parent)
    np.testing.assert_array_equal(a.first_child, b.first_child)
    np.testing.assert_array_equal(a.child_count, b.child_count)
    np.testing.assert_array_equal(a.is_leaf, b.is_leaf)
    np.testing.assert_array_equal(a.label_start, b.label_start)
    np.testing.assert_array_equal(a.label_end, b.label_end)
    np.testing.assert_array_equal(a.label_order, b.label_order)


class TestBalancedClustering:
    def test_invariants_on_random_sets(self):
        rng = random.Random(0)
        for _ in range(10):
            n = rng.randint(1, 120)
            M = rng.randint(2, 20)
            tree = build_hc(random_embeddings(rng, n), M=M, seed=rng.randint(0, 99))
            util.check_hc_invariants(tree, n, M)

    def test_single_label_collapses_to_root_leaf(self):
        tree = build_hc(random_embeddings(random.Random(1), 1), M=4)
        assert tree.n_nodes == 1
        assert tree.is_leaf[0]
        assert tree.leaf_labels(0).tolist() == [0]

    def test_empty_label_set_rejected(self):
        import scipy.sparse as sp

        with pytest.raises(ValueError, match="at least one label"):
            build_hc(sp.csr_matrix((0, 4)), M=4)

    def test_deterministic_per_seed(self):
        rng = random.Random(2)
        emb = random_embeddings(rng, 60)
        assert_trees_equal(build_hc(emb, M=8, seed=3), build_hc(emb, M=8, seed=3))

    def test_params_recorded(self):
        tree = build_hc(random_embeddings(random.Random(3), 20), M=5, seed=7)
        assert tree.params == {"algorithm": HC, "M": 5, "k_b": 2, "seed": 7}


class TestTrie:
    def test_hand_case_depth_cap(self):
        labels = ["car", "cart", "cat", "dog"]
        tree = build_trie(labels, d_trie=2)
        # Root splits on c/d; the c-branch chains through "a" and collapses
        # at depth 2 into one leaf holding car, cart, cat in lexicographic
        # order; the d-branch chains through "o".
        assert util.tree_shape(tree) == [[[0, 1, 2]], [[3]]]
        util.check_trie_invariants(tree, labels, 2)

    def test_hand_case_dummy_leaf_first(self):
        labels = ["a", "ab", "b"]
        tree = build_trie(labels, d_trie=3)
        # "a" terminates where "ab" continues: it gets a dummy leaf placed
        # before the b-edge child. "b" has no descendants, plain leaf.
        assert util.tree_shape(tree) == [[[0], [1]], [2]]
        util.check_trie_invariants(tree, labels, 3)

    def test_matches_reference_on_random_sets(self):
        rng = random.Random(4)
        for _ in range(15):
            labels = util.random_labels(rng, 80)
            d = rng.randint(1, 5)
            util.check_trie_invariants(build_trie(labels, d), labels, d)

    def test_duplicate_label_rejected(self):
        with pytest.raises(ValueError, match="duplicate label"):
            build_trie(["ab", "ab"], d_trie=2)

    def test_depth_zero_rejected(self):
        with pytest.raises(ValueError, match="d_trie"):
            build_trie(["ab"], d_trie=0)

    def test_empty_labels_rejected(self):
        with pytest.raises(ValueError, match="at least one label"):
            build_trie([], d_trie=2)


class TestHybrid:
    def test_depth_zero_equals_plain_clustering(self):
        rng = random.Random(5)
        labels = util.random_labels(rng, 50)
        emb = random_embeddings(rng, len(labels))
        hybrid = build_hybrid(labels, emb, d_trie=0, M=8, seed=1)
        plain = build_hc(emb, M=8, seed=1)
        assert_trees_equal(hybrid, plain)
        assert hybrid.params["algorithm"] == HYBRID
        assert hybrid.params["d_trie"] == 0

    def test_grafts_match_trie_groups(self):
        rng = random.Random(6)
        for _ in range(10):
            labels = util.random_labels(rng, 80)
            emb = random_embeddings(rng, len(labels))
            d = rng.randint(1, 4)
            M = rng.randint(2, 12)
            tree = build_hybrid(labels, emb, d_trie=d, M=M, seed=2)
            util.check_hybrid_invariants(tree, labels, d, M)

    def test_deterministic_per_seed(self):
        rng = random.Random(7)
        labels = util.random_labels(rng, 60)
        emb = random_embeddings(rng, len(labels))
        a = build_hybrid(labels, emb, d_trie=2, M=6, seed=9)
        b = build_hybrid(labels, emb, d_trie=2, M=6, seed=9)
        assert_trees_equal(a, b)


class TestMustLink:
    def test_atomic_prefix_groups_on_random_sets(self):
        rng = random.Random(8)
        for _ in range(10):
            labels = util.random_labels(rng, 80, alphabet="ab", max_len=5)
            emb = random_embeddings(rng, len(labels))
            d = rng.randint(1, 4)
            tree = build_mlc(labels, emb, M=rng.randint(2, 10), d_mlc=d, seed=3)
            util.check_mlc_invariants(tree, labels, d)

    def test_oversized_group_relaxes_balance_with_diagnostics(self):
        # 30 of 33 labels share the "aa" prefix: no balanced split can keep
        # the group whole, so it is isolated and the relaxation recorded.
        labels = sorted("aa" + format(i, "03d") for i in range(30)) + ["b1", "b2", "b3"]
        rng = random.Random(9)
        emb = random_embeddings(rng, len(labels))
        tree = build_mlc(labels, emb, M=4, d_mlc=2, seed=0)
        util.check_mlc_invariants(tree, labels, 2)
        relaxed = tree.diagnostics["relaxed_splits"]
        assert relaxed
        assert relaxed[0]["group_size"] == 30
        assert relaxed[0]["total"] == 33

    def test_single_group_chains_down(self):
        # Every label shares the first character: depth-0 split is forbidden
        # and the tree must chain through a unary node.
        labels = ["za", "zb", "zc", "zd", "ze", "zf"]
        rng = random.Random(10)
        emb = random_embeddings(rng, len(labels))
        tree = build_mlc(labels, emb, M=2, d_mlc=1, seed=0)
        util.check_mlc_invariants(tree, labels, 1)
        assert tree.child_count[0] == 1

    def test_below_constraint_depth_is_balanced(self):
        rng = random.Random(11)
        labels = util.random_labels(rng, 60, alphabet="ab", max_len=4)
        emb = random_embeddings(rng, len(labels))
        tree = build_mlc(labels, emb, M=3, d_mlc=1, seed=4)
        util.check_mlc_invariants(tree, labels, 1)


class TestDispatcherAndAccessors:
    def test_build_index_dispatch(self):
        rng = random.Random(12)
        labels = util.random_labels(rng, 30)
        emb = random_embeddings(rng, len(labels))
        for algo in ("hc", "trie", "hybrid", "mlc"):
            tree = build_index(algo, labels, emb, M=4, d_trie=2, d_mlc=2, seed=0)
            assert tree.params["algorithm"] == algo
            util.check_partition(tree, len(labels))

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ValueError, match="unknown index algorithm"):
            build_index("kdtree", ["a"], None)

    def test_leaf_labels_requires_leaf(self):
        rng = random.Random(13)
        tree = build_hc(random_embeddings(rng, 20), M=4)
        with pytest.raises(ValueError, match="not a leaf"):
            tree.leaf_labels(0)

    def test_depth_and_fanout(self):
        labels = ["a", "ab", "b"]
        tree = build_trie(labels, d_trie=3)
        assert tree.depth() == 2
        assert tree.max_fanout() == 2
        assert tree.max_leaf_size() == 1

    def test_validate_catches_tampering(self):
        rng = random.Random(14)
        tree = build_hc(random_embeddings(rng, 20), M=4)
        tree.label_order = tree.label_order.copy()
        tree.label_order[0] = tree.label_order[1]
        with pytest.raises(ValueError, match="permutation"):
            tree.validate()


class TestTreeFile:
    def test_round_trip(self, tmp_path):
        rng = random.Random(15)
        labels = util.random_labels(rng, 40)
        emb = random_embeddings(rng, len(labels))
        tree = build_mlc(labels, emb, M=4, d_mlc=2, seed=1)
        path = tmp_path / "tree.bin"
        save_tree(path, tree)
        back = load_tree(path)
        assert_trees_equal(tree, back)
        assert back.params == tree.params
        assert back.diagnostics == tree.diagnostics
        back.validate()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_tree(path)

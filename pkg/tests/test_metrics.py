import numpy as np
import pytest

from spatialtab.docmodel import column_vocabulary
from spatialtab.metrics import (
    TreeNode,
    fully_correct,
    kv_metrics,
    levenshtein,
    levenshtein_similarity,
    table_to_tree,
    teds,
    token_prf,
    tree_edit_distance,
)
from spatialtab.reconstruct import ExtractedTable, HeaderCell


# --- independent naive recursive edit-distance oracle ------------------------


def _oracle_forest_dist(f1: tuple, f2: tuple, memo: dict) -> int:
    """Plain recursion on ordered forests; exponential but fine for <= 7 nodes.

    A forest is a tuple of (label, children-forest) pairs.
    """
    key = (f1, f2)
    if key in memo:
        return memo[key]
    if not f1 and not f2:
        return 0
    if not f1:
        last = f2[-1]
        result = _oracle_forest_dist(f1, f2[:-1] + last[1], memo) + 1
    elif not f2:
        last = f1[-1]
        result = _oracle_forest_dist(f1[:-1] + last[1], f2, memo) + 1
    else:
        a, b = f1[-1], f2[-1]
        delete = _oracle_forest_dist(f1[:-1] + a[1], f2, memo) + 1
        insert = _oracle_forest_dist(f1, f2[:-1] + b[1], memo) + 1
        rename = (
            _oracle_forest_dist(f1[:-1], f2[:-1], memo)
            + _oracle_forest_dist(a[1], b[1], memo)
            + (0 if a[0] == b[0] else 1)
        )
        result = min(delete, insert, rename)
    memo[key] = result
    return result


def _freeze(node: TreeNode) -> tuple:
    return (node.label, tuple(_freeze(c) for c in node.children))


def oracle_distance(a: TreeNode, b: TreeNode) -> int:
    return _oracle_forest_dist((_freeze(a),), (_freeze(b),), {})


def random_tree(rng, max_nodes=7) -> TreeNode:
    labels = ["a", "b", "c", "d"]
    n = int(rng.integers(1, max_nodes + 1))
    nodes = [TreeNode(labels[int(rng.integers(0, len(labels)))]) for _ in range(n)]
    for i in range(1, n):
        parent = nodes[int(rng.integers(0, i))]
        parent.children.append(nodes[i])
    return nodes[0]


class TestTreeEditDistance:
    def test_identical_trees_distance_zero(self):
        t = TreeNode("table", [TreeNode("row", [TreeNode("cell:a")])])
        assert tree_edit_distance(t, t) == 0
        assert teds(t, t) == 1.0

    def test_missing_cell_fixture(self):
        gt = TreeNode("table", [TreeNode("row", [TreeNode("cell:A"), TreeNode("cell:B")])])
        pred = TreeNode("table", [TreeNode("row", [TreeNode("cell:A")])])
        assert tree_edit_distance(pred, gt) == 1
        assert teds(pred, gt) == pytest.approx(0.75)

    def test_empty_vs_small_fixture(self):
        gt = TreeNode("table", [TreeNode("row", [TreeNode("cell:A"), TreeNode("cell:B")])])
        pred = TreeNode("table")
        assert tree_edit_distance(pred, gt) == 3
        assert teds(pred, gt) == pytest.approx(0.25)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            a, b = random_tree(rng), random_tree(rng)
            assert tree_edit_distance(a, b) == oracle_distance(a, b)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = random_tree(rng), random_tree(rng)
            assert tree_edit_distance(a, b) == tree_edit_distance(b, a)

    def test_teds_in_unit_interval(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            a, b = random_tree(rng), random_tree(rng)
            assert 0.0 <= teds(a, b) <= 1.0


class TestTableToTree:
    def test_empty_table_single_root(self):
        tree = table_to_tree(ExtractedTable())
        assert tree.size() == 1
        assert tree.label == "table"

    def test_node_count(self):
        table = ExtractedTable(
            header=[HeaderCell("a"), HeaderCell("b")],
            rows=[{0: "x", 1: "y"}, {0: "z"}],
        )
        tree = table_to_tree(table)
        # 1 root + 3 row nodes + 5 cells
        assert tree.size() == 1 + 3 + 5

    def test_seven_node_example(self):
        table = ExtractedTable(
            header=[HeaderCell("h1"), HeaderCell("h2")],
            rows=[{0: "a", 1: "b"}],
        )
        assert table_to_tree(table).size() == 7

    def test_cell_text_in_leaf_labels(self):
        table = ExtractedTable(rows=[{0: "hello"}])
        tree = table_to_tree(table)
        assert tree.children[0].children[0].label == "cell:hello"


class TestTokenPrf:
    def test_perfect_prediction(self):
        vocab = column_vocabulary()
        gold = ["B-col_0", "I-col_0", "O", "B-col_1"]
        report = token_prf(gold, gold, vocab)
        assert all(v["f1"] == 1.0 for v in report["per_class"].values())
        assert report["macro"]["f1"] == 1.0
        assert report["weighted"]["f1"] == 1.0

    def test_counts_fixture(self):
        vocab = column_vocabulary()
        # class B-col_0: TP=2, FP=1, FN=1
        gold = ["B-col_0", "B-col_0", "B-col_0", "O", "O"]
        pred = ["B-col_0", "B-col_0", "O", "B-col_0", "O"]
        report = token_prf(pred, gold, vocab)
        c = report["per_class"]["B-col_0"]
        assert c["precision"] == pytest.approx(2 / 3)
        assert c["recall"] == pytest.approx(2 / 3)
        assert c["f1"] == pytest.approx(2 / 3)
        assert c["support"] == 3

    def test_absent_class_excluded(self):
        vocab = column_vocabulary()
        gold = ["B-col_0", "O"]
        pred = ["B-col_0", "O"]
        report = token_prf(pred, gold, vocab)
        assert "B-col_5" not in report["per_class"]

    def test_macro_is_mean_over_supported_classes(self):
        rng = np.random.default_rng(3)
        vocab = column_vocabulary()
        gold_tags = [vocab.tags[int(i)] for i in rng.integers(0, 7, size=200)]
        # predictions drawn from the same class set so no support-0 class appears
        pred_tags = [
            g if rng.random() < 0.7 else vocab.tags[int(rng.integers(0, 7))]
            for g in gold_tags
        ]
        report = token_prf(pred_tags, gold_tags, vocab)
        supported = [v["f1"] for v in report["per_class"].values() if v["support"] > 0]
        assert report["macro"]["f1"] == pytest.approx(float(np.mean(supported)))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            token_prf(["O"], ["O", "O"], column_vocabulary())


class TestLevenshtein:
    def test_classic_pair(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)

    def test_equal_strings(self):
        assert levenshtein_similarity("abc", "abc") == 1.0
        assert levenshtein_similarity("", "") == 1.0

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(11)
        alphabet = "abcd"
        for _ in range(100):
            a = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 8))))
            b = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 8))))
            s1, s2 = levenshtein_similarity(a, b), levenshtein_similarity(b, a)
            assert s1 == s2
            assert 0.0 <= s1 <= 1.0
            assert (s1 == 1.0) == (a == b)


class TestKVMetrics:
    def test_identical_mappings(self):
        kv = {"PO_NUMBER": "123", "PO_DATE": "2024-01-01"}
        m = kv_metrics(kv, dict(kv))
        assert (m.field_accuracy, m.value_accuracy, m.exact_match,
                m.levenshtein_similarity) == (1.0, 1.0, 1.0, 1.0)

    def test_one_missing_key(self):
        gt = {"A": "x", "B": "y"}
        pred = {"A": "x"}
        m = kv_metrics(pred, gt)
        assert m.field_accuracy == 0.5
        assert m.value_accuracy == 1.0
        assert m.exact_match == 0.5

    def test_wrong_value(self):
        m = kv_metrics({"A": "xz"}, {"A": "xy"})
        assert m.field_accuracy == 1.0
        assert m.value_accuracy == 0.0
        assert m.exact_match == 0.0
        assert m.levenshtein_similarity == pytest.approx(0.5)

    def test_empty_gt_conventions(self):
        both_empty = kv_metrics({}, {})
        assert both_empty.field_accuracy == 1.0
        spurious = kv_metrics({"A": "x"}, {})
        assert spurious.field_accuracy == 0.0


class TestFullyCorrect:
    def base_table(self):
        return ExtractedTable(
            header=[HeaderCell("a", "QUANTITY"), HeaderCell("b")],
            rows=[{0: "1", 1: "2"}],
            key_values={"PO_NUMBER": "99"},
        )

    def test_identical(self):
        assert fully_correct(self.base_table(), self.base_table())

    def test_one_char_difference(self):
        pred = self.base_table()
        pred.rows[0][1] = "2x"
        assert not fully_correct(pred, self.base_table())

    def test_extra_empty_row(self):
        pred = self.base_table()
        pred.rows.append({})
        assert not fully_correct(pred, self.base_table())

    def test_header_labels_not_compared(self):
        pred = self.base_table()
        pred.header[0].label = None
        assert fully_correct(pred, self.base_table())

"""Evaluation metrics: token P/R/F1, TEDS, table and key-value accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .docmodel import TagVocabulary
from .reconstruct import ExtractedTable


# ---------------------------------------------------------------------------
# token-level precision / recall / F1
# ---------------------------------------------------------------------------


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn


def prf_counts(
    pred: Sequence[str],
    gold: Sequence[str],
    counts: Optional[dict[str, ClassCounts]] = None,
) -> dict[str, ClassCounts]:
    """Accumulate per-class TP/FP/FN; reusable across documents."""
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} pred vs {len(gold)} gold")
    counts = counts if counts is not None else {}
    for p, g in zip(pred, gold):
        if p == g:
            counts.setdefault(g, ClassCounts()).tp += 1
        else:
            counts.setdefault(p, ClassCounts()).fp += 1
            counts.setdefault(g, ClassCounts()).fn += 1
    return counts


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def prf_report(counts: dict[str, ClassCounts], vocab: TagVocabulary) -> dict:
    """Per-class scores plus macro and support-weighted averages.

    Classes absent from both gold and predictions are excluded; a class
    that was predicted but never gold still participates (with F1 = 0).
    """
    per_class = {}
    for tag in vocab.tags:
        c = counts.get(tag)
        if c is None or (c.support == 0 and c.fp == 0):
            continue
        p, r, f1 = _prf(c.tp, c.fp, c.fn)
        per_class[tag] = {
            "precision": p, "recall": r, "f1": f1, "support": c.support,
        }
    if per_class:
        macro = {
            k: float(np.mean([v[k] for v in per_class.values()]))
            for k in ("precision", "recall", "f1")
        }
        total = sum(v["support"] for v in per_class.values())
        if total:
            weighted = {
                k: sum(v[k] * v["support"] for v in per_class.values()) / total
                for k in ("precision", "recall", "f1")
            }
        else:
            weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    else:
        macro = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
        weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    return {"per_class": per_class, "macro": macro, "weighted": weighted}


def token_prf(pred: Sequence[str], gold: Sequence[str], vocab: TagVocabulary) -> dict:
    return prf_report(prf_counts(pred, gold), vocab)


# ---------------------------------------------------------------------------
# tree edit distance similarity
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    label: str
    children: list["TreeNode"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def table_to_tree(table: ExtractedTable) -> TreeNode:
    """Root 'table' node, one child per header/item row, cell leaves in order."""
    root = TreeNode("table")
    if table.header:
        hdr = TreeNode("header_row")
        hdr.children = [TreeNode("cell:" + c.text) for c in table.header]
        root.children.append(hdr)
    for row in table.rows:
        node = TreeNode("row")
        node.children = [TreeNode("cell:" + row[col]) for col in sorted(row)]
        root.children.append(node)
    return root


def _annotate(root: TreeNode) -> tuple[list[str], list[int], list[int]]:
    """Postorder labels, leftmost-leaf-descendant indices, and keyroots."""
    labels: list[str] = []
    lmd: list[int] = []

    def walk(n: TreeNode) -> int:
        first = None
        for c in n.children:
            leftmost = walk(c)
            if first is None:
                first = leftmost
        idx = len(labels)
        labels.append(n.label)
        lmd.append(first if first is not None else idx)
        return lmd[idx]

    walk(root)
    last_with_lmd: dict[int, int] = {}
    for i, l in enumerate(lmd):
        last_with_lmd[l] = i
    keyroots = sorted(last_with_lmd.values())
    return labels, lmd, keyroots


def tree_edit_distance(a: TreeNode, b: TreeNode) -> int:
    """Exact ordered tree edit distance (Zhang-Shasha), unit costs.

    Insert and delete cost 1; rename costs 1 iff node labels differ.
    """
    la, lmda, kra = _annotate(a)
    lb, lmdb, krb = _annotate(b)
    na, nb = len(la), len(lb)
    td = np.zeros((na, nb), dtype=np.int64)

    for i in kra:
        for j in krb:
            m = i - lmda[i] + 2
            n = j - lmdb[j] + 2
            fd = np.zeros((m, n), dtype=np.int64)
            ioff = lmda[i] - 1
            joff = lmdb[j] - 1
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + 1
            for x in range(1, m):
                for y in range(1, n):
                    if lmda[i] == lmda[x + ioff] and lmdb[j] == lmdb[y + joff]:
                        rename = 0 if la[x + ioff] == lb[y + joff] else 1
                        fd[x][y] = min(
                            fd[x - 1][y] + 1,
                            fd[x][y - 1] + 1,
                            fd[x - 1][y - 1] + rename,
                        )
                        td[x + ioff][y + joff] = fd[x][y]
                    else:
                        p = lmda[x + ioff] - 1 - ioff
                        q = lmdb[y + joff] - 1 - joff
                        fd[x][y] = min(
                            fd[x - 1][y] + 1,
                            fd[x][y - 1] + 1,
                            fd[p][q] + td[x + ioff][y + joff],
                        )
    return int(td[na - 1][nb - 1])


def teds(pred: TreeNode, gt: TreeNode) -> float:
    """1 - edit_distance / max(tree sizes), in [0, 1]."""
    dist = tree_edit_distance(pred, gt)
    return 1.0 - dist / max(pred.size(), gt.size())


# ---------------------------------------------------------------------------
# key-value metrics
# ---------------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Classic dynamic-programming edit distance over characters."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


@dataclass
class KVMetrics:
    field_accuracy: float
    value_accuracy: float
    exact_match: float
    levenshtein_similarity: float

    def to_json(self) -> dict:
        return {
            "field_accuracy": self.field_accuracy,
            "value_accuracy": self.value_accuracy,
            "exact_match": self.exact_match,
            "levenshtein_similarity": self.levenshtein_similarity,
        }


def kv_metrics(pred: dict[str, str], gt: dict[str, str]) -> KVMetrics:
    """Key/value accuracy for one document's key-value mapping."""
    if not gt:
        v = 1.0 if not pred else 0.0
        return KVMetrics(v, v, v, v)
    matched = [k for k in gt if k in pred]
    exact = [k for k in matched if pred[k] == gt[k]]
    field = len(matched) / len(gt)
    value = len(exact) / len(matched) if matched else 0.0
    em = len(exact) / len(gt)
    lev = (
        sum(levenshtein_similarity(pred[k], gt[k]) for k in matched) / len(matched)
        if matched
        else 0.0
    )
    return KVMetrics(field, value, em, lev)


def fully_correct(pred: ExtractedTable, gt: ExtractedTable) -> bool:
    """Exact match of header texts, grid shape, and every cell text."""
    if [c.text for c in pred.header] != [c.text for c in gt.header]:
        return False
    if len(pred.rows) != len(gt.rows):
        return False
    return all(p == g for p, g in zip(pred.rows, gt.rows))


@dataclass
class MetricsReport:
    heads: dict[str, dict]
    teds_mean: float
    fully_correct_rate: float
    field_accuracy: float
    value_accuracy: float
    exact_match: float
    levenshtein_similarity: float
    n_documents: int

    def to_json(self) -> dict:
        return {
            "heads": self.heads,
            "teds_mean": self.teds_mean,
            "fully_correct_rate": self.fully_correct_rate,
            "field_accuracy": self.field_accuracy,
            "value_accuracy": self.value_accuracy,
            "exact_match": self.exact_match,
            "levenshtein_similarity": self.levenshtein_similarity,
            "n_documents": self.n_documents,
        }

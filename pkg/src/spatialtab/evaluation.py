"""End-to-end evaluation: forward pass, reconstruction, and metrics."""

from __future__ import annotations

from typing import Optional, Sequence

from .docmodel import Document
from .encoder import ModelParams, Tokenizer, predict_tags
from .metrics import (
    ClassCounts,
    MetricsReport,
    fully_correct,
    kv_metrics,
    prf_counts,
    prf_report,
    table_to_tree,
    teds,
)
from .reconstruct import ExtractedTable, reconstruct


def gold_tag_sequences(doc: Document) -> dict[str, list[str]]:
    return {
        "label": doc.tags("label"),
        "column": doc.tags("column"),
        "row": doc.tags("row"),
    }


def evaluate(
    docs: Sequence[Document],
    gt_tables: dict[str, ExtractedTable],
    params: Optional[ModelParams],
    tokenizer: Optional[Tokenizer],
    oracle: bool = False,
) -> MetricsReport:
    """Score a tagged corpus against its ground-truth tables.

    With oracle=True the gold tags are piped through reconstruction in
    place of model predictions (closure check; no model required).
    """
    if not oracle and (params is None or tokenizer is None):
        raise ValueError("model evaluation requires params and a tokenizer")
    counts: dict[str, dict[str, ClassCounts]] = {"label": {}, "column": {}, "row": {}}
    teds_sum = 0.0
    correct = 0
    kv_sums = [0.0, 0.0, 0.0, 0.0]
    vocabs = params.vocabs if params is not None else None
    if vocabs is None:
        from .docmodel import Vocabularies

        vocabs = Vocabularies()

    for doc in docs:
        if doc.id not in gt_tables:
            raise ValueError(f"no ground-truth table for document {doc.id!r}")
        gt = gt_tables[doc.id]
        if oracle:
            pred = gold_tag_sequences(doc)
        else:
            pred = predict_tags(doc, params, tokenizer)
        for head in counts:
            prf_counts(pred[head], doc.tags(head), counts[head])
        table = reconstruct(doc, pred, vocabs)
        teds_sum += teds(table_to_tree(table), table_to_tree(gt))
        correct += int(fully_correct(table, gt))
        kv = kv_metrics(table.key_values, gt.key_values)
        kv_sums[0] += kv.field_accuracy
        kv_sums[1] += kv.value_accuracy
        kv_sums[2] += kv.exact_match
        kv_sums[3] += kv.levenshtein_similarity

    n = len(docs)
    return MetricsReport(
        heads={head: prf_report(c, vocabs.for_head(head)) for head, c in counts.items()},
        teds_mean=teds_sum / n,
        fully_correct_rate=correct / n,
        field_accuracy=kv_sums[0] / n,
        value_accuracy=kv_sums[1] / n,
        exact_match=kv_sums[2] / n,
        levenshtein_similarity=kv_sums[3] / n,
        n_documents=n,
    )

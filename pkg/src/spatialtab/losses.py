"""Loss functions for the four heads and their combination.

Cross-entropy on the three tagging heads with a 60/30/10 column/label/row
weighting, sigmoid-MSE bounding-box regression, and a column consistency
penalty equal to the variance of soft column-index assignments among
tokens that share a gold column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .docmodel import column_tag_index, column_vocabulary

# Soft value of each non-O column class: B/I/IB-col_k all map to k.
_COL_VALUES = np.array(
    [column_tag_index(t) for t in column_vocabulary().tags[1:]], dtype=np.float64
)


@dataclass
class LossConfig:
    w_label: float = 0.3
    w_col: float = 0.6
    w_row: float = 0.1
    lambda_bbox: float = 0.1
    lambda_consistency: float = 0.1
    phase: str = "finetune"

    def effective_weights(self) -> tuple[float, float, float]:
        """Head weights after phase adjustment.

        Pretraining drops the label head and renormalizes the remaining
        column/row weights (defaults become 6/7 and 1/7).
        """
        if self.phase == "pretrain":
            s = self.w_col + self.w_row
            return 0.0, self.w_col / s, self.w_row / s
        return self.w_label, self.w_col, self.w_row

    def to_json(self) -> dict:
        return {
            "w_label": self.w_label,
            "w_col": self.w_col,
            "w_row": self.w_row,
            "lambda_bbox": self.lambda_bbox,
            "lambda_consistency": self.lambda_consistency,
            "phase": self.phase,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LossConfig":
        return cls(**obj)


@dataclass
class LossBreakdown:
    ce_label: float = 0.0
    ce_col: float = 0.0
    ce_row: float = 0.0
    mse_bbox: float = 0.0
    consistency: float = 0.0
    total: float = 0.0

    def to_json(self) -> dict:
        return {
            "ce_label": self.ce_label,
            "ce_col": self.ce_col,
            "ce_row": self.ce_row,
            "mse_bbox": self.mse_bbox,
            "consistency": self.consistency,
            "total": self.total,
        }


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _as_mask(mask: Optional[np.ndarray], n: int) -> np.ndarray:
    return np.ones(n, dtype=bool) if mask is None else mask.astype(bool)


def cross_entropy(logits: np.ndarray, gold: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    loss, _ = cross_entropy_grad(logits, gold, mask)
    return loss


def cross_entropy_grad(
    logits: np.ndarray, gold: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over non-pad tokens, with d(loss)/d(logits)."""
    sel = _as_mask(mask, logits.shape[0])
    m = int(sel.sum())
    dlogits = np.zeros_like(logits, dtype=np.float64)
    if m == 0:
        return 0.0, dlogits
    p = _softmax(logits[sel].astype(np.float64))
    g = gold[sel]
    loss = float(-np.log(np.clip(p[np.arange(m), g], 1e-30, None)).mean())
    grad = p
    grad[np.arange(m), g] -= 1.0
    dlogits[sel] = grad / m
    return loss, dlogits


def bbox_mse(pred: np.ndarray, gold_bbox: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    loss, _ = bbox_mse_grad(pred, gold_bbox, mask)
    return loss


def bbox_mse_grad(
    pred: np.ndarray, gold_bbox: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """MSE between predictions in [0,1] and coordinates divided by 1000."""
    sel = _as_mask(mask, pred.shape[0])
    m = int(sel.sum())
    dpred = np.zeros_like(pred, dtype=np.float64)
    if m == 0:
        return 0.0, dpred
    target = gold_bbox.astype(np.float64) / 1000.0
    err = pred[sel].astype(np.float64) - target[sel]
    loss = float((err**2).mean())
    dpred[sel] = 2.0 * err / (m * 4)
    return loss, dpred


def consistency_loss(
    col_logits: np.ndarray, gold_col: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    loss, _ = consistency_loss_grad(col_logits, gold_col, mask)
    return loss


def consistency_loss_grad(
    col_logits: np.ndarray, gold_col: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Sum over gold columns of the population variance of soft assignments.

    The soft assignment of a token is the probability-weighted mean of the
    numeric column indices under a softmax over the 30 non-O classes (the
    O class carries no numeric index and is dropped before normalizing).
    """
    sel = _as_mask(mask, col_logits.shape[0]) & (gold_col != 0)
    dlogits = np.zeros_like(col_logits, dtype=np.float64)
    idx = np.nonzero(sel)[0]
    if idx.size == 0:
        return 0.0, dlogits
    p = _softmax(col_logits[idx, 1:].astype(np.float64))
    yhat = p @ _COL_VALUES
    gold_k = (gold_col[idx] - 1) // 3
    total = 0.0
    dyhat = np.zeros_like(yhat)
    for k in np.unique(gold_k):
        members = gold_k == k
        vals = yhat[members]
        mean = vals.mean()
        total += float(((vals - mean) ** 2).mean())
        dyhat[members] = 2.0 * (vals - mean) / vals.size
    dlogits[idx, 1:] = dyhat[:, None] * p * (_COL_VALUES[None, :] - yhat[:, None])
    return total, dlogits


def total_loss(
    label_logits: np.ndarray,
    col_logits: np.ndarray,
    row_logits: np.ndarray,
    bbox_pred: np.ndarray,
    gold_label: Optional[np.ndarray],
    gold_col: np.ndarray,
    gold_row: np.ndarray,
    gold_bbox: np.ndarray,
    config: LossConfig,
    mask: Optional[np.ndarray] = None,
    label_masked: bool = False,
) -> LossBreakdown:
    breakdown, _ = total_loss_grad(
        label_logits, col_logits, row_logits, bbox_pred,
        gold_label, gold_col, gold_row, gold_bbox, config, mask, label_masked,
    )
    return breakdown


def total_loss_grad(
    label_logits: np.ndarray,
    col_logits: np.ndarray,
    row_logits: np.ndarray,
    bbox_pred: np.ndarray,
    gold_label: Optional[np.ndarray],
    gold_col: np.ndarray,
    gold_row: np.ndarray,
    gold_bbox: np.ndarray,
    config: LossConfig,
    mask: Optional[np.ndarray] = None,
    label_masked: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Weighted combination of all components for one document.

    In finetune, gold labels are required unless label_masked marks the
    document as drawn from the structure-only mix.
    """
    w_label, w_col, w_row = config.effective_weights()
    use_label = config.phase != "pretrain" and not label_masked
    if use_label and gold_label is None:
        raise ValueError("finetune document is missing gold label tags")

    grads: dict[str, np.ndarray] = {}
    if use_label and gold_label is not None:
        ce_l, d_label = cross_entropy_grad(label_logits, gold_label, mask)
    else:
        ce_l, d_label = 0.0, np.zeros_like(label_logits, dtype=np.float64)
    ce_c, d_col = cross_entropy_grad(col_logits, gold_col, mask)
    ce_r, d_row = cross_entropy_grad(row_logits, gold_row, mask)
    mse, d_bbox = bbox_mse_grad(bbox_pred, gold_bbox, mask)
    cons, d_cons = consistency_loss_grad(col_logits, gold_col, mask)

    grads["label"] = w_label * d_label
    grads["column"] = w_col * d_col + config.lambda_consistency * d_cons
    grads["row"] = w_row * d_row
    grads["bbox"] = config.lambda_bbox * d_bbox

    total = (
        w_label * ce_l
        + w_col * ce_c
        + w_row * ce_r
        + config.lambda_bbox * mse
        + config.lambda_consistency * cons
    )
    breakdown = LossBreakdown(
        ce_label=ce_l, ce_col=ce_c, ce_row=ce_r,
        mse_bbox=mse, consistency=cons, total=float(total),
    )
    return breakdown, grads

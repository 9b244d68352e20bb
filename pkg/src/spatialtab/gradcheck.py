"""Finite-difference verification of the analytic gradients.

Builds a seeded random model and document batch in float64, compares the
analytic gradient of the total training loss against central differences
for sampled entries of every parameter tensor, and reports the worst
relative error per tensor. Sampling favors the largest-magnitude gradient
entries so the comparison is made where it carries information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoder import EncoderConfig, ModelParams, backward_batch, forward_batch, init_params
from .losses import LossConfig, total_loss, total_loss_grad

DEFAULT_H = 1e-3
DEFAULT_TOL = 1e-3


@dataclass
class _Batch:
    ids: np.ndarray
    buckets: np.ndarray
    mask: np.ndarray
    lengths: list[int]
    gold_label: list[np.ndarray]
    gold_col: list[np.ndarray]
    gold_row: list[np.ndarray]
    gold_bbox: list[np.ndarray]


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    n_samples: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    h: float

    @property
    def max_rel_err(self) -> float:
        return max(e.max_rel_err for e in self.entries)

    def failures(self, tol: float = DEFAULT_TOL) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_err >= tol]

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return not self.failures(tol)


def _random_batch(config: EncoderConfig, rng: np.random.Generator, n_docs: int, n_tokens: int) -> _Batch:
    lengths = [n_tokens, max(2, n_tokens - 2)][:n_docs]
    n = max(lengths)
    ids = np.zeros((n_docs, n), dtype=np.int64)
    buckets = np.zeros((n_docs, n, 6), dtype=np.int64)
    mask = np.zeros((n_docs, n), dtype=bool)
    gl, gc, gr, gb = [], [], [], []
    for b, ln in enumerate(lengths):
        ids[b, :ln] = rng.integers(3, config.vocab_size, size=ln)
        x0 = rng.integers(0, 900, size=ln)
        y0 = rng.integers(0, 900, size=ln)
        w = rng.integers(0, 100, size=ln)
        h = rng.integers(0, 100, size=ln)
        boxes = np.stack([x0, y0, x0 + w, y0 + h], axis=1)
        buckets[b, :ln] = np.stack([x0, y0, x0 + w, y0 + h, w, h], axis=1)
        mask[b, :ln] = True
        gl.append(rng.integers(0, config.n_label_tags, size=ln))
        gc.append(rng.integers(0, 31, size=ln))
        gr.append(rng.integers(0, 7, size=ln))
        gb.append(boxes.astype(np.float64))
    return _Batch(ids, buckets, mask, lengths, gl, gc, gr, gb)


def _batch_loss(params: ModelParams, batch: _Batch, loss_cfg: LossConfig) -> float:
    out, _ = forward_batch(params, batch.ids, batch.buckets, batch.mask)
    nb = len(batch.lengths)
    total = 0.0
    for b, n in enumerate(batch.lengths):
        breakdown = total_loss(
            out["label"][b, :n], out["column"][b, :n], out["row"][b, :n],
            out["bbox"][b, :n],
            batch.gold_label[b], batch.gold_col[b], batch.gold_row[b],
            batch.gold_bbox[b], loss_cfg,
        )
        total += breakdown.total / nb
    return total


def _analytic_grads(params: ModelParams, batch: _Batch, loss_cfg: LossConfig) -> dict[str, np.ndarray]:
    out, cache = forward_batch(params, batch.ids, batch.buckets, batch.mask)
    nb = len(batch.lengths)
    d_heads = {
        "label": np.zeros_like(out["label"]),
        "column": np.zeros_like(out["column"]),
        "row": np.zeros_like(out["row"]),
        "bbox": np.zeros_like(out["bbox"]),
    }
    for b, n in enumerate(batch.lengths):
        _, grads_b = total_loss_grad(
            out["label"][b, :n], out["column"][b, :n], out["row"][b, :n],
            out["bbox"][b, :n],
            batch.gold_label[b], batch.gold_col[b], batch.gold_row[b],
            batch.gold_bbox[b], loss_cfg,
        )
        for head in d_heads:
            d_heads[head][b, :n] = grads_b[head] / nb
    return backward_batch(params, cache, d_heads)


def gradcheck(
    config: Optional[EncoderConfig] = None,
    seed: int = 0,
    n_docs: int = 2,
    n_tokens: int = 6,
    samples_per_tensor: int = 6,
    h: float = DEFAULT_H,
    corrupt: Optional[str] = None,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients tensor by tensor.

    `corrupt` names a tensor whose analytic gradient is deliberately
    perturbed; it must then be flagged (negative-control test hook).
    """
    if config is None:
        config = EncoderConfig(d=24, n_layers=1, n_heads=4, max_seq_len=16)
    if config.vocab_size <= 0:
        config.vocab_size = 40
    rng = np.random.default_rng(seed)
    params = init_params(config, seed=seed, dtype=np.float64)
    batch = _random_batch(config, rng, n_docs, n_tokens)
    loss_cfg = LossConfig(phase="finetune")

    grads = _analytic_grads(params, batch, loss_cfg)
    entries = []
    for name, tensor in params.tensors.items():
        g = grads[name].reshape(-1)
        flat = tensor.reshape(-1)
        k = min(samples_per_tensor, flat.size)
        top = np.argsort(-np.abs(g))[: max(1, k // 2)]
        rest = rng.integers(0, flat.size, size=k - top.size)
        sample_idx = np.unique(np.concatenate([top, rest]))
        analytic = g.copy()
        if corrupt == name:
            analytic[sample_idx[0]] += 1.0
        worst = 0.0
        for j in sample_idx:
            orig = flat[j]
            flat[j] = orig + h
            up = _batch_loss(params, batch, loss_cfg)
            flat[j] = orig - h
            down = _batch_loss(params, batch, loss_cfg)
            flat[j] = orig
            fd = (up - down) / (2.0 * h)
            a = analytic[j]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
        entries.append(GradCheckEntry(name=name, max_rel_err=worst, n_samples=int(sample_idx.size)))
    return GradCheckReport(entries=entries, h=h)

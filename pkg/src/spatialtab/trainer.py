"""Two-phase training loop, optimizer, schedule, and checkpoint format.

Pretraining fits the column/row heads on structure-only data; fine-tuning
adds the label head and mixes in structure-only examples (label loss
masked) at a configured fraction. The whole loop is deterministic under a
fixed seed, including augmentation and batch order, so repeated runs
produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .augment import AugConfig, augment
from .docmodel import Document, Vocabularies
from .encoder import (
    EncoderConfig,
    ModelParams,
    Tokenizer,
    backward_batch,
    batch_arrays,
    forward_batch,
    init_params,
)
from .losses import LossBreakdown, LossConfig, total_loss_grad

CKPT_MAGIC = "SPBERT-CKPT v1"

PHASE_DEFAULTS = {
    "pretrain": {"lr_peak": 1e-4, "epochs": 5},
    "finetune": {"lr_peak": 5e-5, "epochs": 10},
}


class CheckpointError(Exception):
    """Raised for unreadable, truncated, or mismatched checkpoints."""


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    lr_peak: Optional[float] = None
    warmup_fraction: float = 0.1
    epochs: Optional[int] = None
    batch_size: int = 16
    seed: int = 0
    mix_fraction: float = 0.3
    grad_clip: float = 1.0
    aug: AugConfig = field(default_factory=AugConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.phase not in PHASE_DEFAULTS:
            raise ValueError(f"unknown phase {self.phase!r}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_peak is None:
            self.lr_peak = PHASE_DEFAULTS[self.phase]["lr_peak"]
        if self.epochs is None:
            self.epochs = PHASE_DEFAULTS[self.phase]["epochs"]
        self.loss.phase = self.phase

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "lr_peak": self.lr_peak,
            "warmup_fraction": self.warmup_fraction,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "mix_fraction": self.mix_fraction,
            "grad_clip": self.grad_clip,
            "aug": self.aug.to_json(),
            "loss": self.loss.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "aug" in obj:
            obj["aug"] = AugConfig.from_json(obj["aug"])
        if "loss" in obj:
            obj["loss"] = LossConfig.from_json(obj["loss"])
        return cls(**obj)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_peak, then cosine decay to zero at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = max(1, math.ceil(cfg.warmup_fraction * total_steps))
    if step <= warmup:
        return cfg.lr_peak * step / warmup
    span = max(1, total_steps - warmup)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / span))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

NO_DECAY_SUFFIXES = (".g", ".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_tensors(cls, tensors: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(t) for k, t in tensors.items()},
            v={k: np.zeros_like(t) for k, t in tensors.items()},
        )


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adamw_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """One Adam update with decoupled weight decay (applied in place).

    Weight decay skips layer-norm gains and every bias vector.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        if not name.endswith(NO_DECAY_SUFFIXES):
            p *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    opt_state: OptimizerState
    log: list[dict]


def _doc_gold(doc: Document, vocabs: Vocabularies):
    n = len(doc.tokens)
    col = np.array([vocabs.column.require(t) for t in doc.tags("column")], dtype=np.int64)
    row = np.array([vocabs.row.require(t) for t in doc.tags("row")], dtype=np.int64)
    label = None
    if doc.has_tags("label"):
        label = np.array([vocabs.label.require(t) for t in doc.tags("label")], dtype=np.int64)
    bbox = np.array([t.bbox.as_list() for t in doc.tokens], dtype=np.float64).reshape(n, 4)
    return label, col, row, bbox


def _check_corpus(corpus: Sequence[Document], phase: str, max_seq_len: int) -> None:
    for doc in corpus:
        if len(doc) > max_seq_len:
            raise ValueError(
                f"document {doc.id!r} has {len(doc)} tokens, max_seq_len is {max_seq_len}"
            )
        if not (doc.has_tags("column") and doc.has_tags("row")):
            raise ValueError(f"document {doc.id!r} lacks column/row tags for {phase}")
        if phase == "finetune" and not doc.has_tags("label"):
            raise ValueError(f"document {doc.id!r} lacks label tags for finetune")


def _build_schedule(
    cfg: TrainConfig,
    n_main: int,
    n_mix: int,
    rng: np.random.Generator,
) -> list[list[tuple[int, bool]]]:
    """Example schedule for all epochs: (index, from_mix) per slot.

    Fine-tuning draws a Bernoulli(mix_fraction) per slot to interleave
    uniformly sampled structure-only examples with the shuffled pass over
    the fine-tuning corpus.
    """
    epochs = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n_main)
        slots: list[tuple[int, bool]] = []
        if cfg.phase == "finetune" and cfg.mix_fraction > 0 and n_mix > 0:
            for idx in order:
                while rng.random() < cfg.mix_fraction:
                    slots.append((int(rng.integers(0, n_mix)), True))
                slots.append((int(idx), False))
        else:
            slots = [(int(i), False) for i in order]
        epochs.append(slots)
    return epochs


def train(
    corpus: Sequence[Document],
    config: TrainConfig,
    tokenizer: Tokenizer,
    encoder_config: Optional[EncoderConfig] = None,
    init: Optional[ModelParams] = None,
    mix_corpus: Optional[Sequence[Document]] = None,
    log_path: Optional[str | Path] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Run one training phase and return the trained parameters and log.

    `init` continues from existing parameters (fine-tuning); otherwise
    `encoder_config` seeds a fresh model. `mix_corpus` supplies the
    structure-only pool for the fine-tune mix.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    if init is not None:
        params = init
    else:
        if encoder_config is None:
            raise ValueError("either init params or an encoder config is required")
        if encoder_config.vocab_size <= 0:
            encoder_config.vocab_size = len(tokenizer)
        params = init_params(encoder_config, seed=config.seed)
    _check_corpus(corpus, config.phase, params.config.max_seq_len)
    if config.phase == "finetune" and config.mix_fraction > 0 and mix_corpus:
        _check_corpus(mix_corpus, "pretrain", params.config.max_seq_len)
    mix_corpus = mix_corpus or []

    sched_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    schedule = _build_schedule(config, len(corpus), len(mix_corpus), sched_rng)
    batches: list[list[tuple[int, bool]]] = []
    for slots in schedule:
        for i in range(0, len(slots), config.batch_size):
            batches.append(slots[i : i + config.batch_size])
    total_steps = len(batches)

    opt_state = OptimizerState.for_tensors(params.tensors)
    vocabs = params.vocabs
    log: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        example_counter = 0
        for step, batch_slots in enumerate(batches, start=1):
            docs = []
            label_masked = []
            for idx, from_mix in batch_slots:
                src = mix_corpus[idx] if from_mix else corpus[idx]
                aug_rng = np.random.default_rng(
                    np.random.SeedSequence([config.aug.seed, 23, example_counter])
                )
                docs.append(augment(src, config.aug, aug_rng))
                label_masked.append(from_mix or not src.has_tags("label"))
                example_counter += 1

            ids, buckets, mask = batch_arrays(docs, tokenizer)
            drop_rng = None
            if params.config.dropout_rate > 0:
                drop_rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, 31, step])
                )
            out, cache = forward_batch(
                params, ids, buckets, mask, train=True, dropout_rng=drop_rng
            )

            nb = len(docs)
            d_heads = {
                "label": np.zeros_like(out["label"], dtype=np.float64),
                "column": np.zeros_like(out["column"], dtype=np.float64),
                "row": np.zeros_like(out["row"], dtype=np.float64),
                "bbox": np.zeros_like(out["bbox"], dtype=np.float64),
            }
            agg = LossBreakdown()
            for b, doc in enumerate(docs):
                n = len(doc)
                gold_label, gold_col, gold_row, gold_bbox = _doc_gold(doc, vocabs)
                breakdown, grads_b = total_loss_grad(
                    out["label"][b, :n], out["column"][b, :n], out["row"][b, :n],
                    out["bbox"][b, :n],
                    gold_label, gold_col, gold_row, gold_bbox,
                    config.loss, label_masked=label_masked[b],
                )
                for head, key in (("label", "label"), ("column", "column"),
                                  ("row", "row"), ("bbox", "bbox")):
                    d_heads[key][b, :n] = grads_b[head] / nb
                for f in ("ce_label", "ce_col", "ce_row", "mse_bbox", "consistency", "total"):
                    setattr(agg, f, getattr(agg, f) + getattr(breakdown, f) / nb)

            if not math.isfinite(agg.total):
                raise FloatingPointError(f"non-finite loss at step {step}")
            d_heads = {k: v.astype(params.dtype) for k, v in d_heads.items()}
            grads = backward_batch(params, cache, d_heads)
            grad_norm = clip_global_norm(grads, config.grad_clip)
            lr = lr_at(step, total_steps, config)
            adamw_step(params.tensors, grads, opt_state, lr)

            record = {
                "step": step,
                "lr": lr,
                "ce_label": agg.ce_label,
                "ce_col": agg.ce_col,
                "ce_row": agg.ce_row,
                "mse_bbox": agg.mse_bbox,
                "consistency": agg.consistency,
                "total": agg.total,
                "grad_norm": grad_norm,
                "mix_flags": [int(fm) for _, fm in batch_slots],
            }
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            if progress:
                progress(record)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params=params, opt_state=opt_state, log=log)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(
    params: ModelParams,
    opt_state: Optional[OptimizerState],
    tokenizer: Tokenizer,
    train_config: Optional[TrainConfig],
    path: str | Path,
) -> None:
    """Header line + JSON metadata + raw little-endian float32 blobs."""
    entries: list[tuple[str, np.ndarray]] = []
    for name, tensor in params.tensors.items():
        entries.append((name, tensor))
    if opt_state is not None:
        for name, tensor in opt_state.m.items():
            entries.append(("opt.m." + name, tensor))
        for name, tensor in opt_state.v.items():
            entries.append(("opt.v." + name, tensor))

    directory = []
    offset = 0
    blobs = []
    for name, tensor in entries:
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        directory.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(blob)}
        )
        offset += len(blob)
        blobs.append(blob)

    meta = {
        "encoder": params.config.to_json(),
        "labels": list(params.vocabs.labels),
        "tokenizer": tokenizer.to_json(),
        "train": train_config.to_json() if train_config else None,
        "optimizer": None
        if opt_state is None
        else {
            "step": opt_state.step,
            "beta1": opt_state.beta1,
            "beta2": opt_state.beta2,
            "eps": opt_state.eps,
            "weight_decay": opt_state.weight_decay,
        },
        "tensors": directory,
    }
    with open(path, "wb") as fh:
        fh.write((CKPT_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(
    path: str | Path,
    expected_config: Optional[EncoderConfig] = None,
) -> tuple[ModelParams, Optional[OptimizerState], Tokenizer, dict]:
    """Inverse of save_checkpoint; verifies the format version and shapes."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != CKPT_MAGIC:
            raise CheckpointError(
                f"checkpoint version mismatch: expected {CKPT_MAGIC!r}, found {magic!r}"
            )
        meta_line = fh.readline()
        try:
            meta = json.loads(meta_line)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"corrupt checkpoint metadata: {e.msg}") from None
        blob = fh.read()

    config = EncoderConfig.from_json(meta["encoder"])
    if expected_config is not None:
        from .encoder import tensor_shapes

        expected = tensor_shapes(expected_config)
        for entry in meta["tensors"]:
            name = entry["name"]
            if name.startswith("opt."):
                continue
            if name not in expected or list(expected[name]) != entry["shape"]:
                want = list(expected.get(name, ())) or "absent"
                raise CheckpointError(
                    f"tensor {name!r} has shape {entry['shape']}, config wants {want}"
                )

    tensors: dict[str, np.ndarray] = {}
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for entry in meta["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointError(f"truncated checkpoint: tensor {entry['name']!r} out of range")
        arr = np.frombuffer(blob[start : start + nbytes], dtype="<f4").reshape(entry["shape"])
        arr = arr.astype(np.float32)
        name = entry["name"]
        if name.startswith("opt.m."):
            opt_m[name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            opt_v[name[len("opt.v."):]] = arr
        else:
            tensors[name] = arr

    from .docmodel import Vocabularies, label_vocabulary

    vocabs = Vocabularies(label=label_vocabulary(tuple(meta["labels"])))
    params = ModelParams(config=config, tensors=tensors, vocabs=vocabs)
    tokenizer = Tokenizer.from_json(meta["tokenizer"])
    opt_state = None
    if meta.get("optimizer"):
        o = meta["optimizer"]
        opt_state = OptimizerState(
            m=opt_m, v=opt_v, step=o["step"], beta1=o["beta1"], beta2=o["beta2"],
            eps=o["eps"], weight_decay=o["weight_decay"],
        )
    return params, opt_state, tokenizer, meta

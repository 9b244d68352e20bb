"""Small pre-norm transformer encoder with exact analytic gradients.

Input embedding per token = text embedding + spatial embedding + learned
1-D position embedding, followed by n_layers of (LN -> multi-head
self-attention -> residual; LN -> GELU MLP -> residual), a final LN, and
four linear heads (label / column / row tagging plus bbox regression).

Everything is plain numpy so training, checkpointing, and the
finite-difference gradient checks stay fully deterministic.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .docmodel import Document, Vocabularies
from .spatial import N_BUCKETS, bbox_buckets, init_spatial, scatter_spatial_grad

LN_EPS = 1e-5
NEG_INF = -1e9
INIT_STD = 0.02


@dataclass
class EncoderConfig:
    d: int = 96
    n_layers: int = 2
    n_heads: int = 4
    mlp_hidden: int = 0  # 0 means 4*d
    max_seq_len: int = 512
    vocab_size: int = 0  # set when the tokenizer is built
    n_labels: int = 7
    dropout_rate: float = 0.0
    spatial_init: str = "random_normal"

    def __post_init__(self):
        if self.d % 6 != 0:
            raise ValueError(f"d={self.d} not divisible by 6")
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.mlp_hidden == 0:
            self.mlp_hidden = 4 * self.d

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def n_label_tags(self) -> int:
        return 1 + 3 * self.n_labels

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "mlp_hidden": self.mlp_hidden,
            "max_seq_len": self.max_seq_len,
            "vocab_size": self.vocab_size,
            "n_labels": self.n_labels,
            "dropout_rate": self.dropout_rate,
            "spatial_init": self.spatial_init,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


class Tokenizer:
    """Word-level vocabulary with digit normalization for lookup.

    Raw text is preserved on tokens; only the lookup key maps every digit
    to '0' so numeric formats like 1,234.56 share an embedding row.
    """

    PAD, UNK, MASK = "<pad>", "<unk>", "<mask>"
    RESERVED = (PAD, UNK, MASK)

    def __init__(self, words: Sequence[str]):
        self.words = list(self.RESERVED) + list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.words)

    @staticmethod
    def normalize(word: str) -> str:
        return "".join("0" if c.isdigit() else c for c in word)

    def encode_word(self, word: str) -> int:
        if word in self.RESERVED:
            return self.index[word]
        return self.index.get(self.normalize(word), 1)

    def encode(self, doc: Document) -> np.ndarray:
        return np.array([self.encode_word(t.text) for t in doc.tokens], dtype=np.int64)

    def to_json(self) -> dict:
        return {"words": self.words[len(self.RESERVED) :]}

    @classmethod
    def from_json(cls, obj: dict) -> "Tokenizer":
        return cls(obj["words"])


def build_vocab(corpus: Sequence[Document], min_count: int = 1) -> Tokenizer:
    """Vocabulary over normalized words with frequency >= min_count.

    Ordering is (frequency desc, lexical asc) so rebuilds are stable.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(
        Tokenizer.normalize(tok.text) for doc in corpus for tok in doc.tokens
    )
    kept = [w for w, c in counts.items() if c >= min_count and w not in Tokenizer.RESERVED]
    kept.sort(key=lambda w: (-counts[w], w))
    return Tokenizer(kept)


@dataclass
class ModelParams:
    """All learnable tensors, keyed by name in a fixed order."""

    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    vocabs: Vocabularies = field(default_factory=Vocabularies)

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def zeros_like_tensors(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: v.astype(dtype) for k, v in self.tensors.items()},
            vocabs=self.vocabs,
        )

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise FloatingPointError(f"non-finite values in parameter {name!r}")


HEAD_SIZES = {"label": None, "column": 31, "row": 7, "bbox": 4}


def tensor_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """The canonical tensor directory for a configuration."""
    d, hid = config.d, config.mlp_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_seq_len, d),
        "spatial": (6, N_BUCKETS, d // 6),
    }
    for i in range(config.n_layers):
        p = f"L{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for w in ("Wq", "Wk", "Wv", "Wo"):
            shapes[p + "attn." + w] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + b] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "mlp.W1"] = (d, hid)
        shapes[p + "mlp.b1"] = (hid,)
        shapes[p + "mlp.W2"] = (hid, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    head_sizes = dict(HEAD_SIZES)
    head_sizes["label"] = config.n_label_tags
    for head, k in head_sizes.items():
        shapes[f"head.{head}.W"] = (d, k)
        shapes[f"head.{head}.b"] = (k,)
    return shapes


def init_params(
    config: EncoderConfig,
    seed: int = 0,
    vocabs: Optional[Vocabularies] = None,
    dtype=np.float32,
) -> ModelParams:
    """Seeded initialization: N(0, 0.02^2) weights, zero biases, unit LN gains."""
    if config.vocab_size <= 0:
        raise ValueError("config.vocab_size must be set before init_params")
    rng = np.random.default_rng(seed)
    spatial = init_spatial(config.d, config.spatial_init, seed=int(rng.integers(2**31)))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        if name == "spatial":
            tensors[name] = spatial.tables.astype(dtype)
        elif name.endswith((".g",)):
            tensors[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
    return ModelParams(config=config, tensors=tensors, vocabs=vocabs or Vocabularies())


def extend_vocab(params: ModelParams, tokenizer: Tokenizer, corpus: Sequence[Document],
                 min_count: int = 1, seed: int = 0) -> tuple[ModelParams, Tokenizer]:
    """Append unseen corpus words to the vocabulary with fresh embedding rows.

    Existing ids keep their rows, so a pretrained checkpoint stays valid.
    """
    counts = Counter(
        Tokenizer.normalize(tok.text) for doc in corpus for tok in doc.tokens
    )
    new_words = [
        w for w, c in counts.items()
        if c >= min_count and w not in tokenizer.index and w not in Tokenizer.RESERVED
    ]
    new_words.sort(key=lambda w: (-counts[w], w))
    if not new_words:
        return params, tokenizer
    extended = Tokenizer(tokenizer.words[len(Tokenizer.RESERVED):] + new_words)
    rng = np.random.default_rng(seed)
    rows = rng.normal(0.0, INIT_STD, size=(len(new_words), params.config.d))
    tensors = dict(params.tensors)
    tensors["tok_emb"] = np.concatenate(
        [params["tok_emb"], rows.astype(params.dtype)], axis=0
    )
    config = EncoderConfig.from_json(params.config.to_json())
    config.vocab_size = len(extended)
    return ModelParams(config=config, tensors=tensors, vocabs=params.vocabs), extended


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


def _gelu_grad(z: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0))) + z * phi


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, xhat, inv


def _layer_norm_grad(dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray, g: np.ndarray):
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def batch_arrays(
    docs: Sequence[Document], tokenizer: Tokenizer, dtype=np.float32
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of documents into (ids, buckets, mask) arrays."""
    n = max(len(d) for d in docs)
    b = len(docs)
    ids = np.zeros((b, n), dtype=np.int64)
    buckets = np.zeros((b, n, 6), dtype=np.int64)
    mask = np.zeros((b, n), dtype=bool)
    for i, doc in enumerate(docs):
        ids[i, : len(doc)] = tokenizer.encode(doc)
        for j, tok in enumerate(doc.tokens):
            buckets[i, j] = bbox_buckets(tok.bbox)
        mask[i, : len(doc)] = True
    return ids, buckets, mask


def forward_batch(
    params: ModelParams,
    ids: np.ndarray,
    buckets: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
) -> tuple[dict, dict]:
    """Run the encoder on a padded batch.

    Returns (outputs, cache): outputs holds 'hidden' (B,N,d), logits for
    'label'/'column'/'row', and sigmoid-squashed 'bbox' predictions; the
    cache carries every intermediate needed by backward_batch.
    """
    cfg = params.config
    b, n = ids.shape
    if n > cfg.max_seq_len:
        raise ValueError(f"sequence length {n} exceeds max_seq_len {cfg.max_seq_len}")
    t = params.tensors
    dt = params.dtype

    spatial = np.concatenate(
        [t["spatial"][f][buckets[..., f]] for f in range(6)], axis=-1
    )
    h = t["tok_emb"][ids] + t["pos_emb"][:n][None, :, :] + spatial

    p_drop = cfg.dropout_rate if train else 0.0
    if p_drop > 0.0 and dropout_rng is None:
        raise ValueError("dropout requires an explicit rng in training mode")

    def dropout_mask(shape):
        if p_drop <= 0.0:
            return None
        keep = dropout_rng.random(shape) >= p_drop
        return keep.astype(dt) / dt.type(1.0 - p_drop)

    cache: dict = {"ids": ids, "buckets": buckets, "mask": mask, "layers": []}
    m0 = dropout_mask(h.shape)
    if m0 is not None:
        h = h * m0
    cache["emb_drop"] = m0

    att_bias = np.where(mask[:, None, None, :], 0.0, NEG_INF).astype(dt)
    scale = 1.0 / math.sqrt(cfg.head_dim)

    for i in range(cfg.n_layers):
        p = f"L{i}."
        lc: dict = {"h_in": h}
        a, lc["xhat1"], lc["inv1"] = _layer_norm(h, t[p + "ln1.g"], t[p + "ln1.b"])
        lc["a"] = a
        q = _split_heads(a @ t[p + "attn.Wq"] + t[p + "attn.bq"], cfg.n_heads)
        k = _split_heads(a @ t[p + "attn.Wk"] + t[p + "attn.bk"], cfg.n_heads)
        v = _split_heads(a @ t[p + "attn.Wv"] + t[p + "attn.bv"], cfg.n_heads)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale + att_bias
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(np.matmul(attn, v))
        o = ctx @ t[p + "attn.Wo"] + t[p + "attn.bo"]
        mo = dropout_mask(o.shape)
        if mo is not None:
            o = o * mo
        lc.update(q=q, k=k, v=v, attn=attn, ctx=ctx, attn_drop=mo)
        h = h + o

        lc["h_mid"] = h
        a2, lc["xhat2"], lc["inv2"] = _layer_norm(h, t[p + "ln2.g"], t[p + "ln2.b"])
        lc["a2"] = a2
        z = a2 @ t[p + "mlp.W1"] + t[p + "mlp.b1"]
        g = _gelu(z)
        y = g @ t[p + "mlp.W2"] + t[p + "mlp.b2"]
        my = dropout_mask(y.shape)
        if my is not None:
            y = y * my
        lc.update(z=z, g=g, mlp_drop=my)
        h = h + y
        cache["layers"].append(lc)

    cache["h_pre_final"] = h
    hf, cache["xhat_f"], cache["inv_f"] = _layer_norm(h, t["ln_f.g"], t["ln_f.b"])
    cache["hf"] = hf

    outputs = {"hidden": hf}
    for head in ("label", "column", "row"):
        outputs[head] = hf @ t[f"head.{head}.W"] + t[f"head.{head}.b"]
    bbox_raw = hf @ t["head.bbox.W"] + t["head.bbox.b"]
    outputs["bbox"] = 1.0 / (1.0 + np.exp(-bbox_raw))
    cache["bbox_pred"] = outputs["bbox"]
    return outputs, cache


def backward_batch(
    params: ModelParams,
    cache: dict,
    d_heads: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter tensor.

    d_heads maps 'label'/'column'/'row' to gradients on the logits and
    'bbox' to the gradient on the post-sigmoid prediction; any may be
    omitted. Raises FloatingPointError naming the layer when a non-finite
    gradient appears.
    """
    cfg = params.config
    t = params.tensors
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    hf = cache["hf"]
    b, n, d = hf.shape
    flat_hf = hf.reshape(-1, d)

    dhf = np.zeros_like(hf)
    for head in ("label", "column", "row"):
        if head not in d_heads:
            continue
        dl = d_heads[head]
        grads[f"head.{head}.W"] += flat_hf.T @ dl.reshape(-1, dl.shape[-1])
        grads[f"head.{head}.b"] += dl.sum(axis=(0, 1))
        dhf += dl @ t[f"head.{head}.W"].T
    if "bbox" in d_heads:
        pred = cache["bbox_pred"]
        draw = d_heads["bbox"] * pred * (1.0 - pred)
        grads["head.bbox.W"] += flat_hf.T @ draw.reshape(-1, 4)
        grads["head.bbox.b"] += draw.sum(axis=(0, 1))
        dhf += draw @ t["head.bbox.W"].T

    dh, dg, db = _layer_norm_grad(dhf, cache["xhat_f"], cache["inv_f"], t["ln_f.g"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.n_layers)):
        p = f"L{i}."
        lc = cache["layers"][i]

        dy = dh if lc["mlp_drop"] is None else dh * lc["mlp_drop"]
        flat_g = lc["g"].reshape(-1, cfg.mlp_hidden)
        grads[p + "mlp.W2"] += flat_g.T @ dy.reshape(-1, d)
        grads[p + "mlp.b2"] += dy.sum(axis=(0, 1))
        dgm = dy @ t[p + "mlp.W2"].T
        dz = dgm * _gelu_grad(lc["z"])
        flat_a2 = lc["a2"].reshape(-1, d)
        grads[p + "mlp.W1"] += flat_a2.T @ dz.reshape(-1, cfg.mlp_hidden)
        grads[p + "mlp.b1"] += dz.sum(axis=(0, 1))
        da2 = dz @ t[p + "mlp.W1"].T
        dmid, dg2, db2 = _layer_norm_grad(da2, lc["xhat2"], lc["inv2"], t[p + "ln2.g"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dh = dh + dmid

        do = dh if lc["attn_drop"] is None else dh * lc["attn_drop"]
        flat_ctx = lc["ctx"].reshape(-1, d)
        grads[p + "attn.Wo"] += flat_ctx.T @ do.reshape(-1, d)
        grads[p + "attn.bo"] += do.sum(axis=(0, 1))
        dctx = _split_heads(do @ t[p + "attn.Wo"].T, cfg.n_heads)
        attn = lc["attn"]
        dattn = np.matmul(dctx, lc["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(attn.transpose(0, 1, 3, 2), dctx)
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = np.matmul(dscores, lc["k"]) * scale
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"]) * scale
        da = np.zeros_like(lc["a"])
        flat_a = lc["a"].reshape(-1, d)
        for name, dgrad in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
            merged = _merge_heads(dgrad)
            grads[p + "attn." + name] += flat_a.T @ merged.reshape(-1, d)
            grads[p + "attn.b" + name[1].lower()] += merged.sum(axis=(0, 1))
            da += merged @ t[p + "attn." + name].T
        dln1, dg1, db1 = _layer_norm_grad(da, lc["xhat1"], lc["inv1"], t[p + "ln1.g"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dh = dh + dln1
        if not np.isfinite(dh).all():
            raise FloatingPointError(f"non-finite gradient entering layer {i}")

    if cache["emb_drop"] is not None:
        dh = dh * cache["emb_drop"]

    np.add.at(grads["tok_emb"], cache["ids"].reshape(-1), dh.reshape(-1, d))
    grads["pos_emb"][:n] += dh.sum(axis=0)
    scatter_spatial_grad(
        grads["spatial"], cache["buckets"].reshape(-1, 6), dh.reshape(-1, d)
    )
    return grads


@dataclass
class ForwardResult:
    hidden: np.ndarray
    label_logits: np.ndarray
    col_logits: np.ndarray
    row_logits: np.ndarray
    bbox_pred: np.ndarray


def forward(doc: Document, params: ModelParams, tokenizer: Tokenizer) -> ForwardResult:
    """Single-document inference; see forward_batch for the batched path."""
    ids, buckets, mask = batch_arrays([doc], tokenizer)
    out, _ = forward_batch(params, ids, buckets, mask)
    return ForwardResult(
        hidden=out["hidden"][0],
        label_logits=out["label"][0],
        col_logits=out["column"][0],
        row_logits=out["row"][0],
        bbox_pred=out["bbox"][0],
    )


def predict_tags(doc: Document, params: ModelParams, tokenizer: Tokenizer) -> dict[str, list[str]]:
    """Argmax decoding of the three tagging heads into tag strings."""
    res = forward(doc, params, tokenizer)
    vocabs = params.vocabs
    out = {}
    for head, logits in (
        ("label", res.label_logits),
        ("column", res.col_logits),
        ("row", res.row_logits),
    ):
        vocab = vocabs.for_head(head)
        out[head] = [vocab.tag_of(int(i)) for i in logits.argmax(axis=-1)]
    return out

"""Training-time document augmentation.

Applies, in a fixed order: coordinate noise, dynamic text masking, token
dropout, numeric substitution, column reordering, and page scaling. Tags
are kept consistent by decoding gold segments and re-encoding them after
any structural change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .docmodel import COORD_MAX, BBox, Document, Token
from .tagging import Segment, assign_lines, decode_tags, encode_tags

NUMERIC_EXTRA = set(".,-/:%$")

HEAD_ATTR = {"label": "label_tag", "column": "col_tag", "row": "row_tag"}


@dataclass
class AugConfig:
    spatial_sigma: float = 5.0
    mask_rate_max: float = 0.2
    token_dropout_p: float = 0.1
    numeric_substitution: bool = True
    column_reorder: bool = True
    scale_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        for name in ("mask_rate_max", "token_dropout_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if min(self.scale_range) <= 0.0:
            raise ValueError("scale bounds must be positive")

    def to_json(self) -> dict:
        return {
            "spatial_sigma": self.spatial_sigma,
            "mask_rate_max": self.mask_rate_max,
            "token_dropout_p": self.token_dropout_p,
            "numeric_substitution": self.numeric_substitution,
            "column_reorder": self.column_reorder,
            "scale_range": list(self.scale_range),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AugConfig":
        obj = dict(obj)
        obj["scale_range"] = tuple(obj.get("scale_range", (0.8, 1.2)))
        return cls(**obj)


def _clamp(v: float) -> int:
    return int(min(max(round(v), 0), COORD_MAX))


def _heads_present(doc: Document) -> list[str]:
    return [h for h in HEAD_ATTR if doc.has_tags(h)]


def _decode_all(doc: Document, heads: Sequence[str]) -> list[Segment]:
    segments: list[Segment] = []
    for head in heads:
        segments.extend(decode_tags(head, doc.tags(head)))
    return segments


def _set_tags(tokens: list[Token], seqs: dict[str, list[str]]) -> None:
    for head, tags in seqs.items():
        attr = HEAD_ATTR[head]
        for tok, tag in zip(tokens, tags):
            setattr(tok, attr, tag)


def _rebuild(
    tokens: list[Token],
    segments: list[Segment],
    heads: Sequence[str],
    doc_id: str,
    page_size,
    reorder: bool,
) -> Document:
    """Re-sort tokens into reading order (optionally) and re-encode tags."""
    doc = Document(id=doc_id, tokens=tokens, page_size=page_size)
    if reorder:
        lines = assign_lines(doc)
        order = sorted(
            range(len(tokens)), key=lambda i: (lines[i], tokens[i].bbox.x_min, i)
        )
        remap = {old: new for new, old in enumerate(order)}
        tokens = [tokens[i] for i in order]
        segments = [
            replace(s, token_indices=tuple(sorted(remap[i] for i in s.token_indices)))
            for s in segments
        ]
        doc = Document(id=doc_id, tokens=tokens, page_size=page_size)
    for tok in tokens:
        tok.label_tag = tok.col_tag = tok.row_tag = None
    seqs = encode_tags(doc, segments, assign_lines(doc), heads=heads)
    _set_tags(tokens, seqs)
    return doc


def _is_numeric(text: str) -> bool:
    return any(c.isdigit() for c in text) and all(
        c.isdigit() or c in NUMERIC_EXTRA for c in text
    )


def _column_layout(doc: Document, segments: list[Segment]):
    """Distinct column bodies with their token sets and x extents, or None
    when extents overlap (reordering would be ambiguous)."""
    by_body: dict[str, list[int]] = {}
    for seg in segments:
        if seg.head == "column":
            by_body.setdefault(seg.body, []).extend(seg.token_indices)
    if len(by_body) < 2:
        return None
    extents = []
    for body, idxs in by_body.items():
        xs0 = min(doc.tokens[i].bbox.x_min for i in idxs)
        xs1 = max(doc.tokens[i].bbox.x_max for i in idxs)
        extents.append((xs0, xs1, body, idxs))
    extents.sort()
    for (_, r0, _, _), (l1, _, _, _) in zip(extents, extents[1:]):
        if l1 <= r0:
            return None
    return extents


def augment(doc: Document, cfg: AugConfig, rng: Optional[np.random.Generator] = None) -> Document:
    """Return an augmented copy of a gold-tagged training document.

    Deterministic given (doc, cfg, rng state); degenerate results (all
    tokens dropped) fall back to the original document.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    heads = _heads_present(doc)
    tokens = [
        Token(t.text, t.bbox, t.label_tag, t.col_tag, t.row_tag) for t in doc.tokens
    ]

    # 1. Gaussian coordinate noise; min/max re-sorted per axis after rounding.
    if cfg.spatial_sigma > 0:
        for tok in tokens:
            noisy = [c + rng.normal(0.0, cfg.spatial_sigma) for c in tok.bbox.as_list()]
            x0, y0, x1, y1 = (_clamp(c) for c in noisy)
            tok.bbox = BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))

    # 2. Dynamic masking: a drawn fraction of texts become <mask>, boxes kept.
    if cfg.mask_rate_max > 0:
        r = rng.uniform(0.0, cfg.mask_rate_max)
        n_mask = int(round(r * len(tokens)))
        if n_mask:
            for i in rng.choice(len(tokens), size=n_mask, replace=False):
                tokens[i].text = "<mask>"

    # 3. Independent token dropout with tag repair via re-encoding.
    if cfg.token_dropout_p > 0:
        keep = rng.random(len(tokens)) >= cfg.token_dropout_p
        if not keep.any():
            return doc
        if not keep.all():
            remap = {}
            kept_tokens = []
            for i, k in enumerate(keep):
                if k:
                    remap[i] = len(kept_tokens)
                    kept_tokens.append(tokens[i])
            segments = []
            for seg in _decode_all(Document(doc.id, tokens, doc.page_size), heads):
                survivors = tuple(remap[i] for i in seg.token_indices if keep[i])
                if survivors:
                    segments.append(replace(seg, token_indices=survivors))
            rebuilt = _rebuild(kept_tokens, segments, heads, doc.id, doc.page_size, reorder=False)
            tokens = rebuilt.tokens

    # 4. Digit substitution in numeric tokens, keeping length and punctuation.
    if cfg.numeric_substitution:
        for tok in tokens:
            if _is_numeric(tok.text):
                tok.text = "".join(
                    str(rng.integers(0, 10)) if c.isdigit() else c for c in tok.text
                )

    # 5. Column reordering: permute x slots, preserve gaps, relabel bodies
    #    so col_k always names the k-th column in the new left-to-right order.
    if cfg.column_reorder:
        work = Document(doc.id, tokens, doc.page_size)
        segments = _decode_all(work, heads)
        layout = _column_layout(work, segments)
        if layout is not None:
            m = len(layout)
            perm = rng.permutation(m)
            gaps = [layout[j + 1][0] - layout[j][1] for j in range(m - 1)]
            body_to_new: dict[str, str] = {}
            cursor = layout[0][0]
            for j in range(m):
                l0, r0, body, idxs = layout[perm[j]]
                delta = cursor - l0
                for i in idxs:
                    b = tokens[i].bbox
                    tokens[i].bbox = BBox(b.x_min + delta, b.y_min, b.x_max + delta, b.y_max)
                body_to_new[body] = f"col_{j % 10}"
                cursor += (r0 - l0) + (gaps[j] if j < m - 1 else 0)
            segments = [
                replace(s, body=body_to_new[s.body])
                if s.head == "column" and s.body in body_to_new
                else s
                for s in segments
            ]
            rebuilt = _rebuild(tokens, segments, heads, doc.id, doc.page_size, reorder=True)
            tokens = rebuilt.tokens

    # 6. Page scaling about the origin.
    s = rng.uniform(*cfg.scale_range)
    if s != 1.0:
        for tok in tokens:
            b = tok.bbox
            tok.bbox = BBox(
                _clamp(b.x_min * s), _clamp(b.y_min * s),
                _clamp(b.x_max * s), _clamp(b.y_max * s),
            )

    return Document(id=doc.id, tokens=tokens, page_size=doc.page_size)

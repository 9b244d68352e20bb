"""B-I-IB tag encoding and tolerant decoding of contiguous segments.

B marks the first token of a segment, I a continuation on the same line,
IB a continuation on a later line. Line membership comes from vertical
overlap clustering of bounding boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .docmodel import HEADS, Document

# Two boxes share a line when their vertical overlap covers at least half
# of the shorter box.
LINE_OVERLAP = 0.5


@dataclass(frozen=True)
class Segment:
    """A span of tokens sharing one tag body within one head."""

    head: str
    body: str
    token_indices: tuple[int, ...]

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if not self.token_indices:
            raise ValueError("segment must be non-empty")
        if any(b <= a for a, b in zip(self.token_indices, self.token_indices[1:])):
            raise ValueError("token indices must be strictly increasing")


@dataclass
class LineAssignment:
    """Per-token line id, contiguous from 0 in reading order."""

    line_ids: list[int]

    def __getitem__(self, idx: int) -> int:
        return self.line_ids[idx]

    def __len__(self) -> int:
        return len(self.line_ids)

    @property
    def n_lines(self) -> int:
        return max(self.line_ids) + 1 if self.line_ids else 0


def _same_line(a, b) -> bool:
    ha, hb = a.height, b.height
    if ha == 0 or hb == 0:
        # Degenerate boxes join a line when their center-y falls inside the other box.
        ca = (a.y_min + a.y_max) / 2.0
        cb = (b.y_min + b.y_max) / 2.0
        if ha == 0 and hb == 0:
            return ca == cb
        lo, hi, c = (b.y_min, b.y_max, ca) if ha == 0 else (a.y_min, a.y_max, cb)
        return lo <= c <= hi
    overlap = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return overlap >= LINE_OVERLAP * min(ha, hb)


def assign_lines(doc: Document) -> LineAssignment:
    """Cluster tokens into lines by single-link vertical-overlap closure."""
    n = len(doc.tokens)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    order = sorted(range(n), key=lambda i: (doc.tokens[i].bbox.y_min, doc.tokens[i].bbox.x_min))
    # Sweep over y: only candidates whose y-ranges can still overlap need checking.
    for pos, i in enumerate(order):
        bi = doc.tokens[i].bbox
        for j in order[pos + 1 :]:
            bj = doc.tokens[j].bbox
            if bj.y_min > bi.y_max:
                break
            if _same_line(bi, bj):
                union(i, j)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    keyed = sorted(
        clusters.values(),
        key=lambda idxs: (
            min(doc.tokens[i].bbox.y_min for i in idxs),
            min(doc.tokens[i].bbox.x_min for i in idxs),
        ),
    )
    line_ids = [0] * n
    for line_id, idxs in enumerate(keyed):
        for i in idxs:
            line_ids[i] = line_id
    return LineAssignment(line_ids)


def encode_tags(
    doc: Document,
    segments: Sequence[Segment],
    lines: LineAssignment,
    heads: Sequence[str] = HEADS,
) -> dict[str, list[str]]:
    """Encode segments into per-head tag sequences.

    The first token of a segment gets B; later tokens get I when they sit
    on the same line as their predecessor within the segment, IB otherwise.
    Raises ValueError on overlapping segments within one head.
    """
    n = len(doc.tokens)
    out = {head: ["O"] * n for head in heads}
    for seg in segments:
        if seg.head not in out:
            raise ValueError(f"segment head {seg.head!r} not among requested heads")
        tags = out[seg.head]
        prev = None
        for idx in seg.token_indices:
            if idx >= n:
                raise ValueError(f"token index {idx} out of range for document of {n} tokens")
            if tags[idx] != "O":
                raise ValueError(
                    f"overlapping {seg.head} segments at token {idx} "
                    f"({tags[idx]} vs body {seg.body})"
                )
            if prev is None:
                prefix = "B"
            elif lines[idx] == lines[prev]:
                prefix = "I"
            else:
                prefix = "IB"
            tags[idx] = f"{prefix}-{seg.body}"
            prev = idx
    return out


def decode_tags(
    head: str,
    tags: Sequence[str],
    lines: Optional[LineAssignment] = None,
) -> list[Segment]:
    """Decode one head's tag sequence into segments, tolerantly.

    One segment per body may be open at a time: B-x closes the open x
    segment and starts a new one, I-x/IB-x extend the open x segment (an
    orphan is promoted to a new segment), and O closes every open segment.
    Keeping other bodies open across a span is what lets an IB tag rejoin
    a multi-line cell whose continuation sits below interleaving columns.
    Never raises on model output; the line assignment is advisory at
    decode time and may be omitted.
    """
    del lines  # membership is determined by body continuity alone
    segments: list[tuple[int, Segment]] = []
    open_by_body: dict[str, list[int]] = {}

    def close(body: str):
        indices = open_by_body.pop(body, None)
        if indices:
            segments.append(
                (indices[0], Segment(head=head, body=body, token_indices=tuple(indices)))
            )

    for i, tag in enumerate(tags):
        if tag == "O":
            for body in list(open_by_body):
                close(body)
            continue
        prefix, _, body = tag.partition("-")
        if prefix == "B":
            close(body)
            open_by_body[body] = [i]
        elif body in open_by_body:
            open_by_body[body].append(i)
        else:
            open_by_body[body] = [i]
    for body in list(open_by_body):
        close(body)
    segments.sort(key=lambda s: s[0])
    return [seg for _, seg in segments]

"""Document data model, tag vocabularies, and JSONL corpus I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

DEFAULT_LABELS = (
    "PO_NUMBER",
    "PO_DATE",
    "VENDOR_NAME",
    "ITEM_DESCRIPTION",
    "QUANTITY",
    "BASE_COST",
    "MRP",
)

COORD_MAX = 1000
# OCR rounding can overshoot the page edge slightly; anything beyond this is corrupt.
COORD_CLAMP_MAX = 1010

HEADS = ("label", "column", "row")


class CorpusError(Exception):
    """Raised when a corpus file cannot be parsed or violates invariants."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized page coordinates [0, 1000]."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, int):
                raise ValueError(f"{name} must be an integer, got {v!r}")
            if not 0 <= v <= COORD_MAX:
                raise ValueError(f"{name}={v} outside [0, {COORD_MAX}]")
        if self.x_max < self.x_min:
            raise ValueError(f"x_max < x_min ({self.x_max} < {self.x_min})")
        if self.y_max < self.y_min:
            raise ValueError(f"y_max < y_min ({self.y_max} < {self.y_min})")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass
class Token:
    """One OCR word with its box and optional gold tags per head."""

    text: str
    bbox: BBox
    label_tag: Optional[str] = None
    col_tag: Optional[str] = None
    row_tag: Optional[str] = None

    def tag(self, head: str) -> Optional[str]:
        return {"label": self.label_tag, "column": self.col_tag, "row": self.row_tag}[head]


@dataclass
class Document:
    """Ordered token sequence; token order is the canonical model input order."""

    id: str
    tokens: list[Token]
    page_size: tuple[int, int] = (1000, 1000)

    def __len__(self) -> int:
        return len(self.tokens)

    def has_tags(self, head: str) -> bool:
        return any(t.tag(head) is not None for t in self.tokens)

    def tags(self, head: str, default: str = "O") -> list[str]:
        return [t.tag(head) if t.tag(head) is not None else default for t in self.tokens]


class TagVocabulary:
    """Closed tag set for one head, with O always at index 0."""

    def __init__(self, head: str, bodies: Sequence[str]):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.head = head
        self.bodies = tuple(bodies)
        tags = ["O"]
        for body in self.bodies:
            tags.extend((f"B-{body}", f"I-{body}", f"IB-{body}"))
        self.tags = tuple(tags)
        self.index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index

    def tag_of(self, idx: int) -> str:
        return self.tags[idx]

    def require(self, tag: str) -> int:
        try:
            return self.index[tag]
        except KeyError:
            raise CorpusError(f"unknown {self.head} tag {tag!r}") from None


def label_vocabulary(labels: Sequence[str] = DEFAULT_LABELS) -> TagVocabulary:
    return TagVocabulary("label", labels)


def column_vocabulary() -> TagVocabulary:
    return TagVocabulary("column", [f"col_{k}" for k in range(10)])


def row_vocabulary() -> TagVocabulary:
    return TagVocabulary("row", ["row", "header_row"])


@dataclass
class Vocabularies:
    """The three head vocabularies used throughout a model's lifetime."""

    label: TagVocabulary = field(default_factory=label_vocabulary)
    column: TagVocabulary = field(default_factory=column_vocabulary)
    row: TagVocabulary = field(default_factory=row_vocabulary)

    def for_head(self, head: str) -> TagVocabulary:
        return {"label": self.label, "column": self.column, "row": self.row}[head]

    @property
    def labels(self) -> tuple[str, ...]:
        return self.label.bodies


def column_tag_index(tag: str) -> Optional[int]:
    """Numeric column index k for B/I/IB-col_k tags; None for O."""
    if tag == "O":
        return None
    _, _, body = tag.partition("-")
    if not body.startswith("col_"):
        raise ValueError(f"not a column tag: {tag!r}")
    return int(body[4:])


def _clamp_coord(v, line_no: int):
    if not isinstance(v, int):
        raise CorpusError(f"non-integer coordinate {v!r} at line {line_no}")
    if COORD_MAX < v <= COORD_CLAMP_MAX:
        return COORD_MAX
    return v


def _token_from_json(obj: dict, vocabs: Vocabularies, line_no: int) -> Token:
    try:
        text = obj["text"]
        raw = obj["bbox"]
    except KeyError as e:
        raise CorpusError(f"token missing field {e} at line {line_no}") from None
    if not isinstance(raw, list) or len(raw) != 4:
        raise CorpusError(f"bbox must be a 4-element list at line {line_no}")
    x0, y0, x1, y1 = (_clamp_coord(v, line_no) for v in raw)
    try:
        bbox = BBox(x0, y0, x1, y1)
    except ValueError as e:
        raise CorpusError(f"{e} at line {line_no}") from None
    tok = Token(text=str(text), bbox=bbox)
    for key, head, attr in (
        ("label_tag", "label", "label_tag"),
        ("col_tag", "column", "col_tag"),
        ("row_tag", "row", "row_tag"),
    ):
        if key in obj and obj[key] is not None:
            tag = obj[key]
            if tag not in vocabs.for_head(head):
                raise CorpusError(f"unknown {head} tag {tag!r} at line {line_no}")
            setattr(tok, attr, tag)
    return tok


def load_corpus(path: str | Path, vocabs: Optional[Vocabularies] = None) -> list[Document]:
    """Load a JSONL corpus, validating boxes and tag membership per line."""
    vocabs = vocabs or Vocabularies()
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed JSON at line {line_no}: {e.msg}") from None
            try:
                doc_id = obj["id"]
                raw_tokens = obj["tokens"]
            except KeyError as e:
                raise CorpusError(f"document missing field {e} at line {line_no}") from None
            page = tuple(obj.get("page_size", (1000, 1000)))
            tokens = [_token_from_json(t, vocabs, line_no) for t in raw_tokens]
            docs.append(Document(id=str(doc_id), tokens=tokens, page_size=page))
    return docs


def _token_to_json(tok: Token) -> dict:
    obj = {"text": tok.text, "bbox": tok.bbox.as_list()}
    if tok.label_tag is not None:
        obj["label_tag"] = tok.label_tag
    if tok.col_tag is not None:
        obj["col_tag"] = tok.col_tag
    if tok.row_tag is not None:
        obj["row_tag"] = tok.row_tag
    return obj


def document_to_json(doc: Document) -> str:
    obj = {
        "id": doc.id,
        "page_size": list(doc.page_size),
        "tokens": [_token_to_json(t) for t in doc.tokens],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    """Write documents as JSONL with byte-stable field ordering."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(document_to_json(doc))
            fh.write("\n")

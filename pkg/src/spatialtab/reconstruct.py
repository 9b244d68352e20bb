"""Post-processing predicted tags into a structured table and key-values.

Decoded row segments are numbered in reading order, header-row segments
form the header, and column indices are unwrapped within each row (raw
indices cycle back to 0 every 10 columns, so a wrap counter restores the
effective index from left-to-right x order).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from .docmodel import Document, Vocabularies
from .tagging import decode_tags

logger = logging.getLogger(__name__)

COLUMN_CYCLE = 10


@dataclass
class HeaderCell:
    text: str
    label: Optional[str] = None


@dataclass
class ExtractedTable:
    """Header, cell grid, and out-of-table key-value pairs."""

    header: list[HeaderCell] = field(default_factory=list)
    rows: list[dict[int, str]] = field(default_factory=list)
    key_values: dict[str, str] = field(default_factory=dict)
    header_prov: list[tuple[int, ...]] = field(default_factory=list, compare=False)
    row_prov: list[dict[int, tuple[int, ...]]] = field(default_factory=list, compare=False)
    kv_prov: dict[str, tuple[int, ...]] = field(default_factory=dict, compare=False)

    @property
    def n_cells(self) -> int:
        return len(self.header) + sum(len(r) for r in self.rows)

    def provenance_lists(self) -> list[tuple[int, ...]]:
        out = list(self.header_prov)
        for row in self.row_prov:
            out.extend(row.values())
        out.extend(self.kv_prov.values())
        return out


def _raw_col(body: str) -> int:
    return int(body[len("col_"):])


def _unwrap_columns(doc: Document, members: list[tuple[int, int]]) -> dict[int, int]:
    """Effective column per token for one row.

    members: (token_index, raw_col) pairs. Visits tokens in x order and
    bumps a wrap counter whenever the raw index decreases.
    """
    order = sorted(members, key=lambda m: (doc.tokens[m[0]].bbox.x_min, m[0]))
    eff: dict[int, int] = {}
    wraps = 0
    prev = None
    for idx, raw in order:
        if prev is not None and raw < prev:
            wraps += 1
        eff[idx] = raw + COLUMN_CYCLE * wraps
        prev = raw
    return eff


def _cells_for_row(doc: Document, eff: dict[int, int]) -> dict[int, tuple[str, tuple[int, ...]]]:
    by_col: dict[int, list[int]] = {}
    for idx, col in eff.items():
        by_col.setdefault(col, []).append(idx)
    cells = {}
    for col, idxs in by_col.items():
        idxs.sort()
        cells[col] = (" ".join(doc.tokens[i].text for i in idxs), tuple(idxs))
    return cells


def reconstruct(
    doc: Document,
    tags: dict[str, list[str]],
    vocabs: Optional[Vocabularies] = None,
) -> ExtractedTable:
    """Build an ExtractedTable from per-head tag sequences.

    Tolerant by construction: empty or inconsistent predictions yield an
    empty (or partial) table rather than raising.
    """
    vocabs = vocabs or Vocabularies()
    label_segs = decode_tags("label", tags.get("label", ["O"] * len(doc)))
    col_segs = decode_tags("column", tags.get("column", ["O"] * len(doc)))
    row_segs = decode_tags("row", tags.get("row", ["O"] * len(doc)))

    token_row: dict[int, tuple[str, int]] = {}
    header_rows = [s for s in row_segs if s.body == "header_row"]
    item_rows = [s for s in row_segs if s.body == "row"]
    for r, seg in enumerate(header_rows):
        for i in seg.token_indices:
            token_row[i] = ("header", r)
    for r, seg in enumerate(item_rows):
        for i in seg.token_indices:
            token_row[i] = ("item", r)

    token_raw_col: dict[int, int] = {}
    token_col_seg: dict[int, int] = {}
    for si, seg in enumerate(col_segs):
        raw = _raw_col(seg.body)
        for i in seg.token_indices:
            token_raw_col[i] = raw
            token_col_seg[i] = si

    # Group column-tagged tokens by the row they sit in.
    row_members: dict[tuple[str, int], list[tuple[int, int]]] = {}
    for idx, raw in token_raw_col.items():
        where = token_row.get(idx)
        if where is None:
            logger.debug("token %d has a column tag but no row tag; ignored", idx)
            continue
        row_members.setdefault(where, []).append((idx, raw))

    header_cells: dict[int, tuple[str, tuple[int, ...]]] = {}
    for r in range(len(header_rows)):
        eff = _unwrap_columns(doc, row_members.get(("header", r), []))
        for col, (text, prov) in _cells_for_row(doc, eff).items():
            if col in header_cells:
                old_text, old_prov = header_cells[col]
                header_cells[col] = (old_text + " " + text, old_prov + prov)
            else:
                header_cells[col] = (text, prov)

    rows: list[dict[int, str]] = []
    row_prov: list[dict[int, tuple[int, ...]]] = []
    for r in range(len(item_rows)):
        eff = _unwrap_columns(doc, row_members.get(("item", r), []))
        cells = _cells_for_row(doc, eff)
        rows.append({col: text for col, (text, _) in sorted(cells.items())})
        row_prov.append({col: prov for col, (_, prov) in sorted(cells.items())})

    # Semantic column types: majority label body over a header cell's tokens,
    # ties broken by lowest label-vocabulary index.
    token_label: dict[int, str] = {}
    for seg in label_segs:
        for i in seg.token_indices:
            token_label[i] = seg.body
    label_rank = {body: i for i, body in enumerate(vocabs.labels)}

    header: list[HeaderCell] = []
    header_prov: list[tuple[int, ...]] = []
    if header_cells:
        for col in range(max(header_cells) + 1):
            if col in header_cells:
                text, prov = header_cells[col]
                votes: dict[str, int] = {}
                for i in prov:
                    if i in token_label:
                        votes[token_label[i]] = votes.get(token_label[i], 0) + 1
                label = None
                if votes:
                    label = min(votes, key=lambda b: (-votes[b], label_rank.get(b, len(label_rank))))
                header.append(HeaderCell(text=text, label=label))
                header_prov.append(prov)
            else:
                header.append(HeaderCell(text=""))
                header_prov.append(())

    key_values: dict[str, str] = {}
    kv_prov: dict[str, tuple[int, ...]] = {}
    for seg in label_segs:
        if any(i in token_row for i in seg.token_indices):
            continue
        if seg.body not in key_values:
            key_values[seg.body] = " ".join(doc.tokens[i].text for i in seg.token_indices)
            kv_prov[seg.body] = tuple(seg.token_indices)

    return ExtractedTable(
        header=header,
        rows=rows,
        key_values=key_values,
        header_prov=header_prov,
        row_prov=row_prov,
        kv_prov=kv_prov,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def table_to_json_obj(table: ExtractedTable) -> dict:
    header = []
    for cell in table.header:
        obj = {"text": cell.text}
        if cell.label is not None:
            obj["label"] = cell.label
        header.append(obj)
    rows = [
        [{"col": col, "text": text} for col, text in sorted(row.items())]
        for row in table.rows
    ]
    return {"header": header, "rows": rows, "key_values": dict(table.key_values)}


def table_from_json_obj(obj: dict) -> ExtractedTable:
    header = [HeaderCell(text=c["text"], label=c.get("label")) for c in obj["header"]]
    rows = [{int(c["col"]): c["text"] for c in row} for row in obj["rows"]]
    return ExtractedTable(header=header, rows=rows, key_values=dict(obj["key_values"]))


def export(table: ExtractedTable, fmt: str) -> bytes:
    """Serialize a table as canonical JSON or an RFC-4180 CSV grid.

    CSV covers the table only; pair it with key_values_json for the
    .kv.json side file.
    """
    if fmt == "json":
        return (json.dumps(table_to_json_obj(table), ensure_ascii=False) + "\n").encode("utf-8")
    if fmt == "csv":
        width = len(table.header)
        for row in table.rows:
            if row:
                width = max(width, max(row) + 1)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow([c.text for c in table.header] + [""] * (width - len(table.header)))
        for row in table.rows:
            writer.writerow([row.get(col, "") for col in range(width)])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown export format {fmt!r}")


def key_values_json(table: ExtractedTable) -> bytes:
    return (json.dumps(dict(table.key_values), ensure_ascii=False) + "\n").encode("utf-8")

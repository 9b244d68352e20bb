"""Seeded generator of synthetic financial-style documents with gold tags.

Two profiles: `pretrain` emits structure-only tables (column/row tags, no
labels), `finance` adds semantic header labels and key-value fields above
the table. Layout realism is secondary to tag-path coverage: multi-line
cells (IB tags), header rows, out-of-table key-values, and ≥10-column
wrapping are all reachable, since those are the code paths under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .docmodel import BBox, Document, Token, save_corpus
from .reconstruct import ExtractedTable, HeaderCell
from .tagging import Segment, assign_lines, encode_tags

MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")

DESC_WORDS = (
    "Steel", "Brass", "Copper", "Hex", "Bolt", "Nut", "Washer", "Gasket",
    "Cotton", "Polyester", "Shirt", "Trouser", "Fabric", "Blue", "Red",
    "Green", "Black", "White", "Premium", "Standard", "Heavy", "Light",
    "Industrial", "Bearing", "Valve", "Pipe", "Fitting", "Flange", "Cable",
    "Wire", "Switch", "Panel", "Motor", "Pump", "Filter", "Sealant",
    "Adhesive", "Paint", "Primer", "Thinner", "Bracket", "Hinge", "Handle",
    "Plate", "Sheet", "Rod", "Tube", "Coil", "Spring", "Clamp",
)

VENDOR_WORDS = (
    "Acme", "Global", "Apex", "Prime", "United", "National", "Eastern",
    "Western", "Sunrise", "Evergreen", "Matrix", "Vertex", "Orion",
    "Traders", "Industries", "Enterprises", "Supplies", "Solutions",
    "Mills", "Works", "Corp", "Ltd", "Pvt", "Inc",
)

GENERIC_HEADER_WORDS = (
    "Ref", "Code", "Name", "Type", "Value", "Count", "Score", "Group",
    "Index", "Field", "Data", "Mark", "Grade", "Level", "Size", "Class",
)

GENERIC_CELL_WORDS = DESC_WORDS + (
    "alpha", "beta", "gamma", "delta", "omega", "sample", "series",
    "batch", "north", "south", "east", "west", "major", "minor",
)

UNIT_WORDS = ("pcs", "kg", "box", "set", "nos", "mtr", "ltr")

KV_KEY_TEXT = {
    "PO_NUMBER": ("PO Number:", "PO No:", "P.O. No:"),
    "PO_DATE": ("PO Date:", "Order Date:", "Date:"),
    "VENDOR_NAME": ("Vendor Name:", "Vendor:", "Supplier:"),
}

DEFAULT_KV_FIELDS = ("PO_NUMBER", "PO_DATE", "VENDOR_NAME")


class LayoutError(Exception):
    """Raised when a requested layout cannot fit on the page."""


@dataclass
class GenProfile:
    profile: str = "finance"
    columns: tuple[int, int] = (2, 10)
    item_rows: tuple[int, int] = (1, 8)
    multiline_cell_p: float = 0.2
    kv_fields: tuple[str, ...] = DEFAULT_KV_FIELDS
    page: tuple[int, int] = (1000, 1000)
    seed: int = 0
    min_col_gap: int = 10
    char_width: float = 5.2

    def __post_init__(self):
        if self.profile not in ("pretrain", "finance"):
            raise ValueError(f"unknown profile {self.profile!r}")
        lo, hi = self.columns
        if not 2 <= lo <= hi <= 12:
            raise ValueError(f"column range {self.columns} outside 2..12")
        lo, hi = self.item_rows
        if not 1 <= lo <= hi <= 15:
            raise ValueError(f"item row range {self.item_rows} outside 1..15")

    def to_json(self) -> dict:
        return {
            "profile": self.profile,
            "columns": list(self.columns),
            "item_rows": list(self.item_rows),
            "multiline_cell_p": self.multiline_cell_p,
            "kv_fields": list(self.kv_fields),
            "page": list(self.page),
            "seed": self.seed,
        }


# --- cell content synthesis ------------------------------------------------


def _money(rng, lo=1.0, hi=99999.0) -> str:
    return f"{rng.uniform(lo, hi):,.2f}"


def _digits(rng, n: int) -> str:
    return "".join(str(rng.integers(0, 10)) for _ in range(n))


def _date(rng) -> list[str]:
    d, m, y = rng.integers(1, 29), rng.integers(1, 13), rng.integers(2020, 2026)
    style = rng.integers(0, 3)
    if style == 0:
        return [f"{d:02d}/{m:02d}/{y}"]
    if style == 1:
        return [f"{y}-{m:02d}-{d:02d}"]
    return [f"{d:02d}", MONTHS[m - 1], str(y)]


def _words(rng, pool, lo, hi) -> list[str]:
    n = int(rng.integers(lo, hi + 1))
    return [pool[int(i)] for i in rng.choice(len(pool), size=n)]


@dataclass(frozen=True)
class ColumnKind:
    name: str
    label: Optional[str]
    headers: tuple[str, ...]
    make: Callable
    text_like: bool = False


FINANCE_KINDS = (
    ColumnKind("description", "ITEM_DESCRIPTION",
               ("Item Description", "Description", "Particulars", "Item"),
               lambda rng, r: _words(rng, DESC_WORDS, 2, 4), text_like=True),
    ColumnKind("remarks", None, ("Remarks", "Notes", "Comments"),
               lambda rng, r: _words(rng, DESC_WORDS, 1, 3), text_like=True),
    ColumnKind("quantity", "QUANTITY", ("Qty", "Quantity", "Order Qty"),
               lambda rng, r: [str(rng.integers(1, 500))]),
    ColumnKind("base_cost", "BASE_COST", ("Base Cost", "Unit Cost", "Rate"),
               lambda rng, r: [_money(rng)]),
    ColumnKind("mrp", "MRP", ("MRP", "M.R.P.", "List Price"),
               lambda rng, r: [_money(rng)]),
    ColumnKind("sku", None, ("SKU", "Item Code", "Code"),
               lambda rng, r: [f"{_digits(rng, 2)}-{_digits(rng, 4)}"]),
    ColumnKind("hsn", None, ("HSN", "HSN/SAC"),
               lambda rng, r: [_digits(rng, 6)]),
    ColumnKind("tax", None, ("Tax %", "GST %", "Tax"),
               lambda rng, r: [str(["5%", "12%", "18%", "28%"][int(rng.integers(0, 4))])]),
    ColumnKind("unit", None, ("Unit", "UOM"),
               lambda rng, r: [UNIT_WORDS[int(rng.integers(0, len(UNIT_WORDS)))]]),
    ColumnKind("discount", None, ("Discount", "Disc."),
               lambda rng, r: [_money(rng, 0.0, 500.0)]),
    ColumnKind("amount", None, ("Amount", "Net Amount", "Total"),
               lambda rng, r: [_money(rng)]),
    ColumnKind("serial", None, ("S.No", "No.", "Sl."),
               lambda rng, r: [str(r + 1)]),
    ColumnKind("batch", None, ("Batch", "Lot No"),
               lambda rng, r: [f"B{_digits(rng, 4)}"]),
)

PRETRAIN_KINDS = (
    ColumnKind("words", None, GENERIC_HEADER_WORDS,
               lambda rng, r: _words(rng, GENERIC_CELL_WORDS, 1, 3), text_like=True),
    ColumnKind("int", None, GENERIC_HEADER_WORDS,
               lambda rng, r: [str(rng.integers(0, 10000))]),
    ColumnKind("money", None, GENERIC_HEADER_WORDS,
               lambda rng, r: [_money(rng)]),
    ColumnKind("code", None, GENERIC_HEADER_WORDS,
               lambda rng, r: [f"{_digits(rng, 3)}-{_digits(rng, 3)}"]),
)


# --- layout ------------------------------------------------------------------


@dataclass
class _Cell:
    lines: list[list[str]]  # token texts per layout line (1 or 2 lines)

    @property
    def text(self) -> str:
        return " ".join(t for line in self.lines for t in line)


def _split_multiline(tokens: list[str]) -> list[list[str]]:
    cut = math.ceil(len(tokens) / 2)
    return [tokens[:cut], tokens[cut:]]


class _DocBuilder:
    def __init__(self, doc_id: str, page: tuple[int, int]):
        self.doc_id = doc_id
        self.page = page
        self.tokens: list[Token] = []

    def add(self, text: str, x0: int, y0: int, x1: int, y1: int) -> int:
        self.tokens.append(Token(text=text, bbox=BBox(x0, y0, x1, y1)))
        return len(self.tokens) - 1


def _token_width(text: str, char_width: float) -> int:
    return int(round(len(text) * char_width)) + 6


def _line_width(tokens: list[str], char_width: float, gap: int = 6) -> int:
    if not tokens:
        return 0
    return sum(_token_width(t, char_width) for t in tokens) + gap * (len(tokens) - 1)


def _emit_line(builder, tokens, x0, y, token_h, char_width, jitter) -> list[int]:
    idxs = []
    x = x0
    for text in tokens:
        w = _token_width(text, char_width)
        idxs.append(builder.add(text, x, y + jitter, x + w, y + jitter + token_h))
        x += w + 6
    return idxs


def _generate_one(profile: GenProfile, rng: np.random.Generator, doc_id: str):
    page_w, page_h = profile.page
    finance = profile.profile == "finance"
    kinds_pool = FINANCE_KINDS if finance else PRETRAIN_KINDS

    m = int(rng.integers(profile.columns[0], profile.columns[1] + 1))
    n_rows = int(rng.integers(profile.item_rows[0], profile.item_rows[1] + 1))

    if finance:
        extras = [k for k in kinds_pool if k.name != "description"]
        chosen = [kinds_pool[0]] + [
            extras[int(i)] for i in rng.choice(len(extras), size=m - 1, replace=False)
        ]
        rng.shuffle(chosen)
    else:
        chosen = [kinds_pool[int(i)] for i in rng.choice(len(kinds_pool), size=m)]

    # Contents first; column widths follow from the widest cell line. Cells
    # are capped to a per-column width budget so any column count in range
    # fits the page. Multi-line cells are only generated while column tags
    # are unambiguous (beyond 10 columns the cycled tags could reattach a
    # continuation line to the wrong physical column).
    cw = profile.char_width
    budget = (page_w - 30 - (m - 1) * profile.min_col_gap) // m

    def capped(tokens: list[str]) -> list[str]:
        tokens = list(tokens)
        while len(tokens) > 1 and _line_width(tokens, cw) > budget:
            tokens.pop()
        return tokens

    allow_multiline = m <= 10
    header_cells: list[_Cell] = []
    for kind in chosen:
        words = kind.headers[int(rng.integers(0, len(kind.headers)))].split()
        if not finance:
            words = _words(rng, kind.headers, 1, 2)
        words = capped(words)
        multi = (
            allow_multiline and len(words) >= 2
            and rng.random() < profile.multiline_cell_p * 0.5
        )
        header_cells.append(_Cell(_split_multiline(words) if multi else [words]))

    body_cells: list[list[_Cell]] = []
    for r in range(n_rows):
        row = []
        for kind in chosen:
            tokens = capped([str(t) for t in kind.make(rng, r)])
            multi = (
                allow_multiline and kind.text_like and len(tokens) >= 2
                and rng.random() < profile.multiline_cell_p
            )
            row.append(_Cell(_split_multiline(tokens) if multi else [tokens]))
        body_cells.append(row)

    kv_items: list[tuple[str, list[str], list[list[str]]]] = []
    if finance:
        for name in profile.kv_fields:
            if rng.random() > 0.9 and len(profile.kv_fields) > 1:
                continue
            keys = KV_KEY_TEXT.get(name, (name.replace("_", " ").title() + ":",))
            key_tokens = keys[int(rng.integers(0, len(keys)))].split()
            if name == "PO_NUMBER":
                if rng.random() < 0.3:
                    value_lines = [["PO", _digits(rng, 5)]]
                else:
                    value_lines = [[f"PO-{_digits(rng, 5)}"]]
            elif name == "PO_DATE":
                value_lines = [_date(rng)]
            elif name == "VENDOR_NAME":
                words = _words(rng, VENDOR_WORDS, 2, 4)
                if len(words) >= 3 and rng.random() < 0.3:
                    value_lines = _split_multiline(words)
                else:
                    value_lines = [words]
            else:
                value_lines = [[f"{_digits(rng, 4)}"]]
            kv_items.append((name, key_tokens, value_lines))

    # Column lefts snap to a 10-unit grid (documents align to layout grids,
    # and reused coordinate buckets train much faster at desk scale).
    col_gap = 10 * int(rng.integers(1, 3))
    left = 10 * int(rng.integers(2, 7))
    top = int(rng.integers(20, 61))

    widths = []
    for j in range(m):
        w = max(_line_width(line, cw) for line in header_cells[j].lines)
        for r in range(n_rows):
            w = max(w, max(_line_width(line, cw) for line in body_cells[r][j].lines))
        widths.append(-(-w // 10) * 10)
    total_w = left + sum(widths) + col_gap * (m - 1) + 10
    if total_w > page_w:
        # Retry at the tightest layout before declaring the request infeasible.
        left, col_gap = 20, profile.min_col_gap
        total_w = left + sum(widths) + col_gap * (m - 1) + 10
    if total_w > page_w:
        raise LayoutError(
            f"{m} columns need {total_w} units of width, page is only {page_w}"
        )
    lefts = [left]
    for j in range(m - 1):
        lefts.append(lefts[-1] + widths[j] + col_gap)

    title = rng.random() < 0.7
    total_line = finance and rng.random() < 0.5
    kv_lines = sum(len(v) for _, _, v in kv_items)
    header_lines = max(len(c.lines) for c in header_cells)
    row_lines = [max(len(c.lines) for c in row) for row in body_cells]
    n_lines = (1 if title else 0) + kv_lines + 1 + header_lines + sum(row_lines) + (
        1 if total_line else 0
    )
    token_h = int(rng.integers(10, 15))
    line_h = token_h + int(rng.integers(6, 13))
    avail = page_h - top - 20
    if n_lines * line_h > avail:
        line_h = avail // n_lines
        if line_h < token_h + 4:
            token_h = line_h - 4
        if token_h < 8:
            raise LayoutError(
                f"{n_lines} layout lines cannot fit a page of height {page_h}"
            )

    builder = _DocBuilder(doc_id, profile.page)
    y = top

    def jit() -> int:
        return int(rng.integers(0, 2))

    if title:
        words = (
            ["TAX", "INVOICE"] if finance and rng.random() < 0.5
            else (["PURCHASE", "ORDER"] if finance else ["DATA", "REPORT"])
        )
        _emit_line(builder, words, int(rng.integers(300, 500)), y, token_h, cw, jit())
        y += line_h

    kv_prov: dict[str, tuple[int, ...]] = {}
    key_values: dict[str, str] = {}
    for name, key_tokens, value_lines in kv_items:
        idx_all: list[int] = []
        kx = left
        _emit_line(builder, key_tokens, kx, y, token_h, cw, jit())
        vx = kx + _line_width(key_tokens, cw) + 12
        idx_all += _emit_line(builder, value_lines[0], vx, y, token_h, cw, jit())
        y += line_h
        for cont in value_lines[1:]:
            idx_all += _emit_line(builder, cont, vx, y, token_h, cw, jit())
            y += line_h
        kv_prov[name] = tuple(idx_all)
        key_values[name] = " ".join(t for line in value_lines for t in line)

    y += line_h  # gap between the key-value block and the table

    def emit_cells(cells: list[_Cell], y0: int, lines_in_band: int) -> list[tuple[int, ...]]:
        prov: list[list[int]] = [[] for _ in cells]
        for li in range(lines_in_band):
            for j, cell in enumerate(cells):
                if li < len(cell.lines) and cell.lines[li]:
                    prov[j] += _emit_line(
                        builder, cell.lines[li], lefts[j], y0 + li * line_h,
                        token_h, cw, jit(),
                    )
        return [tuple(p) for p in prov]

    header_prov = emit_cells(header_cells, y, header_lines)
    y += header_lines * line_h
    row_prov: list[dict[int, tuple[int, ...]]] = []
    rows: list[dict[int, str]] = []
    for r in range(n_rows):
        prov = emit_cells(body_cells[r], y, row_lines[r])
        y += row_lines[r] * line_h
        row_prov.append({j: p for j, p in enumerate(prov)})
        rows.append({j: body_cells[r][j].text for j in range(m)})

    if total_line:
        tx = max(left, min(lefts[-1] - 40, page_w - 170))
        _emit_line(builder, ["Total:", _money(rng)], tx, y, token_h, cw, jit())

    header = [
        HeaderCell(text=header_cells[j].text, label=chosen[j].label if finance else None)
        for j in range(m)
    ]
    table = ExtractedTable(
        header=header,
        rows=rows,
        key_values=key_values,
        header_prov=header_prov,
        row_prov=row_prov,
        kv_prov=kv_prov,
    )
    doc = Document(id=doc_id, tokens=builder.tokens, page_size=profile.page)
    doc = grid_to_tags(doc, table, include_labels=finance)
    return doc, table


def grid_to_tags(doc: Document, table: ExtractedTable, include_labels: bool = True) -> Document:
    """Attach gold tag sequences derived from a table's cell provenance.

    Column indices wrap modulo 10; the label head is emitted only when
    requested (structure-only corpora leave it absent). Raises ValueError
    if a token is claimed by two cells.
    """
    seen: set[int] = set()
    for prov in table.provenance_lists():
        for i in prov:
            if i in seen:
                raise ValueError(f"token {i} assigned to two cells")
            seen.add(i)

    segments: list[Segment] = []
    header_tokens = sorted(i for prov in table.header_prov for i in prov)
    if header_tokens:
        segments.append(Segment("row", "header_row", tuple(header_tokens)))
    for row in table.row_prov:
        row_tokens = sorted(i for prov in row.values() for i in prov)
        if row_tokens:
            segments.append(Segment("row", "row", tuple(row_tokens)))

    for j, prov in enumerate(table.header_prov):
        if prov:
            segments.append(Segment("column", f"col_{j % 10}", tuple(sorted(prov))))
    for row in table.row_prov:
        for j, prov in row.items():
            if prov:
                segments.append(Segment("column", f"col_{j % 10}", tuple(sorted(prov))))

    if include_labels:
        for j, cell in enumerate(table.header):
            if cell.label and j < len(table.header_prov) and table.header_prov[j]:
                segments.append(Segment("label", cell.label, tuple(sorted(table.header_prov[j]))))
        for name, prov in table.kv_prov.items():
            if prov:
                segments.append(Segment("label", name, tuple(sorted(prov))))

    heads = ("label", "column", "row") if include_labels else ("column", "row")
    seqs = encode_tags(doc, segments, assign_lines(doc), heads=heads)
    for i, tok in enumerate(doc.tokens):
        tok.col_tag = seqs["column"][i]
        tok.row_tag = seqs["row"][i]
        tok.label_tag = seqs["label"][i] if include_labels else None
    return doc


def generate(profile: GenProfile, count: int) -> list[tuple[Document, ExtractedTable]]:
    """Generate (document, ground-truth table) pairs, deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    children = np.random.SeedSequence(profile.seed).spawn(count)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        doc_id = f"{profile.profile}-{profile.seed}-{i:05d}"
        out.append(_generate_one(profile, rng, doc_id))
    return out


def gt_sidecar_path(corpus_path: str | Path) -> Path:
    p = Path(corpus_path)
    name = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.name
    return p.with_name(name + ".gt.jsonl")


def write_corpus(profile: GenProfile, count: int, path: str | Path) -> Path:
    """Write the JSONL corpus plus the <name>.gt.jsonl ground-truth sidecar."""
    import json

    from .reconstruct import table_to_json_obj

    pairs = generate(profile, count)
    save_corpus([doc for doc, _ in pairs], path)
    gt_path = gt_sidecar_path(path)
    with open(gt_path, "w", encoding="utf-8") as fh:
        for doc, table in pairs:
            obj = {"id": doc.id}
            obj.update(table_to_json_obj(table))
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    return gt_path


def load_gt_tables(path: str | Path) -> dict[str, ExtractedTable]:
    import json

    from .reconstruct import table_from_json_obj

    tables = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            tables[obj["id"]] = table_from_json_obj(obj)
    return tables

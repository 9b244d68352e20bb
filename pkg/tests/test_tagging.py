import numpy as np
import pytest

from spatialtab.docmodel import BBox, Document, Token
from spatialtab.tagging import Segment, assign_lines, decode_tags, encode_tags


def doc_from_boxes(boxes):
    return Document(
        id="t", tokens=[Token(text=f"w{i}", bbox=BBox(*b)) for i, b in enumerate(boxes)]
    )


class TestAssignLines:
    def test_identical_extent_same_line(self):
        doc = doc_from_boxes([(0, 100, 50, 120), (60, 100, 110, 120)])
        lines = assign_lines(doc)
        assert lines[0] == lines[1] == 0

    def test_disjoint_extent_different_lines(self):
        doc = doc_from_boxes([(0, 100, 50, 120), (0, 150, 50, 170)])
        lines = assign_lines(doc)
        assert lines[0] == 0
        assert lines[1] == 1

    def test_staircase_chain_merges_transitively(self):
        # 60% pairwise overlap between neighbors; ends overlap only 20%.
        doc = doc_from_boxes([(0, 100, 10, 120), (20, 108, 30, 128), (40, 116, 50, 136)])
        lines = assign_lines(doc)
        assert lines[0] == lines[1] == lines[2] == 0

    def test_under_threshold_splits(self):
        # 40% overlap of the shorter box is below the 50% rule.
        doc = doc_from_boxes([(0, 100, 10, 120), (20, 112, 30, 132)])
        lines = assign_lines(doc)
        assert lines[0] != lines[1]

    def test_zero_height_joins_by_center(self):
        doc = doc_from_boxes([(0, 100, 50, 120), (60, 110, 90, 110)])
        lines = assign_lines(doc)
        assert lines[0] == lines[1]

    def test_ids_follow_reading_order(self):
        doc = doc_from_boxes([(0, 200, 50, 220), (0, 100, 50, 120), (0, 300, 50, 320)])
        lines = assign_lines(doc)
        assert lines.line_ids == [1, 0, 2]


def two_line_doc():
    # tokens 0,1,2 on line 0; tokens 3,4 on line 1
    return doc_from_boxes(
        [(0, 100, 40, 115), (50, 100, 90, 115), (100, 100, 140, 115),
         (0, 130, 40, 145), (50, 130, 90, 145)]
    )


class TestEncode:
    def test_single_line_segment(self):
        doc = two_line_doc()
        segs = [Segment("column", "col_2", (0, 1, 2))]
        tags = encode_tags(doc, segs, assign_lines(doc))
        assert tags["column"][:3] == ["B-col_2", "I-col_2", "I-col_2"]
        assert tags["row"] == ["O"] * 5

    def test_line_break_gets_ib(self):
        doc = two_line_doc()
        segs = [Segment("label", "VENDOR_NAME", (2, 3))]
        tags = encode_tags(doc, segs, assign_lines(doc))
        assert tags["label"][2] == "B-VENDOR_NAME"
        assert tags["label"][3] == "IB-VENDOR_NAME"

    def test_no_segments_all_o(self):
        doc = two_line_doc()
        tags = encode_tags(doc, [], assign_lines(doc))
        assert all(t == "O" for seq in tags.values() for t in seq)

    def test_overlap_rejected(self):
        doc = two_line_doc()
        segs = [Segment("row", "row", (0, 1)), Segment("row", "header_row", (1, 2))]
        with pytest.raises(ValueError, match="overlapping"):
            encode_tags(doc, segs, assign_lines(doc))

    def test_b_count_equals_segments_ib_counts_line_breaks(self):
        doc = two_line_doc()
        segs = [
            Segment("row", "row", (0, 1, 2, 3, 4)),
            Segment("column", "col_0", (0,)),
            Segment("column", "col_1", (1, 2)),
        ]
        tags = encode_tags(doc, segs, assign_lines(doc))
        flat = tags["row"] + tags["column"]
        assert sum(t.startswith("B-") for t in flat) == 3
        assert sum(t.startswith("IB-") for t in flat) == 1  # row crosses one line break


class TestDecode:
    def test_b_after_o_starts_new_segment(self):
        segs = decode_tags("column", ["B-col_2", "I-col_2", "O", "B-col_2"])
        assert [s.token_indices for s in segs] == [(0, 1), (3,)]
        assert all(s.body == "col_2" for s in segs)

    def test_orphan_i_promoted(self):
        segs = decode_tags("column", ["I-col_2"])
        assert len(segs) == 1
        assert segs[0].token_indices == (0,)

    def test_body_mismatch_splits(self):
        segs = decode_tags("column", ["B-col_1", "I-col_3"])
        assert [(s.body, s.token_indices) for s in segs] == [
            ("col_1", (0,)), ("col_3", (1,))
        ]

    def test_ib_rejoins_across_interleaved_columns(self):
        # multi-line cell: col_0 continues below while col_1/col_2 sit between
        tags = ["B-col_0", "B-col_1", "B-col_2", "IB-col_0"]
        segs = decode_tags("column", tags)
        by_body = {s.body: s.token_indices for s in segs}
        assert by_body["col_0"] == (0, 3)
        assert by_body["col_1"] == (1,)

    def test_decode_never_raises_on_garbage(self):
        rng = np.random.default_rng(0)
        vocab = ["O", "B-col_1", "I-col_1", "IB-col_1", "B-col_2", "I-col_2", "IB-col_2"]
        for _ in range(200):
            tags = [vocab[int(i)] for i in rng.integers(0, len(vocab), size=12)]
            segs = decode_tags("column", tags)
            covered = [i for s in segs for i in s.token_indices]
            assert sorted(covered) == [i for i, t in enumerate(tags) if t != "O"]
            assert len(set(covered)) == len(covered)

    def test_all_two_tag_sequences_match_reference(self):
        # Brute-force reference decoder over every 2-tag sequence.
        vocab = ["O", "B-col_1", "I-col_1", "IB-col_1", "B-col_2", "I-col_2", "IB-col_2"]

        def reference(tags):
            segs = []
            open_by = {}
            for i, tag in enumerate(tags):
                if tag == "O":
                    segs += [(b, tuple(v)) for b, v in open_by.items()]
                    open_by.clear()
                    continue
                prefix, _, body = tag.partition("-")
                if prefix == "B" and body in open_by:
                    segs.append((body, tuple(open_by.pop(body))))
                open_by.setdefault(body, []).append(i)
            segs += [(b, tuple(v)) for b, v in open_by.items()]
            return sorted(segs, key=lambda s: s[1][0])

        for a in vocab:
            for b in vocab:
                got = [(s.body, s.token_indices) for s in decode_tags("column", [a, b])]
                assert got == reference([a, b]), (a, b)


def random_segmentation(rng, n_tokens):
    """Disjoint contiguous spans with random heads/bodies."""
    bodies = {
        "column": [f"col_{k}" for k in range(10)],
        "row": ["row", "header_row"],
        "label": ["PO_NUMBER", "VENDOR_NAME", "ITEM_DESCRIPTION"],
    }
    segments = []
    for head, pool in bodies.items():
        i = 0
        while i < n_tokens:
            if rng.random() < 0.4:
                length = int(rng.integers(1, 4))
                j = min(n_tokens, i + length)
                segments.append(
                    Segment(head, pool[int(rng.integers(0, len(pool)))], tuple(range(i, j)))
                )
                i = j
            else:
                i += 1
    return segments


def random_lines_doc(rng, n_tokens):
    boxes = []
    y = 50
    x = 0
    for _ in range(n_tokens):
        if rng.random() < 0.3:
            y += 30
            x = 0
        w = int(rng.integers(20, 60))
        boxes.append((x, y, x + w, y + 14))
        x += w + 8
    return doc_from_boxes(boxes)


class TestRoundtrip:
    def test_seeded_random_roundtrips(self):
        rng = np.random.default_rng(1234)
        for _ in range(300):
            n = int(rng.integers(1, 25))
            doc = random_lines_doc(rng, n)
            segments = random_segmentation(rng, n)
            tags = encode_tags(doc, segments, assign_lines(doc))
            decoded = []
            for head in ("label", "column", "row"):
                decoded.extend(decode_tags(head, tags[head]))
            key = lambda s: (s.head, s.token_indices)
            assert sorted(decoded, key=key) == sorted(segments, key=key)

    def test_multiline_cell_roundtrip(self):
        doc = two_line_doc()
        segments = [
            Segment("row", "row", (0, 1, 2, 3, 4)),
            Segment("column", "col_0", (0, 3)),  # cell continuing on line 2
            Segment("column", "col_1", (1,)),
            Segment("column", "col_2", (2, 4)),
        ]
        tags = encode_tags(doc, segments, assign_lines(doc))
        assert tags["column"] == ["B-col_0", "B-col_1", "B-col_2", "IB-col_0", "IB-col_2"]
        decoded = decode_tags("column", tags["column"])
        key = lambda s: s.token_indices
        assert sorted(decoded, key=key) == sorted(segments[1:], key=key)

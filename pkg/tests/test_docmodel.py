import json

import numpy as np
import pytest

from spatialtab.docmodel import (
    BBox,
    CorpusError,
    Document,
    Token,
    Vocabularies,
    column_tag_index,
    column_vocabulary,
    label_vocabulary,
    load_corpus,
    row_vocabulary,
    save_corpus,
)


def make_doc(doc_id="d0", n=3):
    tokens = [
        Token(text=f"w{i}", bbox=BBox(10 + 40 * i, 20, 40 + 40 * i, 35))
        for i in range(n)
    ]
    return Document(id=doc_id, tokens=tokens)


class TestBBox:
    def test_width_height(self):
        b = BBox(100, 200, 300, 250)
        assert b.width == 200
        assert b.height == 50

    def test_rejects_inverted_x(self):
        with pytest.raises(ValueError, match="x_max < x_min"):
            BBox(10, 20, 5, 35)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            BBox(-1, 0, 10, 10)
        with pytest.raises(ValueError):
            BBox(0, 0, 1001, 10)


class TestVocabularies:
    def test_sizes(self):
        assert len(row_vocabulary()) == 7
        assert len(column_vocabulary()) == 31
        assert len(label_vocabulary()) == 1 + 3 * 7

    def test_o_is_index_zero(self):
        for vocab in (row_vocabulary(), column_vocabulary(), label_vocabulary()):
            assert vocab.index["O"] == 0

    def test_row_tags_exact(self):
        assert set(row_vocabulary().tags) == {
            "O", "B-row", "I-row", "IB-row",
            "B-header_row", "I-header_row", "IB-header_row",
        }

    def test_column_tags_closed_at_nine(self):
        vocab = column_vocabulary()
        assert "B-col_9" in vocab
        assert "B-col_10" not in vocab

    def test_custom_label_set(self):
        vocab = label_vocabulary(("A", "B"))
        assert len(vocab) == 7
        assert "IB-B" in vocab


class TestColumnTagIndex:
    def test_suffix_parse(self):
        assert column_tag_index("IB-col_7") == 7
        assert column_tag_index("B-col_0") == 0
        assert column_tag_index("I-col_9") == 9

    def test_o_maps_to_none(self):
        assert column_tag_index("O") is None

    def test_non_column_tag_rejected(self):
        with pytest.raises(ValueError):
            column_tag_index("B-row")


class TestCorpusIO:
    def test_minimal_document(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"d1","tokens":[{"text":"Total","bbox":[10,20,80,35]}]}\n')
        docs = load_corpus(path)
        assert len(docs) == 1
        tok = docs[0].tokens[0]
        assert tok.text == "Total"
        assert tok.bbox == BBox(10, 20, 80, 35)
        assert tok.label_tag is None

    def test_inverted_bbox_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"d1","tokens":[{"text":"x","bbox":[10,20,5,35]}]}\n')
        with pytest.raises(CorpusError, match="x_max < x_min.*line 1"):
            load_corpus(path)

    def test_unknown_column_tag(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(
            '{"id":"d1","tokens":[{"text":"x","bbox":[1,2,3,4],"col_tag":"B-col_12"}]}\n'
        )
        with pytest.raises(CorpusError, match="unknown column tag"):
            load_corpus(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"d1","tokens":[]}\n{oops\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_slight_overshoot_clamped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"d1","tokens":[{"text":"x","bbox":[990,0,1005,10]}]}\n')
        docs = load_corpus(path)
        assert docs[0].tokens[0].bbox.x_max == 1000

    def test_large_overshoot_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"d1","tokens":[{"text":"x","bbox":[0,0,1011,10]}]}\n')
        with pytest.raises(CorpusError):
            load_corpus(path)

    def test_empty_corpus_roundtrip(self, tmp_path):
        path = tmp_path / "c.jsonl"
        save_corpus([], path)
        assert path.read_text() == ""
        assert load_corpus(path) == []

    def test_single_doc_roundtrip(self, tmp_path):
        doc = make_doc()
        doc.tokens[0].col_tag = "B-col_0"
        doc.tokens[0].row_tag = "B-row"
        path = tmp_path / "c.jsonl"
        save_corpus([doc], path)
        assert load_corpus(path) == [doc]

    def test_random_docs_roundtrip(self, tmp_path):
        rng = np.random.default_rng(42)
        vocabs = Vocabularies()
        docs = []
        for d in range(100):
            tokens = []
            for _ in range(int(rng.integers(1, 20))):
                x0, y0 = int(rng.integers(0, 900)), int(rng.integers(0, 900))
                w, h = int(rng.integers(0, 100)), int(rng.integers(0, 100))
                tok = Token(text=f"t{rng.integers(0, 50)}", bbox=BBox(x0, y0, x0 + w, y0 + h))
                if rng.random() < 0.5:
                    tok.col_tag = vocabs.column.tags[int(rng.integers(0, 31))]
                if rng.random() < 0.5:
                    tok.row_tag = vocabs.row.tags[int(rng.integers(0, 7))]
                if rng.random() < 0.3:
                    tok.label_tag = vocabs.label.tags[int(rng.integers(0, 22))]
                tokens.append(tok)
            docs.append(Document(id=f"d{d}", tokens=tokens, page_size=(1000, 1000)))
        path = tmp_path / "c.jsonl"
        save_corpus(docs, path)
        assert load_corpus(path) == docs

    def test_save_is_byte_stable(self, tmp_path):
        docs = [make_doc("a"), make_doc("b")]
        p1, p2 = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
        save_corpus(docs, p1)
        save_corpus(load_corpus(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_absent_tags_omitted_not_null(self, tmp_path):
        path = tmp_path / "c.jsonl"
        save_corpus([make_doc()], path)
        obj = json.loads(path.read_text())
        assert "label_tag" not in obj["tokens"][0]

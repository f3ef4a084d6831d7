"""Bundle parsing, caption extraction and cleaning, chunking, round-trips."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folio import corpus
from folio.corpus import (
    Chunk,
    DocumentBundle,
    FigureCaptionPair,
    FigureRef,
    PageSource,
    chunk_text,
    clean_caption,
    extract_figure_pairs,
    ingest_bundle,
    parse_manifest,
    records_to_manifest,
)
from folio.errors import InvalidChunking, MalformedManifest, MissingImage

from conftest import build_bundle


def manifest_text(doc_id="docA", title="T", pages=None):
    pages = pages if pages is not None else [
        {"page_no": 1, "image_ref": "p1.png", "text": "first page", "figure_image_refs": []},
        {"page_no": 2, "image_ref": "p2.png", "text": "second page", "figure_image_refs": []},
    ]
    lines = [json.dumps({"doc_id": doc_id, "title": title, "pages": len(pages)})]
    lines += [json.dumps(p) for p in pages]
    return "\n".join(lines) + "\n"


class TestManifestParsing:
    def test_two_page_manifest(self):
        bundle = parse_manifest(manifest_text(), base_dir="/data")
        assert bundle.doc_id == "docA"
        assert [p.page_no for p in bundle.pages] == [1, 2]
        assert bundle.pages[0].image_ref == "/data/p1.png"

    def test_page_gap_rejected_with_line(self):
        pages = [
            {"page_no": 1, "image_ref": "p1.png", "text": "", "figure_image_refs": []},
            {"page_no": 3, "image_ref": "p3.png", "text": "", "figure_image_refs": []},
        ]
        with pytest.raises(MalformedManifest) as exc:
            parse_manifest(manifest_text(pages=pages))
        assert exc.value.line == 3
        assert "page_no" in exc.value.reason

    def test_unknown_key_rejected(self):
        pages = [{"page_no": 1, "image_ref": "a.png", "text": "", "figure_image_refs": [], "extra": 1}]
        with pytest.raises(MalformedManifest):
            parse_manifest(manifest_text(pages=pages))

    def test_missing_key_rejected(self):
        pages = [{"page_no": 1, "image_ref": "a.png", "text": ""}]
        with pytest.raises(MalformedManifest):
            parse_manifest(manifest_text(pages=pages))

    def test_header_page_count_mismatch(self):
        text = json.dumps({"doc_id": "d", "title": "t", "pages": 3}) + "\n"
        text += json.dumps({"page_no": 1, "image_ref": "a.png", "text": "", "figure_image_refs": []}) + "\n"
        with pytest.raises(MalformedManifest) as exc:
            parse_manifest(text)
        assert exc.value.line == 1

    def test_invalid_doc_id(self):
        with pytest.raises(MalformedManifest):
            parse_manifest(manifest_text(doc_id="bad doc id"))

    def test_invalid_json_line(self):
        with pytest.raises(MalformedManifest) as exc:
            parse_manifest('{"doc_id":"d","title":"t","pages":1}\nnot json\n')
        assert exc.value.line == 2

    def test_url_refs_not_resolved(self):
        pages = [{"page_no": 1, "image_ref": "https://x/y.png", "text": "", "figure_image_refs": []}]
        bundle = parse_manifest(manifest_text(pages=pages), base_dir="/data")
        assert bundle.pages[0].image_ref == "https://x/y.png"

    def test_figure_ref_label_hint_optional(self):
        pages = [{
            "page_no": 1, "image_ref": "a.png", "text": "",
            "figure_image_refs": [{"image_ref": "f.png"}, {"label_hint": None, "image_ref": "g.png"}],
        }]
        bundle = parse_manifest(manifest_text(pages=pages))
        assert [r.label_hint for r in bundle.pages[0].figure_image_refs] == [None, None]


class TestIngest:
    def test_two_pages_in_order(self, tmp_path):
        bundle = build_bundle(tmp_path, page_texts=["alpha beta", "gamma delta"])
        records = ingest_bundle(bundle)
        assert [r.page_no for r in records] == [1, 2]
        assert records[0].text == "alpha beta"

    def test_page_gap_in_constructed_bundle(self, tmp_path):
        bundle = build_bundle(tmp_path, page_texts=["a", "b"])
        bundle.pages[1].page_no = 3
        with pytest.raises(MalformedManifest):
            ingest_bundle(bundle)

    def test_caption_line_yields_figure_pair(self, tmp_path):
        bundle = build_bundle(tmp_path, page_texts=["nothing here", "intro\nFig 1. Model Interface\noutro"])
        records = ingest_bundle(bundle)
        assert len(records[1].figures) == 1
        pair = records[1].figures[0]
        assert pair.label == "Fig 1"
        assert pair.caption_clean == "Model Interface"

    def test_missing_image_rejected(self, tmp_path):
        bundle = build_bundle(tmp_path, page_texts=["a"])
        bundle.pages[0].image_ref = str(tmp_path / "absent.png")
        with pytest.raises(MissingImage):
            ingest_bundle(bundle)

    def test_figure_association_by_label_hint_then_order(self, tmp_path):
        text = "Fig 1. First figure caption\nFig 2. Second figure caption"
        bundle = build_bundle(
            tmp_path,
            page_texts=[text],
            figure_refs={1: [("Fig 2", "fig2.png"), (None, "fig1.png")]},
        )
        records = ingest_bundle(bundle)
        figs = {f.label: f.image_ref for f in records[0].figures}
        assert figs["Fig 2"].endswith("fig2.png")
        assert figs["Fig 1"].endswith("fig1.png")


class TestFigureExtraction:
    def test_known_caption_lines(self):
        pairs = extract_figure_pairs("Fig 4. Graph of Accuracy over Epochs")
        assert pairs == [FigureCaptionPair(label="Fig 4", caption_raw="Graph of Accuracy over Epochs")]
        pairs = extract_figure_pairs(
            "Fig 2. Example of prompt on a Brain Tumor image taken from a research paper"
        )
        assert pairs[0].caption_raw == "Example of prompt on a Brain Tumor image taken from a research paper"

    def test_prose_mentioning_figures_ignored(self):
        assert extract_figure_pairs("This paragraph mentions figure quality but has no caption line.") == []
        assert extract_figure_pairs("See Fig 4. for details") == []

    def test_label_variants(self):
        assert extract_figure_pairs("Figure 3: Another style here")[0].label == "Figure 3"
        assert extract_figure_pairs("Fig. 7. Dotted form works")[0].label == "Fig. 7"

    def test_document_order(self):
        text = "Fig 2. Second one\nplain line\nFig 1. First one"
        assert [p.label for p in extract_figure_pairs(text)] == ["Fig 2", "Fig 1"]

    def test_insensitive_to_surrounding_lines(self):
        core = "Fig 4. Graph of Accuracy over Epochs"
        base = extract_figure_pairs(core)
        padded = extract_figure_pairs("header line\n" + core + "\nsome trailing prose")
        assert base == padded


class TestCleanCaption:
    def clean(self, raw):
        return clean_caption(FigureCaptionPair(label="Fig 1", caption_raw=raw))

    def test_whitespace_collapse(self):
        assert self.clean("  Model    Interface ").caption_clean == "Model Interface"

    def test_already_clean_unchanged(self):
        assert self.clean("Graph of Accuracy over Epochs").caption_clean == "Graph of Accuracy over Epochs"

    def test_too_little_alphabetic_content_rejected(self):
        assert self.clean("7 %") is None
        assert self.clean("one") is None

    def test_leading_label_stripped(self):
        assert self.clean("Fig 4. Graph of Accuracy").caption_clean == "Graph of Accuracy"

    def test_trailing_punctuation_collapsed(self):
        assert self.clean("Great Results!!!").caption_clean == "Great Results!"
        assert self.clean("Great Results.").caption_clean == "Great Results."

    @given(st.text(max_size=80))
    @settings(max_examples=200)
    def test_idempotent(self, raw):
        once = self.clean(raw)
        if once is None:
            return
        twice = self.clean(once.caption_clean)
        assert twice is not None
        assert twice.caption_clean == once.caption_clean


class TestChunking:
    def test_greedy_tiling_example(self):
        # Independent oracle: enumerate the greedy left-to-right tiling.
        def oracle_spans(n, max_units, overlap):
            spans, start, stride = [], 0, max_units - overlap
            while True:
                end = min(start + max_units, n)
                spans.append((start, end))
                if end == n:
                    return spans
                start += stride

        text = " ".join(f"t{i}" for i in range(10))
        chunks = chunk_text(text, max_units=4, overlap=1)
        assert [c.unit_span for c in chunks] == [(0, 4), (3, 7), (6, 10)]
        assert [c.unit_span for c in chunks] == oracle_spans(10, 4, 1)

    def test_empty_text(self):
        assert chunk_text("", 4, 1) == []

    def test_overlap_must_be_smaller_than_max(self):
        with pytest.raises(InvalidChunking):
            chunk_text("a b c", max_units=4, overlap=4)

    def test_chunk_ids_and_text(self):
        chunks = chunk_text("a b c d e", max_units=2, overlap=0, doc_id="d", page_no=3)
        assert [c.chunk_id for c in chunks] == ["d:3:0", "d:3:1", "d:3:2"]
        assert chunks[0].text == "a b"

    @given(
        n=st.integers(min_value=0, max_value=300),
        max_units=st.integers(min_value=1, max_value=40),
        data=st.data(),
    )
    @settings(max_examples=200)
    def test_coverage_and_overlap_accounting(self, n, max_units, data):
        overlap = data.draw(st.integers(min_value=0, max_value=max_units - 1))
        text = " ".join(f"w{i}" for i in range(n))
        chunks = chunk_text(text, max_units=max_units, overlap=overlap)
        if n == 0:
            assert chunks == []
            return
        covered = set()
        total_len = 0
        for c in chunks:
            start, end = c.unit_span
            assert 1 <= end - start <= max_units
            covered.update(range(start, end))
            total_len += end - start
        assert covered == set(range(n))
        # Duplicated token incidences across chunks account for exactly the
        # configured overlap per consecutive pair.
        assert total_len - n == overlap * (len(chunks) - 1)


class TestRoundTrip:
    def test_records_to_manifest_and_back(self, tmp_path):
        text1 = "Fig 1. Model Interface\nbody text " + " ".join(f"w{i}" for i in range(30))
        text2 = "plain second page\nFig 2. Another caption here"
        bundle = build_bundle(
            tmp_path,
            page_texts=[text1, text2],
            figure_refs={1: [("Fig 1", "f1.png")], 2: [(None, "f2.png")]},
        )
        records = ingest_bundle(bundle, max_units=8, overlap=2)
        manifest = records_to_manifest(bundle.title, records)
        reparsed = parse_manifest(manifest, base_dir=str(tmp_path))
        records2 = ingest_bundle(reparsed, max_units=8, overlap=2)
        assert records == records2

    def test_record_dict_round_trip(self, tmp_path):
        bundle = build_bundle(tmp_path, page_texts=["Fig 1. Model Interface\nmore words here"])
        records = ingest_bundle(bundle)
        assert corpus.record_from_dict(corpus.record_to_dict(records[0])) == records[0]

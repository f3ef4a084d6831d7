"""Vector store: exact search vs a brute-force oracle, tie handling, filters,
HNSW behavior, deletion, and binary persistence."""

import numpy as np
import pytest

from folio.errors import CorruptFile, DimMismatch, EfTooSmall, EmptyIndex
from folio.index import (
    HnswConfig,
    Payload,
    RecordKind,
    SearchFilter,
    Space,
    VectorIndex,
)


def unit(values):
    arr = np.asarray(values, dtype=np.float64)
    return arr / np.linalg.norm(arr)


def fill_random(idx, n, d, seed=0, doc_ids=("docA", "docB"), duplicate_every=0):
    """Insert n random unit vectors; every `duplicate_every`-th record reuses
    the previous vector to create exact score ties."""
    rng = np.random.default_rng(seed)
    vectors = []
    for i in range(n):
        if duplicate_every and i % duplicate_every == 0 and vectors:
            vec = vectors[-1]
        else:
            vec = unit(rng.standard_normal(d))
        vectors.append(vec)
        kind = list(RecordKind)[i % 3]
        space = Space.TEXT if kind == RecordKind.TEXT_CHUNK else Space.IMAGE_PROJECTED
        idx.insert(vec, space, kind, Payload(doc_id=doc_ids[i % len(doc_ids)], page_no=1 + i % 5))
    return vectors


def brute_force_hits(idx, query, k, filt=None):
    """Independent scan: per-record float64 dot, sorted by (-score, id)."""
    scored = []
    for row in range(idx._count):
        if idx._deleted[row]:
            continue
        if filt is not None:
            if filt.kinds is not None and idx._kinds[row] not in filt.kinds:
                continue
            if filt.spaces is not None and idx._spaces[row] not in filt.spaces:
                continue
            if filt.doc_ids is not None and idx._payloads[row].doc_id not in filt.doc_ids:
                continue
        score = float(np.dot(idx._matrix[row].astype(np.float64), query))
        scored.append((idx._ids[row], score))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


class TestInsert:
    def test_monotone_ids_from_one(self):
        idx = VectorIndex()
        ids = [idx.insert(unit([1, 0]), Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
               for _ in range(3)]
        assert ids == [1, 2, 3]

    def test_dim_fixed_by_first_insert(self):
        idx = VectorIndex()
        idx.insert(unit([1, 0]), Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        with pytest.raises(DimMismatch):
            idx.insert(unit([1, 0, 0]), Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))

    def test_non_unit_rejected(self):
        idx = VectorIndex()
        with pytest.raises(ValueError):
            idx.insert(np.array([1.0, 1.0]), Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))

    def test_self_retrieval(self):
        idx = VectorIndex()
        fill_random(idx, 20, 8, seed=3)
        vec = unit(np.random.default_rng(99).standard_normal(8))
        rec_id = idx.insert(vec, Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        hits = idx.search_flat(vec, 1)
        assert hits[0].id == rec_id
        assert hits[0].score == pytest.approx(1.0, abs=1e-6)


class TestFlatSearch:
    def test_basis_vector_example(self):
        idx = VectorIndex()
        for e in ([1, 0, 0], [0, 1, 0], [0, 0, 1]):
            idx.insert(unit(e), Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        hits = idx.search_flat(unit([1, 0.1, 0]), 1)
        assert hits[0].id == 1

    def test_k_clamped_to_available(self):
        idx = VectorIndex()
        fill_random(idx, 3, 4)
        assert len(idx.search_flat(unit([1, 0, 0, 0]), 10)) == 3

    def test_empty_index(self):
        assert VectorIndex().search_flat(unit([1, 0]), 5) == []

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(17)
        for trial in range(8):
            idx = VectorIndex()
            n = int(rng.integers(1, 400))
            d = int(rng.integers(2, 24))
            fill_random(idx, n, d, seed=trial, duplicate_every=4)
            for _ in range(10):
                q = unit(rng.standard_normal(d))
                k = int(rng.integers(1, 20))
                hits = idx.search_flat(q, k)
                expected = brute_force_hits(idx, q, k)
                assert [h.id for h in hits] == [rec_id for rec_id, _ in expected]
                # scores agree to the last few ulps (gemv vs per-row dot)
                np.testing.assert_allclose(
                    [h.score for h in hits], [s for _, s in expected], rtol=0, atol=1e-12
                )

    def test_exact_ties_ordered_by_id(self):
        idx = VectorIndex()
        v = unit([0.5, 0.5, 0.7])
        for _ in range(4):
            idx.insert(v, Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        hits = idx.search_flat(v, 4)
        assert [h.id for h in hits] == [1, 2, 3, 4]
        assert len({h.score for h in hits}) == 1

    def test_filters_restrict_membership_not_scores(self):
        idx = VectorIndex()
        fill_random(idx, 120, 8, seed=5)
        q = unit(np.random.default_rng(1).standard_normal(8))
        filt = SearchFilter(kinds=frozenset({RecordKind.TEXT_CHUNK}), doc_ids=frozenset({"docA"}))
        filtered = idx.search_flat(q, 10, filt)
        unfiltered = idx.search_flat(q, 200)
        allowed = {
            h.id for h in unfiltered
            if h.kind == RecordKind.TEXT_CHUNK and h.payload.doc_id == "docA"
        }
        expected = [h for h in unfiltered if h.id in allowed][:10]
        assert [(h.id, h.score) for h in filtered] == [(h.id, h.score) for h in expected]

    def test_filter_with_no_matches(self):
        idx = VectorIndex()
        fill_random(idx, 10, 4)
        assert idx.search_flat(unit([1, 0, 0, 0]), 3, SearchFilter(doc_ids=frozenset({"zzz"}))) == []


class TestHnsw:
    def test_build_empty_rejected(self):
        with pytest.raises(EmptyIndex):
            VectorIndex().build_hnsw(HnswConfig())

    def test_single_record(self):
        idx = VectorIndex()
        vec = unit([1, 2, 3])
        idx.insert(vec, Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        idx.build_hnsw(HnswConfig())
        hits = idx.search_hnsw(vec, 1)
        assert [h.id for h in hits] == [1]

    def test_ef_too_small(self):
        idx = VectorIndex()
        fill_random(idx, 5, 4)
        idx.build_hnsw(HnswConfig(ef_search=4))
        with pytest.raises(EfTooSmall):
            idx.search_hnsw(unit([1, 0, 0, 0]), 10)

    def test_recall_against_flat_oracle(self):
        idx = VectorIndex()
        rng = np.random.default_rng(0)
        fill_random(idx, 600, 16, seed=0)
        idx.build_hnsw(HnswConfig(M=16, ef_construction=100, ef_search=32, seed=1))
        recalls = []
        for _ in range(20):
            q = unit(rng.standard_normal(16))
            flat = {h.id for h in idx.search_flat(q, 10)}
            approx = {h.id for h in idx.search_hnsw(q, 10)}
            recalls.append(len(flat & approx) / 10)
        assert np.mean(recalls) >= 0.9

    def test_deterministic_given_seed(self):
        results = []
        for _ in range(2):
            idx = VectorIndex()
            fill_random(idx, 200, 8, seed=2)
            idx.build_hnsw(HnswConfig(seed=9))
            q = unit(np.random.default_rng(3).standard_normal(8))
            results.append([(h.id, h.score) for h in idx.search_hnsw(q, 5)])
        assert results[0] == results[1]

    def test_respects_filter(self):
        idx = VectorIndex()
        fill_random(idx, 150, 8, seed=4)
        idx.build_hnsw(HnswConfig())
        q = unit(np.random.default_rng(5).standard_normal(8))
        filt = SearchFilter(kinds=frozenset({RecordKind.PAGE_IMAGE}))
        for hit in idx.search_hnsw(q, 10, filt):
            assert hit.kind == RecordKind.PAGE_IMAGE

    def test_write_invalidates_graph_then_lazy_rebuild(self):
        idx = VectorIndex()
        fill_random(idx, 50, 8, seed=6)
        idx.build_hnsw(HnswConfig())
        vec = unit(np.random.default_rng(7).standard_normal(8))
        new_id = idx.insert(vec, Space.TEXT, RecordKind.TEXT_CHUNK, Payload("d", 1))
        hits = idx.search_hnsw(vec, 1)
        assert hits[0].id == new_id


class TestDeletion:
    def test_deleted_record_not_returned(self):
        idx = VectorIndex()
        vecs = fill_random(idx, 30, 8, seed=8)
        target = idx.search_flat(vecs[4], 1)[0]
        assert idx.delete(target.id)
        assert all(h.id != target.id for h in idx.search_flat(vecs[4], 30))

    def test_delete_unknown_id(self):
        idx = VectorIndex()
        fill_random(idx, 3, 4)
        assert not idx.delete(999)

    def test_persist_compacts_tombstones(self, tmp_path):
        idx = VectorIndex()
        fill_random(idx, 10, 4, seed=9)
        idx.delete(3)
        idx.delete(7)
        path = str(tmp_path / "idx.frix")
        idx.persist(path)
        loaded = VectorIndex.load(path)
        assert len(loaded) == 8
        assert loaded._next_id == 11  # id counter resumes past surviving max


class TestPersistence:
    def test_round_trip_identical_hits(self, tmp_path):
        idx = VectorIndex()
        fill_random(idx, 200, 12, seed=10, duplicate_every=7)
        path = str(tmp_path / "idx.frix")
        idx.persist(path)
        loaded = VectorIndex.load(path)
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = unit(rng.standard_normal(12))
            before = [(h.id, h.score) for h in idx.search_flat(q, 10)]
            after = [(h.id, h.score) for h in loaded.search_flat(q, 10)]
            assert before == after  # bit-exact f32 storage

    def test_empty_round_trip(self, tmp_path):
        path = str(tmp_path / "empty.frix")
        VectorIndex().persist(path)
        loaded = VectorIndex.load(path)
        assert len(loaded) == 0
        assert loaded.search_flat(unit([1, 0]), 3) == []

    def test_truncated_file_rejected(self, tmp_path):
        idx = VectorIndex()
        fill_random(idx, 20, 6)
        path = tmp_path / "idx.frix"
        idx.persist(str(path))
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 9])
        with pytest.raises(CorruptFile):
            VectorIndex.load(str(path))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.frix"
        path.write_bytes(b"WRNG" + b"\x00" * 64)
        with pytest.raises(CorruptFile) as exc:
            VectorIndex.load(str(path))
        assert exc.value.offset == 0

    def test_flipped_byte_fails_checksum(self, tmp_path):
        idx = VectorIndex()
        fill_random(idx, 5, 4)
        path = tmp_path / "idx.frix"
        idx.persist(str(path))
        data = bytearray(path.read_bytes())
        data[30] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptFile) as exc:
            VectorIndex.load(str(path))
        assert "checksum" in exc.value.reason

    def test_payload_preserved(self, tmp_path):
        idx = VectorIndex()
        payload = Payload(doc_id="docZ", page_no=4, chunk_id="docZ:4:0", label="Fig 2", text="some text")
        idx.insert(unit([1, 1, 1]), Space.IMAGE_PROJECTED, RecordKind.FIGURE_IMAGE, payload)
        path = str(tmp_path / "p.frix")
        idx.persist(path)
        hit = VectorIndex.load(path).search_flat(unit([1, 1, 1]), 1)[0]
        assert hit.payload == payload
        assert hit.kind == RecordKind.FIGURE_IMAGE
        assert hit.space == Space.IMAGE_PROJECTED

import json

import numpy as np
import pytest

from newsvis.embedstore import (
    EmbeddingRecord,
    load,
    query_topk,
    read_embeddings_dir,
)

from oracles import brute_topk


def v512(*entries, dim=512):
    """Sparse 512-dim vector: entries are (index, value)."""
    vec = [0.0] * dim
    for idx, value in entries:
        vec[idx] = value
    return vec


def record(page, vectors, crops=None):
    crops = crops if crops is not None else [f"{page}_crop_{i}.jpg" for i in range(len(vectors))]
    return EmbeddingRecord(
        filepath=page,
        resnet_50_embeddings=[v + [0.0] * (2048 - len(v)) for v in vectors],
        resnet_18_embeddings=vectors,
        visual_content_filepaths=crops,
    )


class TestLoad:
    def test_counts_vectors_across_records(self):
        records = [
            record("a.jpg", [v512((0, 1.0))]),
            record("b.jpg", [v512((1, 1.0)), v512((2, 1.0))]),
            record("c.jpg", []),
        ]
        store = load(records, which="r18")
        assert len(store) == 3
        assert store.report.rejected_records == 0

    def test_wrong_dimension_rejected(self):
        bad = EmbeddingRecord(
            filepath="bad.jpg",
            resnet_50_embeddings=[[0.0] * 2048],
            resnet_18_embeddings=[[0.0] * 511],
            visual_content_filepaths=["bad_crop.jpg"],
        )
        store = load([bad], which="r18")
        assert len(store) == 0
        assert store.report.rejected_records == 1
        assert "511" in store.report.messages[0] or "512" in store.report.messages[0]

    def test_misaligned_lists_rejected(self):
        bad = record("a.jpg", [v512((0, 1.0))], crops=["x.jpg", "y.jpg"])
        store = load([bad], which="r18")
        assert store.report.rejected_records == 1

    def test_reload_identical_ids(self):
        records = [record("a.jpg", [v512((0, 1.0)), v512((1, 1.0))])]
        store1 = load(records, which="r18")
        store2 = load(records, which="r18")
        assert store1.crop_paths == store2.crop_paths
        assert np.array_equal(store1.vectors, store2.vectors)

    def test_zero_vector_flagged(self):
        store = load([record("a.jpg", [v512(), v512((0, 1.0))])], which="r18")
        assert store.report.zero_vectors == 1
        assert list(store.zero_mask) == [True, False]

    def test_r50_family(self):
        store = load([record("a.jpg", [v512((0, 1.0))])], which="r50")
        assert store.vectors.shape == (1, 2048)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            load([], which="r34")


class TestQuery:
    def build_store(self):
        return load([record("a.jpg", [
            v512((0, 1.0)),                    # id 0
            v512((1, 1.0)),                    # id 1, orthogonal to id 0
            v512((0, 0.9), (1, 0.1)),          # id 2
        ])], which="r18")

    def test_self_query_ranks_first(self):
        store = self.build_store()
        result = query_topk(store, v512((0, 0.9), (1, 0.1)), k=3, metric="cosine")
        assert result.entries[0][0] == "a.jpg_crop_2.jpg"
        assert result.entries[0][1] == pytest.approx(1.0)

    def test_orthogonal_cosine_zero(self):
        store = self.build_store()
        result = query_topk(store, v512((1, 1.0)), k=3, metric="cosine")
        assert result.entries[-1][0] == "a.jpg_crop_0.jpg"
        assert result.entries[-1][1] == pytest.approx(0.0)

    def test_euclidean_self_distance_zero(self):
        store = self.build_store()
        result = query_topk(store, v512((1, 1.0)), k=1, metric="euclidean")
        assert result.entries[0] == ("a.jpg_crop_1.jpg", 0.0)

    def test_cosine_scale_invariant(self):
        store = self.build_store()
        base = query_topk(store, v512((0, 0.3), (1, 0.2)), k=3, metric="cosine")
        scaled = query_topk(store, v512((0, 3.0), (1, 2.0)), k=3, metric="cosine")
        assert [e[0] for e in base.entries] == [e[0] for e in scaled.entries]
        for (_, a), (_, b) in zip(base.entries, scaled.entries):
            assert a == pytest.approx(b)

    def test_k_beyond_size_returns_full_ranking(self):
        store = self.build_store()
        result = query_topk(store, v512((0, 1.0)), k=50, metric="euclidean")
        assert len(result.entries) == 3

    def test_increasing_k_keeps_prefix(self):
        store = self.build_store()
        small = query_topk(store, v512((0, 1.0)), k=2, metric="cosine")
        big = query_topk(store, v512((0, 1.0)), k=3, metric="cosine")
        assert big.entries[:2] == small.entries

    def test_zero_vectors_excluded_from_cosine(self):
        store = load([record("a.jpg", [v512(), v512((0, 1.0))])], which="r18")
        result = query_topk(store, v512((0, 1.0)), k=5, metric="cosine")
        assert [e[0] for e in result.entries] == ["a.jpg_crop_1.jpg"]

    def test_zero_vectors_kept_in_euclidean(self):
        store = load([record("a.jpg", [v512(), v512((0, 1.0))])], which="r18")
        result = query_topk(store, v512(), k=5, metric="euclidean")
        assert result.entries[0][0] == "a.jpg_crop_0.jpg"

    def test_zero_query_cosine_is_error(self):
        with pytest.raises(ValueError):
            query_topk(self.build_store(), v512(), k=1, metric="cosine")

    def test_dimension_mismatch_is_error(self):
        with pytest.raises(ValueError):
            query_topk(self.build_store(), [1.0, 2.0], k=1)

    def test_empty_store(self):
        store = load([], which="r18")
        assert query_topk(store, v512((0, 1.0)), k=3).entries == []

    def test_tie_break_ascending_id(self):
        dup = v512((3, 2.0))
        store = load([record("a.jpg", [dup, dup, v512((4, 1.0))])], which="r18")
        result = query_topk(store, dup, k=3, metric="cosine")
        assert result.ids[:2] == [0, 1]

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1234)
        vectors = rng.normal(size=(60, 512)).tolist()
        store = load([record("a.jpg", vectors)], which="r18")
        for metric in ("cosine", "euclidean"):
            for qi in (0, 13, 59):
                query = vectors[qi]
                got = query_topk(store, query, k=10, metric=metric)
                assert got.ids == brute_topk(vectors, query, 10, metric)


class TestFiles:
    def test_read_embeddings_dir(self, tmp_path):
        payload = {
            "filepath": "batch/sn1/1910-01-01/ed-1/seq-1.jpg",
            "resnet_50_embeddings": [[0.0] * 2048],
            "resnet_18_embeddings": [[0.1] * 512],
            "visual_content_filepaths": ["batch/sn1/1910-01-01/ed-1/seq-1_crop_0_map.jpg"],
        }
        target = tmp_path / "batch" / "sn1" / "1910-01-01" / "ed-1"
        target.mkdir(parents=True)
        (target / "seq-1_embeddings.json").write_text(json.dumps(payload))
        (target / "seq-1.json").write_text("{}")    # page record, must be ignored

        records = list(read_embeddings_dir(tmp_path))
        assert len(records) == 1
        assert records[0].filepath == payload["filepath"]
        store = load(records, which="r18")
        assert len(store) == 1

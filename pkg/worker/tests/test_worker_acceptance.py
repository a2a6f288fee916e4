"""Acceptance gate for the inference worker.

Stub-mode checks always run; the real-model check needs a detection model
checkpoint (NN_MODEL_PATH) and is skipped without one.
"""

import json
import os
from pathlib import Path

import pytest

from newsvis.detect import read_predictions

from newsvis_worker.worker import WorkerJob, read_image_list, run_worker


def ok(name):
    print(f"\n[ACCEPTANCE] PASS: {name}")


def snapshot(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_stub_mode_deterministic_and_parseable(image_fixture, tmp_path):
    _, list_path, page_ids = image_fixture
    trees = []
    for label in ("run1", "run2"):
        out_dir = tmp_path / label
        job = WorkerJob(pages=read_image_list(list_path), model_ref=None)
        result = run_worker(job, out_path=out_dir / "preds.jsonl", emb_out=out_dir / "embs")
        assert result.failures == []
        assert result.processed == page_ids
        trees.append(snapshot(out_dir))
    assert trees[0] == trees[1]

    with open(tmp_path / "run1" / "preds.jsonl", "rb") as fh:
        parsed = read_predictions(fh)
    assert parsed.rejected == 0
    assert parsed.messages == []
    assert set(parsed.by_page) == set(page_ids)
    ok("worker --stub deterministic across runs; output parses with zero rejections")


def test_real_model_records_schema_valid_and_floor_compliant(image_fixture, tmp_path):
    model_path = os.environ.get("NN_MODEL_PATH")
    if not model_path or not Path(model_path).is_file():
        pytest.skip("no detection model supplied (set NN_MODEL_PATH)")
    _, list_path, _ = image_fixture
    job = WorkerJob(pages=read_image_list(list_path), model_ref=model_path)
    result = run_worker(job, out_path=tmp_path / "preds.jsonl", emb_out=tmp_path / "embs")
    assert result.failures == []

    with open(tmp_path / "preds.jsonl", "rb") as fh:
        parsed = read_predictions(fh)
    assert parsed.rejected == 0
    for preds in parsed.by_page.values():
        assert all(p.score >= 0.05 for p in preds)
    for emb_path in (tmp_path / "embs").rglob("*_embeddings.json"):
        record = json.loads(emb_path.read_text())
        assert list(record) == ["filepath", "resnet_50_embeddings",
                                "resnet_18_embeddings", "visual_content_filepaths"]
        assert all(len(v) == 512 for v in record["resnet_18_embeddings"])
        assert all(len(v) == 2048 for v in record["resnet_50_embeddings"])
    ok("real-model records schema-valid and floor-compliant")

"""Batch inference over page images, emitting pipeline-compatible files.

The worker never shares memory with the pipeline: it writes one line per page
in the predictions wire format plus one embeddings sidecar per page, and the
pipeline reads them back through its file detector and embedding store. Crop
paths inside the sidecars follow the pipeline's crop naming contract so the
vectors line up with the crops the pipeline saves.

Stub mode replays the pipeline's deterministic stub detector and derives
pseudo-embedding vectors from a stable hash of each crop path, so integration
tests run without any model and are byte-identical across runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from newsvis.detect import (
    HEADLINE_CLASS,
    Prediction,
    StubDetector,
    sort_canonical,
    write_prediction_record,
)
from newsvis.pipeline import (
    crop,
    crop_relative_path,
    downsample,
    eligible_for_embedding,
    embeddings_relative_path,
)

MODES = ("detect", "embed", "both")
EMBED_DIMS = {"r18": 512, "r50": 2048}


@dataclass
class WorkerJob:
    pages: list[tuple[str, Path]]          # (page_id, image path)
    mode: str = "both"
    model_ref: str | None = None           # None -> stub detector
    label_map: dict[int, int] | None = None
    score_floor: float = 0.05
    embed_floor: float = 0.5
    downsample_factor: int = 6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 <= self.score_floor <= self.embed_floor <= 1.0:
            raise ValueError("floors must satisfy 0 <= score_floor <= embed_floor <= 1")


@dataclass
class WorkerResult:
    processed: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)
    prediction_lines: int = 0
    embedding_records: int = 0


def read_image_list(path) -> list[tuple[str, Path]]:
    """One page per line: `page_id<TAB>image_path`, or a bare path that is its
    own page id. Blank lines and #-comments are ignored."""
    pages = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            page_id, image_path = line.split("\t", 1)
            pages.append((page_id.strip(), Path(image_path.strip())))
        else:
            pages.append((line, Path(line)))
    return pages


def stub_embedding(crop_path: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding keyed by the crop path."""
    seed = int.from_bytes(hashlib.sha256(crop_path.encode("utf-8")).digest()[:8], "big")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return [round(float(v), 6) for v in vec]


class StubEmbedder:
    def embed(self, crop_image, crop_path: str) -> tuple[list[float], list[float]]:
        return stub_embedding(crop_path, EMBED_DIMS["r18"]), stub_embedding(
            crop_path, EMBED_DIMS["r50"]
        )


def _detect_page(job: WorkerJob, detector, page_id: str, image) -> list[Prediction]:
    preds = detector.detect(page_id, image)
    return sort_canonical(p for p in preds if p.score >= job.score_floor)


def _embeddings_record(job: WorkerJob, embedder, page_id: str, image,
                       preds: list[Prediction]) -> dict:
    indices = eligible_for_embedding(
        [p.score for p in preds], [p.class_id for p in preds], job.embed_floor
    )
    r18_rows, r50_rows, crop_paths = [], [], []
    for idx in indices:
        pred = preds[idx]
        piece = crop(image, pred.box)
        if piece is None:
            continue
        rel = crop_relative_path(page_id, idx, pred.class_id)
        r18, r50 = embedder.embed(piece, rel)
        r18_rows.append(r18)
        r50_rows.append(r50)
        crop_paths.append(rel)
    return {
        "filepath": page_id,
        "resnet_50_embeddings": r50_rows,
        "resnet_18_embeddings": r18_rows,
        "visual_content_filepaths": crop_paths,
    }


def _build_backends(job: WorkerJob):
    if job.model_ref is None:
        return StubDetector(), StubEmbedder()
    from . import models

    detector = models.TorchDetector(job.model_ref, job.label_map)
    embedder = models.TorchEmbedder()
    return detector, embedder


def run_worker(job: WorkerJob, out_path=None, emb_out=None) -> WorkerResult:
    """Process every page; write predictions JSONL and embedding sidecars.

    A page that fails to load or infer is recorded in the failure list and
    skipped; everything else keeps going. Model load failures propagate: a
    worker with no working model is not a partial success.
    """
    if job.mode in ("detect", "both") and out_path is None:
        raise ValueError("out_path required in detect/both mode")
    if job.mode in ("embed", "both") and emb_out is None:
        raise ValueError("emb_out required in embed/both mode")

    detector, embedder = _build_backends(job)
    result = WorkerResult()
    lines: list[str] = []
    sidecars: list[tuple[Path, dict]] = []

    for page_id, image_path in job.pages:
        try:
            with Image.open(image_path) as raw:
                image = raw.convert("RGB")
            image = downsample(image, job.downsample_factor)
            preds = _detect_page(job, detector, page_id, image)
            if job.mode in ("detect", "both"):
                lines.append(write_prediction_record(page_id, preds))
            if job.mode in ("embed", "both"):
                record = _embeddings_record(job, embedder, page_id, image, preds)
                sidecars.append((Path(emb_out) / embeddings_relative_path(page_id), record))
        except Exception as exc:
            result.failures.append((page_id, f"{type(exc).__name__}: {exc}"))
            continue
        result.processed.append(page_id)

    if job.mode in ("detect", "both"):
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        result.prediction_lines = len(lines)
    for path, record in sidecars:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record), encoding="utf-8")
    result.embedding_records = len(sidecars)
    return result


def write_failure_report(result: WorkerResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["page_id\tmessage"]
    lines += ["{}\t{}".format(page_id, " ".join(message.split()))
              for page_id, message in result.failures]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

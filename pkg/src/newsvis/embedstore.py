"""Per-page embedding records and exact top-k nearest-neighbor queries.

Embeddings ship in sidecar JSON files named like the page record with an
``_embeddings`` suffix, holding one 512-dim vector (ResNet-18 family) and one
2,048-dim vector (ResNet-50 family) per retained crop. Search is exact
brute force over precomputed norms; approximate indexes can slot in behind
the same query interface later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

EXPECTED_DIMS = {"r18": 512, "r50": 2048}
EMBEDDINGS_SUFFIX = "_embeddings.json"


@dataclass
class EmbeddingRecord:
    filepath: str
    resnet_50_embeddings: list[list[float]]
    resnet_18_embeddings: list[list[float]]
    visual_content_filepaths: list[str]


@dataclass
class LoadReport:
    loaded_vectors: int = 0
    rejected_records: int = 0
    zero_vectors: int = 0
    messages: list[str] = field(default_factory=list)


@dataclass
class EmbeddingStore:
    which: str
    vectors: np.ndarray                 # (n, dim) float64
    norms: np.ndarray                   # (n,)
    crop_paths: list[str]
    zero_mask: np.ndarray               # (n,) bool; True = excluded from cosine
    report: LoadReport

    def __len__(self) -> int:
        return len(self.crop_paths)

    def vector_for(self, crop_path: str) -> np.ndarray | None:
        try:
            return self.vectors[self.crop_paths.index(crop_path)]
        except ValueError:
            return None


@dataclass
class QueryResult:
    entries: list[tuple[str, float]]    # (crop filepath, similarity), best first
    ids: list[int] = field(default_factory=list)


def record_from_dict(obj: dict) -> EmbeddingRecord:
    return EmbeddingRecord(
        filepath=obj["filepath"],
        resnet_50_embeddings=obj.get("resnet_50_embeddings", []),
        resnet_18_embeddings=obj.get("resnet_18_embeddings", []),
        visual_content_filepaths=obj.get("visual_content_filepaths", []),
    )


def read_embeddings_dir(root) -> Iterator[EmbeddingRecord]:
    """Yield records from every *_embeddings.json under root, sorted by path."""
    root = Path(root)
    for path in sorted(root.rglob(f"*{EMBEDDINGS_SUFFIX}")):
        with open(path, "r", encoding="utf-8") as fh:
            yield record_from_dict(json.load(fh))


def load(records: Iterable[EmbeddingRecord], which: str = "r18") -> EmbeddingStore:
    """Build a contiguous vector index with stable ids in stream order.

    A record whose chosen-family vectors have the wrong dimensionality, or
    whose lists are misaligned, is rejected whole with a diagnostic. Zero
    vectors are retained but flagged: cosine similarity is undefined for
    them, so cosine queries skip them.
    """
    if which not in EXPECTED_DIMS:
        raise ValueError(f"unknown embedding family {which!r}; expected one of {sorted(EXPECTED_DIMS)}")
    dim = EXPECTED_DIMS[which]

    report = LoadReport()
    rows: list[list[float]] = []
    crop_paths: list[str] = []
    for record in records:
        vectors = record.resnet_18_embeddings if which == "r18" else record.resnet_50_embeddings
        if len(vectors) != len(record.visual_content_filepaths):
            report.rejected_records += 1
            report.messages.append(
                f"{record.filepath}: {len(vectors)} vectors but "
                f"{len(record.visual_content_filepaths)} crop paths"
            )
            continue
        if any(len(v) != dim for v in vectors):
            report.rejected_records += 1
            report.messages.append(f"{record.filepath}: vector dimension != {dim}")
            continue
        rows.extend(vectors)
        crop_paths.extend(record.visual_content_filepaths)

    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, dim))
    norms = np.linalg.norm(matrix, axis=1) if len(matrix) else np.zeros(0)
    zero_mask = norms == 0.0
    report.loaded_vectors = len(crop_paths)
    report.zero_vectors = int(zero_mask.sum())
    return EmbeddingStore(
        which=which,
        vectors=matrix,
        norms=norms,
        crop_paths=crop_paths,
        zero_mask=zero_mask,
        report=report,
    )


def query_topk(
    store: EmbeddingStore, query: Sequence[float], k: int, metric: str = "cosine"
) -> QueryResult:
    """Exact top-k, larger similarity = more similar for both metrics.

    Cosine reports cosine similarity (descending); euclidean reports the
    negated distance so the ordering convention stays uniform. Ties break by
    ascending id, which is stable across reloads of the same stream.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if metric not in ("cosine", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")
    if len(store) == 0:
        return QueryResult(entries=[])
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (store.vectors.shape[1],):
        raise ValueError(f"query dimension {q.shape} does not match store ({store.vectors.shape[1]},)")

    if metric == "cosine":
        q_norm = float(np.linalg.norm(q))
        if q_norm == 0.0:
            raise ValueError("cosine similarity undefined for a zero query vector")
        sims = store.vectors @ q
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(store.zero_mask, -np.inf, sims / (store.norms * q_norm))
    else:
        diffs = store.vectors - q
        sims = -np.sqrt(np.einsum("ij,ij->i", diffs, diffs))

    order = np.argsort(-sims, kind="stable")
    if metric == "cosine":
        order = order[~store.zero_mask[order]]
    top = order[:k]
    return QueryResult(
        entries=[(store.crop_paths[i], float(sims[i])) for i in top],
        ids=[int(i) for i in top],
    )

"""Conversion of crowdsourced bounding-box exports into COCO-format datasets.

The raw export layout is described by a small mapping config (dotted paths
into each record) so exports from other crowdsourcing platforms can be
adapted without code changes. Category ids follow the COCO convention of
contiguous positive integers 1-7; the wire-format class codes are the same
order shifted down by one (0-6).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .detect import CLASS_NAMES
from .evalmap import GroundTruth
from .geometry import InvalidBoxError, NormBox

# Label vocabulary of the annotation exports; aliases cover the two spellings
# seen in the wild for class 3.
CATEGORY_ALIASES = {
    "Photograph": 0,
    "Illustration": 1,
    "Map": 2,
    "Comics/Cartoon": 3,
    "Comic/Cartoon": 3,
    "Editorial Cartoon": 4,
    "Headline": 5,
    "Advertisement": 6,
}

# Dotted paths into one region record of the raw export.
DEFAULT_MAPPING = {
    "version": 1,
    "records": "data",
    "page": "location.standard",
    "x": "region.x",
    "y": "region.y",
    "width": "region.width",
    "height": "region.height",
    "category": "annotations.0.category",
}


@dataclass(frozen=True)
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class CocoAnnotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    area: float
    iscrowd: int = 0


@dataclass
class CocoDataset:
    images: list[CocoImage] = field(default_factory=list)
    annotations: list[CocoAnnotation] = field(default_factory=list)
    categories: list[dict] = field(default_factory=lambda: default_categories())

    def to_dict(self) -> dict:
        return {
            "images": [
                {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height}
                for im in self.images
            ],
            "annotations": [
                {
                    "id": a.id,
                    "image_id": a.image_id,
                    "category_id": a.category_id,
                    "bbox": list(a.bbox),
                    "area": a.area,
                    "iscrowd": a.iscrowd,
                }
                for a in self.annotations
            ],
            "categories": [dict(c) for c in self.categories],
        }


@dataclass
class ConvertReport:
    category_counts: dict[str, int] = field(default_factory=dict)
    rejections: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def default_categories() -> list[dict]:
    return [{"id": code + 1, "name": name} for code, name in sorted(CLASS_NAMES.items())]


def _dig(record: Any, dotted: str):
    cur = record
    for part in dotted.split("."):
        if isinstance(cur, Mapping):
            if part not in cur:
                return None
            cur = cur[part]
        elif isinstance(cur, Sequence) and not isinstance(cur, str) and part.isdigit():
            idx = int(part)
            if idx >= len(cur):
                return None
            cur = cur[idx]
        else:
            return None
    return cur


def convert(
    raw_annotations: Mapping,
    image_dims: Mapping[str, tuple[int, int]],
    mapping: Mapping | None = None,
) -> tuple[CocoDataset, ConvertReport]:
    """Turn a raw annotation export into a COCO dataset.

    ``image_dims`` maps page identifiers (as found via the mapping's page
    path) to (width, height) pixels; every referenced page must be present.
    Unknown category labels are rejected with a diagnostic; boxes poking past
    the image edge are clamped with a warning.
    """
    mapping = dict(DEFAULT_MAPPING, **(mapping or {}))
    records = _dig(raw_annotations, mapping["records"])
    if records is None:
        records = []

    dataset = CocoDataset()
    report = ConvertReport(category_counts={name: 0 for name in CLASS_NAMES.values()})
    image_ids: dict[str, int] = {}

    for idx, record in enumerate(records):
        page = _dig(record, mapping["page"])
        label = _dig(record, mapping["category"])
        coords = [_dig(record, mapping[k]) for k in ("x", "y", "width", "height")]
        if page is None or label is None or any(c is None for c in coords):
            report.rejections.append(f"record {idx}: missing page/category/region fields")
            continue
        if label not in CATEGORY_ALIASES:
            report.rejections.append(f"record {idx}: unknown category label {label!r}")
            continue
        if page not in image_dims:
            raise ValueError(f"record {idx}: no image dimensions for page {page!r}")
        img_w, img_h = image_dims[page]

        x, y, w, h = (float(c) for c in coords)
        x2, y2 = x + w, y + h
        cx, cy = max(0.0, min(x, img_w)), max(0.0, min(y, img_h))
        cx2, cy2 = max(0.0, min(x2, img_w)), max(0.0, min(y2, img_h))
        if (cx, cy, cx2, cy2) != (x, y, x2, y2):
            report.warnings.append(f"record {idx}: box clamped to image bounds of {page!r}")
        if cx2 - cx <= 0 or cy2 - cy <= 0:
            report.rejections.append(f"record {idx}: degenerate box after clamping")
            continue

        if page not in image_ids:
            image_ids[page] = len(image_ids) + 1
            dataset.images.append(
                CocoImage(id=image_ids[page], file_name=page, width=img_w, height=img_h)
            )
        category_id = CATEGORY_ALIASES[label] + 1
        dataset.annotations.append(
            CocoAnnotation(
                id=len(dataset.annotations) + 1,
                image_id=image_ids[page],
                category_id=category_id,
                bbox=(cx, cy, cx2 - cx, cy2 - cy),
                area=(cx2 - cx) * (cy2 - cy),
            )
        )
        canonical = CLASS_NAMES[CATEGORY_ALIASES[label]]
        report.category_counts[canonical] = report.category_counts.get(canonical, 0) + 1

    return dataset, report


def parse_coco(payload: Mapping) -> CocoDataset:
    """Load a COCO dict (as read from JSON) into a CocoDataset."""
    images = [
        CocoImage(
            id=int(im["id"]),
            file_name=str(im["file_name"]),
            width=int(im["width"]),
            height=int(im["height"]),
        )
        for im in payload.get("images", [])
    ]
    annotations = []
    for a in payload.get("annotations", []):
        bbox = tuple(float(v) for v in a["bbox"])
        annotations.append(
            CocoAnnotation(
                id=int(a["id"]),
                image_id=int(a["image_id"]),
                category_id=int(a["category_id"]),
                bbox=bbox,
                area=float(a.get("area", bbox[2] * bbox[3])),
                iscrowd=int(a.get("iscrowd", 0)),
            )
        )
    categories = [dict(c) for c in payload.get("categories", [])] or default_categories()
    return CocoDataset(images=images, annotations=annotations, categories=categories)


def load_coco(path) -> CocoDataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_coco(json.load(fh))


def category_counts(dataset: CocoDataset) -> dict[str, int]:
    names = {c["id"]: c["name"] for c in dataset.categories}
    counts = {name: 0 for name in names.values()}
    for a in dataset.annotations:
        counts[names[a.category_id]] += 1
    return counts


def split(
    dataset: CocoDataset, val_fraction: float, seed: int
) -> tuple[CocoDataset, CocoDataset]:
    """Deterministic train/validation partition at image granularity.

    All annotations of a page travel together, preventing leakage between the
    halves. Validation size is round(val_fraction * image count), half up.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be strictly between 0 and 1")
    if len(dataset.images) < 2:
        raise ValueError("need at least 2 images to split")

    ids = sorted(im.id for im in dataset.images)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_val = int(val_fraction * len(ids) + 0.5)
    val_ids = set(ids[:n_val])

    def subset(selected: set[int]) -> CocoDataset:
        return CocoDataset(
            images=[im for im in dataset.images if im.id in selected],
            annotations=[a for a in dataset.annotations if a.image_id in selected],
            categories=[dict(c) for c in dataset.categories],
        )

    all_ids = set(ids)
    return subset(all_ids - val_ids), subset(val_ids)


def to_ground_truths(dataset: CocoDataset) -> list[GroundTruth]:
    """COCO annotations as normalized ground-truth boxes keyed by file name."""
    by_id = {im.id: im for im in dataset.images}
    gts = []
    for a in dataset.annotations:
        im = by_id[a.image_id]
        x, y, w, h = a.bbox
        try:
            box = NormBox.from_raw(x / im.width, y / im.height, (x + w) / im.width, (y + h) / im.height)
        except InvalidBoxError as exc:
            raise ValueError(f"annotation {a.id}: {exc}") from exc
        gts.append(GroundTruth(page_id=im.file_name, box=box, class_id=a.category_id - 1))
    return gts

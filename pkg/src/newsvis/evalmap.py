"""COCO-standard average-precision evaluation for box detections.

Average precision for one category and one IoU threshold: sort all
predictions by score, greedily match each against at most one ground truth,
build the precision-recall curve, replace it by its monotonically decreasing
envelope, and average the precision interpolated at 101 recall values
(0.00, 0.01, ..., 1.00). Category AP averages over the 10 IoU thresholds
0.50:0.05:0.95; mAP averages over categories that have ground truth.

The one-class score relabels every prediction and ground truth to a single
category before evaluating, isolating localization error from classification
error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .detect import Prediction, sort_canonical
from .geometry import NormBox, iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_SAMPLES = np.array([i / 100 for i in range(101)])


@dataclass(frozen=True)
class GroundTruth:
    page_id: str
    box: NormBox
    class_id: int


@dataclass
class ApResult:
    per_category_ap: dict[int, float]
    map_value: float
    one_class_ap: float
    per_category_gt_counts: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "map": self.map_value,
            "one_class_ap": self.one_class_ap,
            "per_category_ap": {str(k): v for k, v in sorted(self.per_category_ap.items())},
            "per_category_gt_counts": {
                str(k): v for k, v in sorted(self.per_category_gt_counts.items())
            },
        }


def match_at_threshold(
    preds: Sequence[Prediction], gts: Sequence[GroundTruth], iou_t: float
) -> list[tuple[Prediction, bool]]:
    """Greedy one-to-one matching on a single page and category.

    Predictions are visited in descending score order; each takes the
    still-unmatched ground truth of highest IoU provided that IoU reaches the
    threshold. Duplicate detections of one ground truth stay unmatched.
    """
    ordered = sort_canonical(preds)
    taken = [False] * len(gts)
    out = []
    for pred in ordered:
        best_idx = -1
        best_iou = 0.0
        for gi, gt in enumerate(gts):
            if taken[gi]:
                continue
            overlap = iou(pred.box, gt.box)
            if overlap < iou_t:
                continue
            if best_idx < 0 or overlap > best_iou:
                best_idx = gi
                best_iou = overlap
        if best_idx >= 0:
            taken[best_idx] = True
            out.append((pred, True))
        else:
            out.append((pred, False))
    return out


def average_precision(matches: Sequence[tuple[float, bool]], gt_count: int) -> float | None:
    """101-point interpolated AP from (score, matched) pairs across pages.

    Pairs are stably sorted by descending score (callers wanting a specific
    tie order pre-sort). Returns None when gt_count is zero: AP is undefined
    and the category is excluded from mAP.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be non-negative")
    if gt_count == 0:
        return None
    if not matches:
        return 0.0
    order = sorted(range(len(matches)), key=lambda i: (-matches[i][0], i))
    flags = np.array([matches[i][1] for i in order], dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / gt_count
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_SAMPLES, side="left")
    samples = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(samples.mean())


def _global_sort_key(item: tuple[str, Prediction, bool]):
    page_id, pred, _ = item
    return (-pred.score, page_id, pred.class_id, pred.box.x1, pred.box.y1,
            pred.box.x2, pred.box.y2)


def _category_ap(
    preds_by_page: Mapping[str, Sequence[Prediction]],
    gts_by_page: Mapping[str, Sequence[GroundTruth]],
    gt_count: int,
) -> float:
    """AP for one category averaged over the 10 IoU thresholds."""
    pages = sorted(set(preds_by_page) | set(gts_by_page))
    total = 0.0
    for iou_t in IOU_THRESHOLDS:
        collected: list[tuple[str, Prediction, bool]] = []
        for page in pages:
            page_matches = match_at_threshold(
                preds_by_page.get(page, ()), gts_by_page.get(page, ()), iou_t
            )
            collected.extend((page, pred, matched) for pred, matched in page_matches)
        collected.sort(key=_global_sort_key)
        ap = average_precision([(p.score, m) for _, p, m in collected], gt_count)
        total += ap if ap is not None else 0.0
    return total / len(IOU_THRESHOLDS)


def evaluate(
    preds_by_page: Mapping[str, Sequence[Prediction]], gts: Sequence[GroundTruth]
) -> ApResult:
    """Full evaluation: per-category AP, mAP, and merged one-class AP.

    Categories without ground truth are excluded from mAP rather than scored
    zero. Matching never crosses page boundaries.
    """
    if not gts:
        raise ValueError("no ground truth to evaluate against")

    gt_counts: dict[int, int] = {}
    for gt in gts:
        gt_counts[gt.class_id] = gt_counts.get(gt.class_id, 0) + 1

    per_category: dict[int, float] = {}
    for class_id, count in sorted(gt_counts.items()):
        cat_preds: dict[str, list[Prediction]] = {}
        for page, preds in preds_by_page.items():
            subset = [p for p in preds if p.class_id == class_id]
            if subset:
                cat_preds[page] = subset
        cat_gts: dict[str, list[GroundTruth]] = {}
        for gt in gts:
            if gt.class_id == class_id:
                cat_gts.setdefault(gt.page_id, []).append(gt)
        per_category[class_id] = _category_ap(cat_preds, cat_gts, count)

    merged_preds = {
        page: [Prediction(box=p.box, score=p.score, class_id=0) for p in preds]
        for page, preds in preds_by_page.items()
    }
    merged_gts = [GroundTruth(page_id=g.page_id, box=g.box, class_id=0) for g in gts]
    one_class = _category_ap(
        merged_preds,
        _group_gts(merged_gts),
        len(merged_gts),
    )

    return ApResult(
        per_category_ap=per_category,
        map_value=sum(per_category.values()) / len(per_category),
        one_class_ap=one_class,
        per_category_gt_counts=gt_counts,
    )


def _group_gts(gts: Sequence[GroundTruth]) -> dict[str, list[GroundTruth]]:
    grouped: dict[str, list[GroundTruth]] = {}
    for gt in gts:
        grouped.setdefault(gt.page_id, []).append(gt)
    return grouped

"""Corpus statistics over page records, and filtered subset export.

Statistics are computed as a streaming fold: partial accumulators from
parallel shards merge associatively, so sharded runs and single-pass runs
agree. Coverage is the exact union area of one class's boxes on a page
(overlaps counted once), averaged over all pages of the year.
"""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .detect import CLASS_NAMES, HEADLINE_CLASS, SAVE_FLOOR
from .geometry import InvalidBoxError, NormBox, union_area
from .pipeline import PageRecord

DEFAULT_THRESHOLDS = (0.5, 0.7, 0.9)


@dataclass
class StatsReport:
    thresholds: tuple[float, ...]
    counts: dict[tuple[int, float], int]
    yearly_counts: dict[tuple[int, int, float], int]
    yearly_avg_per_page: dict[tuple[int, int, float], float]
    yearly_coverage: dict[tuple[int, int, float], float]
    pages_per_year: dict[int, int]
    skipped_records: int = 0

    def years(self) -> list[int]:
        return sorted(self.pages_per_year)


class StatsAccumulator:
    """Mergeable partial statistics; one instance per shard."""

    def __init__(self, thresholds: Sequence[float] = DEFAULT_THRESHOLDS):
        self.thresholds = tuple(sorted(thresholds))
        self.counts: dict[tuple[int, float], int] = {}
        self.yearly_counts: dict[tuple[int, int, float], int] = {}
        self.coverage_sums: dict[tuple[int, int, float], float] = {}
        self.pages_per_year: dict[int, int] = {}
        self.skipped = 0

    def update(self, record: PageRecord) -> None:
        try:
            year = int(record.pub_date[:4])
            boxes = [NormBox.from_raw(*b) for b in record.boxes]
        except (ValueError, TypeError, InvalidBoxError):
            self.skipped += 1
            return
        self.pages_per_year[year] = self.pages_per_year.get(year, 0) + 1
        for threshold in self.thresholds:
            for class_id in CLASS_NAMES:
                class_boxes = [
                    box
                    for box, score, cls in zip(boxes, record.scores, record.pred_classes)
                    if cls == class_id and score >= threshold
                ]
                if class_boxes:
                    self.counts[class_id, threshold] = (
                        self.counts.get((class_id, threshold), 0) + len(class_boxes)
                    )
                    key = (year, class_id, threshold)
                    self.yearly_counts[key] = self.yearly_counts.get(key, 0) + len(class_boxes)
                    self.coverage_sums[key] = (
                        self.coverage_sums.get(key, 0.0) + union_area(class_boxes)
                    )

    def merge(self, other: "StatsAccumulator") -> None:
        if other.thresholds != self.thresholds:
            raise ValueError("cannot merge accumulators with different thresholds")
        for key, value in other.counts.items():
            self.counts[key] = self.counts.get(key, 0) + value
        for key, value in other.yearly_counts.items():
            self.yearly_counts[key] = self.yearly_counts.get(key, 0) + value
        for key, value in other.coverage_sums.items():
            self.coverage_sums[key] = self.coverage_sums.get(key, 0.0) + value
        for year, pages in other.pages_per_year.items():
            self.pages_per_year[year] = self.pages_per_year.get(year, 0) + pages
        self.skipped += other.skipped

    def finalize(self) -> StatsReport:
        avg: dict[tuple[int, int, float], float] = {}
        coverage: dict[tuple[int, int, float], float] = {}
        for year, pages in self.pages_per_year.items():
            for class_id in CLASS_NAMES:
                for threshold in self.thresholds:
                    key = (year, class_id, threshold)
                    avg[key] = self.yearly_counts.get(key, 0) / pages
                    coverage[key] = self.coverage_sums.get(key, 0.0) / pages
        counts = {
            (class_id, threshold): self.counts.get((class_id, threshold), 0)
            for class_id in CLASS_NAMES
            for threshold in self.thresholds
        }
        yearly_counts = {key: self.yearly_counts.get(key, 0) for key in avg}
        return StatsReport(
            thresholds=self.thresholds,
            counts=counts,
            yearly_counts=yearly_counts,
            yearly_avg_per_page=avg,
            yearly_coverage=coverage,
            pages_per_year=dict(self.pages_per_year),
            skipped_records=self.skipped,
        )


def compute_stats(
    records: Iterable[PageRecord], thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> StatsReport:
    acc = StatsAccumulator(thresholds)
    for record in records:
        acc.update(record)
    return acc.finalize()


def report_to_json(report: StatsReport) -> dict:
    return {
        "thresholds": list(report.thresholds),
        "skipped_records": report.skipped_records,
        "pages_per_year": {str(y): n for y, n in sorted(report.pages_per_year.items())},
        "counts": [
            {
                "class_id": class_id,
                "class_name": CLASS_NAMES[class_id],
                "threshold": threshold,
                "count": count,
            }
            for (class_id, threshold), count in sorted(report.counts.items())
        ],
        "yearly": [
            {
                "year": year,
                "class_id": class_id,
                "class_name": CLASS_NAMES[class_id],
                "threshold": threshold,
                "count": report.yearly_counts[year, class_id, threshold],
                "avg_per_page": report.yearly_avg_per_page[year, class_id, threshold],
                "coverage": report.yearly_coverage[year, class_id, threshold],
            }
            for (year, class_id, threshold) in sorted(report.yearly_avg_per_page)
        ],
    }


def write_report_csv(report: StatsReport, path) -> None:
    """One row per (year, class, threshold)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["year", "class_id", "class_name", "threshold", "count", "avg_per_page", "coverage"]
        )
        for (year, class_id, threshold) in sorted(report.yearly_avg_per_page):
            writer.writerow([
                year,
                class_id,
                CLASS_NAMES[class_id],
                threshold,
                report.yearly_counts[year, class_id, threshold],
                f"{report.yearly_avg_per_page[year, class_id, threshold]:.6f}",
                f"{report.yearly_coverage[year, class_id, threshold]:.6f}",
            ])


@dataclass(frozen=True)
class SubsetFilter:
    date_start: str
    date_end: str
    classes: frozenset[int]
    min_score: float

    def __post_init__(self):
        if self.date_start > self.date_end:
            raise ValueError("date_start must not exceed date_end")
        if not SAVE_FLOOR <= self.min_score <= 1.0:
            raise ValueError(f"min_score must lie in [{SAVE_FLOOR}, 1]")
        unknown = set(self.classes) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"unknown class codes {sorted(unknown)}")

    def matches_date(self, pub_date: str) -> bool:
        return self.date_start <= pub_date <= self.date_end


@dataclass
class SubsetResult:
    exported: int = 0
    index_rows: int = 0
    gaps: list[str] = field(default_factory=list)


def export_subset(
    records: Iterable[PageRecord], crops_root, subset_filter: SubsetFilter, dest
) -> SubsetResult:
    """Copy matching crops plus an index of every prediction passing the filter.

    Missing crop files go into the gap report; the export keeps going. The
    destination receives crops/ (mirrored tree), index.csv, manifest.txt, and
    gaps.txt.
    """
    crops_root = Path(crops_root)
    dest = Path(dest)
    (dest / "crops").mkdir(parents=True, exist_ok=True)
    result = SubsetResult()
    copied: list[str] = []

    index_path = dest / "index.csv"
    with open(index_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "filepath", "pub_date", "x1", "y1", "x2", "y2",
            "score", "class_id", "class_name", "crop_path", "ocr_text",
        ])
        for record in records:
            if not subset_filter.matches_date(record.pub_date):
                continue
            crop_iter = iter(record.visual_content_filepaths)
            for box, score, cls, words in zip(
                record.boxes, record.scores, record.pred_classes, record.ocr
            ):
                crop_rel = next(crop_iter, None) if cls != HEADLINE_CLASS else None
                if cls not in subset_filter.classes or score < subset_filter.min_score:
                    continue
                writer.writerow([
                    record.filepath, record.pub_date,
                    box[0], box[1], box[2], box[3],
                    score, cls, CLASS_NAMES[cls],
                    crop_rel or "", " ".join(words),
                ])
                result.index_rows += 1
                if crop_rel:
                    src = crops_root / crop_rel
                    if src.is_file():
                        target = dest / "crops" / crop_rel
                        target.parent.mkdir(parents=True, exist_ok=True)
                        shutil.copyfile(src, target)
                        copied.append(crop_rel)
                        result.exported += 1
                    else:
                        result.gaps.append(crop_rel)

    (dest / "manifest.txt").write_text(
        "\n".join(copied) + ("\n" if copied else ""), encoding="utf-8"
    )
    (dest / "gaps.txt").write_text(
        "\n".join(result.gaps) + ("\n" if result.gaps else ""), encoding="utf-8"
    )
    return result


def write_report_json(report: StatsReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")

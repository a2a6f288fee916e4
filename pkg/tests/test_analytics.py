import csv
import random

import pytest

from newsvis.analytics import (
    DEFAULT_THRESHOLDS,
    StatsAccumulator,
    SubsetFilter,
    compute_stats,
    export_subset,
    report_to_json,
    write_report_csv,
    write_report_json,
)
from newsvis.detect import CLASS_NAMES
from newsvis.pipeline import PageRecord

from oracles import raster_union_area

PHOTO, MAP, HEADLINE, AD = 0, 2, 5, 6


def page(filepath, pub_date, rows, with_crops=True):
    """rows: (box4, score, class_id). Builds an aligned PageRecord."""
    crops = []
    for i, (_, _, cls) in enumerate(rows):
        if cls != HEADLINE:
            crops.append(f"{filepath.rsplit('.', 1)[0]}_crop_{i}.jpg" if with_crops else None)
    return PageRecord(
        filepath=filepath,
        pub_date=pub_date,
        boxes=[list(r[0]) for r in rows],
        scores=[r[1] for r in rows],
        pred_classes=[r[2] for r in rows],
        ocr=[["word"] for _ in rows],
        visual_content_filepaths=crops,
    )


def random_records(rng, n_pages=12):
    records = []
    for i in range(n_pages):
        year = rng.choice([1880, 1900, 1910])
        rows = []
        for _ in range(rng.randint(0, 6)):
            x1 = round(rng.uniform(0, 0.8), 3)
            y1 = round(rng.uniform(0, 0.8), 3)
            box = (x1, y1, round(x1 + rng.uniform(0.05, 0.2), 3),
                   round(y1 + rng.uniform(0.05, 0.2), 3))
            rows.append((box, round(rng.uniform(0.05, 1.0), 4), rng.randrange(7)))
        records.append(page(f"b/sn{i}/{year}-06-01/ed-1/seq-1.jpg", f"{year}-06-01", rows))
    return records


class TestComputeStats:
    def test_worked_two_page_example(self):
        records = [
            page("b/snA/1900-01-05/ed-1/seq-1.jpg", "1900-01-05", [
                ((0.1, 0.1, 0.3, 0.3), 0.95, PHOTO),
                ((0.5, 0.5, 0.7, 0.7), 0.6, PHOTO),
            ]),
            page("b/snB/1900-02-01/ed-1/seq-1.jpg", "1900-02-01", []),
        ]
        report = compute_stats(records, (0.5, 0.7, 0.9))
        assert report.counts[PHOTO, 0.9] == 1
        assert report.counts[PHOTO, 0.7] == 1
        assert report.counts[PHOTO, 0.5] == 2
        assert report.yearly_avg_per_page[1900, PHOTO, 0.5] == 1.0
        assert report.yearly_avg_per_page[1900, PHOTO, 0.9] == 0.5
        assert report.pages_per_year == {1900: 2}

    def test_coverage_uses_union_area(self):
        boxes = [(0.0, 0.0, 0.5, 1.0), (0.25, 0.0, 0.75, 1.0)]
        records = [page("b/sn/1900-01-01/e/s.jpg", "1900-01-01", [
            (boxes[0], 0.9, AD), (boxes[1], 0.8, AD),
        ])]
        report = compute_stats(records, (0.5,))
        assert report.yearly_coverage[1900, AD, 0.5] == pytest.approx(0.75, abs=1e-12)
        assert report.yearly_coverage[1900, AD, 0.5] == pytest.approx(
            raster_union_area(boxes, n=200), abs=2e-3
        )

    def test_empty_stream(self):
        report = compute_stats([], (0.5, 0.7, 0.9))
        assert all(v == 0 for v in report.counts.values())
        assert report.pages_per_year == {}
        assert report.yearly_avg_per_page == {}

    def test_bad_pub_date_skipped_and_tallied(self):
        records = [
            page("ok/1900-01-01/s.jpg", "1900-01-01", []),
            page("bad/s.jpg", "undated", []),
        ]
        report = compute_stats(records)
        assert report.skipped_records == 1
        assert report.pages_per_year == {1900: 1}

    def test_monotone_in_threshold(self):
        rng = random.Random(31337)
        report = compute_stats(random_records(rng), (0.5, 0.7, 0.9))
        for class_id in CLASS_NAMES:
            assert (report.counts[class_id, 0.5]
                    >= report.counts[class_id, 0.7]
                    >= report.counts[class_id, 0.9])
            for year in report.pages_per_year:
                assert (report.yearly_coverage[year, class_id, 0.5]
                        >= report.yearly_coverage[year, class_id, 0.7]
                        >= report.yearly_coverage[year, class_id, 0.9])
                assert (report.yearly_avg_per_page[year, class_id, 0.5]
                        >= report.yearly_avg_per_page[year, class_id, 0.7]
                        >= report.yearly_avg_per_page[year, class_id, 0.9])

    def test_counts_sum_to_total(self):
        rng = random.Random(7)
        records = random_records(rng)
        report = compute_stats(records, (0.5,))
        total = sum(
            1 for r in records for s in r.scores if s >= 0.5
        )
        assert sum(report.counts[c, 0.5] for c in CLASS_NAMES) == total

    def test_order_independent(self):
        rng = random.Random(11)
        records = random_records(rng)
        forward = compute_stats(records)
        backward = compute_stats(list(reversed(records)))
        assert forward == backward

    def test_sharded_merge_matches_single_pass(self):
        rng = random.Random(13)
        records = random_records(rng)
        single = compute_stats(records)
        left = StatsAccumulator(DEFAULT_THRESHOLDS)
        right = StatsAccumulator(DEFAULT_THRESHOLDS)
        for i, record in enumerate(records):
            (left if i % 2 == 0 else right).update(record)
        left.merge(right)
        assert left.finalize() == single

    def test_coverage_in_unit_interval(self):
        rng = random.Random(17)
        report = compute_stats(random_records(rng))
        assert all(0.0 <= v <= 1.0 for v in report.yearly_coverage.values())


class TestReportOutput:
    def test_csv_shape(self, tmp_path):
        rng = random.Random(3)
        report = compute_stats(random_records(rng), (0.5, 0.9))
        csv_path = tmp_path / "stats.csv"
        write_report_csv(report, csv_path)
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["year", "class_id", "class_name", "threshold",
                           "count", "avg_per_page", "coverage"]
        years = len(report.pages_per_year)
        assert len(rows) - 1 == years * len(CLASS_NAMES) * 2

    def test_json_report(self, tmp_path):
        report = compute_stats([page("b/1900-01-01/s.jpg", "1900-01-01", [])])
        write_report_json(report, tmp_path / "stats.json")
        payload = report_to_json(report)
        assert payload["pages_per_year"] == {"1900": 1}
        assert len(payload["counts"]) == len(CLASS_NAMES) * len(DEFAULT_THRESHOLDS)


class TestSubsetFilter:
    def test_min_score_floor_enforced(self):
        with pytest.raises(ValueError):
            SubsetFilter("1861-01-01", "1865-12-31", frozenset({MAP}), min_score=0.04)

    def test_date_order_enforced(self):
        with pytest.raises(ValueError):
            SubsetFilter("1865-01-01", "1861-12-31", frozenset({MAP}), min_score=0.5)

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            SubsetFilter("1861-01-01", "1865-12-31", frozenset({9}), min_score=0.5)


class TestExportSubset:
    def fixture_records(self, crops_root):
        rows_by_page = {
            "b/sn1/1862-03-01/ed-1/seq-1.jpg": [
                ((0.1, 0.1, 0.4, 0.4), 0.95, MAP),
                ((0.5, 0.5, 0.9, 0.9), 0.4, MAP),
            ],
            "b/sn1/1864-07-01/ed-1/seq-1.jpg": [
                ((0.2, 0.2, 0.6, 0.6), 0.92, MAP),
                ((0.1, 0.7, 0.5, 0.9), 0.95, PHOTO),
            ],
            "b/sn1/1880-01-01/ed-1/seq-1.jpg": [
                ((0.2, 0.2, 0.6, 0.6), 0.99, MAP),      # outside the date range
            ],
        }
        records = []
        for filepath, rows in rows_by_page.items():
            record = page(filepath, filepath.split("/")[2], rows)
            for rel in record.visual_content_filepaths:
                target = crops_root / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(b"jpegbytes")
            records.append(record)
        return records

    def civil_war_maps(self):
        return SubsetFilter("1861-01-01", "1865-12-31", frozenset({MAP}), min_score=0.9)

    def test_civil_war_maps_fixture(self, tmp_path):
        crops_root = tmp_path / "data"
        records = self.fixture_records(crops_root)
        result = export_subset(records, crops_root, self.civil_war_maps(), tmp_path / "subset")
        assert result.index_rows == 2
        assert result.exported == 2
        assert result.gaps == []
        with open(tmp_path / "subset" / "index.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert all(row["class_name"] == "Map" for row in rows)
        assert all(float(row["score"]) >= 0.9 for row in rows)
        manifest = (tmp_path / "subset" / "manifest.txt").read_text().splitlines()
        assert len(manifest) == 2
        for rel in manifest:
            assert (tmp_path / "subset" / "crops" / rel).is_file()

    def test_empty_match_still_valid(self, tmp_path):
        crops_root = tmp_path / "data"
        records = self.fixture_records(crops_root)
        nothing = SubsetFilter("1700-01-01", "1700-12-31", frozenset({MAP}), min_score=0.9)
        result = export_subset(records, crops_root, nothing, tmp_path / "subset")
        assert result.index_rows == 0
        assert result.exported == 0
        with open(tmp_path / "subset" / "index.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1    # header only

    def test_missing_crop_goes_to_gap_report(self, tmp_path):
        crops_root = tmp_path / "data"
        records = self.fixture_records(crops_root)
        missing = records[0].visual_content_filepaths[0]
        (crops_root / missing).unlink()
        result = export_subset(records, crops_root, self.civil_war_maps(), tmp_path / "subset")
        assert result.exported == 1
        assert result.gaps == [missing]
        assert missing in (tmp_path / "subset" / "gaps.txt").read_text()

    def test_headline_rows_have_no_crop(self, tmp_path):
        records = [page("b/sn1/1900-01-01/e/s.jpg", "1900-01-01",
                        [((0.1, 0.1, 0.9, 0.2), 0.95, HEADLINE)])]
        subset_filter = SubsetFilter("1900-01-01", "1900-12-31",
                                     frozenset({HEADLINE}), min_score=0.5)
        result = export_subset(records, tmp_path / "data", subset_filter, tmp_path / "subset")
        assert result.index_rows == 1
        assert result.exported == 0
        with open(tmp_path / "subset" / "index.csv") as fh:
            (row,) = list(csv.DictReader(fh))
        assert row["crop_path"] == ""
        assert row["ocr_text"] == "word"

"""Batch pipeline over a manifest of newspaper pages.

For each page: fetch the image and its sibling OCR XML, downsample, run the
detector, extract the OCR falling inside each predicted box, crop non-headline
content from the downsampled image, and emit a per-page JSON record. Failures
are routed to a failure manifest tagged with the stage that broke; the other
pages keep going.

Per-page outputs are written atomically (temp file, then rename) and depend
only on the page itself, so results are identical for any worker count.
"""

from __future__ import annotations

import datetime
import io
import json
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Callable, Sequence
from urllib.parse import urljoin

from PIL import Image

from . import alto
from .detect import CLASS_NAMES, HEADLINE_CLASS, Detector, Prediction, sort_canonical
from .geometry import NormBox, contains_point

IMAGE_EXTENSIONS = {".jp2", ".jpg", ".jpeg", ".png", ".tif", ".tiff"}
CONTAINMENT_POLICIES = ("center", "full", "any-overlap")
DATE_SEGMENT = re.compile(r"\d{4}-\d{2}-\d{2}")

PIPELINE_STAGES = ("metadata", "fetch", "decode", "detect", "ocr", "crop", "emit")


class PipelineError(Exception):
    pass


class ManifestError(PipelineError):
    pass


class MetadataError(PipelineError):
    pass


class FetchError(PipelineError):
    pass


class PageFailure(PipelineError):
    """Carries the stage tag for the failure manifest."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class Manifest:
    batch_name: str
    entries: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ManifestError("manifest entries must be unique")


@dataclass
class PageRecord:
    filepath: str
    pub_date: str
    boxes: list[list[float]]
    scores: list[float]
    pred_classes: list[int]
    ocr: list[list[str]]
    visual_content_filepaths: list[str | None]

    def to_dict(self) -> dict:
        return {
            "filepath": self.filepath,
            "pub_date": self.pub_date,
            "boxes": self.boxes,
            "scores": self.scores,
            "pred_classes": self.pred_classes,
            "ocr": self.ocr,
            "visual_content_filepaths": self.visual_content_filepaths,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PageRecord":
        return cls(
            filepath=obj["filepath"],
            pub_date=obj["pub_date"],
            boxes=obj["boxes"],
            scores=obj["scores"],
            pred_classes=obj["pred_classes"],
            ocr=obj["ocr"],
            visual_content_filepaths=obj["visual_content_filepaths"],
        )


@dataclass
class PipelineConfig:
    downsample_factor: int = 6
    save_floor: float = 0.05
    embed_floor: float = 0.5
    containment_policy: str = "center"
    worker_count: int = 1
    source: str = "."
    jpeg_quality: int = 90

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be a positive integer")
        if not 0.0 <= self.save_floor <= self.embed_floor <= 1.0:
            raise ValueError("floors must satisfy 0 <= save_floor <= embed_floor <= 1")
        if self.containment_policy not in CONTAINMENT_POLICIES:
            raise ValueError(f"containment_policy must be one of {CONTAINMENT_POLICIES}")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


@dataclass
class FailureEntry:
    entry: str
    stage: str
    message: str


@dataclass
class RunResult:
    batch_name: str
    success: list[str] = field(default_factory=list)
    failure: list[FailureEntry] = field(default_factory=list)


# --- manifest handling -------------------------------------------------------

def xml_sibling(entry: str) -> str:
    """OCR XML path paired with a page image path."""
    return str(PurePosixPath(entry).with_suffix(".xml"))


def build_manifest(source_root, batch_name: str) -> tuple[Manifest, list[str]]:
    """Scan a local corpus tree for page images with sibling OCR XML.

    Returns the manifest (deterministic lexicographic order) plus warnings
    for images lacking an XML partner. Remote sources cannot be scanned;
    manifests for those must be built from a local mirror or supplied.
    """
    if isinstance(source_root, str) and source_root.startswith(("http://", "https://")):
        raise ManifestError(
            "cannot scan an HTTP source for pages; build the manifest from a "
            "local mirror or provide a manifest file"
        )
    root = Path(source_root)
    if not root.is_dir():
        raise ManifestError(f"source root {root} is not a directory")

    entries = []
    warnings = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        rel = path.relative_to(root).as_posix()
        if (root / xml_sibling(rel)).is_file():
            entries.append(rel)
        else:
            warnings.append(f"{rel}: no sibling OCR XML, skipped")
    if not entries:
        warnings.append(f"batch {batch_name!r} is empty")
    return Manifest(batch_name=batch_name, entries=tuple(sorted(entries))), warnings


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# batch: {manifest.batch_name}"]
    lines.extend(manifest.entries)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path, batch_name: str | None = None) -> Manifest:
    path = Path(path)
    entries = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = re.match(r"#\s*batch:\s*(.+)", line)
            if match and batch_name is None:
                batch_name = match.group(1).strip()
            continue
        entries.append(line)
    return Manifest(batch_name=batch_name or path.stem, entries=tuple(entries))


def parse_pub_date(page_path: str) -> str:
    """Publication date from the corpus path convention (YYYY-MM-DD segment)."""
    invalid = None
    for segment in page_path.replace("\\", "/").split("/"):
        if not DATE_SEGMENT.fullmatch(segment):
            continue
        year, month, day = (int(part) for part in segment.split("-"))
        try:
            datetime.date(year, month, day)
        except ValueError:
            invalid = segment
            continue
        return segment
    if invalid:
        raise MetadataError(f"date segment {invalid!r} in {page_path!r} is not a calendar date")
    raise MetadataError(f"no YYYY-MM-DD segment in {page_path!r}")


# --- page sources ------------------------------------------------------------

class LocalSource:
    def __init__(self, root):
        self.root = Path(root)

    def fetch(self, entry: str) -> tuple[bytes, bytes]:
        try:
            image = (self.root / entry).read_bytes()
            xml = (self.root / xml_sibling(entry)).read_bytes()
        except OSError as exc:
            raise FetchError(str(exc)) from exc
        return image, xml


class HttpSource:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url if base_url.endswith("/") else base_url + "/"
        self.timeout = timeout

    def _get(self, rel: str) -> bytes:
        import requests

        try:
            resp = requests.get(urljoin(self.base_url, rel), timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise FetchError(str(exc)) from exc
        return resp.content

    def fetch(self, entry: str) -> tuple[bytes, bytes]:
        return self._get(entry), self._get(xml_sibling(entry))


def make_source(source: str):
    if source.startswith(("http://", "https://")):
        return HttpSource(source)
    return LocalSource(source)


# --- image operations --------------------------------------------------------

def _round_half_up(value: float) -> int:
    return int(value + 0.5)


def downsample(image: Image.Image, factor: int) -> Image.Image:
    """Integer-factor reduction with a box-filter average."""
    if factor == 1:
        return image
    width = max(1, image.width // factor)
    height = max(1, image.height // factor)
    return image.resize((width, height), Image.BOX)


def crop(image: Image.Image, box: NormBox) -> Image.Image | None:
    """Pixel crop [round(x1*W), round(x2*W)) x [round(y1*H), round(y2*H)).

    Returns None when the rounded rectangle is empty (sub-pixel box).
    """
    px1 = _round_half_up(box.x1 * image.width)
    px2 = _round_half_up(box.x2 * image.width)
    py1 = _round_half_up(box.y1 * image.height)
    py2 = _round_half_up(box.y2 * image.height)
    if px2 <= px1 or py2 <= py1:
        return None
    return image.crop((px1, py1, px2, py2))


def extract_ocr_in_box(page: alto.AltoPage, box: NormBox, policy: str = "center") -> list[str]:
    """Token texts whose containment test passes, in reading order."""
    if policy == "center":
        def included(t):
            cx, cy = t.box.center
            return contains_point(box, cx, cy)
    elif policy == "full":
        def included(t):
            return (box.x1 <= t.box.x1 and t.box.x2 <= box.x2
                    and box.y1 <= t.box.y1 and t.box.y2 <= box.y2)
    elif policy == "any-overlap":
        def included(t):
            return (t.box.x1 < box.x2 and t.box.x2 > box.x1
                    and t.box.y1 < box.y2 and t.box.y2 > box.y1)
    else:
        raise ValueError(f"unknown containment policy {policy!r}")
    return [t.text for t in page.tokens if included(t)]


def eligible_for_embedding(scores: Sequence[float], pred_classes: Sequence[int],
                           embed_floor: float = 0.5) -> list[int]:
    """Prediction indices that get embeddings: score >= floor, not a headline."""
    return [
        i for i, (score, cls) in enumerate(zip(scores, pred_classes))
        if score >= embed_floor and cls != HEADLINE_CLASS
    ]


# --- per-page processing -----------------------------------------------------

def _class_slug(class_id: int) -> str:
    return re.sub(r"[^a-z0-9]+", "_", CLASS_NAMES[class_id].lower()).strip("_")


def crop_relative_path(entry: str, index: int, class_id: int) -> str:
    """Naming contract for crop files: shared with external producers."""
    parent = PurePosixPath(entry).parent
    stem = PurePosixPath(entry).stem
    return str(parent / f"{stem}_crop_{index}_{_class_slug(class_id)}.jpg")


def record_path(out_root, entry: str) -> Path:
    return Path(out_root) / PurePosixPath(entry).with_suffix(".json")


def embeddings_relative_path(entry: str) -> str:
    """Sidecar naming: same base as the page record, _embeddings suffix."""
    base = PurePosixPath(entry).with_suffix("")
    return str(base.parent / f"{base.name}_embeddings.json")


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def process_page(
    entry: str,
    detector: Detector,
    config: PipelineConfig,
    source,
    out_root,
    detect_lock: threading.Lock | None = None,
) -> PageRecord:
    """Run one page end to end and persist its record and crops.

    Raises PageFailure with a stage tag on any error; nothing is persisted
    unless the whole page succeeded, so a crash never leaves partial output.
    """
    out_root = Path(out_root)

    try:
        pub_date = parse_pub_date(entry)
    except MetadataError as exc:
        raise PageFailure("metadata", str(exc)) from exc

    try:
        image_bytes, xml_bytes = source.fetch(entry)
    except FetchError as exc:
        raise PageFailure("fetch", str(exc)) from exc

    try:
        with Image.open(io.BytesIO(image_bytes)) as raw:
            image = raw.convert("RGB")
        image = downsample(image, config.downsample_factor)
    except Exception as exc:
        raise PageFailure("decode", f"{entry}: {exc}") from exc

    try:
        if detect_lock is not None:
            with detect_lock:
                preds = detector.detect(entry, image)
        else:
            preds = detector.detect(entry, image)
    except Exception as exc:
        raise PageFailure("detect", f"{entry}: {exc}") from exc
    preds = sort_canonical(p for p in preds if p.score >= config.save_floor)

    try:
        page = alto.parse_alto(xml_bytes, image.width, image.height)
        ocr = [extract_ocr_in_box(page, p.box, config.containment_policy) for p in preds]
    except alto.AltoError as exc:
        raise PageFailure("ocr", f"{entry}: {exc}") from exc

    # Crop non-headline content in memory first; files land only at emit time.
    crops: list[tuple[Path, bytes]] = []
    crop_paths: list[str | None] = []
    try:
        for idx, pred in enumerate(preds):
            if pred.class_id == HEADLINE_CLASS:
                continue
            piece = crop(image, pred.box)
            if piece is None:
                crop_paths.append(None)
                continue
            rel = crop_relative_path(entry, idx, pred.class_id)
            buf = io.BytesIO()
            piece.save(buf, format="JPEG", quality=config.jpeg_quality)
            crops.append((out_root / rel, buf.getvalue()))
            crop_paths.append(rel)
    except Exception as exc:
        raise PageFailure("crop", f"{entry}: {exc}") from exc

    record = PageRecord(
        filepath=entry,
        pub_date=pub_date,
        boxes=[p.box.as_list() for p in preds],
        scores=[p.score for p in preds],
        pred_classes=[p.class_id for p in preds],
        ocr=ocr,
        visual_content_filepaths=crop_paths,
    )

    try:
        for path, data in crops:
            _atomic_write(path, data)
        payload = json.dumps(record.to_dict(), ensure_ascii=False).encode("utf-8")
        _atomic_write(record_path(out_root, entry), payload)
    except OSError as exc:
        raise PageFailure("emit", f"{entry}: {exc}") from exc
    return record


def run(
    manifest: Manifest,
    detector: Detector,
    config: PipelineConfig,
    out_root,
    source=None,
    progress: Callable[[str, str], None] | None = None,
) -> RunResult:
    """Process every manifest entry; route failures, keep going.

    Every entry lands in exactly one of the success/failure lists, both kept
    in manifest order so output files are reproducible for any worker count.
    """
    source = source if source is not None else make_source(config.source)
    detect_lock = None if getattr(detector, "concurrent_safe", False) else threading.Lock()

    outcomes: list[FailureEntry | None] = [None] * len(manifest.entries)

    def work(index: int, entry: str):
        try:
            process_page(entry, detector, config, source, out_root, detect_lock)
        except PageFailure as exc:
            outcomes[index] = FailureEntry(entry=entry, stage=exc.stage, message=str(exc))
        except Exception as exc:  # defensive: unexpected bug in a stage
            outcomes[index] = FailureEntry(entry=entry, stage="internal", message=repr(exc))
        if progress is not None:
            progress(entry, "failed" if outcomes[index] else "ok")

    if config.worker_count == 1:
        for i, entry in enumerate(manifest.entries):
            work(i, entry)
    else:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            futures = [pool.submit(work, i, e) for i, e in enumerate(manifest.entries)]
            for future in futures:
                future.result()

    result = RunResult(batch_name=manifest.batch_name)
    for entry, outcome in zip(manifest.entries, outcomes):
        if outcome is None:
            result.success.append(entry)
        else:
            result.failure.append(outcome)
    return result


def write_run_manifests(result: RunResult, out_root) -> tuple[Path, Path]:
    """Success manifest (re-runnable) and stage-tagged failure manifest."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    success_path = out_root / f"{result.batch_name}_success_manifest.txt"
    failure_path = out_root / f"{result.batch_name}_failure_manifest.tsv"
    success_lines = [f"# batch: {result.batch_name}"] + result.success
    success_path.write_text("\n".join(success_lines) + "\n", encoding="utf-8")
    failure_lines = ["entry\tstage\tmessage"]
    failure_lines += [
        "{}\t{}\t{}".format(
            f.entry, f.stage, " ".join(f.message.split())    # keep the TSV one line per page
        )
        for f in result.failure
    ]
    failure_path.write_text("\n".join(failure_lines) + "\n", encoding="utf-8")
    return success_path, failure_path


def read_page_records(root) -> list[PageRecord]:
    """All per-page records under a pipeline output tree, sorted by path."""
    records = []
    for path in sorted(Path(root).rglob("*.json")):
        if path.name.endswith("_embeddings.json"):
            continue
        with open(path, "r", encoding="utf-8") as fh:
            records.append(PageRecord.from_dict(json.load(fh)))
    return records

"""Detector abstraction, the 7-class vocabulary, and the predictions wire format.

The wire format is line-delimited JSON, one record per page:

    {"page_id": str, "boxes": [[x1,y1,x2,y2], ...], "scores": [...],
     "pred_classes": [...]}

with normalized box coordinates. It decouples model inference from the
pipeline: predictions may come from a file written by an external worker or
from the built-in deterministic stub.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol

from .geometry import InvalidBoxError, NormBox

# Integer class codes of the published per-page schema.
CLASS_NAMES = {
    0: "Photograph",
    1: "Illustration",
    2: "Map",
    3: "Comics/Cartoon",
    4: "Editorial Cartoon",
    5: "Headline",
    6: "Advertisement",
}
HEADLINE_CLASS = 5

# Default floor below which predictions are not retained.
SAVE_FLOOR = 0.05


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id]


def is_valid_class(class_id: int) -> bool:
    return isinstance(class_id, int) and not isinstance(class_id, bool) and class_id in CLASS_NAMES


@dataclass(frozen=True)
class Prediction:
    """A scored, class-labeled box on one page."""

    box: NormBox
    score: float
    class_id: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if not is_valid_class(self.class_id):
            raise ValueError(f"unknown class code {self.class_id}")


def sort_canonical(preds: Iterable[Prediction]) -> list[Prediction]:
    """Descending score; ties broken by (class_id, x1, y1) ascending."""
    return sorted(
        preds,
        key=lambda p: (-p.score, p.class_id, p.box.x1, p.box.y1, p.box.x2, p.box.y2),
    )


class Detector(Protocol):
    """Anything that yields floor-filtered, canonically ordered predictions.

    ``concurrent_safe`` declares whether detect() may be called from several
    threads at once; the pipeline serializes calls when it is False.
    """

    concurrent_safe: bool

    def detect(self, page_id: str, image) -> list[Prediction]: ...


class StubDetector:
    """Deterministic model-free detector: output is a pure function of page_id.

    Emits 1-8 boxes with classes, scores >= 0.05, and geometry derived from a
    stable hash of the page id, so repeated runs are byte-identical. The image
    argument is ignored.
    """

    concurrent_safe = True

    def detect(self, page_id: str, image=None) -> list[Prediction]:
        digest = hashlib.sha256(page_id.encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        preds = []
        for _ in range(rng.randint(1, 8)):
            x1 = round(rng.uniform(0.0, 0.78), 4)
            y1 = round(rng.uniform(0.0, 0.78), 4)
            w = round(rng.uniform(0.02, 1.0 - x1 - 0.02) + 0.02, 4)
            h = round(rng.uniform(0.02, 1.0 - y1 - 0.02) + 0.02, 4)
            box = NormBox(x1, y1, min(round(x1 + w, 4), 1.0), min(round(y1 + h, 4), 1.0))
            score = round(rng.uniform(SAVE_FLOOR, 1.0), 4)
            preds.append(Prediction(box=box, score=score, class_id=rng.randrange(7)))
        return sort_canonical(preds)


@dataclass
class ReadResult:
    """Outcome of parsing a predictions stream."""

    by_page: dict[str, list[Prediction]] = field(default_factory=dict)
    rejected: int = 0
    floor_dropped: int = 0
    messages: list[str] = field(default_factory=list)


def _parse_record(obj: dict, floor: float) -> tuple[str, list[Prediction], int]:
    page_id = obj.get("page_id")
    if not isinstance(page_id, str) or not page_id:
        raise ValueError("missing or empty page_id")
    boxes = obj.get("boxes")
    scores = obj.get("scores")
    classes = obj.get("pred_classes")
    if not (isinstance(boxes, list) and isinstance(scores, list) and isinstance(classes, list)):
        raise ValueError("boxes/scores/pred_classes must be lists")
    if not (len(boxes) == len(scores) == len(classes)):
        raise ValueError("boxes, scores, pred_classes lengths differ")
    preds = []
    dropped = 0
    for coords, score, cls in zip(boxes, scores, classes):
        if not is_valid_class(cls):
            raise ValueError(f"class code {cls!r} outside 0-6")
        score = float(score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
        if not (isinstance(coords, list) and len(coords) == 4):
            raise ValueError("each box must be [x1, y1, x2, y2]")
        try:
            box = NormBox.from_raw(*(float(c) for c in coords))
        except InvalidBoxError as exc:
            raise ValueError(str(exc)) from exc
        if score < floor:
            dropped += 1
            continue
        preds.append(Prediction(box=box, score=score, class_id=cls))
    return page_id, preds, dropped


def read_predictions(stream: IO[bytes] | IO[str], floor: float = SAVE_FLOOR) -> ReadResult:
    """Parse a line-delimited predictions stream, grouping records by page.

    Records failing schema validation (bad JSON, unknown class code, length
    mismatch, degenerate box) are rejected whole and counted; entries below
    the retention floor are dropped silently apart from the tally.
    """
    result = ReadResult()
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not a JSON object")
            page_id, preds, dropped = _parse_record(obj, floor)
        except (ValueError, TypeError) as exc:
            result.rejected += 1
            result.messages.append(f"line {lineno}: {exc}")
            continue
        result.floor_dropped += dropped
        result.by_page.setdefault(page_id, []).extend(preds)
    for page_id, preds in result.by_page.items():
        result.by_page[page_id] = sort_canonical(preds)
    return result


def write_prediction_record(page_id: str, preds: Iterable[Prediction]) -> str:
    """One wire-format line (no trailing newline) for a page's predictions."""
    preds = list(preds)
    record = {
        "page_id": page_id,
        "boxes": [p.box.as_list() for p in preds],
        "scores": [p.score for p in preds],
        "pred_classes": [p.class_id for p in preds],
    }
    return json.dumps(record, separators=(",", ":"))


class FileDetector:
    """Detector backed by a predictions file produced out-of-process."""

    concurrent_safe = True

    def __init__(self, by_page: dict[str, list[Prediction]]):
        self._by_page = by_page

    @classmethod
    def from_path(cls, path, floor: float = SAVE_FLOOR) -> "FileDetector":
        with open(path, "rb") as fh:
            result = read_predictions(fh, floor=floor)
        return cls(result.by_page)

    def detect(self, page_id: str, image=None) -> list[Prediction]:
        return list(self._by_page.get(page_id, []))

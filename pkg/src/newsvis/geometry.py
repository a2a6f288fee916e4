"""Axis-aligned rectangle arithmetic on normalized page coordinates.

All boxes live in the unit square: x is normalized by page width, y by page
height, origin at the top-left. Degenerate (zero-area) boxes are rejected at
construction so every downstream area computation is well defined.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


class InvalidBoxError(ValueError):
    """Raised when coordinates cannot form a valid normalized box."""


@dataclass(frozen=True, order=True)
class NormBox:
    """Normalized rectangle [x1, x2) x [y1, y2) with 0 <= x1 < x2 <= 1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise InvalidBoxError(
                f"invalid normalized box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @classmethod
    def from_raw(cls, x1: float, y1: float, x2: float, y2: float) -> "NormBox":
        """Build a box from untrusted upstream coordinates.

        Inverted corners are swapped, out-of-range values clamped to [0, 1]
        (clamping is logged). Zero-area results still raise InvalidBoxError.
        """
        if x1 > x2:
            x1, x2 = x2, x1
        if y1 > y2:
            y1, y2 = y2, y1
        clamped = (min(max(x1, 0.0), 1.0), min(max(y1, 0.0), 1.0),
                   min(max(x2, 0.0), 1.0), min(max(y2, 0.0), 1.0))
        if clamped != (x1, y1, x2, y2):
            logger.debug("clamped box (%s, %s, %s, %s) to unit square", x1, y1, x2, y2)
        return cls(clamped[0], clamped[1], clamped[2], clamped[3])

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def iou(a: NormBox, b: NormBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def contains_point(box: NormBox, x: float, y: float) -> bool:
    """Half-open containment: x1 <= x < x2 and y1 <= y < y2.

    A point on an edge shared by two abutting boxes belongs to exactly one.
    """
    return box.x1 <= x < box.x2 and box.y1 <= y < box.y2


def union_area(boxes: Sequence[NormBox] | Iterable[NormBox]) -> float:
    """Exact area of the union of the boxes (overlaps counted once).

    Sweeps the <= 2n distinct x-cuts; within each vertical strip the covered
    y-extent is the merged length of the intervals of boxes spanning it.
    """
    boxes = list(boxes)
    if not boxes:
        return 0.0
    xs = sorted({b.x1 for b in boxes} | {b.x2 for b in boxes})
    total = 0.0
    for x_lo, x_hi in zip(xs, xs[1:]):
        width = x_hi - x_lo
        if width <= 0.0:
            continue
        spans = sorted((b.y1, b.y2) for b in boxes if b.x1 <= x_lo and b.x2 >= x_hi)
        if not spans:
            continue
        covered = 0.0
        cur_lo, cur_hi = spans[0]
        for y_lo, y_hi in spans[1:]:
            if y_lo > cur_hi:
                covered += cur_hi - cur_lo
                cur_lo, cur_hi = y_lo, y_hi
            elif y_hi > cur_hi:
                cur_hi = y_hi
        covered += cur_hi - cur_lo
        total += covered * width
    return total

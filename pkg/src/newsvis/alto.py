"""METS/ALTO OCR parsing into word tokens with page-normalized coordinates.

ALTO files describe OCR text with word-level positions, but the coordinate
unit varies across versions (1/1200 inch, pixels of some reference image...).
We sidestep the unit entirely by normalizing against the ALTO Page element's
own WIDTH/HEIGHT; when those are missing we fall back to the bounding extent
of the tokens themselves and record that in ``scale_note``.

Element matching is by local name so ALTO v1-v3 namespace variants (and ALTO
streams embedded in a METS wrapper) all parse identically.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .geometry import InvalidBoxError, NormBox


class AltoError(Exception):
    """Base class for ALTO ingestion failures."""


class AltoParseError(AltoError):
    """Malformed XML; carries the approximate byte offset of the failure."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class AltoUnitError(AltoError):
    """Page dimensions unavailable and no tokens to infer an extent from."""


@dataclass(frozen=True)
class WordToken:
    text: str
    box: NormBox
    order_index: int


@dataclass
class AltoPage:
    source_width: float
    source_height: float
    tokens: list[WordToken] = field(default_factory=list)
    skipped: int = 0
    scale_note: str = "page-element-dimensions"


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if "}" in tag else tag


def _byte_offset(xml_bytes: bytes, line: int, column: int) -> int:
    # expat reports (line, column); translate to a byte offset into the input.
    lines = xml_bytes.split(b"\n")
    offset = sum(len(l) + 1 for l in lines[: line - 1])
    return offset + column


def _float_attr(elem: ET.Element, name: str) -> float | None:
    raw = elem.get(name)
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        return None


def parse_alto(xml_bytes: bytes, image_width: int = 0, image_height: int = 0) -> AltoPage:
    """Parse ALTO XML into an AltoPage of word tokens in document order.

    Every String element carrying CONTENT, HPOS, VPOS, WIDTH, HEIGHT becomes
    one token; Strings missing a coordinate (or with a degenerate box) are
    skipped and tallied. ``image_width``/``image_height`` identify the page
    image the boxes refer to but do not enter the normalization, which uses
    the ALTO file's own coordinate space.
    """
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        line, column = exc.position
        raise AltoParseError(
            f"malformed ALTO XML: {exc}", _byte_offset(xml_bytes, line, column)
        ) from exc

    page_w = page_h = None
    for elem in root.iter():
        if _local(elem.tag) == "Page":
            page_w = _float_attr(elem, "WIDTH")
            page_h = _float_attr(elem, "HEIGHT")
            break

    # Document order of String elements is the reading order (String within
    # TextLine within TextBlock).
    raw_tokens: list[tuple[str, float, float, float, float]] = []
    skipped = 0
    for elem in root.iter():
        if _local(elem.tag) != "String":
            continue
        text = elem.get("CONTENT")
        hpos = _float_attr(elem, "HPOS")
        vpos = _float_attr(elem, "VPOS")
        width = _float_attr(elem, "WIDTH")
        height = _float_attr(elem, "HEIGHT")
        if not text or text.strip() == "" or None in (hpos, vpos, width, height):
            skipped += 1
            continue
        raw_tokens.append((text.strip(), hpos, vpos, width, height))

    scale_note = "page-element-dimensions"
    if not page_w or not page_h or page_w <= 0 or page_h <= 0:
        if not raw_tokens:
            raise AltoUnitError("Page element lacks WIDTH/HEIGHT and no tokens to infer extent")
        page_w = max(h + w for _, h, _, w, _ in raw_tokens)
        page_h = max(v + ht for _, _, v, _, ht in raw_tokens)
        scale_note = "token-extent-fallback"

    tokens: list[WordToken] = []
    for text, hpos, vpos, width, height in raw_tokens:
        try:
            box = NormBox.from_raw(
                hpos / page_w, vpos / page_h, (hpos + width) / page_w, (vpos + height) / page_h
            )
        except InvalidBoxError:
            skipped += 1
            continue
        tokens.append(WordToken(text=text, box=box, order_index=len(tokens)))

    return AltoPage(
        source_width=page_w,
        source_height=page_h,
        tokens=tokens,
        skipped=skipped,
        scale_note=scale_note,
    )

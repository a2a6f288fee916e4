from __future__ import annotations

import pytest
from PIL import Image, ImageDraw

PAGE_IDS = (
    "batchA/sn0001/1905-03-12/ed-1/seq-1.jpg",
    "batchA/sn0002/1913-07-04/ed-1/seq-1.jpg",
    "batchA/sn0003/1861-04-12/ed-1/seq-1.jpg",
)


def make_image(seed=0, size=(600, 840)) -> Image.Image:
    image = Image.new("RGB", size, (240, 235, 225))
    draw = ImageDraw.Draw(image)
    for i in range(3):
        shade = 60 + 45 * ((seed + i) % 4)
        draw.rectangle([40 + 150 * i, 80 + 60 * i, 160 + 150 * i, 260 + 60 * i],
                       fill=(shade, shade, shade))
    return image


@pytest.fixture
def image_fixture(tmp_path):
    """3-page fixture: image files plus the worker's image-list file."""
    root = tmp_path / "images"
    lines = []
    for i, page_id in enumerate(PAGE_IDS):
        path = root / page_id
        path.parent.mkdir(parents=True, exist_ok=True)
        make_image(seed=i).save(path, format="JPEG", quality=90)
        lines.append(f"{page_id}\t{path}")
    list_path = tmp_path / "list.txt"
    list_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root, list_path, list(PAGE_IDS)

"""Torch-backed detection and embedding backends.

Everything here imports torch lazily so stub-mode runs need no deep learning
stack. The detector accepts either a TorchScript archive or a checkpoint for
the torchvision Faster R-CNN R50-FPN builder; its integer labels are mapped
to the 0-6 class codes through a configurable table (torchvision reserves
label 0 for background, hence the default shift by one).

Embedding preprocessing: crops are resized to 224x224, scaled to [0, 1], and
normalized with the ImageNet channel statistics before the forward pass; the
vector is the pooled penultimate-layer activation (512-dim for ResNet-18,
2,048-dim for ResNet-50).
"""

from __future__ import annotations

import json
from pathlib import Path

from newsvis.detect import Prediction, is_valid_class, sort_canonical
from newsvis.geometry import InvalidBoxError, NormBox

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ModelLoadError(RuntimeError):
    pass


def _import_torch():
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise ModelLoadError(f"torch/torchvision unavailable: {exc}") from exc
    return torch, torchvision


def load_label_map(path) -> dict[int, int]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return {int(k): int(v) for k, v in raw.items()}


def _materialize(model_ref: str) -> Path:
    """Weights referenced by URL are fetched once into a local cache file."""
    if not model_ref.startswith(("http://", "https://")):
        return Path(model_ref)
    import hashlib
    import tempfile

    import requests

    cache = Path(tempfile.gettempdir()) / (
        "newsvis-worker-" + hashlib.sha256(model_ref.encode()).hexdigest()[:16] + ".weights"
    )
    if not cache.is_file():
        try:
            resp = requests.get(model_ref, timeout=120)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise ModelLoadError(f"cannot fetch model {model_ref}: {exc}") from exc
        cache.write_bytes(resp.content)
    return cache


class TorchDetector:
    """Detection model wrapper emitting normalized, floor-ready predictions."""

    concurrent_safe = False

    def __init__(self, model_ref: str, label_map: dict[int, int] | None = None,
                 device: str = "cpu"):
        torch, torchvision = _import_torch()
        self._torch = torch
        self.device = device
        path = _materialize(model_ref)
        if not path.is_file():
            raise ModelLoadError(f"model file not found: {model_ref}")
        try:
            if path.suffix in (".ts", ".torchscript"):
                self.model = torch.jit.load(str(path), map_location=device)
            else:
                from torchvision.models.detection import fasterrcnn_resnet50_fpn

                self.model = fasterrcnn_resnet50_fpn(weights=None, num_classes=8)
                state = torch.load(str(path), map_location=device)
                if isinstance(state, dict) and "model" in state:
                    state = state["model"]
                self.model.load_state_dict(state)
        except (RuntimeError, OSError, ValueError) as exc:
            raise ModelLoadError(f"cannot load model {model_ref}: {exc}") from exc
        self.model.eval()
        self.model.to(device)
        # torchvision labels are 1-based with 0 reserved for background
        self.label_map = label_map or {i + 1: i for i in range(7)}

    def detect(self, page_id: str, image) -> list[Prediction]:
        torch = self._torch
        import numpy as np

        array = np.asarray(image, dtype="float32") / 255.0
        tensor = torch.from_numpy(array).permute(2, 0, 1).to(self.device)
        with torch.no_grad():
            (output,) = self.model([tensor])
        width, height = image.width, image.height
        preds = []
        for (x1, y1, x2, y2), label, score in zip(
            output["boxes"].tolist(), output["labels"].tolist(), output["scores"].tolist()
        ):
            class_id = self.label_map.get(int(label))
            if class_id is None or not is_valid_class(class_id):
                continue
            try:
                box = NormBox.from_raw(x1 / width, y1 / height, x2 / width, y2 / height)
            except InvalidBoxError:
                continue
            preds.append(Prediction(box=box, score=round(float(score), 6),
                                    class_id=class_id))
        return sort_canonical(preds)


class TorchEmbedder:
    """ResNet-18 and ResNet-50 penultimate-layer features for crops."""

    def __init__(self, r18_weights: str | None = None, r50_weights: str | None = None,
                 device: str = "cpu"):
        torch, torchvision = _import_torch()
        self._torch = torch
        self.device = device
        from torchvision.models import resnet18, resnet50

        self.backbones = {}
        for name, builder, weights in (
            ("r18", resnet18, r18_weights),
            ("r50", resnet50, r50_weights),
        ):
            try:
                model = builder(weights=None)
                if weights:
                    model.load_state_dict(torch.load(weights, map_location=device))
                else:
                    model = builder(weights="IMAGENET1K_V1")
            except Exception as exc:
                raise ModelLoadError(f"cannot prepare {name} backbone: {exc}") from exc
            model.fc = torch.nn.Identity()
            model.eval()
            model.to(device)
            self.backbones[name] = model

    def embed(self, crop_image, crop_path: str) -> tuple[list[float], list[float]]:
        torch = self._torch
        import numpy as np

        resized = crop_image.resize((224, 224))
        array = np.asarray(resized, dtype="float32") / 255.0
        for channel in range(3):
            array[..., channel] = (array[..., channel] - IMAGENET_MEAN[channel]) / IMAGENET_STD[channel]
        tensor = torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0).to(self.device)
        with torch.no_grad():
            r18 = self.backbones["r18"](tensor).squeeze(0).tolist()
            r50 = self.backbones["r50"](tensor).squeeze(0).tolist()
        return r18, r50

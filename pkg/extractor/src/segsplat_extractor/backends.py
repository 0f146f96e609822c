"""Mask-generation and embedding backends.

``builtin`` backends are deterministic and dependency-light so the adapter
runs (and its tests pass) without pretrained weights. The SAM and CLIP
backends load pretrained checkpoints through ``transformers`` and follow
the same interfaces; they raise a clear error when the models cannot be
resolved.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

BUILTIN_EMBED_DIM = 64
CROP_PAD = 8

SAM_MODEL_IDS = {
    "sam-vit-h": "facebook/sam-vit-huge",
    "efficient-sam": "yunyangx/efficient-sam",
}
CLIP_MODEL_IDS = {
    "vit-b-16": "laion/CLIP-ViT-B-16-laion2B-s34B-b88K",
}


@dataclass(frozen=True)
class RawMask:
    """One mask proposal before flattening: bitmap plus a quality score."""

    bitmap: np.ndarray
    score: float


def masked_crop(image: np.ndarray, bitmap: np.ndarray) -> np.ndarray:
    """Tight bounding-box crop with outside-mask pixels zeroed.

    Pads the box by CROP_PAD pixels, clamped to the image.
    """
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    r0 = max(int(rows[0]) - CROP_PAD, 0)
    r1 = min(int(rows[-1]) + 1 + CROP_PAD, image.shape[0])
    c0 = max(int(cols[0]) - CROP_PAD, 0)
    c1 = min(int(cols[-1]) + 1 + CROP_PAD, image.shape[1])
    crop = image[r0:r1, c0:c1].copy()
    crop[~bitmap[r0:r1, c0:c1]] = 0
    return crop


# ---------------------------------------------------------------------------
# builtin backends


def builtin_masks(image: np.ndarray, min_area: int = 32) -> list[RawMask]:
    """Whole-object proposals from posterized colors + connected components.

    Deterministic: posterize to 2 bits per channel, label each color's
    connected components, keep regions above min_area. The score is the
    region's fill ratio inside its bounding box (compact blobs score high).
    """
    quant = (image >> 6).astype(np.uint8)  # 2 bits per channel
    key = quant[:, :, 0].astype(np.int32) * 16 + quant[:, :, 1] * 4 + quant[:, :, 2]
    # the most common key is treated as background
    background = np.bincount(key.ravel()).argmax()
    masks = []
    for value in np.unique(key):
        if value == background:
            continue
        labeled, count = ndimage.label(key == value)
        for component in range(1, count + 1):
            bitmap = labeled == component
            area = int(bitmap.sum())
            if area < min_area:
                continue
            rows = np.flatnonzero(bitmap.any(axis=1))
            cols = np.flatnonzero(bitmap.any(axis=0))
            box = (rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1)
            masks.append(RawMask(bitmap=bitmap, score=area / box))
    masks.sort(key=lambda m: (-m.bitmap.sum(), -m.score))
    return masks


def builtin_image_embedding(crop: np.ndarray) -> np.ndarray:
    """Deterministic 64-d stand-in for a CLIP image embedding.

    4x4 RGB thumbnail of the masked crop (48 dims) plus a 16-bin intensity
    histogram, L2-normalized.
    """
    thumb = np.asarray(
        Image.fromarray(crop).resize((4, 4), Image.BILINEAR), dtype=np.float64
    )
    gray = crop.astype(np.float64).mean(axis=2)
    hist, _ = np.histogram(gray[gray > 0], bins=16, range=(0, 255))
    feature = np.concatenate([thumb.reshape(-1) / 255.0, hist / max(hist.sum(), 1)])
    norm = np.linalg.norm(feature)
    if norm < 1e-8:
        feature[0] = 1.0
        norm = 1.0
    return feature / norm


def builtin_text_embedding(phrase: str, dim: int = BUILTIN_EMBED_DIM) -> np.ndarray:
    """Deterministic unit vector derived from the phrase's hash."""
    digest = hashlib.sha256(phrase.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.normal(size=dim)
    return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# pretrained backends (require torch + transformers + downloaded weights)


class ModelUnavailableError(RuntimeError):
    pass


def _load_transformers(kind: str):
    try:
        import transformers  # noqa: F401

        return transformers
    except ImportError as exc:
        raise ModelUnavailableError(
            f"{kind} backend needs the 'transformers' package; install the "
            f"extractor with the [models] extra or use --{kind.lower()}-model builtin"
        ) from exc


def sam_masks(image: np.ndarray, model_name: str, device: str) -> list[RawMask]:
    """Automatic mask generation with a pretrained SAM at whole granularity."""
    transformers = _load_transformers("mask")
    model_id = SAM_MODEL_IDS.get(model_name, model_name)
    try:
        generator = transformers.pipeline(
            "mask-generation", model=model_id, device=device
        )
    except Exception as exc:
        raise ModelUnavailableError(
            f"could not load mask model {model_id!r}: {exc}"
        ) from exc
    outputs = generator(Image.fromarray(image), points_per_batch=32)
    masks = []
    scores = outputs.get("scores")
    for i, bitmap in enumerate(outputs["masks"]):
        bitmap = np.asarray(bitmap, dtype=bool)
        if not bitmap.any():
            continue
        score = float(scores[i]) if scores is not None else 0.0
        masks.append(RawMask(bitmap=bitmap, score=score))
    return masks


class ClipEncoder:
    """Pretrained CLIP image/text encoder wrapper."""

    def __init__(self, model_name: str, device: str):
        transformers = _load_transformers("clip")
        model_id = CLIP_MODEL_IDS.get(model_name, model_name)
        try:
            self.model = transformers.CLIPModel.from_pretrained(model_id).to(device)
            self.processor = transformers.CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ModelUnavailableError(
                f"could not load CLIP model {model_id!r}: {exc}"
            ) from exc
        self.device = device

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    def encode_image(self, crop: np.ndarray) -> np.ndarray:
        import torch

        inputs = self.processor(images=Image.fromarray(crop), return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(
                **{k: v.to(self.device) for k, v in inputs.items()}
            )
        vec = feats[0].cpu().numpy().astype(np.float64)
        return vec / np.linalg.norm(vec)

    def encode_text(self, phrase: str) -> np.ndarray:
        import torch

        inputs = self.processor(text=[phrase], return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self.model.get_text_features(
                **{k: v.to(self.device) for k, v in inputs.items()}
            )
        vec = feats[0].cpu().numpy().astype(np.float64)
        return vec / np.linalg.norm(vec)

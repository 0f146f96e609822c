"""Per-view mask ingestion: NMS and mask-id label map rasterization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Camera

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class MaskAnnotation:
    """A single binary object mask within one view.

    ``score`` is the extractor-reported quality (e.g. predicted IoU) and is
    only used to order NMS; ``area`` is derived from the bitmap.
    """

    mask_id: int
    bitmap: np.ndarray
    score: float = 0.0
    area: int = field(init=False)

    def __post_init__(self):
        if self.mask_id <= 0:
            raise ValueError("mask_id must be a positive integer")
        bitmap = np.asarray(self.bitmap, dtype=bool)
        if bitmap.ndim != 2:
            raise ValueError("bitmap must be 2-D")
        object.__setattr__(self, "bitmap", bitmap)
        area = int(bitmap.sum())
        if area == 0:
            raise ValueError(f"mask {self.mask_id} is empty")
        object.__setattr__(self, "area", area)


@dataclass(frozen=True)
class ViewAnnotation:
    """Masks plus per-mask embeddings for one input view.

    ``embeddings`` is (N_masks, D); row i belongs to ``masks[i]``.
    ``label_map`` maps each pixel to a mask id (0 = background) once
    rasterized.
    """

    view_index: int
    masks: tuple[MaskAnnotation, ...]
    embeddings: np.ndarray
    label_map: np.ndarray | None = None
    camera: Camera | None = None

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError("embeddings must be (N_masks, D)")
        if emb.shape[0] != len(self.masks):
            raise ValueError(
                f"{len(self.masks)} masks but {emb.shape[0]} embedding rows"
            )
        if not np.all(np.isfinite(emb)):
            raise ValueError("embeddings must be finite")
        object.__setattr__(self, "embeddings", emb)
        ids = [m.mask_id for m in self.masks]
        if len(set(ids)) != len(ids):
            raise ValueError("mask ids must be unique within a view")
        if self.label_map is not None:
            lm = np.asarray(self.label_map)
            valid = {0, *ids}
            present = set(np.unique(lm).tolist())
            if not present <= valid:
                raise ValueError(f"label map ids {present - valid} missing from mask set")
            object.__setattr__(self, "label_map", lm.astype(np.int32))

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def resolution(self) -> tuple[int, int]:
        if self.masks:
            return self.masks[0].bitmap.shape
        if self.label_map is not None:
            return self.label_map.shape
        raise ValueError("view has no masks and no label map")


def mask_iou(a: MaskAnnotation, b: MaskAnnotation) -> float:
    inter = int(np.logical_and(a.bitmap, b.bitmap).sum())
    union = a.area + b.area - inter
    return inter / union if union else 0.0


def nms_masks(
    masks: Sequence[MaskAnnotation], iou_threshold: float = DEFAULT_NMS_IOU
) -> list[MaskAnnotation]:
    """Greedy non-maximum suppression over binary masks.

    Candidates are visited by (score desc, area desc, mask_id asc); a mask
    is kept iff its IoU with every already-kept mask is <= iou_threshold.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    ordered = sorted(masks, key=lambda m: (-m.score, -m.area, m.mask_id))
    kept: list[MaskAnnotation] = []
    for cand in ordered:
        if all(mask_iou(cand, k) <= iou_threshold for k in kept):
            kept.append(cand)
    kept.sort(key=lambda m: m.mask_id)
    return kept


def rasterize_label_map(view: ViewAnnotation) -> np.ndarray:
    """Flatten a view's mask set into an H x W mask-id map.

    Assumes NMS has already run. Where surviving masks still overlap, the
    smallest-area mask wins, ties broken by lower mask id.
    """
    if view.masks:
        h, w = view.masks[0].bitmap.shape
    elif view.label_map is not None:
        h, w = view.label_map.shape
    else:
        raise ValueError("cannot rasterize a view with no masks and no resolution")
    label = np.zeros((h, w), dtype=np.int32)
    # paint large->small so the smallest mask lands last; ties paint the
    # larger id first so the smaller id wins
    for mask in sorted(view.masks, key=lambda m: (-m.area, -m.mask_id)):
        if mask.bitmap.shape != (h, w):
            raise ValueError("all masks in a view must share a resolution")
        label[mask.bitmap] = mask.mask_id
    return label


def prepare_view(view: ViewAnnotation, iou_threshold: float = DEFAULT_NMS_IOU) -> ViewAnnotation:
    """Apply NMS, drop suppressed embeddings, and rasterize the label map."""
    kept = nms_masks(view.masks, iou_threshold)
    kept_ids = {m.mask_id for m in kept}
    keep_rows = [i for i, m in enumerate(view.masks) if m.mask_id in kept_ids]
    pruned = replace(
        view,
        masks=tuple(view.masks[i] for i in keep_rows),
        embeddings=view.embeddings[keep_rows],
        label_map=None,
    )
    return replace(pruned, label_map=rasterize_label_map(pruned))


def masks_from_label_map(
    label_map: np.ndarray, scores: Sequence[float] | None = None
) -> list[MaskAnnotation]:
    """Reconstruct per-id masks from a flattened label map.

    ``scores[i]`` belongs to mask id i+1; ids absent from the map (fully
    painted over upstream) are skipped.
    """
    label_map = np.asarray(label_map)
    masks = []
    for mask_id in np.unique(label_map):
        mask_id = int(mask_id)
        if mask_id == 0:
            continue
        score = 0.0
        if scores is not None and 0 <= mask_id - 1 < len(scores):
            score = float(scores[mask_id - 1])
        masks.append(MaskAnnotation(mask_id=mask_id, bitmap=label_map == mask_id, score=score))
    return masks

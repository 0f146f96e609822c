"""The extraction pipeline: images -> annotation workspace files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import backends, formats

VIEW_BASELINE = 0.1  # synthetic stereo spacing when images carry no poses


@dataclass(frozen=True)
class ExtractorConfig:
    mask_model: str = "builtin"  # sam-vit-h | efficient-sam | builtin
    clip_model: str = "builtin"  # vit-b-16 | builtin
    granularity: str = "whole"
    device: str = "cpu"
    output_dir: Path = field(default_factory=lambda: Path("extracted"))
    min_area: int = 32
    billboard_depth: float = 2.0
    emit_scene: bool = True

    def __post_init__(self):
        if self.granularity != "whole":
            raise ValueError("only 'whole' granularity is supported")
        object.__setattr__(self, "output_dir", Path(self.output_dir))


def _load_image(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"))
    if img.size == 0:
        raise ValueError(f"empty image {path}")
    return img


def _flatten_masks(masks: list[backends.RawMask], shape) -> np.ndarray:
    """Resolve overlaps into a label map: smaller masks paint last (win).

    The wire format carries at most one id per pixel, so geometric overlap
    is resolved here; score-based suppression stays with the consumer's
    NMS, which sees the per-mask scores from the manifest.
    """
    label = np.zeros(shape, dtype=np.int32)
    order = sorted(
        range(len(masks)), key=lambda i: (-int(masks[i].bitmap.sum()), i)
    )
    for i in order:
        label[masks[i].bitmap] = i + 1
    return label


def extract_views(image_paths, config: ExtractorConfig) -> Path:
    """Run mask + embedding extraction and write the annotation workspace.

    Emits per view: a 16-bit label map, a SEGEMB1 embedding blob (row i is
    mask id i+1), and a camera JSON; plus manifest.json and (optionally) a
    pixel-aligned billboard scene.ply. Returns the manifest path.
    """
    image_paths = [Path(p) for p in image_paths]
    if not image_paths:
        raise ValueError("no input images")
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "cameras").mkdir(exist_ok=True)

    clip = None
    if config.clip_model != "builtin":
        clip = backends.ClipEncoder(config.clip_model, config.device)
    dim = clip.dim if clip else backends.BUILTIN_EMBED_DIM

    images = []
    cameras = []
    entries = []
    for k, path in enumerate(image_paths):
        image = _load_image(path)
        h, w = image.shape[:2]
        images.append(image)
        camera = formats.camera_dict(k * VIEW_BASELINE, w, h)
        cameras.append(camera)

        if config.mask_model == "builtin":
            raw = backends.builtin_masks(image, config.min_area)
        else:
            raw = backends.sam_masks(image, config.mask_model, config.device)
        label = _flatten_masks(raw, (h, w))

        rows = []
        scores = []
        for i, mask in enumerate(raw):
            crop = backends.masked_crop(image, mask.bitmap)
            if clip:
                rows.append(clip.encode_image(crop))
            else:
                rows.append(backends.builtin_image_embedding(crop))
            scores.append(float(mask.score))
        emb = np.stack(rows) if rows else np.zeros((0, dim))

        label_rel = f"view_{k:03d}.png"
        emb_rel = f"view_{k:03d}.emb"
        formats.write_label_map(label, out / label_rel)
        formats.write_embeddings(emb, out / emb_rel)
        import json

        (out / "cameras" / f"view_{k:03d}.json").write_text(
            json.dumps(camera, indent=2) + "\n"
        )
        entries.append(
            {
                "view_index": k,
                "image_width": w,
                "image_height": h,
                "label_map_path": label_rel,
                "embeddings_path": emb_rel,
                "camera": camera,
                "mask_scores": scores,
            }
        )

    manifest_path = out / "manifest.json"
    formats.write_manifest(entries, dim, manifest_path)
    if config.emit_scene:
        formats.write_billboard_scene(
            images, cameras, config.billboard_depth, out / "scene.ply"
        )
    return manifest_path


def embed_text(phrases, config: ExtractorConfig, out_path) -> np.ndarray:
    """Encode phrases to unit vectors in SEGEMB1 format, input order kept."""
    phrases = list(phrases)
    if not phrases:
        raise ValueError("phrase list is empty")
    if config.clip_model != "builtin":
        clip = backends.ClipEncoder(config.clip_model, config.device)
        rows = np.stack([clip.encode_text(p) for p in phrases])
    else:
        rows = np.stack([backends.builtin_text_embedding(p) for p in phrases])
    formats.write_embeddings(rows, out_path)
    return rows

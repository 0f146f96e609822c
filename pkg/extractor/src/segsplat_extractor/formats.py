"""Writers (and readers, for self-checks) of the segsplat wire formats.

Implemented independently of the main package: the extractor talks to it
through files only. Formats:

* SEGEMB1 embedding blobs: magic ``SEGEMB1\\0``, uint32 N, uint32 D
  (little-endian), then N*D float32 row-major.
* 16-bit grayscale PNG label maps, 0 = background, id i maps to embedding
  row i - 1.
* Annotation manifest: JSON, version 1.
* Gaussian scenes: binary little-endian PLY with logit opacity, log scales,
  and an int32 ``semantic_index`` property.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

EMBEDDINGS_MAGIC = b"SEGEMB1\x00"
MANIFEST_VERSION = 1


def write_embeddings(matrix: np.ndarray, path) -> None:
    matrix = np.asarray(matrix)
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_embeddings(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != EMBEDDINGS_MAGIC:
        raise ValueError(f"bad embeddings magic in {path}")
    n, d = struct.unpack_from("<II", data, 8)
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d)


def write_label_map(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.min() < 0 or values.max() > 65535:
        raise ValueError("label ids must fit 16 bits")
    Image.fromarray(values.astype(np.uint16)).save(path, format="PNG")


def camera_dict(x_offset: float, width: int, height: int) -> dict:
    """Synthetic stereo-rig camera for view geometry-free image sets."""
    f = float(max(width, height))
    w2c = np.eye(4)
    w2c[0, 3] = -x_offset
    return {
        "world_to_camera": w2c.tolist(),
        "fx": f,
        "fy": f,
        "cx": width / 2.0,
        "cy": height / 2.0,
        "width": width,
        "height": height,
        "near": 0.01,
        "far": 100.0,
    }


def write_manifest(views: list[dict], embedding_dim: int, path) -> None:
    payload = {
        "version": MANIFEST_VERSION,
        "embedding_dim": embedding_dim,
        "views": views,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


_PLY_PROPS = (
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2",
)

SH_C0 = 0.28209479177387814


def write_billboard_scene(
    images: list[np.ndarray], cameras: list[dict], depth: float, path
) -> int:
    """Pixel-aligned constant-depth Gaussians, one per pixel per view.

    A stand-in for a feed-forward geometry predictor: every pixel is
    backprojected onto the z = depth plane of its camera with the pixel
    color as the SH DC term. Returns the Gaussian count.
    """
    rows_out = []
    for img, cam in zip(images, cameras):
        h, w = img.shape[:2]
        fx, fy = cam["fx"], cam["fy"]
        cx, cy = cam["cx"], cam["cy"]
        x_off = -cam["world_to_camera"][0][3]
        cols_g, rows_g = np.meshgrid(np.arange(w), np.arange(h))
        wx = (cols_g.ravel() + 0.5 - cx) * depth / fx + x_off
        wy = (rows_g.ravel() + 0.5 - cy) * depth / fy
        n = h * w
        # footprint about one pixel wide on the source view
        sigma = 0.7 * depth / fx
        table = np.empty((n, len(_PLY_PROPS) + 1), dtype=np.float64)
        table[:, 0], table[:, 1], table[:, 2] = wx, wy, depth
        table[:, 3] = np.log(0.9 / 0.1)  # logit of opacity 0.9
        table[:, 4:7] = np.log(sigma)
        table[:, 7:11] = [1.0, 0.0, 0.0, 0.0]
        rgb = img.reshape(n, 3).astype(np.float64) / 255.0
        table[:, 11:14] = (rgb - 0.5) / SH_C0
        table[:, 14] = 0  # semantic_index filled later by the lift step
        rows_out.append(table)
    merged = np.concatenate(rows_out)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(merged)}"]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header += ["property int semantic_index", "end_header"]
    dtype = np.dtype([(p, "<f4") for p in _PLY_PROPS] + [("semantic_index", "<i4")])
    out = np.empty(len(merged), dtype=dtype)
    for i, prop in enumerate(_PLY_PROPS):
        out[prop] = merged[:, i].astype(np.float32)
    out["semantic_index"] = merged[:, -1].astype(np.int32)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(out.tobytes())
    return len(merged)

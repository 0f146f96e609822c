"""Attach semantic bank indices to Gaussians.

Pixel-aligned scenes take their index directly from the matching pixel of
the source view's index map; scenes loaded from arbitrary PLYs fall back to
projecting each center into the annotated cameras.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import SemanticIndexMap
from .core import Camera, GaussianCloud, as_cloud


@dataclass(frozen=True)
class PixelAlignedScene:
    """Gaussians in view-major, row-major pixel order.

    ``gaussians[k * H * W + row * W + col]`` is the Gaussian predicted for
    pixel (row, col) of source view k.
    """

    gaussians: GaussianCloud
    layout: tuple[int, int, int]
    source_views: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gaussians", as_cloud(self.gaussians))
        k, h, w = self.layout
        if len(self.gaussians) != k * h * w:
            raise ValueError(
                f"layout {self.layout} implies {k * h * w} gaussians, got {len(self.gaussians)}"
            )
        if not self.source_views:
            object.__setattr__(self, "source_views", tuple(range(k)))
        elif len(self.source_views) != k:
            raise ValueError("source_views length must match layout K")


def attach_pixel_aligned(
    scene: PixelAlignedScene, index_maps: Sequence[SemanticIndexMap]
) -> GaussianCloud:
    """Set each Gaussian's semantic index from its source pixel.

    Only the indices change; every other field is passed through untouched.
    """
    k, h, w = scene.layout
    if len(index_maps) != k:
        raise ValueError(f"expected {k} index maps, got {len(index_maps)}")
    for m in index_maps:
        if m.values.shape != (h, w):
            raise ValueError(
                f"index map for view {m.view_index} has shape {m.values.shape}, expected {(h, w)}"
            )
    indices = np.concatenate([m.values.reshape(-1) for m in index_maps])
    return scene.gaussians.with_semantic_indices(indices)


def assign_by_projection(
    gaussians,
    cameras: Sequence[Camera],
    index_maps: Sequence[SemanticIndexMap],
) -> GaussianCloud:
    """Fallback labeling for non-pixel-aligned scenes.

    Each center is projected into every camera; among views where it lands
    in bounds with depth inside [near, far], the nearest view's index map
    pixel wins. Gaussians visible nowhere become background (0).
    """
    cloud = as_cloud(gaussians)
    if len(cameras) != len(index_maps):
        raise ValueError("cameras and index maps must correspond one-to-one")
    n = len(cloud)
    best_depth = np.full(n, np.inf)
    indices = np.zeros(n, dtype=np.int32)
    for cam, index_map in zip(cameras, index_maps):
        if index_map.values.shape != (cam.height, cam.width):
            raise ValueError(
                f"index map shape {index_map.values.shape} does not match camera "
                f"{cam.height}x{cam.width}"
            )
        pix, depth = cam.project(cloud.positions)
        col = np.floor(pix[:, 0]).astype(np.int64)
        row = np.floor(pix[:, 1]).astype(np.int64)
        ok = (
            (depth >= cam.near)
            & (depth <= cam.far)
            & (col >= 0)
            & (col < cam.width)
            & (row >= 0)
            & (row < cam.height)
            & (depth < best_depth)
        )
        sel = np.flatnonzero(ok)
        indices[sel] = index_map.values[row[sel], col[sel]]
        best_depth[sel] = depth[sel]
    return cloud.with_semantic_indices(indices)

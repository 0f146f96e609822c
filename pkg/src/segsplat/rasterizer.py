"""Forward splatting of color and M-channel semantic one-hot encodings.

``render`` is the tile-based production path; ``render_bruteforce`` is the
deliberately simple per-pixel oracle used for equivalence testing. Both
share the projection step (their contracts pin the same 2D Gaussian) but
composite through independent code paths.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianCloud, RenderBuffers, as_cloud, eval_sh, quat_to_rotation

# 99%-mass ellipse radius in normalized (Mahalanobis) units: sqrt(-2 ln 0.01)
EXTENT_RADIUS_99 = 3.0348542587702925

ALPHA_CLAMP = 0.99

# gaussians per compositing chunk; fixed so results never depend on scheduling
_CHUNK = 256


@dataclass(frozen=True)
class RenderSettings:
    """Rasterizer constants. Defaults follow common 3DGS practice."""

    tile_size: int = 16
    alpha_min: float = 1.0 / 255.0
    transmittance_stop: float = 1e-4
    low_pass: float = 0.3
    background_color: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not (0.0 < self.alpha_min < 1.0):
            raise ValueError("alpha_min must be in (0, 1)")
        if self.transmittance_stop < 0.0:
            raise ValueError("transmittance_stop must be non-negative")
        if self.low_pass < 0.0:
            raise ValueError("low_pass must be non-negative")
        bg = np.asarray(self.background_color, dtype=np.float64)
        if bg.shape != (3,) or not np.all(np.isfinite(bg)):
            raise ValueError("background_color must be a finite 3-vector")
        if np.any(bg < 0) or np.any(bg > 1):
            raise ValueError("background_color components must be in [0, 1]")

    @property
    def background(self) -> np.ndarray:
        return np.asarray(self.background_color, dtype=np.float64)


@dataclass(frozen=True)
class ProjectedGaussian:
    """A 3D Gaussian after EWA projection into one camera."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    semantic_index: int
    primitive_id: int


def resolve_threads(requested: int | None = None) -> int:
    """Worker count for tile parallelism.

    SEGSPLAT_THREADS caps the automatic (cpu count) choice; 0 or unset
    means auto. An explicit ``requested`` overrides the environment.
    """
    auto = os.cpu_count() or 1
    if requested is None:
        raw = os.environ.get("SEGSPLAT_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"SEGSPLAT_THREADS must be an integer, got {raw!r}")
    if requested <= 0:
        return auto
    return min(requested, auto)


def _batch_covariances(cloud: GaussianCloud) -> np.ndarray:
    rot = quat_to_rotation(cloud.rotations)  # (N, 3, 3)
    m = rot * cloud.scales[:, None, :]
    return np.einsum("nij,nkj->nik", m, m)


def _project_cloud(cloud: GaussianCloud, cam: Camera, settings: RenderSettings):
    """Vectorized projection with frustum and extent culling.

    Returns (kept_ids, mean2d, cov2d_flat[a, b, c], depth, color) where
    kept_ids index into the input cloud.
    """
    n = len(cloud)
    empty = (
        np.zeros(0, dtype=np.int64),
        np.zeros((0, 2)),
        np.zeros((0, 3)),
        np.zeros(0),
        np.zeros((0, 3)),
    )
    if n == 0:
        return empty

    cam_pts = cloud.positions @ cam.rotation.T + cam.translation
    depth = cam_pts[:, 2]
    in_depth = (depth >= cam.near) & (depth <= cam.far)
    ids = np.flatnonzero(in_depth)
    if ids.size == 0:
        return empty
    pts = cam_pts[ids]
    z = pts[:, 2]

    mean2d = np.stack(
        [cam.fx * pts[:, 0] / z + cam.cx, cam.fy * pts[:, 1] / z + cam.cy], axis=1
    )

    cov3d = _batch_covariances(cloud)[ids]
    # T = J @ W rows: J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    w_rot = cam.rotation
    inv_z = 1.0 / z
    j0 = np.stack([cam.fx * inv_z, np.zeros_like(z), -cam.fx * pts[:, 0] * inv_z * inv_z], axis=1)
    j1 = np.stack([np.zeros_like(z), cam.fy * inv_z, -cam.fy * pts[:, 1] * inv_z * inv_z], axis=1)
    t0 = j0 @ w_rot  # (K, 3)
    t1 = j1 @ w_rot
    s0 = np.einsum("ki,kij->kj", t0, cov3d)
    s1 = np.einsum("ki,kij->kj", t1, cov3d)
    a = np.einsum("kj,kj->k", s0, t0) + settings.low_pass
    b = np.einsum("kj,kj->k", s0, t1)
    c = np.einsum("kj,kj->k", s1, t1) + settings.low_pass

    # cull when the 99%-extent ellipse misses the image rectangle
    hx = EXTENT_RADIUS_99 * np.sqrt(np.maximum(a, 0.0))
    hy = EXTENT_RADIUS_99 * np.sqrt(np.maximum(c, 0.0))
    visible = (
        (mean2d[:, 0] + hx >= 0.0)
        & (mean2d[:, 0] - hx <= cam.width)
        & (mean2d[:, 1] + hy >= 0.0)
        & (mean2d[:, 1] - hy <= cam.height)
        & (a * c - b * b > 0.0)
    )
    if not np.all(visible):
        keep = np.flatnonzero(visible)
        ids, mean2d, depth_k = ids[keep], mean2d[keep], z[keep]
        a, b, c = a[keep], b[keep], c[keep]
    else:
        depth_k = z
    if ids.size == 0:
        return empty

    view_dirs = cloud.positions[ids] - cam.center
    norms = np.linalg.norm(view_dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    color = eval_sh(cloud.sh[ids], view_dirs / norms, cloud.sh_degree)
    return ids, mean2d, np.stack([a, b, c], axis=1), depth_k, color


def project_gaussian(g, cam: Camera, settings: RenderSettings | None = None):
    """Project one Gaussian; returns None when culled (out of depth range
    or its 99%-extent ellipse misses the image)."""
    settings = settings or RenderSettings()
    cloud = as_cloud([g]) if not isinstance(g, GaussianCloud) else g
    ids, mean2d, cov_flat, depth, color = _project_cloud(cloud, cam, settings)
    if ids.size == 0:
        return None
    a, b, c = cov_flat[0]
    return ProjectedGaussian(
        mean2d=mean2d[0],
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(depth[0]),
        color=color[0],
        opacity=float(cloud.opacities[0]),
        semantic_index=int(cloud.semantic_indices[0]),
        primitive_id=0,
    )


def _sorted_projection(cloud: GaussianCloud, cam: Camera, settings: RenderSettings):
    ids, mean2d, cov_flat, depth, color = _project_cloud(cloud, cam, settings)
    order = np.lexsort((ids, depth))  # depth asc, primitive id asc
    ids = ids[order]
    return (
        ids,
        mean2d[order],
        cov_flat[order],
        depth[order],
        color[order],
        cloud.opacities[ids],
        cloud.semantic_indices[ids],
    )


def _conics(cov_flat: np.ndarray) -> np.ndarray:
    a, b, c = cov_flat[:, 0], cov_flat[:, 1], cov_flat[:, 2]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=1)


def _composite_tile(
    pix_x,
    pix_y,
    mean2d,
    conic,
    opacity,
    color,
    sem_idx,
    bank_size,
    settings: RenderSettings,
):
    """Front-to-back compositing of one tile's Gaussian list.

    Processes fixed-size chunks with a cumulative-product formulation that
    is exactly equivalent to the sequential rule: a Gaussian contributes
    iff the pixel transmittance before it is >= transmittance_stop.
    """
    p = pix_x.shape[0]
    out_color = np.zeros((p, 3))
    out_sem = np.zeros((bank_size, p)) if bank_size > 0 else None
    t = np.ones(p)
    stop = settings.transmittance_stop
    n = mean2d.shape[0]
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        dx = pix_x[None, :] - mean2d[lo:hi, 0][:, None]
        dy = pix_y[None, :] - mean2d[lo:hi, 1][:, None]
        cross = dx * dy
        cross *= conic[lo:hi, 1][:, None]
        dx *= dx
        dx *= conic[lo:hi, 0][:, None]
        dy *= dy
        dy *= conic[lo:hi, 2][:, None]
        dx += dy
        dx *= -0.5
        dx -= cross
        alpha = np.exp(dx, out=dx)
        alpha *= opacity[lo:hi, None]
        np.minimum(alpha, ALPHA_CLAMP, out=alpha)
        alpha[alpha < settings.alpha_min] = 0.0

        cp = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.empty_like(cp)
        t_before[0] = t
        np.multiply(t, cp[:-1], out=t_before[1:])
        active = t_before >= stop
        w = alpha
        w *= t_before
        w *= active

        out_color += np.einsum("cp,ck->pk", w, color[lo:hi])
        if out_sem is not None:
            idx = sem_idx[lo:hi]
            for m in np.unique(idx):
                if m > 0:
                    out_sem[m - 1] += w[idx == m].sum(axis=0)

        below = ~active
        any_below = below.any(axis=0)
        if np.any(any_below):
            first = below.argmax(axis=0)
            t_halt = t_before[first, np.arange(p)]
            t = np.where(any_below, t_halt, t * cp[-1])
        else:
            t = t * cp[-1]
        if np.all(t < stop):
            break
    out_color += t[:, None] * settings.background[None, :]
    return out_color, out_sem, t


def render(
    gaussians,
    bank_size: int,
    cam: Camera,
    settings: RenderSettings | None = None,
    threads: int | None = None,
) -> RenderBuffers:
    """Tile-based forward splatting of color and semantic channels.

    Compositing order is (depth asc, primitive id asc); per-sample alpha is
    opacity * exp(-0.5 d^T cov2d^-1 d) clamped to 0.99, samples below
    alpha_min are skipped, and a pixel stops accumulating once its
    transmittance drops below transmittance_stop. ``bank_size`` = 0 renders
    color only; the color and transmittance buffers are bit-identical
    either way.
    """
    settings = settings or RenderSettings()
    cloud = as_cloud(gaussians)
    if bank_size < 0:
        raise ValueError("bank_size must be non-negative")
    if bank_size > 0 and len(cloud) and int(cloud.semantic_indices.max()) > bank_size:
        raise ValueError(
            f"semantic index {int(cloud.semantic_indices.max())} exceeds bank size {bank_size}"
        )

    h, w = cam.height, cam.width
    ids, mean2d, cov_flat, depth, color, opac, sidx = _sorted_projection(cloud, cam, settings)

    out_color = np.empty((h, w, 3))
    out_sem = np.zeros((h, w, bank_size)) if bank_size > 0 else None
    out_t = np.empty((h, w))

    ts = settings.tile_size
    tiles_x = (w + ts - 1) // ts
    tiles_y = (h + ts - 1) // ts

    # conservative per-splat footprint: alpha >= alpha_min inside radius
    # sqrt(2 ln(opacity / alpha_min)) in normalized units
    visible = opac >= settings.alpha_min
    k_ids = np.flatnonzero(visible)
    tile_lists: list[np.ndarray]
    if k_ids.size:
        r2 = 2.0 * np.log(opac[k_ids] / settings.alpha_min)
        r = np.sqrt(np.maximum(r2, 0.0))
        hx = r * np.sqrt(np.maximum(cov_flat[k_ids, 0], 0.0))
        hy = r * np.sqrt(np.maximum(cov_flat[k_ids, 2], 0.0))
        x0 = np.floor((mean2d[k_ids, 0] - hx) / ts).astype(np.int64)
        x1 = np.floor((mean2d[k_ids, 0] + hx) / ts).astype(np.int64)
        y0 = np.floor((mean2d[k_ids, 1] - hy) / ts).astype(np.int64)
        y1 = np.floor((mean2d[k_ids, 1] + hy) / ts).astype(np.int64)
        on_image = (x1 >= 0) & (x0 < tiles_x) & (y1 >= 0) & (y0 < tiles_y)
        k_ids = k_ids[on_image]
        x0 = np.clip(x0[on_image], 0, tiles_x - 1)
        x1 = np.clip(x1[on_image], 0, tiles_x - 1)
        y0 = np.clip(y0[on_image], 0, tiles_y - 1)
        y1 = np.clip(y1[on_image], 0, tiles_y - 1)
        nx = x1 - x0 + 1
        counts = nx * (y1 - y0 + 1)
        total = int(counts.sum())
        rep = np.repeat(np.arange(k_ids.size), counts)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        off = np.arange(total) - starts[rep]
        nx_rep = nx[rep]
        tile_ids = (y0[rep] + off // nx_rep) * tiles_x + (x0[rep] + off % nx_rep)
        order = np.argsort(tile_ids, kind="stable")  # keeps depth order per tile
        tile_ids = tile_ids[order]
        members = k_ids[rep][order]
        bounds = np.searchsorted(tile_ids, np.arange(tiles_x * tiles_y + 1))
        tile_lists = [members[bounds[i] : bounds[i + 1]] for i in range(tiles_x * tiles_y)]
    else:
        tile_lists = [np.zeros(0, dtype=np.int64)] * (tiles_x * tiles_y)

    conic = _conics(cov_flat) if len(ids) else np.zeros((0, 3))
    col_centers = np.arange(w) + 0.5
    row_centers = np.arange(h) + 0.5

    def run_tile(tile: int) -> None:
        ty, tx = divmod(tile, tiles_x)
        r0, r1 = ty * ts, min((ty + 1) * ts, h)
        c0, c1 = tx * ts, min((tx + 1) * ts, w)
        px = np.tile(col_centers[c0:c1], r1 - r0)
        py = np.repeat(row_centers[r0:r1], c1 - c0)
        sub = tile_lists[tile]
        tile_color, tile_sem, tile_t = _composite_tile(
            px,
            py,
            mean2d[sub],
            conic[sub],
            opac[sub],
            color[sub],
            sidx[sub],
            bank_size,
            settings,
        )
        out_color[r0:r1, c0:c1] = tile_color.reshape(r1 - r0, c1 - c0, 3)
        out_t[r0:r1, c0:c1] = tile_t.reshape(r1 - r0, c1 - c0)
        if out_sem is not None and tile_sem is not None:
            out_sem[r0:r1, c0:c1] = tile_sem.T.reshape(r1 - r0, c1 - c0, bank_size)

    n_tiles = tiles_x * tiles_y
    workers = resolve_threads(threads)
    if workers <= 1 or n_tiles == 1:
        for tile in range(n_tiles):
            run_tile(tile)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_tile, range(n_tiles)))

    np.clip(out_color, 0.0, 1.0, out=out_color)
    buffers = RenderBuffers(color=out_color, semantic=out_sem, transmittance=out_t)
    buffers.validate()
    return buffers


def render_bruteforce(
    gaussians,
    bank_size: int,
    cam: Camera,
    settings: RenderSettings | None = None,
) -> RenderBuffers:
    """Reference renderer: every projected Gaussian evaluated at every pixel,
    globally depth-sorted, no tiling, no early-out."""
    settings = settings or RenderSettings()
    cloud = as_cloud(gaussians)
    if bank_size < 0:
        raise ValueError("bank_size must be non-negative")
    if bank_size > 0 and len(cloud) and int(cloud.semantic_indices.max()) > bank_size:
        raise ValueError("semantic index exceeds bank size")

    h, w = cam.height, cam.width
    _, mean2d, cov_flat, _, color, opac, sidx = _sorted_projection(cloud, cam, settings)
    conic = _conics(cov_flat)

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    px = cols.ravel() + 0.5
    py = rows.ravel() + 0.5

    out_color = np.zeros((h * w, 3))
    out_sem = np.zeros((h * w, bank_size)) if bank_size > 0 else None
    t = np.ones(h * w)
    for i in range(mean2d.shape[0]):
        dx = px - mean2d[i, 0]
        dy = py - mean2d[i, 1]
        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
        alpha = opac[i] * np.exp(power)
        np.minimum(alpha, ALPHA_CLAMP, out=alpha)
        alpha[alpha < settings.alpha_min] = 0.0
        weight = alpha * t
        out_color += weight[:, None] * color[i]
        if out_sem is not None and sidx[i] > 0:
            out_sem[:, sidx[i] - 1] += weight
        t = t * (1.0 - alpha)
    out_color += t[:, None] * settings.background[None, :]

    np.clip(out_color, 0.0, 1.0, out=out_color)
    buffers = RenderBuffers(
        color=out_color.reshape(h, w, 3),
        semantic=out_sem.reshape(h, w, bank_size) if out_sem is not None else None,
        transmittance=t.reshape(h, w),
    )
    buffers.validate()
    return buffers

"""Deterministic synthetic scenes and annotation workspaces.

Two generators:

* ``make_random_scene`` draws a seeded cloud of Gaussians in front of a
  default camera, used by the rasterizer equivalence and invariance tests.
* ``make_demo`` builds a fully analytic three-band wall: a pixel-aligned
  Gaussian grid labeled with a planted orthonormal bank, two training views
  with annotations, a held-out camera, query/canonical embeddings, and
  exact ground-truth masks for each query.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotation import MaskAnnotation, ViewAnnotation
from .bank import BankProvenance, SemanticBank, SemanticIndexMap
from .core import SH_C0, Camera, GaussianCloud
from .lift import PixelAlignedScene
from .rasterizer import RenderSettings

DEMO_IMAGE_SIZE = 64
DEMO_WALL_MARGIN = 8  # wall occupies pixel rows/cols [margin, size - margin)
DEMO_WALL_DEPTH = 2.0
DEMO_BACKDROP_DEPTH = 10.0
DEMO_VIEW_SHIFT_PX = 10  # train cameras sit +-shift pixels (in x) from held-out
DEMO_EMBED_DIM = 8
DEMO_BANDS = 3
DEMO_WALL_OPACITY = 0.95
DEMO_BACKDROP_OPACITY = 0.6
DEMO_SIGMA_PX = 0.15

_BAND_COLORS = np.array(
    [[0.8, 0.2, 0.2], [0.2, 0.8, 0.2], [0.2, 0.2, 0.8]]
)
_BACKDROP_COLOR = np.array([0.5, 0.5, 0.5])


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    """Degree-0 SH coefficient reproducing a constant color."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def _camera_at(x_offset: float, size: int) -> Camera:
    w2c = np.eye(4)
    w2c[0, 3] = -x_offset  # world-to-camera translation of a camera at (x, 0, 0)
    return Camera(
        world_to_camera=w2c,
        fx=float(size),
        fy=float(size),
        cx=size / 2.0,
        cy=size / 2.0,
        width=size,
        height=size,
        near=0.1,
        far=100.0,
    )


def make_random_scene(
    seed: int,
    n_gaussians: int = 500,
    bank_size: int = 8,
    size: int = 64,
    sh_degree: int = 1,
) -> tuple[GaussianCloud, Camera]:
    """Seeded random Gaussians scattered around a default camera's frustum.

    Includes behind-camera and sub-alpha-min opacity outliers so culling
    paths get exercised.
    """
    rng = np.random.default_rng(seed)
    cam = _camera_at(0.0, size)
    z = rng.uniform(-0.5, 6.0, n_gaussians)  # some behind the camera
    u = rng.uniform(-6.0, size + 6.0, n_gaussians)
    v = rng.uniform(-6.0, size + 6.0, n_gaussians)
    safe_z = np.where(np.abs(z) < 0.2, 2.0, np.abs(z))
    positions = np.stack(
        [(u - cam.cx) / cam.fx * safe_z, (v - cam.cy) / cam.fy * safe_z, z], axis=1
    )
    sigma_px = rng.uniform(0.5, 4.0, (n_gaussians, 3))
    scales = sigma_px * (safe_z / cam.fx)[:, None]
    quats = rng.normal(size=(n_gaussians, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = rng.uniform(0.002, 0.98, n_gaussians)
    basis = (sh_degree + 1) ** 2
    sh = np.zeros((n_gaussians, basis, 3))
    sh[:, 0, :] = rng.uniform(-1.0, 1.2, (n_gaussians, 3))
    if basis > 1:
        sh[:, 1:, :] = rng.uniform(-0.3, 0.3, (n_gaussians, basis - 1, 3))
    indices = rng.integers(0, bank_size + 1, n_gaussians) if bank_size > 0 else None
    cloud = GaussianCloud(positions, opacity, scales, quats, sh, indices)
    return cloud, cam


@dataclass(frozen=True)
class DemoScene:
    scene: PixelAlignedScene
    bank: SemanticBank
    queries: np.ndarray
    query_names: tuple[str, ...]
    canonicals: np.ndarray
    heldout_camera: Camera
    train_cameras: tuple[Camera, ...]
    views: tuple[ViewAnnotation, ...]
    index_maps: tuple[SemanticIndexMap, ...]
    gt_masks: tuple[np.ndarray, ...]
    settings: RenderSettings
    temperature: float = 10.0


def _band_of_columns(cols: np.ndarray, size: int, margin: int) -> np.ndarray:
    """Band index (1..3) per held-out column, 0 outside the wall."""
    width = (size - 2 * margin) // DEMO_BANDS
    band = np.zeros_like(cols)
    inside = (cols >= margin) & (cols < size - margin)
    band[inside] = np.minimum((cols[inside] - margin) // width, DEMO_BANDS - 1) + 1
    return band


def make_demo(seed: int = 0) -> DemoScene:
    size = DEMO_IMAGE_SIZE
    margin = DEMO_WALL_MARGIN
    rng = np.random.default_rng(seed)

    heldout = _camera_at(0.0, size)
    shift_world = DEMO_VIEW_SHIFT_PX * DEMO_WALL_DEPTH / heldout.fx
    train_offsets = (-shift_world, shift_world)
    train_cams = tuple(_camera_at(x, size) for x in train_offsets)

    # planted orthonormal bank and query/canonical embeddings
    eye = np.eye(DEMO_EMBED_DIM)
    bank_rows = eye[:DEMO_BANDS]
    bank = SemanticBank(
        centroids=bank_rows,
        provenance=BankProvenance(seed=seed, lam=1.2, iterations=0),
    )
    queries = bank_rows.copy()
    canonicals = np.stack(
        [
            (eye[0] + eye[1]) / np.sqrt(2.0),
            (eye[2] + eye[3]) / np.sqrt(2.0),
            eye[4],
        ]
    )

    # per-view pixel-aligned Gaussians: wall pixels land on the held-out
    # camera's pixel lattice exactly (the view shift is an integer number of
    # pixels at both depths), so rendered semantics are analytic
    sigma_wall = DEMO_SIGMA_PX * DEMO_WALL_DEPTH / heldout.fx
    sigma_back = DEMO_SIGMA_PX * DEMO_BACKDROP_DEPTH / heldout.fx
    quat = np.array([1.0, 0.0, 0.0, 0.0])

    clouds = []
    view_annotations = []
    index_maps = []
    for view_index, (cam, x_off) in enumerate(zip(train_cams, train_offsets)):
        cols, rows = np.meshgrid(np.arange(size), np.arange(size))
        cols_f = cols.ravel()
        rows_f = rows.ravel()
        # backproject each pixel onto the wall plane and test the wall rect
        wx = (cols_f + 0.5 - cam.cx) * DEMO_WALL_DEPTH / cam.fx + x_off
        wy = (rows_f + 0.5 - cam.cy) * DEMO_WALL_DEPTH / cam.fy
        half = (size / 2.0 - margin) * DEMO_WALL_DEPTH / cam.fx
        on_wall = (np.abs(wx) < half) & (np.abs(wy) < half)

        heldout_col = np.round(wx * heldout.fx / DEMO_WALL_DEPTH + heldout.cx - 0.5).astype(int)
        band = np.where(on_wall, _band_of_columns(heldout_col, size, margin), 0)

        n = size * size
        positions = np.empty((n, 3))
        positions[on_wall] = np.stack(
            [wx[on_wall], wy[on_wall], np.full(on_wall.sum(), DEMO_WALL_DEPTH)], axis=1
        )
        bx = (cols_f + 0.5 - cam.cx) * DEMO_BACKDROP_DEPTH / cam.fx + x_off
        by = (rows_f + 0.5 - cam.cy) * DEMO_BACKDROP_DEPTH / cam.fy
        off = ~on_wall
        positions[off] = np.stack(
            [bx[off], by[off], np.full(off.sum(), DEMO_BACKDROP_DEPTH)], axis=1
        )
        scales = np.where(on_wall[:, None], sigma_wall, sigma_back) * np.ones((n, 3))
        opacity = np.where(on_wall, DEMO_WALL_OPACITY, DEMO_BACKDROP_OPACITY)
        colors = np.where(
            on_wall[:, None], _BAND_COLORS[np.maximum(band - 1, 0)], _BACKDROP_COLOR
        )
        sh = rgb_to_dc(colors)[:, None, :]
        clouds.append(
            GaussianCloud(
                positions,
                opacity,
                scales,
                np.tile(quat, (n, 1)),
                sh,
                band.astype(np.int32),
            )
        )

        label_map = band.reshape(size, size).astype(np.int32)
        present = [m for m in range(1, DEMO_BANDS + 1) if np.any(label_map == m)]
        masks = tuple(
            MaskAnnotation(mask_id=m, bitmap=label_map == m, score=1.0) for m in present
        )
        emb = bank_rows[[m - 1 for m in present]] + 0.01 * rng.normal(
            size=(len(present), DEMO_EMBED_DIM)
        )
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        view_annotations.append(
            ViewAnnotation(
                view_index=view_index,
                masks=masks,
                embeddings=emb,
                label_map=label_map,
                camera=cam,
            )
        )
        index_maps.append(SemanticIndexMap(label_map, view_index=view_index))

    merged = GaussianCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.opacities for c in clouds]),
        np.concatenate([c.scales for c in clouds]),
        np.concatenate([c.rotations for c in clouds]),
        np.concatenate([c.sh for c in clouds]),
        np.concatenate([c.semantic_indices for c in clouds]),
    )
    scene = PixelAlignedScene(gaussians=merged, layout=(len(train_cams), size, size))

    # analytic ground truth in the held-out view: the wall lattice projects
    # back onto the pixel grid, so each band is an exact pixel rectangle
    cols, rows = np.meshgrid(np.arange(size), np.arange(size))
    heldout_band = np.where(
        (rows >= margin) & (rows < size - margin),
        _band_of_columns(cols, size, margin),
        0,
    )
    gt_masks = tuple(heldout_band == m for m in range(1, DEMO_BANDS + 1))

    settings = RenderSettings(low_pass=0.0)
    return DemoScene(
        scene=scene,
        bank=bank,
        queries=queries,
        query_names=tuple(f"band_{m}" for m in range(1, DEMO_BANDS + 1)),
        canonicals=canonicals,
        heldout_camera=heldout,
        train_cameras=train_cams,
        views=tuple(view_annotations),
        index_maps=tuple(index_maps),
        gt_masks=gt_masks,
        settings=settings,
    )


def write_demo_workspace(out_dir, seed: int = 0) -> DemoScene:
    """Materialize the demo as files consumable by the CLI."""
    from . import io_formats as io

    demo = make_demo(seed)
    out = Path(out_dir)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    (out / "cameras").mkdir(exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)

    io.write_scene_ply(demo.scene.gaussians, out / "scene.ply")
    io.write_bank(demo.bank, out / "bank.bin")
    io.write_embeddings(demo.queries, out / "queries.emb")
    io.write_embeddings(demo.canonicals, out / "canonicals.emb")
    io.write_camera_json(demo.heldout_camera, out / "cameras" / "heldout.json")
    for i, cam in enumerate(demo.train_cameras):
        io.write_camera_json(cam, out / "cameras" / f"train_{i:03d}.json")

    entries = []
    for view in demo.views:
        label_rel = f"annotations/view_{view.view_index:03d}.png"
        emb_rel = f"annotations/view_{view.view_index:03d}.emb"
        io.write_label_map(view.label_map, out / label_rel)
        io.write_embeddings(view.embeddings, out / emb_rel)
        entries.append(
            io.ManifestView(
                view_index=view.view_index,
                image_width=view.label_map.shape[1],
                image_height=view.label_map.shape[0],
                label_map_path=label_rel,
                embeddings_path=emb_rel,
                camera=view.camera,
                mask_scores=tuple(m.score for m in view.masks),
            )
        )
    manifest = io.AnnotationManifest(
        views=tuple(entries), embedding_dim=DEMO_EMBED_DIM, base_dir=out
    )
    io.write_manifest(manifest, out / "manifest.json")

    for name, mask in zip(demo.query_names, demo.gt_masks):
        io.write_label_map(mask.astype(np.int32), out / "gt" / f"{name}.png")

    import json

    (out / "settings.json").write_text(
        json.dumps(
            {
                "low_pass": demo.settings.low_pass,
                "tile_size": demo.settings.tile_size,
                "alpha_min": demo.settings.alpha_min,
                "transmittance_stop": demo.settings.transmittance_stop,
                "temperature": demo.temperature,
                "seed": seed,
            },
            indent=2,
        )
        + "\n"
    )
    return demo


def write_random_workspace(out_dir, seed: int = 0, n_gaussians: int = 500, bank_size: int = 8):
    """Materialize a random scene (scene.ply + camera.json) for demos."""
    from . import io_formats as io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cloud, cam = make_random_scene(seed, n_gaussians=n_gaussians, bank_size=bank_size)
    io.write_scene_ply(cloud, out / "scene.ply")
    io.write_camera_json(cam, out / "camera.json")
    return cloud, cam

"""Command-line driver.

Subcommands: ``bank build``, ``lift``, ``render``, ``query``, ``eval``,
``synth``. Every run resolves a single PipelineConfig (defaults < --config
file < explicit flags), logs it with input digests, and writes a JSON
sidecar manifest next to each artifact. SEGSPLAT_THREADS caps render
worker count (0 = auto). Exit codes: 0 success, 1 processing error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import io_formats as io
from .annotation import prepare_view
from .bank import SemanticIndexMap, build_bank
from .core import RenderBuffers
from .evalkit import build_report, iou, psnr, ssim
from .io_formats import ParseError
from .lift import PixelAlignedScene, assign_by_projection, attach_pixel_aligned
from .query import FeatureMap, QueryConfig, recover_features, relevancy_map, segment
from .rasterizer import RenderSettings, render
from .synth import write_demo_workspace, write_random_workspace


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    lam: float = 1.2
    seed: int = 0
    temperature: float = 10.0
    nms_iou: float = 0.5
    relevancy_floor: float = 0.5
    mask_threshold: float = 0.5
    tile_size: int = 16
    alpha_min: float = 1.0 / 255.0
    transmittance_stop: float = 1e-4
    low_pass: float = 0.3
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        for name in ("nms_iou", "relevancy_floor", "mask_threshold"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")

    def render_settings(self) -> RenderSettings:
        return RenderSettings(
            tile_size=self.tile_size,
            alpha_min=self.alpha_min,
            transmittance_stop=self.transmittance_stop,
            low_pass=self.low_pass,
            background_color=tuple(self.background),
        )


_CONFIG_ALIASES = {"lambda": "lam"}


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid config JSON: {exc}") from exc
        for key, value in raw.items():
            key = _CONFIG_ALIASES.get(key, key)
            if key in PipelineConfig.__dataclass_fields__:
                values[key] = value
    for field in PipelineConfig.__dataclass_fields__:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    if "background" in values:
        values["background"] = tuple(float(v) for v in values["background"])
    return PipelineConfig(**values)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _log_run(tool: str, config: PipelineConfig, inputs: dict[str, Path]) -> dict:
    digests = {str(k): io.sha256_file(v) for k, v in inputs.items()}
    record = {
        "tool": tool,
        "config": asdict(config),
        "config_digest": io.config_digest(asdict(config)),
        "inputs": digests,
    }
    _log(f"[segsplat {tool}] config={json.dumps(asdict(config), sort_keys=True)}")
    for name, digest in digests.items():
        _log(f"[segsplat {tool}] input {name} sha256={digest}")
    return record


def _write_sidecar(artifact: Path, record: dict, **extra) -> None:
    payload = dict(record)
    payload.update(extra)
    Path(str(artifact) + ".json").write_text(json.dumps(payload, indent=2) + "\n")


def _save_rgb(color: np.ndarray, path: Path) -> None:
    img = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def _save_gray(values: np.ndarray, path: Path) -> None:
    img = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path, format="PNG")


def _load_image(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def _load_mask(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 0


def _read_buffer_with_sidecar(path: Path) -> tuple[np.ndarray, dict]:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise UsageError(f"missing sidecar manifest {sidecar}")
    meta = json.loads(sidecar.read_text())
    flat = io.read_embeddings(path)
    h, w = int(meta["height"]), int(meta["width"])
    if flat.shape[0] != h * w:
        raise ParseError(f"{path} rows {flat.shape[0]} do not match {h}x{w}")
    return flat.reshape(h, w, flat.shape[1]).astype(np.float64), meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_bank_build(args) -> int:
    config = resolve_config(args)
    manifest_path = _require(args.manifest, "manifest")
    record = _log_run("bank-build", config, {"manifest": manifest_path})

    manifest = io.read_manifest(manifest_path)
    views = [prepare_view(v, config.nms_iou) for v in io.load_views(manifest)]
    bank, maps = build_bank(views, lam=config.lam, seed=config.seed)

    bank_path = Path(args.out[0])
    maps_dir = Path(args.out[1])
    maps_dir.mkdir(parents=True, exist_ok=True)
    io.write_bank(bank, bank_path)
    _write_sidecar(bank_path, record, bank_size=bank.size, embedding_dim=bank.dim)
    written = []
    for m in maps:
        map_path = maps_dir / f"view_{m.view_index:03d}.png"
        io.write_label_map(m.values, map_path)
        written.append(map_path.name)
    _write_sidecar(maps_dir / "maps", record, views=written, bank_size=bank.size)
    print(f"M = {bank.size}")
    return 0


def cmd_lift(args) -> int:
    config = resolve_config(args)
    scene_path = _require(args.scene, "scene")
    manifest_path = _require(args.manifest, "manifest")
    maps_dir = _require(args.maps, "maps directory")
    record = _log_run(
        "lift", config, {"scene": scene_path, "manifest": manifest_path}
    )

    cloud = io.read_scene_ply(scene_path)
    manifest = io.read_manifest(manifest_path)
    maps = []
    for entry in manifest.views:
        map_path = maps_dir / f"view_{entry.view_index:03d}.png"
        _require(map_path, f"index map for view {entry.view_index}")
        maps.append(
            SemanticIndexMap(io.read_label_map(map_path), view_index=entry.view_index)
        )

    if args.mode == "pixel":
        k = len(manifest.views)
        h = manifest.views[0].image_height
        w = manifest.views[0].image_width
        scene = PixelAlignedScene(gaussians=cloud, layout=(k, h, w))
        lifted = attach_pixel_aligned(scene, maps)
    else:
        cameras = [entry.camera for entry in manifest.views]
        lifted = assign_by_projection(cloud, cameras, maps)

    out_path = Path(args.out)
    io.write_scene_ply(lifted, out_path)
    _write_sidecar(out_path, record, mode=args.mode, gaussians=len(lifted))
    labeled = int(np.count_nonzero(lifted.semantic_indices))
    _log(f"[segsplat lift] labeled {labeled}/{len(lifted)} gaussians")
    return 0


def cmd_render(args) -> int:
    config = resolve_config(args)
    scene_path = _require(args.scene, "scene")
    camera_path = _require(args.camera, "camera")
    inputs = {"scene": scene_path, "camera": camera_path}
    bank = None
    if args.bank:
        bank_path = _require(args.bank, "bank")
        inputs["bank"] = bank_path
        bank = io.read_bank(bank_path)
    record = _log_run("render", config, inputs)

    if len(args.out) not in (1, 2):
        raise UsageError("--out takes RGB_PATH [SEMANTIC_PATH]")
    if len(args.out) == 2 and bank is None:
        raise UsageError("semantic output requires --bank")

    cloud = io.read_scene_ply(scene_path)
    cam = io.read_camera_json(camera_path)
    bank_size = bank.size if bank is not None and len(args.out) == 2 else 0
    buffers = render(cloud, bank_size, cam, config.render_settings())

    rgb_path = Path(args.out[0])
    _save_rgb(buffers.color, rgb_path)
    _write_sidecar(rgb_path, record, height=cam.height, width=cam.width)
    if len(args.out) == 2:
        sem_path = Path(args.out[1])
        flat = buffers.semantic.reshape(-1, bank_size)
        io.write_embeddings(flat, sem_path)
        _write_sidecar(
            sem_path, record, height=cam.height, width=cam.width, bank_size=bank_size
        )
        if args.features_out:
            features = recover_features(buffers.semantic, bank)
            feat_path = Path(args.features_out)
            io.write_embeddings(features.values.reshape(-1, bank.dim), feat_path)
            _write_sidecar(
                feat_path, record, height=cam.height, width=cam.width, dim=bank.dim
            )
    return 0


def cmd_query(args) -> int:
    config = resolve_config(args)
    features_path = _require(args.features, "features")
    query_path = _require(args.query, "query embedding")
    canon_path = _require(args.canon, "canonical embeddings")
    record = _log_run(
        "query",
        config,
        {"features": features_path, "query": query_path, "canon": canon_path},
    )

    values, _ = _read_buffer_with_sidecar(features_path)
    norms = np.linalg.norm(values, axis=2)
    features = FeatureMap(values=values, background_mask=norms < 1e-8)

    queries = io.read_embeddings(query_path).astype(np.float64)
    canonicals = io.read_embeddings(canon_path).astype(np.float64)
    if args.query_row >= queries.shape[0]:
        raise UsageError(
            f"--query-row {args.query_row} out of range for {queries.shape[0]} queries"
        )
    cfg = QueryConfig(
        query_embedding=queries[args.query_row],
        canonical_embeddings=canonicals,
        temperature=config.temperature,
        floor=config.relevancy_floor,
        mask_threshold=config.mask_threshold,
    )
    scores = relevancy_map(features, cfg)
    mask = segment(scores, cfg.mask_threshold)

    relevancy_path = Path(args.out[0])
    mask_path = Path(args.out[1])
    # heatmap colormap: plain grayscale, relevancy 0..1 -> 0..255
    _save_gray(scores, relevancy_path)
    _save_gray(mask.astype(np.float64), mask_path)
    _write_sidecar(relevancy_path, record, query_row=args.query_row)
    _write_sidecar(mask_path, record, query_row=args.query_row, pixels=int(mask.sum()))
    _log(f"[segsplat query] mask pixels = {int(mask.sum())}")
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    inputs: dict[str, Path] = {}
    psnr_db = ssim_value = None
    if (args.image is None) != (args.ref is None):
        raise UsageError("--image and --ref must be given together")
    if args.image:
        image_path = _require(args.image, "image")
        ref_path = _require(args.ref, "reference image")
        inputs["image"] = image_path
        inputs["ref"] = ref_path
    mask_specs = args.mask or []
    for name, pred, gt in mask_specs:
        inputs[f"pred:{name}"] = _require(pred, f"prediction mask {name}")
        inputs[f"gt:{name}"] = _require(gt, f"ground truth mask {name}")
    record = _log_run("eval", config, inputs)

    if args.image:
        img = _load_image(Path(args.image))
        ref = _load_image(Path(args.ref))
        psnr_db = psnr(img, ref)
        ssim_value = ssim(img, ref)
    per_query = {}
    for name, pred, gt in mask_specs:
        per_query[name] = iou(_load_mask(Path(pred)), _load_mask(Path(gt)))

    report = build_report(
        per_query, record["config_digest"], psnr_db=psnr_db, ssim_value=ssim_value
    )
    out_path = Path(args.out)
    out_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _write_sidecar(out_path, record)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_synth(args) -> int:
    config = resolve_config(args)
    record = _log_run("synth", config, {})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "demo":
        demo = write_demo_workspace(out_dir, seed=config.seed)
        _write_sidecar(out_dir / "workspace", record, kind="demo", views=len(demo.views))
        _log(f"[segsplat synth] demo workspace in {out_dir}")
    else:
        cloud, _ = write_random_workspace(
            out_dir, seed=config.seed, n_gaussians=args.gaussians, bank_size=args.bank_size
        )
        _write_sidecar(
            out_dir / "workspace", record, kind="random", gaussians=len(cloud)
        )
        _log(f"[segsplat synth] random scene ({len(cloud)} gaussians) in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segsplat",
        description="Feed-forward semantic Gaussian splatting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file overriding pipeline defaults")
        p.add_argument("--seed", type=int, default=None)

    bank = sub.add_parser("bank", help="semantic bank operations")
    bank_sub = bank.add_subparsers(dest="bank_command", required=True)
    build_p = bank_sub.add_parser("build", help="cluster mask embeddings into a bank")
    add_common(build_p)
    build_p.add_argument("--manifest", required=True)
    build_p.add_argument("--lambda", dest="lam", type=float, default=None)
    build_p.add_argument("--nms-iou", dest="nms_iou", type=float, default=None)
    build_p.add_argument(
        "--out", nargs=2, metavar=("BANK", "MAPS_DIR"), required=True
    )
    build_p.set_defaults(func=cmd_bank_build)

    lift_p = sub.add_parser("lift", help="attach semantic indices to a scene")
    add_common(lift_p)
    lift_p.add_argument("--scene", required=True)
    lift_p.add_argument("--manifest", required=True)
    lift_p.add_argument("--maps", required=True, type=Path)
    lift_p.add_argument("--mode", choices=("pixel", "project"), default="pixel")
    lift_p.add_argument("--out", required=True)
    lift_p.set_defaults(func=cmd_lift)

    render_p = sub.add_parser("render", help="render color and semantic buffers")
    add_common(render_p)
    render_p.add_argument("--scene", required=True)
    render_p.add_argument("--bank")
    render_p.add_argument("--camera", required=True)
    render_p.add_argument("--tile-size", dest="tile_size", type=int, default=None)
    render_p.add_argument("--low-pass", dest="low_pass", type=float, default=None)
    render_p.add_argument("--features-out", dest="features_out")
    render_p.add_argument(
        "--out", nargs="+", metavar="PATH", required=True, help="RGB_PNG [SEMANTIC_BIN]"
    )
    render_p.set_defaults(func=cmd_render)

    query_p = sub.add_parser("query", help="open-vocabulary query on a feature map")
    add_common(query_p)
    query_p.add_argument("--features", required=True)
    query_p.add_argument("--query", required=True)
    query_p.add_argument("--query-row", dest="query_row", type=int, default=0)
    query_p.add_argument("--canon", required=True)
    query_p.add_argument("--tau", dest="temperature", type=float, default=None)
    query_p.add_argument("--floor", dest="relevancy_floor", type=float, default=None)
    query_p.add_argument(
        "--threshold", dest="mask_threshold", type=float, default=None
    )
    query_p.add_argument(
        "--out", nargs=2, metavar=("RELEVANCY_PNG", "MASK_PNG"), required=True
    )
    query_p.set_defaults(func=cmd_query)

    eval_p = sub.add_parser("eval", help="IoU / PSNR / SSIM report")
    add_common(eval_p)
    eval_p.add_argument("--image")
    eval_p.add_argument("--ref")
    eval_p.add_argument(
        "--mask",
        nargs=3,
        metavar=("NAME", "PRED", "GT"),
        action="append",
        help="repeatable per-query mask pair",
    )
    eval_p.add_argument("--out", required=True)
    eval_p.set_defaults(func=cmd_eval)

    synth_p = sub.add_parser("synth", help="generate synthetic scenes/annotations")
    add_common(synth_p)
    synth_p.add_argument("--out", required=True)
    synth_p.add_argument("--kind", choices=("demo", "random"), default="demo")
    synth_p.add_argument("--gaussians", type=int, default=500)
    synth_p.add_argument("--bank-size", dest="bank_size", type=int, default=8)
    synth_p.set_defaults(func=cmd_synth)

    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

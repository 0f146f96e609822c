"""segsplat-extract: offline mask/embedding extraction CLI."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import ModelUnavailableError
from .extract import ExtractorConfig, embed_text, extract_views


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segsplat-extract",
        description="Extract masks and embeddings into a segsplat annotation workspace",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="process input images")
    ex.add_argument("--images", nargs="+", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument(
        "--mask-model",
        default="builtin",
        choices=("builtin", "sam-vit-h", "efficient-sam"),
    )
    ex.add_argument("--clip-model", default="builtin")
    ex.add_argument("--device", default="cpu")
    ex.add_argument("--min-area", type=int, default=32)
    ex.add_argument("--depth", type=float, default=2.0, help="billboard scene depth")
    ex.add_argument("--no-scene", action="store_true", help="skip scene.ply emission")

    et = sub.add_parser("embed-text", help="encode text phrases")
    et.add_argument("--phrases", nargs="+", required=True)
    et.add_argument("--out", required=True)
    et.add_argument("--clip-model", default="builtin")
    et.add_argument("--device", default="cpu")
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        if args.command == "extract":
            for image in args.images:
                if not Path(image).exists():
                    print(f"error: image not found: {image}", file=sys.stderr)
                    return 2
            config = ExtractorConfig(
                mask_model=args.mask_model,
                clip_model=args.clip_model,
                device=args.device,
                output_dir=Path(args.out),
                min_area=args.min_area,
                billboard_depth=args.depth,
                emit_scene=not args.no_scene,
            )
            manifest = extract_views(args.images, config)
            print(f"manifest: {manifest}")
        else:
            config = ExtractorConfig(clip_model=args.clip_model, device=args.device)
            rows = embed_text(args.phrases, config, args.out)
            print(f"wrote {rows.shape[0]}x{rows.shape[1]} embeddings to {args.out}")
        return 0
    except ModelUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

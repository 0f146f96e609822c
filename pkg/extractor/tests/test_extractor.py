import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from segsplat_extractor.backends import (
    builtin_image_embedding,
    builtin_masks,
    builtin_text_embedding,
    masked_crop,
)
from segsplat_extractor.cli import run_command
from segsplat_extractor.extract import ExtractorConfig, embed_text, extract_views
from segsplat_extractor.formats import read_embeddings

SAMPLES = sorted((Path(__file__).resolve().parent.parent / "sample_images").glob("*.png"))


def primary(*argv):
    """Invoke the primary pipeline's CLI; the adapter talks to it via files."""
    return subprocess.run(
        [sys.executable, "-m", "segsplat.cli", *map(str, argv)],
        capture_output=True,
        text=True,
    )


class TestBuiltinBackends:
    def test_masks_found_on_sample(self):
        image = np.asarray(Image.open(SAMPLES[0]).convert("RGB"))
        masks = builtin_masks(image)
        assert len(masks) >= 3  # box, disk, bar
        for m in masks:
            assert m.bitmap.any()
            assert 0.0 <= m.score <= 1.0

    def test_solid_color_image_is_valid_degenerate_input(self):
        image = np.full((32, 32, 3), 128, dtype=np.uint8)
        assert builtin_masks(image) == []  # all background, zero masks is fine

    def test_masked_crop_zeroes_outside(self):
        image = np.full((20, 20, 3), 200, dtype=np.uint8)
        bitmap = np.zeros((20, 20), dtype=bool)
        bitmap[5:10, 5:10] = True
        crop = masked_crop(image, bitmap)
        assert crop.max() == 200
        assert (crop == 0).any()  # padding ring is zeroed
        inside = crop[crop.shape[0] // 2, crop.shape[1] // 2]
        assert tuple(inside) == (200, 200, 200)

    def test_image_embedding_unit_norm(self):
        rng = np.random.default_rng(0)
        crop = rng.integers(0, 255, (24, 24, 3)).astype(np.uint8)
        vec = builtin_image_embedding(crop)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-5)

    def test_text_embedding_deterministic_and_distinct(self):
        a = builtin_text_embedding("object")
        b = builtin_text_embedding("object")
        c = builtin_text_embedding("stuff")
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-5)


class TestExtractViews:
    def test_workspace_schema(self, tmp_path):
        config = ExtractorConfig(output_dir=tmp_path / "ws")
        manifest_path = extract_views(SAMPLES, config)
        payload = json.loads(manifest_path.read_text())
        assert payload["version"] == 1
        assert len(payload["views"]) == 2
        dims = set()
        for view in payload["views"]:
            emb = read_embeddings(tmp_path / "ws" / view["embeddings_path"])
            dims.add(emb.shape[1])
            assert emb.shape[0] == len(view["mask_scores"])
            if emb.shape[0]:
                norms = np.linalg.norm(emb.astype(np.float64), axis=1)
                assert np.allclose(norms, 1.0, atol=1e-5)
        assert dims == {payload["embedding_dim"]}
        assert (tmp_path / "ws" / "scene.ply").exists()

    def test_label_ids_match_embedding_rows(self, tmp_path):
        config = ExtractorConfig(output_dir=tmp_path / "ws")
        extract_views(SAMPLES[:1], config)
        label = np.asarray(Image.open(tmp_path / "ws" / "view_000.png"))
        emb = read_embeddings(tmp_path / "ws" / "view_000.emb")
        assert label.max() <= emb.shape[0]

    def test_deterministic_across_runs(self, tmp_path):
        for name in ("a", "b"):
            extract_views(SAMPLES, ExtractorConfig(output_dir=tmp_path / name))
        for rel in ("manifest.json", "view_000.png", "view_000.emb", "scene.ply"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_solid_color_image_yields_valid_empty_view(self, tmp_path):
        solid = tmp_path / "solid.png"
        Image.fromarray(np.full((48, 48, 3), 128, dtype=np.uint8)).save(solid)
        manifest_path = extract_views([solid], ExtractorConfig(output_dir=tmp_path / "ws"))
        payload = json.loads(manifest_path.read_text())
        assert payload["views"][0]["mask_scores"] == []
        emb = read_embeddings(tmp_path / "ws" / "view_000.emb")
        assert emb.shape == (0, payload["embedding_dim"])
        label = np.asarray(Image.open(tmp_path / "ws" / "view_000.png"))
        assert not label.any()

    def test_same_image_twice_same_mask_count(self, tmp_path):
        extract_views([SAMPLES[0], SAMPLES[0]], ExtractorConfig(output_dir=tmp_path / "ws"))
        payload = json.loads((tmp_path / "ws" / "manifest.json").read_text())
        counts = [len(v["mask_scores"]) for v in payload["views"]]
        assert counts[0] == counts[1]

    def test_empty_phrase_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            embed_text([], ExtractorConfig(), tmp_path / "t.emb")

    def test_embed_text_order_and_norms(self, tmp_path):
        rows = embed_text(["object", "things", "stuff"], ExtractorConfig(), tmp_path / "t.emb")
        assert rows.shape[0] == 3
        stored = read_embeddings(tmp_path / "t.emb")
        assert stored.shape == rows.shape
        assert np.array_equal(stored[0], rows[0].astype(np.float32))


class TestCli:
    def test_missing_image_exits_2(self, tmp_path):
        assert run_command(["extract", "--images", "nope.png", "--out", str(tmp_path)]) == 2

    def test_unknown_flag_exits_2(self):
        assert run_command(["extract", "--wat"]) == 2

    def test_embed_text_cli(self, tmp_path):
        out = tmp_path / "phrases.emb"
        assert run_command(["embed-text", "--phrases", "object", "--out", str(out)]) == 0
        assert read_embeddings(out).shape == (1, 64)


class TestAdapterIntegration:
    def test_criterion_10_end_to_end(self, tmp_path):
        """Acceptance 10: extractor output drives the primary CLI with exit 0."""
        ws = tmp_path / "ws"
        assert run_command(["extract", "--images", *map(str, SAMPLES), "--out", str(ws)]) == 0
        assert run_command(
            ["embed-text", "--phrases", "red box", "--out", str(tmp_path / "query.emb")]
        ) == 0
        assert run_command(
            ["embed-text", "--phrases", "object", "things", "stuff",
             "--out", str(tmp_path / "canon.emb")]
        ) == 0

        steps = [
            ("bank", "build", "--manifest", ws / "manifest.json", "--lambda", "1.2",
             "--seed", "0", "--out", tmp_path / "bank.bin", tmp_path / "maps"),
            ("lift", "--scene", ws / "scene.ply", "--manifest", ws / "manifest.json",
             "--maps", tmp_path / "maps", "--mode", "pixel",
             "--out", tmp_path / "lifted.ply"),
            ("render", "--scene", tmp_path / "lifted.ply", "--bank", tmp_path / "bank.bin",
             "--camera", ws / "cameras" / "view_000.json",
             "--features-out", tmp_path / "features.bin",
             "--out", tmp_path / "rgb.png", tmp_path / "sem.bin"),
            ("query", "--features", tmp_path / "features.bin",
             "--query", tmp_path / "query.emb", "--canon", tmp_path / "canon.emb",
             "--tau", "10", "--out", tmp_path / "relevancy.png", tmp_path / "mask.png"),
        ]
        for step in steps:
            result = primary(*step)
            assert result.returncode == 0, f"{step[0]} failed: {result.stderr}"
        assert (tmp_path / "rgb.png").exists()
        assert (tmp_path / "mask.png").exists()
        print("ACCEPTANCE 10: PASS - extractor workspace drives bank/lift/render/query "
              "end-to-end with exit code 0")

    def test_projection_mode_lift_also_works(self, tmp_path):
        ws = tmp_path / "ws"
        assert run_command(["extract", "--images", str(SAMPLES[0]), "--out", str(ws)]) == 0
        result = primary(
            "bank", "build", "--manifest", ws / "manifest.json",
            "--out", tmp_path / "bank.bin", tmp_path / "maps",
        )
        assert result.returncode == 0, result.stderr
        result = primary(
            "lift", "--scene", ws / "scene.ply", "--manifest", ws / "manifest.json",
            "--maps", tmp_path / "maps", "--mode", "project",
            "--out", tmp_path / "lifted.ply",
        )
        assert result.returncode == 0, result.stderr

import json
import subprocess
import sys

import numpy as np
import pytest

from segsplat.cli import run_command
from segsplat.io_formats import read_bank, read_label_map, read_scene_ply


def run(argv):
    return run_command([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth demo workspace shared by the pipeline tests."""
    ws = tmp_path_factory.mktemp("ws")
    assert run(["synth", "--out", ws, "--kind", "demo", "--seed", "0"]) == 0
    return ws


class TestSynthCommand:
    def test_random_kind(self, tmp_path):
        assert run(["synth", "--out", tmp_path, "--kind", "random", "--gaussians", "50"]) == 0
        assert (tmp_path / "scene.ply").exists()
        assert (tmp_path / "camera.json").exists()
        assert len(read_scene_ply(tmp_path / "scene.ply")) == 50


class TestBankBuild:
    def test_build_prints_m_and_writes_outputs(self, workspace, tmp_path, capsys):
        code = run(
            [
                "bank", "build",
                "--manifest", workspace / "manifest.json",
                "--lambda", "1.0",
                "--seed", "0",
                "--out", tmp_path / "bank.bin", tmp_path / "maps",
            ]
        )
        assert code == 0
        assert capsys.readouterr().out.strip() == "M = 3"
        bank = read_bank(tmp_path / "bank.bin")
        assert bank.size == 3
        for i in range(2):
            maps = read_label_map(tmp_path / "maps" / f"view_{i:03d}.png")
            assert set(np.unique(maps)) <= {0, 1, 2, 3}
        assert (tmp_path / "bank.bin.json").exists()  # sidecar manifest

    def test_missing_manifest_is_usage_error(self, tmp_path):
        code = run(
            ["bank", "build", "--manifest", tmp_path / "nope.json",
             "--out", tmp_path / "b.bin", tmp_path / "maps"]
        )
        assert code == 2


class TestPipeline:
    def test_full_chain(self, workspace, tmp_path):
        bank = tmp_path / "bank.bin"
        maps = tmp_path / "maps"
        assert run(
            ["bank", "build", "--manifest", workspace / "manifest.json",
             "--lambda", "1.0", "--seed", "0", "--out", bank, maps]
        ) == 0

        lifted = tmp_path / "lifted.ply"
        assert run(
            ["lift", "--scene", workspace / "scene.ply",
             "--manifest", workspace / "manifest.json",
             "--maps", maps, "--mode", "pixel", "--out", lifted]
        ) == 0
        # the demo scene is planted with the same bands the bank recovers
        assert np.array_equal(
            read_scene_ply(lifted).semantic_indices,
            read_scene_ply(workspace / "scene.ply").semantic_indices,
        )

        rgb = tmp_path / "rgb.png"
        sem = tmp_path / "sem.bin"
        feats = tmp_path / "features.bin"
        assert run(
            ["render", "--scene", lifted, "--bank", bank,
             "--camera", workspace / "cameras" / "heldout.json",
             "--config", workspace / "settings.json",
             "--features-out", feats, "--out", rgb, sem]
        ) == 0
        assert rgb.exists() and sem.exists() and feats.exists()

        relevancy = tmp_path / "relevancy.png"
        mask = tmp_path / "mask.png"
        assert run(
            ["query", "--features", feats,
             "--query", workspace / "queries.emb", "--query-row", "0",
             "--canon", workspace / "canonicals.emb",
             "--tau", "10", "--out", relevancy, mask]
        ) == 0
        pred = np.asarray(__import__("PIL.Image", fromlist=["Image"]).open(mask)) > 0
        assert pred.sum() > 0

        report = tmp_path / "report.json"
        assert run(
            ["eval",
             "--mask", "band_1", mask, workspace / "gt" / "band_1.png",
             "--out", report]
        ) == 0
        payload = json.loads(report.read_text())
        assert payload["per_query_iou"]["band_1"] >= 0.99
        assert payload["miou"] >= 0.99

    def test_eval_image_metrics(self, workspace, tmp_path):
        rgb = tmp_path / "rgb.png"
        assert run(
            ["render", "--scene", workspace / "scene.ply",
             "--camera", workspace / "cameras" / "heldout.json",
             "--config", workspace / "settings.json", "--out", rgb]
        ) == 0
        report = tmp_path / "r.json"
        assert run(["eval", "--image", rgb, "--ref", rgb, "--out", report]) == 0
        payload = json.loads(report.read_text())
        assert payload["psnr_db"] == "inf"
        assert payload["ssim"] == 1.0

    def test_byte_identical_reruns(self, workspace, tmp_path):
        outs = []
        for name in ("one", "two"):
            rgb = tmp_path / f"{name}.png"
            sem = tmp_path / f"{name}.bin"
            assert run(
                ["render", "--scene", workspace / "scene.ply",
                 "--bank", workspace / "bank.bin",
                 "--camera", workspace / "cameras" / "heldout.json",
                 "--config", workspace / "settings.json", "--out", rgb, sem]
            ) == 0
            outs.append((rgb.read_bytes(), sem.read_bytes()))
        assert outs[0] == outs[1]


class TestErrors:
    def test_unknown_flag_exits_2(self):
        assert run(["render", "--frobnicate"]) == 2

    def test_unknown_command_exits_2(self):
        assert run(["transmogrify"]) == 2

    def test_missing_file_exits_2(self, tmp_path):
        assert run(
            ["render", "--scene", tmp_path / "nope.ply",
             "--camera", tmp_path / "nope.json", "--out", tmp_path / "x.png"]
        ) == 2

    def test_corrupt_scene_exits_1(self, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_bytes(b"not a ply at all")
        cam = tmp_path / "cam.json"
        cam.write_text(
            json.dumps(
                {
                    "world_to_camera": np.eye(4).tolist(),
                    "fx": 8, "fy": 8, "cx": 4, "cy": 4,
                    "width": 8, "height": 8, "near": 0.1, "far": 10,
                }
            )
        )
        assert run(["render", "--scene", bad, "--camera", cam, "--out", tmp_path / "x.png"]) == 1

    def test_query_without_sidecar_exits_2(self, tmp_path):
        from segsplat.io_formats import write_embeddings

        feats = tmp_path / "f.bin"
        write_embeddings(np.zeros((4, 2), dtype=np.float32), feats)
        q = tmp_path / "q.emb"
        write_embeddings(np.eye(1, 2, dtype=np.float32), q)
        assert run(
            ["query", "--features", feats, "--query", q, "--canon", q,
             "--out", tmp_path / "r.png", tmp_path / "m.png"]
        ) == 2


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "segsplat.cli", "synth", "--out",
             str(tmp_path / "d"), "--kind", "random", "--gaussians", "10"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "d" / "scene.ply").exists()

    def test_help_exits_zero(self):
        assert run(["--help"]) == 0

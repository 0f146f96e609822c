import numpy as np
import pytest

from segsplat.core import Camera, GaussianCloud
from segsplat.rasterizer import (
    RenderSettings,
    project_gaussian,
    render,
    render_bruteforce,
)
from segsplat.synth import make_random_scene, rgb_to_dc

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def default_camera(size=64, f=None):
    f = f or size
    return Camera(np.eye(4), f, f, size / 2, size / 2, size, size, 0.1, 100.0)


def single_gaussian(position, opacity, scale, rgb, index=0):
    return GaussianCloud(
        positions=np.array([position], dtype=float),
        opacities=np.array([opacity], dtype=float),
        scales=np.full((1, 3), scale, dtype=float),
        rotations=IDENTITY_Q[None],
        sh=rgb_to_dc(np.asarray(rgb, dtype=float))[None, None, :],
        semantic_indices=np.array([index], dtype=np.int32),
    )


def merge(*clouds):
    return GaussianCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.opacities for c in clouds]),
        np.concatenate([c.scales for c in clouds]),
        np.concatenate([c.rotations for c in clouds]),
        np.concatenate([c.sh for c in clouds]),
        np.concatenate([c.semantic_indices for c in clouds]),
    )


class TestProjection:
    def test_on_axis_projects_to_principal_point(self):
        cam = default_camera()
        cloud = single_gaussian([0, 0, 3.0], 0.8, 0.1, [1, 0, 0])
        proj = project_gaussian(cloud, cam)
        assert np.allclose(proj.mean2d, [cam.cx, cam.cy])
        assert proj.depth == pytest.approx(3.0)

    def test_isotropic_covariance_matches_analytic_jacobian(self):
        # on-axis, sigma^2 I covariance: cov2d = (f sigma / d)^2 I + low_pass I
        cam = default_camera()
        d, sigma = 2.0, 0.05
        cloud = single_gaussian([0, 0, d], 0.8, sigma, [1, 0, 0])
        settings = RenderSettings()
        proj = project_gaussian(cloud, cam, settings)
        expected = (cam.fx * sigma / d) ** 2
        assert np.allclose(
            proj.cov2d, np.diag([expected + settings.low_pass] * 2), atol=1e-6
        )

    def test_behind_camera_absent(self):
        cam = default_camera()
        assert project_gaussian(single_gaussian([0, 0, -1.0], 0.8, 0.1, [1, 0, 0]), cam) is None

    def test_beyond_far_absent(self):
        cam = default_camera()
        assert project_gaussian(single_gaussian([0, 0, 1e4], 0.8, 0.1, [1, 0, 0]), cam) is None

    def test_far_off_image_absent(self):
        cam = default_camera()
        assert project_gaussian(single_gaussian([50.0, 0, 2.0], 0.8, 0.01, [1, 0, 0]), cam) is None

    def test_cov2d_positive_definite(self):
        rng = np.random.default_rng(0)
        cloud, cam = make_random_scene(1, 200)
        for i in rng.choice(len(cloud), 50, replace=False):
            proj = project_gaussian(
                GaussianCloud(
                    cloud.positions[i : i + 1],
                    cloud.opacities[i : i + 1],
                    cloud.scales[i : i + 1],
                    cloud.rotations[i : i + 1],
                    cloud.sh[i : i + 1],
                    cloud.semantic_indices[i : i + 1],
                ),
                cam,
            )
            if proj is not None:
                assert np.all(np.linalg.eigvalsh(proj.cov2d) > 0)


class TestRenderExamples:
    def test_empty_scene(self):
        cam = default_camera(32)
        settings = RenderSettings(background_color=(0.1, 0.2, 0.3))
        buf = render(GaussianCloud.empty(), 4, cam, settings)
        assert np.allclose(buf.color, [0.1, 0.2, 0.3])
        assert np.all(buf.semantic == 0.0)
        assert np.all(buf.transmittance == 1.0)

    def test_single_saturating_splat(self):
        # opaque, huge extent, red, index 1: the alpha clamp caps at 0.99
        cam = default_camera()
        center_world = (31.5 - cam.cx) * 2.0 / cam.fx
        cloud = single_gaussian([center_world, center_world, 2.0], 1.0, 1e3, [1, 0, 0], index=1)
        buf = render(cloud, 1, cam, RenderSettings())
        pix = buf.color[31, 31]
        assert pix[0] == pytest.approx(0.99, abs=1e-9)
        assert pix[1] == pix[2] == pytest.approx(0.0, abs=1e-12)
        assert buf.semantic[31, 31, 0] == pytest.approx(0.99, abs=1e-12)
        assert buf.transmittance[31, 31] == pytest.approx(0.01, abs=1e-12)

    def test_two_coincident_splats_hand_composited(self):
        # front red (depth 2) and back blue (depth 3), both opacity 0.5 and
        # aligned with the center of pixel (31, 31):
        # C = 0.5 red + 0.25 blue + 0.25 bg, E = (0.5, 0.25), T = 0.25
        cam = default_camera()
        off = 31.5 - cam.cx
        front = single_gaussian([off * 2 / cam.fx, off * 2 / cam.fy, 2.0], 0.5, 1e3, [1, 0, 0], 1)
        back = single_gaussian([off * 3 / cam.fx, off * 3 / cam.fy, 3.0], 0.5, 1.5e3, [0, 0, 1], 2)
        settings = RenderSettings(background_color=(1.0, 1.0, 1.0))
        buf = render(merge(front, back), 2, cam, settings)
        assert buf.semantic[31, 31].tolist() == [0.5, 0.25]
        assert buf.transmittance[31, 31] == 0.25
        expected = 0.5 * np.array([1, 0, 0]) + 0.25 * np.array([0, 0, 1]) + 0.25
        assert np.allclose(buf.color[31, 31], expected, atol=1e-12)

    def test_depth_order_not_insertion_order(self):
        cam = default_camera()
        off = 31.5 - cam.cx
        front = single_gaussian([off * 2 / cam.fx, off * 2 / cam.fy, 2.0], 0.5, 1e3, [1, 0, 0], 1)
        back = single_gaussian([off * 3 / cam.fx, off * 3 / cam.fy, 3.0], 0.5, 1.5e3, [0, 0, 1], 2)
        a = render(merge(front, back), 2, cam, RenderSettings())
        b = render(merge(back, front), 2, cam, RenderSettings())
        assert np.array_equal(a.semantic[31, 31], b.semantic[31, 31])

    def test_semantic_index_exceeding_bank_errors(self):
        cam = default_camera(16)
        cloud = single_gaussian([0, 0, 2.0], 0.5, 0.1, [1, 0, 0], index=9)
        with pytest.raises(ValueError):
            render(cloud, 4, cam)

    def test_bank_size_zero_renders_color_only(self):
        cam = default_camera(16)
        cloud = single_gaussian([0, 0, 2.0], 0.5, 0.1, [1, 0, 0], index=9)
        buf = render(cloud, 0, cam)
        assert buf.semantic is None


class TestBruteforceOracle:
    def test_empty_scene_matches_render(self):
        cam = default_camera(32)
        a = render(GaussianCloud.empty(), 3, cam)
        b = render_bruteforce(GaussianCloud.empty(), 3, cam)
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.semantic, b.semantic)
        assert np.array_equal(a.transmittance, b.transmittance)

    def test_three_splats_match_hand_computation(self):
        # three coincident full-coverage splats, opacities 0.5/0.4/0.2:
        # w1 = 0.5, w2 = 0.4*0.5 = 0.2, w3 = 0.2*0.3 = 0.06, T = 0.24
        cam = default_camera()
        off = 31.5 - cam.cx
        g1 = single_gaussian([off * 2 / cam.fx, off * 2 / cam.fy, 2.0], 0.5, 1e3, [1, 0, 0], 1)
        g2 = single_gaussian([off * 3 / cam.fx, off * 3 / cam.fy, 3.0], 0.4, 1.5e3, [0, 1, 0], 2)
        g3 = single_gaussian([off * 4 / cam.fx, off * 4 / cam.fy, 4.0], 0.2, 2e3, [0, 0, 1], 3)
        buf = render_bruteforce(merge(g1, g2, g3), 3, cam, RenderSettings())
        assert np.allclose(buf.semantic[31, 31], [0.5, 0.2, 0.06], atol=1e-12)
        assert buf.transmittance[31, 31] == pytest.approx(0.24, abs=1e-12)
        assert np.allclose(buf.color[31, 31], [0.5, 0.2, 0.06], atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_randomized_equivalence(self, seed):
        cloud, cam = make_random_scene(seed, 500, bank_size=8)
        settings = RenderSettings(transmittance_stop=0.0)
        a = render(cloud, 8, cam, settings)
        b = render_bruteforce(cloud, 8, cam, settings)
        assert np.abs(a.color - b.color).max() <= 1e-5
        assert np.abs(a.semantic - b.semantic).max() <= 1e-5
        assert np.abs(a.transmittance - b.transmittance).max() <= 1e-5

    def test_early_out_error_bounded_by_stop_threshold(self):
        # stacked near-opaque splats force the early-out; the deviation from
        # the no-early-out oracle stays below transmittance_stop
        n = 30
        cam = default_camera(32)
        positions = np.tile([0.0, 0.0, 2.0], (n, 1)) + np.arange(n)[:, None] * [0, 0, 0.01]
        cloud = GaussianCloud(
            positions,
            np.full(n, 0.9),
            np.full((n, 3), 0.5),
            np.tile(IDENTITY_Q, (n, 1)),
            np.tile(rgb_to_dc(np.array([1.0, 0.2, 0.1]))[None, None, :], (n, 1, 1)),
            np.ones(n, dtype=np.int32),
        )
        settings = RenderSettings()
        a = render(cloud, 1, cam, settings)
        b = render_bruteforce(cloud, 1, cam, settings)
        assert a.transmittance.min() >= 0.0
        assert np.abs(a.color - b.color).max() <= settings.transmittance_stop + 1e-12
        assert np.abs(a.transmittance - b.transmittance).max() <= settings.transmittance_stop


class TestRenderProperties:
    def test_weight_conservation(self):
        # label every gaussian so the semantic channels collect all weights:
        # sum_m E_m + T telescopes to exactly 1
        for seed in (0, 1):
            cloud, cam = make_random_scene(seed, 300, bank_size=4)
            labeled = cloud.with_semantic_indices(cloud.semantic_indices % 4 + 1)
            for stop in (0.0, 1e-4):
                buf = render(labeled, 4, cam, RenderSettings(transmittance_stop=stop))
                total = buf.semantic.sum(axis=2) + buf.transmittance
                assert np.abs(total - 1.0).max() <= 1e-6

    def test_semantic_bounds(self):
        cloud, cam = make_random_scene(3, 400, bank_size=6)
        buf = render(cloud, 6, cam)
        assert buf.semantic.min() >= 0.0
        assert buf.semantic.max() <= 1.0 + 1e-6
        assert (buf.semantic.sum(axis=2) - 1.0).max() <= 1e-6

    def test_color_invariance_bit_identical(self):
        for seed in range(3):
            cloud, cam = make_random_scene(seed, 300, bank_size=8)
            with_sem = render(cloud, 8, cam)
            without = render(cloud, 0, cam)
            assert with_sem.color.tobytes() == without.color.tobytes()
            assert with_sem.transmittance.tobytes() == without.transmittance.tobytes()

    def test_determinism_across_runs_and_workers(self, monkeypatch):
        cloud, cam = make_random_scene(5, 300, bank_size=4)
        monkeypatch.setenv("SEGSPLAT_THREADS", "1")
        a = render(cloud, 4, cam)
        monkeypatch.setenv("SEGSPLAT_THREADS", "4")
        b = render(cloud, 4, cam)
        c = render(cloud, 4, cam)
        for x in (b, c):
            assert a.color.tobytes() == x.color.tobytes()
            assert a.semantic.tobytes() == x.semantic.tobytes()
            assert a.transmittance.tobytes() == x.transmittance.tobytes()

    def test_semantic_view_invariance(self):
        # a single labeled gaussian seen from 5 cameras: wherever coverage
        # exceeds 0.5 the argmax semantic channel is its index
        rng = np.random.default_rng(2)
        cloud = single_gaussian([0.0, 0.0, 0.0], 0.9, 0.3, [1, 0, 0], index=3)
        for _ in range(5):
            eye = rng.normal(size=3)
            eye = 3.0 * eye / np.linalg.norm(eye)
            forward = -eye / np.linalg.norm(eye)
            up = np.array([0.0, 1.0, 0.0])
            if abs(forward @ up) > 0.95:
                up = np.array([1.0, 0.0, 0.0])
            right = np.cross(up, forward)
            right /= np.linalg.norm(right)
            down = np.cross(forward, right)
            rot = np.stack([right, down, forward])
            w2c = np.eye(4)
            w2c[:3, :3] = rot
            w2c[:3, 3] = -rot @ eye
            cam = Camera(w2c, 48, 48, 24, 24, 48, 48, 0.1, 50.0)
            buf = render(cloud, 4, cam)
            covered = (1.0 - buf.transmittance) > 0.5
            assert covered.any()
            assert np.all(buf.semantic[covered].argmax(axis=1) == 2)

    def test_nonuniform_image_size(self):
        cam = Camera(np.eye(4), 50, 50, 20, 12, 40, 24, 0.1, 100.0)
        cloud, _ = make_random_scene(7, 100, bank_size=3)
        settings = RenderSettings(transmittance_stop=0.0, tile_size=7)
        a = render(cloud, 3, cam, settings)
        b = render_bruteforce(cloud, 3, cam, settings)
        assert np.abs(a.color - b.color).max() <= 1e-5
        assert a.color.shape == (24, 40, 3)

"""Camera rays, depth sampling, and volume compositing."""

import numpy as np
import pytest

from synfield import render
from synfield.errors import DomainError
from synfield.render import Camera, RaySampleBatch, composite, composite_backward


def naive_composite(sigmas, colors, deltas, bg):
    """Straightforward per-ray accumulation loop, kept independent on purpose."""
    r, s = sigmas.shape
    out = np.zeros((r, 3))
    accs = np.zeros(r)
    for i in range(r):
        trans = 1.0
        for k in range(s):
            alpha = 1.0 - np.exp(-sigmas[i, k] * deltas[i, k])
            w = trans * alpha
            out[i] += w * colors[i, k]
            accs[i] += w
            trans *= np.exp(-sigmas[i, k] * deltas[i, k])
        out[i] += (1.0 - accs[i]) * bg
    return out, accs


def make_camera(width=9, height=9, angle=0.8, c2w=None, near=2.0, far=6.0):
    return Camera(width=width, height=height, camera_angle_x=angle,
                  c2w=np.eye(4) if c2w is None else c2w, near=near, far=far)


class TestCamera:
    def test_focal(self):
        cam = make_camera(width=800, angle=np.pi / 2)
        assert cam.focal == pytest.approx(400.0)

    def test_bad_angle(self):
        with pytest.raises(ValueError):
            make_camera(angle=0.0)

    def test_bad_near_far(self):
        with pytest.raises(ValueError):
            make_camera(near=5.0, far=2.0)

    def test_non_orthonormal_rejected(self):
        c2w = np.eye(4)
        c2w[0, 0] = 1.5
        with pytest.raises(ValueError):
            make_camera(c2w=c2w)

    def test_look_at_points_back_away_from_target(self):
        c2w = render.look_at((4.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        # camera -z axis (third column negated) points at the target
        assert np.allclose(-c2w[:3, 2], [-1.0, 0.0, 0.0])
        assert np.allclose(c2w[:3, :3] @ c2w[:3, :3].T, np.eye(3), atol=1e-12)


class TestGenerateRays:
    def test_center_pixel_is_optical_axis(self):
        cam = make_camera(width=9, height=9)
        _, dirs = render.generate_rays(cam, np.array([[4, 4]]))
        assert np.allclose(dirs[0], [0.0, 0.0, -1.0], atol=1e-12)

    def test_unit_norm_and_matches_manual_rotation(self):
        rng = np.random.default_rng(3)
        c2w = render.look_at(rng.normal(size=3) * 3.0 + 4.0, (0.0, 0.0, 0.0))
        cam = make_camera(width=8, height=6, c2w=c2w)
        pixels = np.array([[0, 0], [7, 5], [3, 2]])
        origins, dirs = render.generate_rays(cam, pixels)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        f = cam.focal
        for p, d in zip(pixels, dirs):
            cam_dir = np.array([(p[0] + 0.5 - 4.0) / f, -(p[1] + 0.5 - 3.0) / f, -1.0])
            world = c2w[:3, :3] @ cam_dir
            assert np.allclose(d, world / np.linalg.norm(world), atol=1e-12)
        assert np.allclose(origins, c2w[:3, 3])

    def test_out_of_bounds_pixel(self):
        cam = make_camera()
        with pytest.raises(DomainError):
            render.generate_rays(cam, np.array([[9, 0]]))


class TestSampleAlong:
    def test_even_spacing(self):
        o = np.zeros((1, 3))
        d = np.array([[0.0, 0.0, -1.0]])
        b = render.sample_along(o, d, 2, 0.0, 1.0)
        assert np.allclose(b.taus, [[0.0, 0.5]])
        assert np.allclose(b.deltas, [[0.5, 0.5]])

    def test_single_sample(self):
        b = render.sample_along(np.zeros((1, 3)), np.array([[0, 0, -1.0]]), 1, 2.0, 6.0)
        assert np.allclose(b.taus, [[2.0]])
        assert np.allclose(b.deltas, [[4.0]])

    def test_stratified_stays_in_bins(self):
        o = np.zeros((100, 3))
        d = np.tile([0.0, 0.0, -1.0], (100, 1))
        hits = 0
        for seed in range(100):
            b = render.sample_along(o, d, 7, 1.0, 3.0, stratified=True,
                                    rng=np.random.default_rng(seed))
            width = 2.0 / 7
            lo = 1.0 + np.arange(7) * width
            assert np.all(b.taus >= lo) and np.all(b.taus < lo + width)
            assert np.all(b.deltas > 0)
            hits += 1
        assert hits == 100

    def test_positions_formula(self):
        o = np.array([[1.0, 2.0, 3.0]])
        d = np.array([[0.0, 1.0, 0.0]])
        b = render.sample_along(o, d, 4, 1.0, 5.0)
        assert np.allclose(b.positions, o[:, None, :] + b.taus[..., None] * d[:, None, :])


class TestComposite:
    def test_transparent_gives_background(self):
        rgb, acc, _ = composite(np.zeros((3, 5)), np.zeros((3, 5, 3)),
                                np.full((3, 5), 0.1), np.ones(3))
        assert np.allclose(rgb, 1.0)
        assert np.allclose(acc, 0.0)

    def test_half_opacity_single_sample(self):
        sig = np.array([[np.log(2.0)]])
        col = np.array([[[1.0, 0.0, 0.0]]])
        rgb, acc, _ = composite(sig, col, np.ones((1, 1)), np.zeros(3))
        assert np.allclose(rgb, [[0.5, 0.0, 0.0]])
        assert acc[0] == pytest.approx(0.5)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(5)
        sig = rng.random((40, 5)) * 3.0
        col = rng.random((40, 5, 3))
        dl = rng.random((40, 5)) * 0.3 + 0.01
        bg = np.array([1.0, 0.5, 0.25])
        rgb, acc, _ = composite(sig, col, dl, bg)
        exp_rgb, exp_acc = naive_composite(sig, col, dl, bg)
        assert np.abs(rgb - exp_rgb).max() < 1e-12
        assert np.abs(acc - exp_acc).max() < 1e-12

    def test_negative_density_rejected(self):
        with pytest.raises(DomainError):
            composite(np.array([[-0.1]]), np.zeros((1, 1, 3)), np.ones((1, 1)),
                      np.zeros(3))

    def test_transmittance_invariants(self):
        rng = np.random.default_rng(9)
        sig = rng.random((200, 8)) * 5.0
        col = rng.random((200, 8, 3))
        dl = rng.random((200, 8)) * 0.5 + 1e-3
        _, acc, cache = composite(sig, col, dl, np.zeros(3))
        assert np.allclose(cache.trans[:, 0], 1.0)
        assert np.all(np.diff(cache.trans, axis=1) <= 1e-15)
        assert np.all(acc >= -1e-12) and np.all(acc <= 1.0 + 1e-12)

    def test_appending_zero_density_changes_nothing(self):
        rng = np.random.default_rng(11)
        sig = rng.random((10, 4))
        col = rng.random((10, 4, 3))
        dl = np.full((10, 4), 0.2)
        bg = np.full(3, 0.7)
        rgb1, acc1, _ = composite(sig, col, dl, bg)
        sig2 = np.concatenate([sig, np.zeros((10, 2))], axis=1)
        col2 = np.concatenate([col, rng.random((10, 2, 3))], axis=1)
        dl2 = np.concatenate([dl, np.full((10, 2), 0.2)], axis=1)
        rgb2, acc2, _ = composite(sig2, col2, dl2, bg)
        assert np.allclose(rgb1, rgb2, atol=1e-14)
        assert np.allclose(acc1, acc2, atol=1e-14)

    def test_halving_refinement_is_invariant(self):
        # piecewise-constant density: split samples compose exactly, since
        # w1 + w2 = T(1 - e^{-s d/2}) + T e^{-s d/2}(1 - e^{-s d/2}) = T(1 - e^{-s d})
        rng = np.random.default_rng(13)
        sig = rng.random((5, 8)) * 2.0
        col = rng.random((5, 8, 3))
        bg = np.zeros(3)

        def render_at(splits):
            s = np.repeat(sig, splits, axis=1)
            c = np.repeat(col, splits, axis=1)
            d = np.full_like(s, 0.25 / splits)
            rgb, _, _ = composite(s, c, d, bg)
            return rgb

        base = render_at(1)
        assert np.abs(render_at(2) - base).max() < 1e-12
        assert np.abs(render_at(4) - base).max() < 1e-12

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(17)
        sig = rng.random((3, 4)) * 2.0 + 0.1
        col = rng.random((3, 4, 3))
        dl = rng.random((3, 4)) * 0.3 + 0.05
        bg = np.array([0.3, 0.9, 0.1])
        probe = rng.normal(size=(3, 3))

        def scalar():
            rgb, _, _ = composite(sig, col, dl, bg)
            return float(np.sum(rgb * probe))

        _, _, cache = composite(sig, col, dl, bg)
        d_sig, d_col = composite_backward(cache, probe)
        for arr, grad in ((sig, d_sig), (col, d_col)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + 1e-6
                hi = scalar()
                arr[idx] = orig - 1e-6
                lo = scalar()
                arr[idx] = orig
                assert grad[idx] == pytest.approx((hi - lo) / 2e-6, rel=1e-5, abs=1e-9)

"""FieldModel forward semantics and full-image rendering."""

import numpy as np
import pytest

from synfield import data as datalib
from synfield.model import build_model, forward_samples, normalize_points, render_view


def model3d(seed=0, **kw):
    base = dict(mode="static3d", channels=2, spatial_res=8, width=16,
                dtype=np.float64)
    base.update(kw)
    return build_model(rng=np.random.default_rng(seed), **base)


class TestForwardSamples:
    def test_shapes_and_ranges(self):
        m = model3d()
        pts = np.random.default_rng(1).random((40, 3))
        sigma, rgb, _ = forward_samples(m, pts)
        assert sigma.shape == (40,) and rgb.shape == (40, 3)
        assert np.all(sigma >= 0) and np.all((rgb >= 0) & (rgb <= 1))

    def test_gamma_zero_matches_use_planes_false(self):
        m = model3d(seed=2)
        m2 = build_model(mode="static3d", channels=2, spatial_res=8, width=16,
                         use_planes=False, rng=np.random.default_rng(2),
                         dtype=np.float64)
        pts = np.random.default_rng(3).random((10, 3))
        s1, c1, _ = forward_samples(m, pts, gamma=np.zeros(2))
        s2, c2, _ = forward_samples(m2, pts)
        assert np.allclose(s1, s2) and np.allclose(c1, c2)

    def test_coord_only_ignores_grid_values(self):
        m = model3d(seed=4, use_planes=False)
        pts = np.random.default_rng(5).random((10, 3))
        s1, c1, _ = forward_samples(m, pts)
        for p in m.planes.planes:
            p[...] = 123.0
        s2, c2, _ = forward_samples(m, pts)
        assert np.array_equal(s1, s2) and np.array_equal(c1, c2)

    def test_parameters_complete(self):
        m = model3d()
        names = set(m.parameters())
        assert {"plane0", "plane1", "plane2", "factor0", "factor1",
                "factor2"} <= names
        assert {"enc_w0", "enc_b3", "rgb_w0", "rgb_b1"} <= names

    def test_dynamic_needs_four_coords(self):
        m = build_model(mode="dynamic4d", channels=2, spatial_res=8, time_res=4,
                        width=16, rng=np.random.default_rng(0), dtype=np.float64)
        pts = np.random.default_rng(1).random((5, 4))
        sigma, rgb, _ = forward_samples(m, pts)
        assert sigma.shape == (5,)


class TestNormalizePoints:
    def test_inside_and_clipping(self):
        pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        u, inside = normalize_points(pts, [-1.5] * 3, [1.5] * 3)
        assert np.allclose(u[0], 0.5)
        assert inside[0] and not inside[1]
        assert u.max() <= 1.0 and u.min() >= 0.0


class TestRenderView:
    def test_empty_model_near_background(self):
        # fresh random model renders something finite and in range
        m = model3d(seed=6)
        cam = datalib.orbit_cameras(1, size=12)[0]
        img = render_view(m, cam, 8, ([-1.5] * 3, [1.5] * 3), [1.0, 1.0, 1.0])
        assert img.shape == (12, 12, 3)
        assert np.all((img >= 0.0) & (img <= 1.0))

    def test_chunking_invariant(self):
        m = model3d(seed=7)
        cam = datalib.orbit_cameras(1, size=10)[0]
        a = render_view(m, cam, 6, ([-1.5] * 3, [1.5] * 3), [1, 1, 1], chunk=7)
        b = render_view(m, cam, 6, ([-1.5] * 3, [1.5] * 3), [1, 1, 1], chunk=1000)
        assert np.allclose(a, b, atol=1e-12)

    def test_dynamic_requires_time(self):
        m = build_model(mode="dynamic4d", channels=2, spatial_res=8, time_res=4,
                        width=16, rng=np.random.default_rng(0), dtype=np.float64)
        cam = datalib.orbit_cameras(1, size=8)[0]
        with pytest.raises(ValueError, match="time"):
            render_view(m, cam, 4, ([-1.5] * 3, [1.5] * 3), [1, 1, 1])
        img = render_view(m, cam, 4, ([-1.5] * 3, [1.5] * 3), [1, 1, 1], time=0.5)
        assert img.shape == (8, 8, 3)

    def test_astype_round_trip(self):
        m = model3d(seed=8)
        m32 = m.astype(np.float32)
        assert m32.planes.dtype == np.float32
        assert m32.mlp.layers[0][0].dtype == np.float32
        pts = np.random.default_rng(9).random((5, 3))
        s64, _, _ = forward_samples(m, pts)
        s32, _, _ = forward_samples(m32, pts)
        assert np.allclose(s64, s32, atol=1e-4)

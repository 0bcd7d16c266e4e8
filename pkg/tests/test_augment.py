import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fogbridge.augment import (
    AugmentConfig,
    GeometricDraw,
    adjust_contrast,
    adjust_hue,
    augment_geometric_only,
    augment_source,
    backscatter,
    depth_noise,
    paired_geometric,
    points_dropout,
    rgb_jitter,
    warp_raster,
)
from fogbridge.synthdata import generate_scene

D_MAX = 50.0
N = 100_000


def binomial_tol(p, n, z=5.0):
    return z * np.sqrt(p * (1 - p) / n)


class TestDropout:
    def test_zero_max_is_identity(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(1, 10, (20, 20)).astype(np.float32)
        mask = np.ones((20, 20), bool)
        d, m = points_dropout(depth, mask, rng, p_max=0.0)
        assert np.array_equal(d, depth) and np.array_equal(m, mask)

    def test_forced_one_removes_everything(self):
        d, m = points_dropout(np.ones((8, 8), np.float32), np.ones((8, 8), bool), np.random.default_rng(0), p=1.0)
        assert not m.any() and not d.any()

    def test_forced_point_four_survival(self):
        mask = np.ones((N,), bool)
        _, m = points_dropout(np.ones(N, np.float32), mask, np.random.default_rng(1), p=0.4)
        assert abs(m.mean() - 0.6) < min(0.01, binomial_tol(0.6, N))

    def test_rate_drawn_per_sample(self):
        rng = np.random.default_rng(2)
        mask = np.ones((50, 50), bool)
        rates = [1 - points_dropout(np.ones((50, 50), np.float32), mask, rng)[1].mean() for _ in range(300)]
        assert 0.0 <= min(rates) and max(rates) <= 0.45
        assert np.mean(rates) == pytest.approx(0.2, abs=0.02)

    def test_empty_mask_passes_through(self):
        d, m = points_dropout(np.zeros((4, 4), np.float32), np.zeros((4, 4), bool), np.random.default_rng(0))
        assert not m.any() and not d.any()


class TestDepthNoise:
    def test_zero_sigma_identity(self):
        depth = np.linspace(1, 40, 64, dtype=np.float32).reshape(8, 8)
        out = depth_noise(depth, np.ones((8, 8), bool), D_MAX, np.random.default_rng(0), sigma_frac=0.0)
        assert np.array_equal(out, depth)

    def test_invalid_pixels_untouched(self):
        rng = np.random.default_rng(3)
        depth = rng.uniform(1, 40, (30, 30)).astype(np.float32)
        mask = rng.random((30, 30)) > 0.5
        depth[~mask] = 0
        out = depth_noise(depth, mask, D_MAX, rng)
        assert np.array_equal(out[~mask], depth[~mask])

    def test_sigma_within_five_percent(self):
        depth = np.full(N, 25.0, np.float32)
        out = depth_noise(depth, np.ones(N, bool), D_MAX, np.random.default_rng(4))
        sd = np.std(out.astype(np.float64) - depth)
        assert abs(sd - 0.01 * D_MAX) <= 0.05 * 0.01 * D_MAX

    def test_clamped_to_range(self):
        depth = np.array([0.01, 49.99] * 500, np.float32)
        out = depth_noise(depth, np.ones(1000, bool), D_MAX, np.random.default_rng(5), sigma_frac=0.2)
        assert out.min() >= 0 and out.max() <= D_MAX

    def test_nonpositive_dmax_rejected(self):
        with pytest.raises(ValueError):
            depth_noise(np.zeros(3, np.float32), np.ones(3, bool), 0.0, np.random.default_rng(0))


class TestBackscatter:
    def test_zero_probability_identity(self):
        depth = np.zeros((10, 10), np.float32)
        mask = np.zeros((10, 10), bool)
        d, m = backscatter(depth, mask, D_MAX, np.random.default_rng(0), p=0.0)
        assert np.array_equal(d, depth) and np.array_equal(m, mask)

    def test_insertion_rate_and_depth_bound(self):
        depth = np.zeros(N, np.float32)
        mask = np.zeros(N, bool)
        d, m = backscatter(depth, mask, D_MAX, np.random.default_rng(6))
        assert abs(m.mean() - 0.1) < 0.01
        added = d[m]
        assert (added > 0).all()
        assert int((added >= 0.2 * D_MAX).sum()) == 0

    def test_valid_pixels_untouched(self):
        rng = np.random.default_rng(7)
        depth = rng.uniform(20, 40, (40, 40)).astype(np.float32)
        mask = rng.random((40, 40)) > 0.5
        depth[~mask] = 0
        d, m = backscatter(depth, mask, D_MAX, rng, p=0.5)
        assert np.array_equal(d[mask], depth[mask]) and m[mask].all()


class TestJitter:
    def test_zero_ranges_identity(self):
        cfg = AugmentConfig(hue_delta=0.0, saturation_delta=0.0, contrast_delta=0.0)
        rgb = np.random.default_rng(0).random((3, 6, 6)).astype(np.float32)
        assert np.array_equal(rgb_jitter(rgb, np.random.default_rng(1), cfg), rgb)

    @given(turns=st.floats(-0.5, 0.5), level=st.floats(0, 1))
    def test_hue_fixes_gray(self, turns, level):
        gray = np.full((3, 2, 2), level)
        np.testing.assert_allclose(adjust_hue(gray, turns), gray, atol=1e-12)

    def test_hue_full_turn_identity(self):
        rgb = np.random.default_rng(2).random((3, 4, 4))
        np.testing.assert_allclose(adjust_hue(rgb, 1.0), rgb, atol=1e-12)

    def test_hue_third_turn_permutes_channels(self):
        rgb = np.random.default_rng(3).random((3, 4, 4))
        out = adjust_hue(rgb, 1 / 3)
        np.testing.assert_allclose(out, rgb[[2, 0, 1]], atol=1e-12)

    def test_contrast_two_doubles_deviations(self):
        rgb = np.zeros((3, 1, 2))
        rgb[:, 0, 0], rgb[:, 0, 1] = 0.4, 0.6
        out = adjust_contrast(rgb, 2.0)
        np.testing.assert_allclose(out[:, 0, 0], 0.3)
        np.testing.assert_allclose(out[:, 0, 1], 0.7)

    def test_output_in_unit_range(self):
        rng = np.random.default_rng(4)
        rgb = rng.random((3, 16, 16)).astype(np.float32)
        for _ in range(20):
            out = rgb_jitter(rgb, rng)
            assert out.min() >= 0 and out.max() <= 1 and out.shape == rgb.shape


def _scene(seed=0):
    return generate_scene(np.random.default_rng(seed))


class TestGeometric:
    def test_identity_draw(self):
        s = _scene()
        out = paired_geometric(s, np.random.default_rng(0), draw=GeometricDraw())
        for f in ("rgb", "depth", "valid_mask", "boxes", "classes"):
            assert np.array_equal(getattr(s, f), getattr(out, f))

    def test_double_flip_is_identity(self):
        s = _scene(1)
        flip = GeometricDraw(flip=True)
        out = paired_geometric(paired_geometric(s, None, draw=flip), None, draw=flip)
        for f in ("rgb", "depth", "valid_mask", "boxes", "classes"):
            assert np.array_equal(getattr(s, f), getattr(out, f))

    def test_flip_box_mapping(self):
        s = _scene(2)
        w = s.width
        out = paired_geometric(s, None, draw=GeometricDraw(flip=True))
        x1, y1, x2, y2 = s.boxes.T
        np.testing.assert_array_equal(out.boxes, np.stack([w - x2, y1, w - x1, y2], 1))

    def test_flip_raster_mirrors(self):
        r = np.arange(24.0).reshape(4, 6)
        assert np.array_equal(warp_raster(r, GeometricDraw(flip=True)), r[:, ::-1])

    def test_integer_translation_shifts(self):
        r = np.arange(36.0).reshape(6, 6)
        out = warp_raster(r, GeometricDraw(tx=2, ty=-1))
        assert np.array_equal(out[:5, 2:], r[1:, :4])
        assert not out[:, :2].any() and not out[5].any()

    def test_boxes_out_of_frame_dropped_partial_clipped(self):
        s = _scene(3).copy()
        s.boxes = np.array([[2, 40, 10, 60], [40, 40, 90, 60]], np.float32)
        s.classes = np.array([1, 0])
        out = paired_geometric(s, None, draw=GeometricDraw(tx=-12))
        assert out.classes.tolist() == [0]
        np.testing.assert_array_equal(out.boxes, [[28, 40, 78, 60]])
        s.boxes = np.array([[80, 40, 95, 60]], np.float32)
        s.classes = np.array([2])
        out = paired_geometric(s, None, draw=GeometricDraw(tx=10))
        np.testing.assert_array_equal(out.boxes, [[90, 40, 96, 60]])

    def test_boxes_follow_content_under_scale(self):
        # a box painted into a raster must map onto the same painted region
        r = np.zeros((96, 96))
        r[30:50, 20:60] = 1
        s = _scene(4).copy()
        s.boxes = np.array([[20, 30, 60, 50]], np.float32)
        s.classes = np.array([0])
        draw = GeometricDraw(scale=1.1, tx=3, ty=-4)
        out = paired_geometric(s, None, draw=draw)
        ys, xs = np.nonzero(warp_raster(r, draw))
        np.testing.assert_allclose(out.boxes[0], [xs.min(), ys.min(), xs.max() + 1, ys.max() + 1], atol=1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_mask_commutes_with_transform(self, seed):
        rng = np.random.default_rng(seed)
        s = _scene(seed % 5)
        out = paired_geometric(s, rng)
        assert np.array_equal(out.valid_mask, out.depth > 0)
        assert out.rgb.shape == s.rgb.shape and out.depth.shape == s.depth.shape


class TestPipelines:
    def test_same_seed_same_output(self):
        s = _scene(5)
        a = augment_source(s, np.random.default_rng(9), D_MAX)
        b = augment_source(s, np.random.default_rng(9), D_MAX)
        for f in ("rgb", "depth", "valid_mask", "boxes", "e_rgb", "e_depth", "e_max"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_invariants(self, seed):
        s = _scene(seed % 7)
        out = augment_source(s, np.random.default_rng(seed), D_MAX)
        out.validate()
        assert out.depth.min() >= 0 and out.depth.max() <= D_MAX
        assert out.rgb.shape == s.rgb.shape

    def test_entropy_recomputed(self):
        s = _scene(6)
        out = augment_source(s, np.random.default_rng(0), D_MAX)
        fresh = out.copy().with_entropy(D_MAX)
        assert np.array_equal(out.e_max, fresh.e_max)

    def test_geometric_only_keeps_photometry(self):
        s = _scene(7)
        out = augment_geometric_only(s, np.random.default_rng(0), D_MAX)
        # no dropout/noise: every surviving depth value comes from the input
        assert np.isin(out.depth[out.valid_mask], s.depth[s.valid_mask]).all()

    def test_config_validation(self):
        with pytest.raises(ValueError, match="p_backscatter"):
            AugmentConfig(p_backscatter=1.5)
        with pytest.raises(ValueError, match="backscatter_depth_frac"):
            AugmentConfig(backscatter_depth_frac=0.0)

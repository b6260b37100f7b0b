import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapebias.augment import (
    AugmentOp,
    AugmentPipeline,
    apply_pipeline,
    blur_kernel_extent,
    center_crop,
    color_distort,
    cutout,
    gaussian_blur,
    gaussian_noise,
    horizontal_flip,
    pipeline_from_config,
    random_resized_crop,
    rotate_exact,
    rotate_quarter,
    sample_crop_geometry,
    sobel_filter,
)


def _image(seed=0, extent=64):
    return np.random.default_rng(seed).random((extent, extent, 3)).astype(np.float32)


class TestRandomResizedCrop:
    def test_degenerate_range_is_whole_image(self):
        img = _image(1)
        out = random_resized_crop(img, np.random.default_rng(0), 64, min_area=1.0, aspect_range=(1.0, 1.0))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_sampled_bounds_default_range(self):
        # 10,000 sampled boxes: realized area stays in [0.08, 1.0] exactly
        rng = np.random.default_rng(42)
        h = w = 64
        for _ in range(10_000):
            box = sample_crop_geometry(rng, h, w, 0.08, 1.0, (0.75, 4 / 3))
            assert box is not None
            _, _, ch, cw = box
            frac = ch * cw / (h * w)
            assert 0.08 <= frac <= 1.0
            # ceil rounding can stretch the sampled aspect slightly
            assert 0.6 <= cw / ch <= 1.7

    @pytest.mark.parametrize("min_area", [0.16, 0.32, 0.48, 0.64])
    def test_min_area_grid_accepted(self, min_area):
        out = random_resized_crop(_image(2), np.random.default_rng(3), 48, min_area=min_area)
        assert out.shape == (48, 48, 3)

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError):
            random_resized_crop(_image(0), np.random.default_rng(0), 64, min_area=0.0)


class TestCenterCrop:
    def test_square_input_near_identity(self):
        img = _image(4, extent=64)
        out = center_crop(img, 64)
        assert out.shape == (64, 64, 3)
        # resize to 73 then crop back: content preserved up to resampling
        assert np.abs(out.mean() - img.mean()) < 0.02

    def test_crop_keeps_centered_fraction(self):
        # 256 -> 224 style: the retained window is 87.5% of the short side
        short = int(round(64 * 256.0 / 224.0))
        assert 64 / short == pytest.approx(224 / 256, abs=0.01)

    def test_corner_pixel_removed(self):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        img[0, 0] = 1.0
        out = center_crop(img, 56)
        assert out.max() < 0.5

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            center_crop(np.zeros((1, 5, 3)), 4)


class TestFlipsAndRotations:
    def test_double_flip_identity(self):
        img = _image(5)
        flipped = horizontal_flip(img, np.random.default_rng(0), p=1.0)
        back = horizontal_flip(flipped, np.random.default_rng(0), p=1.0)
        np.testing.assert_array_equal(back, img)

    def test_p_zero_identity(self):
        img = _image(6)
        np.testing.assert_array_equal(horizontal_flip(img, np.random.default_rng(0), p=0.0), img)

    def test_flip_moves_marker_column(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[:, 2] = 1.0
        out = horizontal_flip(img, np.random.default_rng(1), p=1.0)
        assert out[:, 8 - 1 - 2].min() == 1.0

    def test_four_quarter_turns_identity(self):
        img = _image(7)
        out = img
        for _ in range(4):
            out = rotate_exact(out, 1)
        np.testing.assert_array_equal(out, img)

    def test_180_equals_double_mirror(self):
        img = _image(8)
        np.testing.assert_array_equal(rotate_exact(img, 2), img[::-1, ::-1])

    def test_90_index_map(self):
        img = np.zeros((4, 4, 3), dtype=np.float32)
        img[0, 0] = 1.0
        out = rotate_exact(img, 1)
        assert out[0, 3, 0] == 1.0

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            rotate_quarter(np.zeros((4, 6, 3)), np.random.default_rng(0))


class TestCutout:
    def test_tiny_fraction_alters_at_most_one_pixel(self):
        img = _image(9)
        out = cutout(img, np.random.default_rng(0), patch_fraction=1e-6)
        assert (out != img).any(axis=2).sum() <= 1

    def test_masked_region_equals_fill(self):
        img = _image(10)
        out = cutout(img, np.random.default_rng(3), patch_fraction=0.25, fill=0.5)
        changed = (out != img).any(axis=2)
        assert changed.any()
        assert np.all(out[changed] == 0.5)

    def test_mean_altered_area_under_clipping(self):
        # mean altered count over 1,000 placements stays within
        # [0.5, 1.0] x nominal despite border clipping
        img = np.zeros((64, 64, 3), dtype=np.float32)
        nominal = round(np.sqrt(0.25 * 64 * 64)) ** 2
        counts = []
        rng = np.random.default_rng(11)
        for _ in range(1000):
            out = cutout(img, rng, patch_fraction=0.25, fill=1.0)
            counts.append((out[..., 0] == 1.0).sum())
        mean = np.mean(counts)
        assert 0.5 * nominal <= mean <= 1.0 * nominal


class TestColorDistort:
    def test_drop_branch_grayscale(self):
        img = _image(12)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            if rng.random() >= 0.8:  # replay the branch choice
                out = color_distort(img, np.random.default_rng(seed))
                np.testing.assert_allclose(out[..., 0], out[..., 1], atol=1e-6)
                np.testing.assert_allclose(out[..., 1], out[..., 2], atol=1e-6)
                return
        pytest.fail("no drop branch in 200 seeds")

    def test_zero_strength_jitter_identity(self):
        img = _image(13)
        for seed in range(50):
            if np.random.default_rng(seed).random() < 0.8:
                out = color_distort(img, np.random.default_rng(seed), strength=1e-9)
                np.testing.assert_allclose(out, img, atol=1e-6)
                return
        pytest.fail("no jitter branch in 50 seeds")

    def test_branch_frequencies(self):
        img = _image(14, extent=16)
        rng = np.random.default_rng(15)
        drops = 0
        n = 10_000
        for _ in range(n):
            out = color_distort(img, rng, strength=1.0)
            if np.allclose(out[..., 0], out[..., 1], atol=1e-7) and np.allclose(
                out[..., 1], out[..., 2], atol=1e-7
            ):
                drops += 1
        sigma = np.sqrt(n * 0.8 * 0.2)
        assert abs(drops - 0.2 * n) <= 3 * sigma


class TestGaussianBlur:
    def test_kernel_extent_rule(self):
        assert blur_kernel_extent(224) == 23
        assert blur_kernel_extent(64) == 7
        assert blur_kernel_extent(10) == 3

    def test_constant_unchanged(self):
        img = np.full((32, 32, 3), 0.3, dtype=np.float32)
        out = gaussian_blur(img, np.random.default_rng(0))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_impulse_matches_dense_convolution(self):
        img = np.zeros((20, 20, 3))
        img[10, 10] = 1.0
        sigma = 1.3
        out = gaussian_blur(img, np.random.default_rng(0), sigma_range=(sigma, sigma))
        # dense 64-bit 2-D convolution oracle with the same kernel and reflect pad
        k = blur_kernel_extent(20)
        r = k // 2
        xs = np.arange(-r, r + 1)
        k1 = np.exp(-0.5 * (xs / sigma) ** 2)
        k1 /= k1.sum()
        k2 = np.outer(k1, k1)
        padded = np.pad(img[..., 0], r, mode="reflect")
        expected = np.zeros((20, 20))
        for i in range(20):
            for j in range(20):
                expected[i, j] = (padded[i : i + k, j : j + k] * k2).sum()
        np.testing.assert_allclose(out[..., 0], expected, atol=1e-10)


class TestGaussianNoise:
    def test_zero_sigma_identity(self):
        img = _image(16)
        np.testing.assert_array_equal(gaussian_noise(img, np.random.default_rng(0), 0.0), img)

    def test_empirical_std(self):
        img = np.full((1000, 1000, 1), 0.5)
        out = gaussian_noise(img, np.random.default_rng(17), 0.1)
        std = (out - 0.5).std()
        assert 0.095 <= std <= 0.105

    @given(st.integers(0, 500))
    @settings(max_examples=20, deadline=None)
    def test_range_never_escapes(self, seed):
        img = _image(seed, extent=16)
        out = gaussian_noise(img, np.random.default_rng(seed), 0.5)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestSobel:
    def test_constant_zero(self):
        img = np.full((16, 16, 3), 0.7, dtype=np.float32)
        np.testing.assert_allclose(sobel_filter(img), 0.0, atol=1e-12)

    def test_vertical_edge_max_on_edge(self):
        img = np.zeros((16, 16, 3), dtype=np.float32)
        img[:, 8:] = 1.0
        out = sobel_filter(img)[..., 0]
        assert out[:, 7:9].min() == 1.0
        assert out[:, 0:4].max() == 0.0

    def test_matches_dense_convolution(self):
        img = _image(18, extent=12).astype(np.float64)
        gray = img @ np.array([0.299, 0.587, 0.114])
        kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
        padded = np.pad(gray, 1, mode="reflect")
        gx = np.zeros_like(gray)
        gy = np.zeros_like(gray)
        for i in range(12):
            for j in range(12):
                win = padded[i : i + 3, j : j + 3]
                gx[i, j] = (win * kx).sum()
                gy[i, j] = (win * kx.T).sum()
        expected = np.hypot(gx, gy)
        expected /= expected.max()
        np.testing.assert_allclose(sobel_filter(img)[..., 0], expected, atol=1e-12)


class TestPipeline:
    def test_empty_pipeline_resizes_only(self):
        pipe = AugmentPipeline(ops=(), seed=0, target_extent=32)
        img = _image(19, extent=64)
        out = apply_pipeline(pipe, img, 0)
        assert out.shape == (32, 32, 3)

    def test_all_p_zero_same_as_empty(self):
        ops = tuple(AugmentOp(k, p=0.0) for k in ("gaussian_noise", "cutout", "sobel_filter"))
        img = _image(20, extent=64)
        a = apply_pipeline(AugmentPipeline(ops=ops, seed=1, target_extent=48), img, 3)
        b = apply_pipeline(AugmentPipeline(ops=(), seed=1, target_extent=48), img, 3)
        np.testing.assert_array_equal(a, b)

    def test_replay_bit_identical(self):
        ops = (
            AugmentOp("random_resized_crop", p=1.0, params={"min_area": 0.3}),
            AugmentOp("horizontal_flip", p=0.5),
            AugmentOp("color_distort", p=0.8),
            AugmentOp("gaussian_noise", p=0.5, params={"sigma": 0.1}),
        )
        pipe = AugmentPipeline(ops=ops, seed=7, target_extent=64)
        img = _image(21)
        a = apply_pipeline(pipe, img, 11)
        b = apply_pipeline(pipe, img, 11)
        assert a.tobytes() == b.tobytes()
        c = apply_pipeline(pipe, img, 12)
        assert a.tobytes() != c.tobytes()

    @given(st.integers(0, 300))
    @settings(max_examples=25, deadline=None)
    def test_output_always_in_range_and_extent(self, seed):
        ops = (
            AugmentOp("random_resized_crop", p=0.7),
            AugmentOp("rotate_quarter", p=0.5),
            AugmentOp("cutout", p=0.5),
            AugmentOp("color_distort", p=0.8),
            AugmentOp("gaussian_blur", p=0.3),
            AugmentOp("gaussian_noise", p=0.5),
            AugmentOp("sobel_filter", p=0.2),
        )
        pipe = AugmentPipeline(ops=ops, seed=seed, target_extent=40)
        out = apply_pipeline(pipe, _image(seed), seed)
        assert out.shape == (40, 40, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_config_round_trip(self):
        entries = [
            {"op": "random_resized_crop", "p": 1.0, "min_area": 0.64},
            {"op": "gaussian_noise", "p": 0.5, "sigma": 0.15},
        ]
        pipe = pipeline_from_config(entries, seed=3, target_extent=64)
        assert pipe.ops[0].params["min_area"] == 0.64
        assert pipe.ops[1].p == 0.5

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError):
            AugmentOp("mixup", p=0.5)
        with pytest.raises(ValueError):
            AugmentOp("gaussian_noise", p=0.5, params={"sgima": 0.1})

import numpy as np
import pytest

from occam.augment import (
    AugmentationConfig,
    augment_view,
    background_mixup,
    make_background_only,
    maybe_mix,
    object_aware_crop,
    standard_views,
)
from occam.core import BoundingBox
from occam.data import SyntheticSpec, generate_synthetic
from occam.postprocess import binarize

DETERMINISTIC = AugmentationConfig(
    view_size=16,
    crop_scale_min=1.0,
    crop_scale_max=1.0,
    aspect_range=(1.0, 1.0),
    flip_prob=0.0,
    jitter_prob=0.0,
    grayscale_prob=0.0,
    blur_prob=0.0,
)


class TestObjectAwareCrop:
    def test_empty_boxes_pass_through(self, rng):
        image = rng.random((8, 8, 3)).astype(np.float32)
        np.testing.assert_array_equal(object_aware_crop(image, [], rng), image)

    def test_full_image_box_is_identity(self, rng):
        image = rng.random((8, 8, 3)).astype(np.float32)
        np.testing.assert_array_equal(object_aware_crop(image, [BoundingBox(0, 0, 8, 8)], rng), image)

    def test_crop_dimensions(self, rng):
        image = rng.random((10, 12, 3)).astype(np.float32)
        out = object_aware_crop(image, [BoundingBox(2, 3, 7, 9)], rng)
        assert out.shape == (6, 5, 3)
        np.testing.assert_array_equal(out, image[3:9, 2:7])

    def test_out_of_bounds_box_rejected(self, rng):
        with pytest.raises(ValueError):
            object_aware_crop(rng.random((4, 4, 3)), [BoundingBox(0, 0, 6, 4)], rng)

    def test_same_rng_state_picks_same_box(self, rng):
        image = rng.random((10, 10, 3)).astype(np.float32)
        boxes = [BoundingBox(0, 0, 3, 3), BoundingBox(4, 4, 9, 9), BoundingBox(1, 5, 6, 8)]
        a = object_aware_crop(image, boxes, np.random.default_rng(42))
        b = object_aware_crop(image, boxes, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestBackgroundMixup:
    def test_full_weight_keeps_foreground(self, rng):
        x = rng.random((5, 5, 3)).astype(np.float32)
        bg = rng.random((5, 5, 3)).astype(np.float32)
        np.testing.assert_allclose(background_mixup(x, np.ones((5, 5), np.float32), bg), x)

    def test_zero_weight_keeps_background(self, rng):
        x = rng.random((5, 5, 3)).astype(np.float32)
        bg = rng.random((5, 5, 3)).astype(np.float32)
        np.testing.assert_allclose(background_mixup(x, np.zeros((5, 5), np.float32), bg), bg)

    def test_halfway_blend(self):
        x = np.full((3, 3, 3), 0.2, np.float32)
        bg = np.full((3, 3, 3), 0.8, np.float32)
        np.testing.assert_allclose(background_mixup(x, np.full((3, 3), 0.5, np.float32), bg), 0.5)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            background_mixup(rng.random((4, 4, 3)), rng.random((5, 5)), rng.random((4, 4, 3)))

    def test_bounded_by_inputs(self, rng):
        for _ in range(200):
            x = rng.random((4, 4, 3)).astype(np.float32)
            bg = rng.random((4, 4, 3)).astype(np.float32)
            cam = rng.random((4, 4)).astype(np.float32)
            out = background_mixup(x, cam, bg)
            assert (out >= np.minimum(x, bg) - 1e-6).all() and (out <= np.maximum(x, bg) + 1e-6).all()


class TestMakeBackgroundOnly:
    def test_zero_saliency_keeps_donor(self, rng):
        donor = rng.random((6, 6, 3)).astype(np.float32)
        np.testing.assert_array_equal(make_background_only(donor, np.zeros((6, 6), np.float32), 0.2), donor)

    def test_single_background_pixel_gives_constant(self, rng):
        donor = rng.random((4, 4, 3)).astype(np.float32)
        cam = np.full((4, 4), 0.9, np.float32)
        cam[2, 1] = 0.0
        out = make_background_only(donor, cam, 0.2)
        np.testing.assert_array_equal(out, np.broadcast_to(donor[2, 1], out.shape))

    def test_no_background_raises(self, rng):
        donor = rng.random((4, 4, 3)).astype(np.float32)
        with pytest.raises(ValueError):
            make_background_only(donor, np.full((4, 4), 0.9, np.float32), 0.2)

    def test_synthetic_donor_contains_no_foreground(self, tmp_path):
        manifest = generate_synthetic(SyntheticSpec(n_images=6, seed=9, test_fraction=0.0), tmp_path)
        images = manifest.load_images()
        masks = manifest.load_gt_masks()
        for image, mask in zip(images, masks):
            bg = make_background_only(image, mask.astype(np.float32), 0.5)
            fg_colors = {tuple(np.round(c, 3)) for c in image[mask == 1][:: max(1, mask.sum() // 16)]}
            for color in fg_colors:
                # tiled output must be assembled purely from background pixels
                assert not np.isclose(bg, np.asarray(color)[None, None, :], atol=1e-6).all(axis=2).any()


class TestStandardViews:
    def test_degenerate_config_gives_identical_views(self, rng):
        image = rng.random((16, 16, 3)).astype(np.float32)
        v1, v2 = standard_views(image, DETERMINISTIC, np.random.default_rng(0))
        np.testing.assert_array_equal(v1, v2)
        np.testing.assert_allclose(v1, image, atol=1e-6)

    def test_view_dimensions(self, rng):
        image = rng.random((20, 28, 3)).astype(np.float32)
        cfg = AugmentationConfig(view_size=12)
        v1, v2 = standard_views(image, cfg, np.random.default_rng(1))
        assert v1.shape == (12, 12, 3) and v2.shape == (12, 12, 3)

    def test_fixed_seed_reproducible(self, rng):
        image = rng.random((24, 24, 3)).astype(np.float32)
        cfg = AugmentationConfig(view_size=16)
        a = standard_views(image, cfg, np.random.default_rng(7))
        b = standard_views(image, cfg, np.random.default_rng(7))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_views_stay_in_unit_range(self, rng):
        cfg = AugmentationConfig(view_size=16, jitter_prob=1.0, blur_prob=1.0)
        for _ in range(25):
            image = rng.random((20, 20, 3)).astype(np.float32)
            v1, v2 = standard_views(image, cfg, rng)
            for v in (v1, v2):
                assert v.min() >= 0.0 and v.max() <= 1.0

    def test_blur_kernel_scales_for_small_views(self):
        assert AugmentationConfig(view_size=64).effective_blur_kernel() == 7
        assert AugmentationConfig(view_size=96).effective_blur_kernel() == 23
        assert AugmentationConfig(view_size=224).effective_blur_kernel() == 23
        assert AugmentationConfig(view_size=16).effective_blur_kernel() == 3


class TestMaybeMix:
    def _pool(self, rng, n=4):
        donors = rng.random((n, 8, 8, 3)).astype(np.float32)
        cams = np.zeros((n, 8, 8), np.float32)
        cams[:, 2:5, 2:5] = 1.0
        return [(donors[i], cams[i]) for i in range(n)]

    def test_probability_zero_is_identity(self, rng):
        view = rng.random((8, 8, 3)).astype(np.float32)
        out = maybe_mix(view, rng.random((8, 8)).astype(np.float32), self._pool(rng), 0.0, rng)
        np.testing.assert_array_equal(out, view)

    def test_probability_one_always_mixes(self, rng):
        cam = np.clip(rng.random((8, 8)), 0.05, 0.95).astype(np.float32)
        for _ in range(20):
            view = rng.random((8, 8, 3)).astype(np.float32)
            out = maybe_mix(view, cam, self._pool(rng), 1.0, rng)
            assert not np.array_equal(out, view)

    def test_monte_carlo_rate(self, rng):
        view = rng.random((8, 8, 3)).astype(np.float32)
        cam = np.clip(rng.random((8, 8)), 0.05, 0.95).astype(np.float32)
        pool = self._pool(rng)
        hits = sum(
            not np.array_equal(maybe_mix(view, cam, pool, 0.4, rng), view) for _ in range(10000)
        )
        assert abs(hits / 10000 - 0.4) <= 0.02

    def test_empty_pool_rejected(self, rng):
        with pytest.raises(ValueError):
            maybe_mix(rng.random((4, 4, 3)), rng.random((4, 4)), [], 0.5, rng)

    def test_bad_probability_rejected(self, rng):
        with pytest.raises(ValueError):
            maybe_mix(rng.random((4, 4, 3)), rng.random((4, 4)), self._pool(rng), 1.5, rng)

    def test_donor_without_background_skips_quietly(self, rng):
        view = rng.random((8, 8, 3)).astype(np.float32)
        pool = [(rng.random((8, 8, 3)).astype(np.float32), np.ones((8, 8), np.float32))]
        out = maybe_mix(view, rng.random((8, 8)).astype(np.float32), pool, 1.0, rng)
        np.testing.assert_array_equal(out, view)

    def test_hard_mix_equals_copy_and_paste(self, rng):
        view = rng.random((8, 8, 3)).astype(np.float32)
        cam = rng.random((8, 8)).astype(np.float32)
        pool = self._pool(rng, n=1)
        out = maybe_mix(view, cam, pool, 1.0, np.random.default_rng(3), hard=True, threshold=0.2)
        from occam.augment import make_background_only

        bg = make_background_only(pool[0][0], pool[0][1], 0.2)
        fg = binarize(cam, 0.2).astype(bool)
        expected = np.where(fg[:, :, None], view, bg)
        np.testing.assert_allclose(out, expected, atol=1e-6)

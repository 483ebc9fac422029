import numpy as np
import pytest

from occam.core import BoundingBox
from occam.postprocess import (
    BoxExtractionConfig,
    binarize,
    extract_boxes,
    largest_background_rectangle,
    refine_mask,
    register_refiner,
    tile_background,
)

NO_FILTER = BoxExtractionConfig(threshold=0.5, margin_frac=0.0, min_area_frac=0.0)


def flood_fill_components(mask: np.ndarray) -> list[dict]:
    """Independent 4-connected component finder (plain BFS)."""
    mask = np.asarray(mask)
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    h, w = mask.shape
    for si in range(h):
        for sj in range(w):
            if mask[si, sj] == 0 or seen[si, sj]:
                continue
            queue = [(si, sj)]
            seen[si, sj] = True
            pixels = []
            while queue:
                i, j = queue.pop()
                pixels.append((i, j))
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                        seen[ni, nj] = True
                        queue.append((ni, nj))
            rows = [p[0] for p in pixels]
            cols = [p[1] for p in pixels]
            comps.append(
                {
                    "area": len(pixels),
                    "box": BoundingBox(min(cols), min(rows), max(cols) + 1, max(rows) + 1),
                }
            )
    return comps


def brute_force_background_rectangle(mask: np.ndarray) -> BoundingBox:
    """Enumerate every all-zero rectangle; pick by (area desc, top, left, width desc)."""
    mask = np.asarray(mask)
    h, w = mask.shape
    best_key, best = None, None
    for top in range(h):
        for left in range(w):
            for bottom in range(top + 1, h + 1):
                for right in range(left + 1, w + 1):
                    if mask[top:bottom, left:right].any():
                        continue
                    area = (bottom - top) * (right - left)
                    key = (-area, top, left, -(right - left))
                    if best_key is None or key < best_key:
                        best_key, best = key, BoundingBox(left, top, right, bottom)
    if best is None:
        raise ValueError("no zeros")
    return best


class TestBinarize:
    def test_threshold_is_inclusive(self):
        np.testing.assert_array_equal(binarize(np.full((1, 1), 0.2, np.float32), 0.2), [[1]])

    def test_direct_rule(self):
        np.testing.assert_array_equal(binarize(np.asarray([[0.1, 0.3]], np.float32), 0.2), [[0, 1]])

    def test_zero_map_yields_no_boxes(self):
        mask = binarize(np.zeros((8, 8), np.float32), 0.2)
        assert extract_boxes(mask) == []

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.5, 2.0])
    def test_rejects_bad_threshold(self, theta):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2), np.float32), theta)


class TestExtractBoxes:
    def test_empty_mask(self):
        assert extract_boxes(np.zeros((5, 5), np.uint8)) == []

    def test_hand_case_margin_expansion(self):
        mask = np.zeros((100, 100), np.uint8)
        mask[2:6, 2:6] = 1
        (box,) = extract_boxes(mask, BoxExtractionConfig(threshold=0.2, margin_frac=0.2, min_area_frac=0.0))
        assert box.astuple() == (1, 1, 7, 7)

    def test_min_area_filter(self):
        mask = np.zeros((100, 100), np.uint8)
        mask[0:5, 0:10] = 1  # 50 px = 0.5% of the image
        assert extract_boxes(mask, BoxExtractionConfig(threshold=0.2, margin_frac=0.0, min_area_frac=0.01)) == []
        mask[20:30, 20:31] = 1  # 110 px passes
        boxes = extract_boxes(mask, BoxExtractionConfig(threshold=0.2, margin_frac=0.0, min_area_frac=0.01))
        assert [b.astuple() for b in boxes] == [(20, 20, 31, 30)]

    def test_ordering_by_area_then_position(self):
        mask = np.zeros((20, 20), np.uint8)
        mask[1:3, 1:3] = 1  # area 4
        mask[10:14, 10:14] = 1  # area 16
        mask[1:3, 6:8] = 1  # area 4, same top, larger left
        boxes = extract_boxes(mask, NO_FILTER)
        assert [b.astuple() for b in boxes] == [(10, 10, 14, 14), (1, 1, 3, 3), (6, 1, 8, 3)]

    def test_matches_flood_fill_oracle(self, rng):
        for _ in range(300):
            mask = (rng.random((rng.integers(2, 12), rng.integers(2, 12))) < 0.4).astype(np.uint8)
            ours = {b.astuple() for b in extract_boxes(mask, NO_FILTER)}
            oracle = {c["box"].astuple() for c in flood_fill_components(mask)}
            assert ours == oracle

    def test_expanded_box_covers_component_extent(self, rng):
        cfg = BoxExtractionConfig(threshold=0.2, margin_frac=0.3, min_area_frac=0.0)
        for _ in range(300):
            mask = (rng.random((10, 10)) < 0.3).astype(np.uint8)
            comps = flood_fill_components(mask)
            boxes = extract_boxes(mask, cfg)
            assert len(boxes) == len(comps)
            for comp in comps:
                tight = comp["box"]
                grown = tight.expand(cfg.margin_frac, 10, 10)
                assert grown.astuple() in {b.astuple() for b in boxes}
                assert grown.left <= tight.left and grown.right >= tight.right
                assert grown.top <= tight.top and grown.bottom >= tight.bottom


class TestLargestBackgroundRectangle:
    def test_all_zero_mask_gives_full_image(self):
        assert largest_background_rectangle(np.zeros((4, 6), np.uint8)).astuple() == (0, 0, 6, 4)

    def test_center_pixel_tie_rule(self):
        mask = np.zeros((3, 3), np.uint8)
        mask[1, 1] = 1
        box = largest_background_rectangle(mask)
        assert box.astuple() == (0, 0, 3, 1)  # the 1x3 top row wins the tie

    def test_rejects_full_mask(self):
        with pytest.raises(ValueError):
            largest_background_rectangle(np.ones((3, 3), np.uint8))

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(1000):
            h = int(rng.integers(1, 9))
            w = int(rng.integers(1, 9))
            mask = (rng.random((h, w)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
            if mask.all():
                mask[rng.integers(h), rng.integers(w)] = 0
            assert largest_background_rectangle(mask).astuple() == brute_force_background_rectangle(mask).astuple()


class TestTileBackground:
    def test_whole_image_patch_is_identity(self, rng):
        image = rng.random((6, 8, 3)).astype(np.float32)
        out = tile_background(image, BoundingBox(0, 0, 8, 6))
        np.testing.assert_array_equal(out, image)

    def test_single_pixel_patch_fills_constant(self, rng):
        image = rng.random((5, 5, 3)).astype(np.float32)
        out = tile_background(image, BoundingBox(2, 3, 3, 4))
        np.testing.assert_array_equal(out, np.broadcast_to(image[3, 2], out.shape))

    def test_periodic_index_oracle(self, rng):
        image = rng.random((5, 5, 3)).astype(np.float32)
        patch = BoundingBox(0, 0, 2, 2)
        out = tile_background(image, patch)
        for i in range(5):
            for j in range(5):
                np.testing.assert_array_equal(out[i, j], image[i % 2, j % 2])

    def test_random_patches_follow_modulo_rule(self, rng):
        for _ in range(100):
            image = rng.random((7, 9, 3)).astype(np.float32)
            left, top = int(rng.integers(0, 8)), int(rng.integers(0, 6))
            patch = BoundingBox(left, top, int(rng.integers(left + 1, 10)), int(rng.integers(top + 1, 8)))
            out = tile_background(image, patch)
            ii, jj = np.mgrid[0:7, 0:9]
            expected = image[top + ii % patch.height, left + jj % patch.width]
            np.testing.assert_array_equal(out, expected)

    def test_out_of_bounds_patch_rejected(self, rng):
        with pytest.raises(ValueError):
            tile_background(rng.random((4, 4, 3)), BoundingBox(0, 0, 5, 2))


class TestRefineMask:
    def test_default_equals_binarize(self, rng):
        cam = rng.random((6, 6)).astype(np.float32)
        image = rng.random((6, 6, 3)).astype(np.float32)
        np.testing.assert_array_equal(refine_mask(cam, image, threshold=0.2), binarize(cam, 0.2))

    def test_none_refiner_reproduces_box_inputs(self, rng):
        cam = rng.random((8, 8)).astype(np.float32)
        image = rng.random((8, 8, 3)).astype(np.float32)
        mask = refine_mask(cam, image, refiner="none", threshold=0.2)
        assert extract_boxes(mask, NO_FILTER) == extract_boxes(binarize(cam, 0.2), NO_FILTER)

    def test_unknown_refiner_rejected(self, rng):
        with pytest.raises(ValueError):
            refine_mask(rng.random((4, 4)).astype(np.float32), rng.random((4, 4, 3)), refiner="crf")

    def test_registered_refiner_is_routed(self, rng):
        calls = []

        def mock(saliency, image, threshold):
            calls.append((saliency.shape, threshold))
            return np.ones(saliency.shape, np.uint8)

        register_refiner("mock", mock)
        try:
            out = refine_mask(rng.random((3, 5)).astype(np.float32), rng.random((3, 5, 3)), refiner="mock", threshold=0.7)
            assert calls == [((3, 5), 0.7)]
            np.testing.assert_array_equal(out, np.ones((3, 5)))
        finally:
            from occam.postprocess import _REFINERS

            _REFINERS.pop("mock", None)

import numpy as np
import pytest

import hierspx as hx
from hierspx.superpixels import PipelineConfig


def two_tone_image(h=64, w=64, edge_col=29, low=0.2, high=0.8):
    data = np.full((h, w, 3), low)
    data[:, edge_col:] = high
    return hx.FeatureMap(data)


class TestPixelFeatures:
    def test_zero_pos_weight_gives_pure_color(self):
        rng = np.random.default_rng(80)
        img = hx.FeatureMap(rng.uniform(0, 1, (6, 6, 3)))
        feats = hx.pixel_features(img, PipelineConfig(pos_weight=0.0, color_space="rgb"))
        assert feats.channels == 5
        np.testing.assert_array_equal(feats.data[:, :, :3], img.data)
        assert (feats.data[:, :, 3:] == 0).all()

    def test_constant_image_differs_only_in_position(self):
        img = hx.FeatureMap(np.full((4, 6, 3), 0.5))
        feats = hx.pixel_features(img, PipelineConfig(pos_weight=1.0, color_space="rgb"))
        color = feats.data[:, :, :3]
        assert (color == color[0, 0]).all()
        assert feats.data[1, 0, 3] == pytest.approx(1 / 4)
        assert feats.data[0, 3, 4] == pytest.approx(3 / 6)

    def test_white_maps_to_lab_white(self):
        lab = hx.srgb_to_lab(np.ones((1, 1, 3)))
        np.testing.assert_allclose(lab[0, 0], [100.0, 0.0, 0.0], atol=0.01)

    def test_known_gray_lightness(self):
        # 18% gray card is close to L = 50; the published matrix rows carry
        # ~1e-7 rounding, so a and b are near zero but not exactly zero
        lab = hx.srgb_to_lab(np.full((1, 1, 3), 0.46631))
        assert lab[0, 0, 0] == pytest.approx(50.0, abs=0.5)
        assert abs(lab[0, 0, 1]) < 1e-4 and abs(lab[0, 0, 2]) < 1e-4


class TestHierarchy:
    def test_single_level_tiny_image(self):
        img = hx.FeatureMap(np.random.default_rng(81).uniform(0, 1, (2, 2, 3)))
        results = hx.hierarchical_superpixels(img, PipelineConfig(levels=1))
        assert len(results) == 1
        np.testing.assert_array_equal(results[0].labels.labels, 0)

    def test_label_count_bounded_by_seed_count(self):
        rng = np.random.default_rng(82)
        img = hx.FeatureMap(rng.uniform(0, 1, (32, 48, 3)))
        results = hx.hierarchical_superpixels(img, PipelineConfig(levels=3))
        for res in results:
            assert len(np.unique(res.labels.labels)) <= res.field.num_seeds
            assert res.labels.labels.shape == (32, 48)

    def test_locality_bound_across_levels(self):
        rng = np.random.default_rng(83)
        img = hx.FeatureMap(rng.uniform(0, 1, (40, 24, 3)))
        results = hx.hierarchical_superpixels(img, PipelineConfig(levels=3))
        for lvl, res in enumerate(results, start=1):
            sw = (24 + (1 << lvl) - 1) >> lvl
            sy, sx = np.divmod(res.labels.labels, sw)
            own_y = np.arange(40)[:, None] >> lvl
            own_x = np.arange(24)[None, :] >> lvl
            cheb = np.maximum(np.abs(sy - own_y), np.abs(sx - own_x))
            assert cheb.max() <= (1 if lvl == 1 else 2)

    def test_deterministic(self):
        rng = np.random.default_rng(84)
        img = hx.FeatureMap(rng.uniform(0, 1, (16, 16, 3)))
        cfg = PipelineConfig(levels=2)
        a = hx.hierarchical_superpixels(img, cfg)
        b = hx.hierarchical_superpixels(img, cfg)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.labels.labels, rb.labels.labels)

    def test_too_small_rejected(self):
        img = hx.FeatureMap(np.zeros((4, 4, 3)))
        with pytest.raises(hx.InvalidInputError):
            hx.hierarchical_superpixels(img, PipelineConfig(levels=3))

    def test_edge_adherence_on_two_tone_image(self):
        # boundary must sit within one pixel of the color edge on >= 95% of rows
        img = two_tone_image()
        results = hx.hierarchical_superpixels(img, PipelineConfig(levels=2))
        labels = results[-1].labels.labels
        good = 0
        for row in labels:
            change = np.nonzero(row[:-1] != row[1:])[0]
            near = [c for c in change if abs(c - 28) <= 1]
            if near:
                good += 1
        assert good >= 0.95 * labels.shape[0]


class TestOverlay:
    def test_constant_labels_leave_image_unchanged(self):
        rng = np.random.default_rng(85)
        img = hx.FeatureMap(rng.uniform(0, 1, (5, 5, 3)))
        out = hx.overlay_boundaries(img, hx.LabelMap(np.zeros((5, 5), np.int64)))
        np.testing.assert_array_equal(out.data, img.data)

    def test_vertical_split_marks_two_columns(self):
        img = hx.FeatureMap(np.zeros((4, 6, 3)))
        labels = np.zeros((4, 6), np.int64)
        labels[:, 3:] = 1
        out = hx.overlay_boundaries(img, hx.LabelMap(labels))
        marked = (out.data == (1.0, 1.0, 0.0)).all(axis=2)
        expect = np.zeros((4, 6), bool)
        expect[:, 2:4] = True
        np.testing.assert_array_equal(marked, expect)

    def test_matches_naive_neighbor_scan(self):
        rng = np.random.default_rng(86)
        labels = rng.integers(0, 3, size=(8, 8))
        img = hx.FeatureMap(np.full((8, 8, 3), 0.25))
        out = hx.overlay_boundaries(img, hx.LabelMap(labels))
        marked = (out.data == (1.0, 1.0, 0.0)).all(axis=2)
        for i in range(8):
            for j in range(8):
                nb = []
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < 8 and 0 <= nj < 8:
                        nb.append(labels[ni, nj] != labels[i, j])
                assert marked[i, j] == any(nb)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(hx.InvalidInputError):
            hx.overlay_boundaries(
                hx.FeatureMap(np.zeros((4, 4, 3))), hx.LabelMap(np.zeros((5, 4), np.int64))
            )

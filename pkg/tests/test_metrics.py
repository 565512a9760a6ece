import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import hierspx as hx
from hierspx.metrics import boundary_mask


# ---------------------------------------------------------------------------
# naive reference implementations (dict- and loop-based, no shared code with
# the vectorized paths)
# ---------------------------------------------------------------------------


def naive_asa(pred, gt):
    counts = {}
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            key = (pred[i, j], gt[i, j])
            counts[key] = counts.get(key, 0) + 1
    best = {}
    for (s, g), n in counts.items():
        best[s] = max(best.get(s, 0), n)
    return sum(best.values()) / (h * w)


def naive_boundary(labels):
    h, w = labels.shape
    out = np.zeros((h, w), bool)
    for i in range(h):
        for j in range(w):
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < h and 0 <= nj < w and labels[ni, nj] != labels[i, j]:
                    out[i, j] = True
    return out


def naive_br(pred, gt, tol):
    gb = naive_boundary(gt)
    pb = naive_boundary(pred)
    gt_pts = np.argwhere(gb)
    pred_pts = np.argwhere(pb)
    if len(gt_pts) == 0:
        return 1.0
    if len(pred_pts) == 0:
        return 0.0
    d = np.max(np.abs(gt_pts[:, None, :] - pred_pts[None, :, :]), axis=2)
    return int((d.min(axis=1) <= tol).sum()) / len(gt_pts)


def naive_ue(pred, gt):
    h, w = pred.shape
    inter = {}
    size = {}
    for i in range(h):
        for j in range(w):
            s, g = pred[i, j], gt[i, j]
            inter[(s, g)] = inter.get((s, g), 0) + 1
            size[s] = size.get(s, 0) + 1
    total = 0
    for (s, g), n in inter.items():
        total += min(n, size[s] - n)
    return total / (h * w)


def naive_miou_pixacc(pred, gt, classes):
    conf = [[0] * classes for _ in range(classes)]
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            conf[gt[i, j]][pred[i, j]] += 1
    ious = []
    correct = 0
    for c in range(classes):
        tp = conf[c][c]
        correct += tp
        gt_c = sum(conf[c])
        pred_c = sum(conf[r][c] for r in range(classes))
        if gt_c + pred_c > 0:
            ious.append(tp / (gt_c + pred_c - tp))
    return sum(ious) / len(ious), correct / (h * w)


def lm(arr):
    return hx.LabelMap(np.asarray(arr))


class TestAsa:
    def test_perfect_refinement(self):
        rng = np.random.default_rng(50)
        labels = rng.integers(0, 5, size=(8, 8))
        assert hx.asa(lm(labels), lm(labels)) == 1.0

    def test_single_superpixel_over_two_halves(self):
        gt = np.zeros((4, 4), np.int64)
        gt[:, 2:] = 1
        assert hx.asa(lm(np.zeros((4, 4), np.int64)), lm(gt)) == 0.5

    def test_matches_naive(self):
        rng = np.random.default_rng(51)
        for _ in range(20):
            pred = rng.integers(0, 10, size=(32, 32))
            gt = rng.integers(0, 4, size=(32, 32))
            assert hx.asa(lm(pred), lm(gt)) == naive_asa(pred, gt)

    def test_relabel_invariance(self):
        rng = np.random.default_rng(52)
        pred = rng.integers(0, 6, size=(16, 16))
        gt = rng.integers(0, 3, size=(16, 16))
        perm = rng.permutation(6)
        assert hx.asa(lm(perm[pred]), lm(gt)) == hx.asa(lm(pred), lm(gt))

    @settings(max_examples=30, deadline=None)
    @given(
        data=hnp.arrays(np.int64, (8, 8), elements=st.integers(0, 4)),
        gt=hnp.arrays(np.int64, (8, 8), elements=st.integers(0, 2)),
        seed=st.integers(0, 10_000),
    )
    def test_splitting_never_decreases_asa(self, data, gt, seed):
        rng = np.random.default_rng(seed)
        before = hx.asa(lm(data), lm(gt))
        # split one region along a random half mask
        target = int(rng.choice(np.unique(data)))
        split = data.copy()
        half = rng.integers(0, 2, size=data.shape, dtype=np.int64).astype(bool)
        split[(data == target) & half] = data.max() + 1
        assert hx.asa(lm(split), lm(gt)) >= before

    def test_dim_mismatch(self):
        with pytest.raises(hx.InvalidInputError):
            hx.asa(lm(np.zeros((2, 2), np.int64)), lm(np.zeros((3, 2), np.int64)))


class TestBoundaryRecall:
    def test_identical_maps_full_recall(self):
        rng = np.random.default_rng(53)
        labels = rng.integers(0, 4, size=(10, 10))
        for tol in (0, 1, 2):
            assert hx.boundary_recall(lm(labels), lm(labels), tol) == 1.0

    def test_constant_pred_recalls_nothing(self):
        gt = np.zeros((6, 6), np.int64)
        gt[:, 3:] = 1
        assert hx.boundary_recall(lm(np.zeros((6, 6), np.int64)), lm(gt), 2) == 0.0

    def test_constant_gt_vacuous(self):
        rng = np.random.default_rng(54)
        pred = rng.integers(0, 3, size=(6, 6))
        assert hx.boundary_recall(lm(pred), lm(np.zeros((6, 6), np.int64)), 2) == 1.0

    def test_matches_naive_all_pairs(self):
        rng = np.random.default_rng(55)
        for _ in range(10):
            pred = rng.integers(0, 6, size=(32, 32))
            gt = rng.integers(0, 3, size=(32, 32))
            for tol in (0, 1, 2):
                assert hx.boundary_recall(lm(pred), lm(gt), tol) == naive_br(pred, gt, tol)

    def test_monotone_in_tolerance(self):
        rng = np.random.default_rng(56)
        pred = (rng.integers(0, 2, size=(24, 24)).cumsum(axis=1) // 3).astype(np.int64)
        gt = np.zeros((24, 24), np.int64)
        gt[:, 12:] = 1
        values = [hx.boundary_recall(lm(pred), lm(gt), tol) for tol in range(5)]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestUndersegmentationError:
    def test_perfect_prediction_no_leakage(self):
        rng = np.random.default_rng(57)
        labels = rng.integers(0, 5, size=(8, 8))
        value, mask = hx.undersegmentation_error(lm(labels), lm(labels))
        assert value == 0.0 and not mask.any()

    def test_single_superpixel_symmetric_split(self):
        gt = np.zeros((4, 4), np.int64)
        gt[:, 2:] = 1
        value, mask = hx.undersegmentation_error(lm(np.zeros((4, 4), np.int64)), lm(gt))
        assert value == 1.0
        assert mask.sum() == 8
        assert mask[:, 2:].all() and not mask[:, :2].any()

    def test_matches_naive(self):
        rng = np.random.default_rng(58)
        for _ in range(20):
            pred = rng.integers(0, 8, size=(32, 32))
            gt = rng.integers(0, 4, size=(32, 32))
            value, _ = hx.undersegmentation_error(lm(pred), lm(gt))
            assert value == naive_ue(pred, gt)

    def test_zero_iff_every_superpixel_contained(self):
        rng = np.random.default_rng(59)
        gt = np.repeat(np.arange(4), 8).reshape(4, 8).repeat(2, axis=0)
        refined = gt * 3 + rng.integers(0, 3, size=gt.shape)
        value, mask = hx.undersegmentation_error(lm(refined), lm(gt))
        assert value == 0.0 and not mask.any()
        leaky = refined.copy()
        leaky[:, 0] = leaky[0, 0]  # one superpixel crossing every gt band
        value, _ = hx.undersegmentation_error(lm(leaky), lm(gt))
        assert value > 0.0


class TestMiou:
    def test_perfect(self):
        rng = np.random.default_rng(60)
        labels = rng.integers(0, 3, size=(8, 8))
        miou, acc = hx.miou_pixacc(lm(labels), lm(labels), 3)
        assert miou == 1.0 and acc == 1.0

    def test_disjoint_class_iou_zero(self):
        gt = np.zeros((2, 4), np.int64)
        gt[:, :2] = 1
        pred = np.zeros((2, 4), np.int64)
        pred[:, 2:] = 1
        miou, acc = hx.miou_pixacc(lm(pred), lm(gt), 2)
        assert miou == 0.0 and acc == 0.0

    def test_degenerate_constant_prediction(self):
        gt = np.array([[0, 0, 1, 2]] * 3, dtype=np.int64)
        pred = np.zeros((3, 4), np.int64)
        miou, acc = hx.miou_pixacc(lm(pred), lm(gt), 3)
        assert acc == 0.5
        assert miou == pytest.approx((0.5 + 0.0 + 0.0) / 3)

    def test_matches_naive(self):
        rng = np.random.default_rng(61)
        for _ in range(20):
            pred = rng.integers(0, 5, size=(32, 32))
            gt = rng.integers(0, 5, size=(32, 32))
            got = hx.miou_pixacc(lm(pred), lm(gt), 5)
            assert got == naive_miou_pixacc(pred, gt, 5)

    def test_label_over_classes_rejected(self):
        with pytest.raises(hx.InvalidInputError):
            hx.miou_pixacc(lm(np.full((2, 2), 4, np.int64)), lm(np.zeros((2, 2), np.int64)), 3)


class TestBoundaryMask:
    def test_matches_naive_scan(self):
        rng = np.random.default_rng(62)
        labels = rng.integers(0, 4, size=(20, 15))
        np.testing.assert_array_equal(boundary_mask(labels), naive_boundary(labels))

    def test_report_serializable(self):
        rng = np.random.default_rng(63)
        pred = rng.integers(0, 4, size=(8, 8))
        gt = rng.integers(0, 3, size=(8, 8))
        report = hx.full_report(lm(pred), lm(gt)).to_dict()
        assert set(report) == {"asa", "br", "ue", "leakage_fraction", "miou", "pixel_acc"}

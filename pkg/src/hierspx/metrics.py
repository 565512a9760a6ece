"""Superpixel and segmentation quality metrics.

Boundaries are 4-neighbor label changes throughout, matching the overlay
renderer. Counts are accumulated as integers and divided once, so results
agree exactly with naive reference loops.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import LabelMap


@dataclass
class MetricReport:
    asa: float
    br: float
    ue: float
    leakage_mask: np.ndarray
    miou: float
    pixel_acc: float

    def to_dict(self) -> dict:
        """JSON-friendly view; the mask is summarized as its pixel fraction."""
        return {
            "asa": self.asa,
            "br": self.br,
            "ue": self.ue,
            "leakage_fraction": float(self.leakage_mask.mean()) if self.leakage_mask.size else 0.0,
            "miou": self.miou,
            "pixel_acc": self.pixel_acc,
        }


def _check_dims(pred: LabelMap, gt: LabelMap):
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InvalidInputError(
            f"label maps disagree: {pred.height}x{pred.width} vs {gt.height}x{gt.width}"
        )


def _contingency(pred: LabelMap, gt: LabelMap):
    """Intersection counts between every (pred region, gt region) pair."""
    pu, pi = np.unique(pred.labels.reshape(-1), return_inverse=True)
    gu, gi = np.unique(gt.labels.reshape(-1), return_inverse=True)
    table = np.bincount(pi * gu.size + gi, minlength=pu.size * gu.size)
    return table.reshape(pu.size, gu.size), pu, gu, pi.reshape(pred.labels.shape), gi


def asa(pred: LabelMap, gt: LabelMap) -> float:
    """Achievable accuracy when each superpixel takes its majority gt label."""
    _check_dims(pred, gt)
    table, _, _, _, _ = _contingency(pred, gt)
    return int(table.max(axis=1).sum()) / pred.labels.size


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """True where any 4-neighbor carries a different label."""
    m = np.zeros(labels.shape, dtype=bool)
    m[:-1, :] |= labels[:-1, :] != labels[1:, :]
    m[1:, :] |= labels[1:, :] != labels[:-1, :]
    m[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    m[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    return m


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask
    h, w = mask.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = mask
    out = np.zeros_like(mask)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def boundary_recall(pred: LabelMap, gt: LabelMap, tolerance: int = 2) -> float:
    """Fraction of gt boundary pixels with a predicted boundary within the
    given Chebyshev distance. Vacuously 1.0 when gt has no boundary."""
    _check_dims(pred, gt)
    if tolerance < 0:
        raise InvalidInputError(f"tolerance must be >= 0, got {tolerance}")
    gt_b = boundary_mask(gt.labels)
    total = int(gt_b.sum())
    if total == 0:
        return 1.0
    hit = _dilate(boundary_mask(pred.labels), tolerance)
    return int((gt_b & hit).sum()) / total


def undersegmentation_error(pred: LabelMap, gt: LabelMap) -> tuple[float, np.ndarray]:
    """Leakage of superpixels across gt regions.

    The value sums min(|S intersect G|, |S minus G|) over every touching
    (superpixel S, gt region G) pair, normalized by pixel count. The mask
    marks each superpixel's pixels outside its majority gt region; majority
    ties go to the lowest gt label.
    """
    _check_dims(pred, gt)
    table, _, gu, pi, _ = _contingency(pred, gt)
    sizes = table.sum(axis=1, keepdims=True)
    value = int(np.minimum(table, sizes - table)[table > 0].sum()) / pred.labels.size
    majority = gu[np.argmax(table, axis=1)]
    mask = gt.labels != majority[pi]
    return value, mask


def miou_pixacc(pred: LabelMap, gt: LabelMap, classes: int) -> tuple[float, float]:
    """Mean IoU over classes present in gt or pred, and overall pixel accuracy."""
    _check_dims(pred, gt)
    if classes < 1:
        raise InvalidInputError(f"classes must be >= 1, got {classes}")
    if pred.labels.size and (pred.labels.max() >= classes or gt.labels.max() >= classes):
        raise InvalidInputError("labels must be smaller than the declared class count")
    conf = np.bincount(
        gt.labels.reshape(-1) * classes + pred.labels.reshape(-1), minlength=classes * classes
    ).reshape(classes, classes)
    tp = np.diag(conf)
    gt_count = conf.sum(axis=1)
    pred_count = conf.sum(axis=0)
    present = (gt_count + pred_count) > 0
    union = gt_count + pred_count - tp
    ious = [int(tp[c]) / int(union[c]) for c in range(classes) if present[c]]
    miou = sum(ious) / len(ious)
    pixel_acc = int(tp.sum()) / pred.labels.size
    return miou, pixel_acc


def full_report(
    pred: LabelMap, gt: LabelMap, br_tolerance: int = 2, classes: int | None = None
) -> MetricReport:
    """All metrics for one prediction/ground-truth pair."""
    if classes is None:
        classes = int(max(pred.labels.max(), gt.labels.max())) + 1 if pred.labels.size else 1
    value, mask = undersegmentation_error(pred, gt)
    miou, pixel_acc = miou_pixacc(pred, gt, classes)
    return MetricReport(
        asa=asa(pred, gt),
        br=boundary_recall(pred, gt, br_tolerance),
        ue=value,
        leakage_mask=mask,
        miou=miou,
        pixel_acc=pixel_acc,
    )

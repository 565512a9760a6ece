"""Dense grid containers and resolution-changing primitives.

All arithmetic is float64. Downsampling halves each axis with ceiling
division, so odd borders are covered by shrunken blocks rather than padding.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class FeatureMap:
    """A dense (height, width, channels) grid of finite float64 values."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InvalidInputError(f"feature map must be 3-d (h, w, c), got shape {self.data.shape}")
        if self.data.size and not np.isfinite(self.data).all():
            raise InvalidInputError("feature map contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class LabelMap:
    """A dense (height, width) grid of non-negative integer labels."""

    labels: np.ndarray
    num_labels: int | None = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise InvalidInputError(f"label map must be 2-d, got shape {self.labels.shape}")
        if self.labels.size and self.labels.min() < 0:
            raise InvalidInputError("label map contains negative labels")
        if self.num_labels is not None and self.labels.size and self.labels.max() >= self.num_labels:
            raise InvalidInputError(
                f"label {int(self.labels.max())} exceeds declared count {self.num_labels}"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def avg_pool2(fmap: FeatureMap) -> FeatureMap:
    """Halve both axes by averaging 2x2 blocks (smaller blocks at odd borders).

    Block sums are formed pairwise, so constant inputs pool to the exact
    constant.
    """
    if fmap.height < 2 or fmap.width < 2:
        raise InvalidInputError(f"cannot pool a {fmap.height}x{fmap.width} map; need dims >= 2")
    d = fmap.data
    rows = np.add.reduceat(d, np.arange(0, d.shape[0], 2), axis=0)
    sums = np.add.reduceat(rows, np.arange(0, d.shape[1], 2), axis=1)
    rc = np.full(sums.shape[0], 2.0)
    cc = np.full(sums.shape[1], 2.0)
    if d.shape[0] % 2:
        rc[-1] = 1.0
    if d.shape[1] % 2:
        cc[-1] = 1.0
    return FeatureMap(sums / (rc[:, None, None] * cc[None, :, None]))


def subsample2(fmap: FeatureMap) -> FeatureMap:
    """Strided 2x2 variant of :func:`avg_pool2`: keep each block's top-left pixel."""
    if fmap.height < 2 or fmap.width < 2:
        raise InvalidInputError(f"cannot subsample a {fmap.height}x{fmap.width} map; need dims >= 2")
    return FeatureMap(fmap.data[::2, ::2].copy())


def _lerp_axis(data: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = data.shape[axis]
    pos = (np.arange(n * factor) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, float(n - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    w = pos - i0
    shape = [1] * data.ndim
    shape[axis] = -1
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    # a + w*(b - a) is exact for constants and for w == 0
    return a + w.reshape(shape) * (b - a)


def bilinear_upsample(fmap: FeatureMap, factor: int) -> FeatureMap:
    """Upsample by an integer factor, sampling at (i + 0.5) / factor - 0.5.

    This is the align-corners=false convention with edge clamping; factor 1
    returns the input values unchanged.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidInputError(f"upsample factor must be a positive integer, got {factor!r}")
    out = _lerp_axis(fmap.data, int(factor), axis=0)
    out = _lerp_axis(out, int(factor), axis=1)
    return FeatureMap(out)


def project(fmap: FeatureMap, weights: np.ndarray) -> FeatureMap:
    """Apply a (K, C) matrix to every pixel's channel vector."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != fmap.channels:
        raise InvalidInputError(
            f"projection shape {weights.shape} does not match {fmap.channels} channels"
        )
    h, w, c = fmap.data.shape
    out = fmap.data.reshape(-1, c) @ weights.T
    return FeatureMap(out.reshape(h, w, weights.shape[0]))

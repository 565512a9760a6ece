"""A small fully convolutional net with clustering at its two downsampling
layers, trained on synthetic dense-labeling data.

The trunk (conv 3x3, strided 2x2 conv, conv 3x3, strided 2x2 conv, 1x1 head)
is identical in both decoder modes; only the path from quarter-resolution
logits back to full resolution differs. Cluster mode assigns pixels to seeds
at both boundaries and decodes through those fields; bilinear mode upsamples
the logits by four. Everything is trained end to end with hand-written
backprop, momentum SGD, and a polynomial learning-rate decay.

Synthetic samples contain a background, filled ellipses, and one-pixel-wide
polylines, so the decoders can be compared on thin structures.
"""

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .clustering import ClusteringConfig
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .grid import FeatureMap, LabelMap, _lerp_axis
from .metrics import boundary_mask, miou_pixacc

N_CLASSES = 3  # background, blob, thin line

PARAM_FIELDS = (
    "conv1_w",
    "conv1_b",
    "down1_w",
    "down1_b",
    "conv2_w",
    "conv2_b",
    "down2_w",
    "down2_b",
    "head_w",
    "head_b",
    "proj1_fine",
    "proj1_seed",
    "proj2_fine",
    "proj2_seed",
)


@dataclass
class ToyNetParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    down1_w: np.ndarray
    down1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    down2_w: np.ndarray
    down2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    proj1_fine: np.ndarray
    proj1_seed: np.ndarray
    proj2_fine: np.ndarray
    proj2_seed: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).reshape(-1) for n in PARAM_FIELDS])

    def from_vector(self, vec: np.ndarray) -> "ToyNetParams":
        out = {}
        pos = 0
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            out[name] = vec[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size
        if pos != vec.size:
            raise InvalidInputError(f"vector has {vec.size} entries, expected {pos}")
        return ToyNetParams(**out)

    def copy(self) -> "ToyNetParams":
        return ToyNetParams(**{n: getattr(self, n).copy() for n in PARAM_FIELDS})


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int = 8
    base_lr: float = 0.05
    momentum: float = 0.9
    poly_power: float = 0.9
    decoder: str = "cluster"
    seed: int = 42

    def __post_init__(self):
        if not self.base_lr > 0:
            raise InvalidConfigError(f"learning rate must be positive, got {self.base_lr}")
        if self.iterations < 0:
            raise InvalidConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.decoder not in ("cluster", "bilinear"):
            raise InvalidConfigError(f"decoder must be 'cluster' or 'bilinear', got {self.decoder!r}")

    def lr_at(self, iteration: int) -> float:
        return self.base_lr * (1.0 - iteration / self.iterations) ** self.poly_power


@dataclass
class SyntheticSample:
    image: FeatureMap
    labels: LabelMap


@dataclass
class ForwardResult:
    logits: FeatureMap
    fields: list | None
    activations: dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def _draw_color(rng, kind):
    # class-correlated appearance (muted background, green blobs, warm
    # bright lines) so local color is a usable cue, as in street scenes
    if kind == 0:
        return np.clip(rng.uniform(0.25, 0.75) + rng.uniform(-0.15, 0.15, 3), 0.0, 1.0)
    if kind == 1:
        return np.array(
            [rng.uniform(0.05, 0.45), rng.uniform(0.55, 0.95), rng.uniform(0.05, 0.45)]
        )
    return np.array([rng.uniform(0.75, 1.0), rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45)])


def _separated_colors(rng, kinds):
    colors = np.stack([_draw_color(rng, k) for k in kinds])
    for _ in range(400):
        d = np.sqrt(((colors[:, None, :] - colors[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        bad = np.nonzero((d < 0.2).any(axis=1))[0]
        if bad.size == 0:
            return colors
        colors[bad[0]] = _draw_color(rng, kinds[bad[0]])
    return colors


def _line_cells(x0, y0, x1, y1):
    """Integer Bresenham walk from (x0, y0) to (x1, y1), inclusive."""
    cells = []
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        cells.append((y, x))
        if x == x1 and y == y1:
            return cells
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def gen_synthetic(seed: int, count: int, size: int = 64, noise: float = 0.02):
    """Deterministic dataset of images with blobs and one-pixel-wide lines."""
    if size < 32:
        raise InvalidInputError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for _ in range(count):
        n_blobs = int(rng.integers(1, 4))
        n_lines = int(rng.integers(1, 4))
        colors = _separated_colors(rng, [0] + [1] * n_blobs + [2] * n_lines)
        image = np.empty((size, size, 3))
        image[:] = colors[0]
        labels = np.zeros((size, size), np.int64)
        for b in range(n_blobs):
            cx, cy = rng.uniform(0.15 * size, 0.85 * size, size=2)
            rx, ry = rng.uniform(0.06 * size, 0.22 * size, size=2)
            theta = rng.uniform(0.0, math.pi)
            u = (xs - cx) * math.cos(theta) + (ys - cy) * math.sin(theta)
            v = -(xs - cx) * math.sin(theta) + (ys - cy) * math.cos(theta)
            inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
            image[inside] = colors[1 + b]
            labels[inside] = 1
        for ln in range(n_lines):
            n_seg = int(rng.integers(2, 5))
            x = int(rng.integers(2, size - 2))
            y = int(rng.integers(2, size - 2))
            color = colors[1 + n_blobs + ln]
            for _seg in range(n_seg):
                ang = rng.uniform(0.0, 2.0 * math.pi)
                length = rng.uniform(0.4 * size, 0.9 * size)
                x1 = int(np.clip(round(x + length * math.cos(ang)), 0, size - 1))
                y1 = int(np.clip(round(y + length * math.sin(ang)), 0, size - 1))
                for (yy, xx) in _line_cells(x, y, x1, y1):
                    image[yy, xx] = color
                    labels[yy, xx] = 2
                x, y = x1, y1
        if noise > 0:
            image = image + rng.normal(0.0, noise, size=image.shape)
        image = np.clip(image, 0.0, 1.0)
        samples.append(SyntheticSample(FeatureMap(image), LabelMap(labels, num_labels=N_CLASSES)))
    return samples


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _he(rng, shape):
    fan_in = int(np.prod(shape[:-1]))
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def _orthogonal_rows(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((cols, rows)))
    return q.T.copy()


def init_toy_params(seed: int, n_classes: int = N_CLASSES, k_dim: int = 16) -> ToyNetParams:
    """He-initialized convolutions, orthogonal-row projection matrices."""
    rng = np.random.default_rng(seed)
    return ToyNetParams(
        conv1_w=_he(rng, (3, 3, 3, 16)),
        conv1_b=np.zeros(16),
        down1_w=_he(rng, (2, 2, 16, 32)),
        down1_b=np.zeros(32),
        conv2_w=_he(rng, (3, 3, 32, 32)),
        conv2_b=np.zeros(32),
        down2_w=_he(rng, (2, 2, 32, 64)),
        down2_b=np.zeros(64),
        head_w=_he(rng, (64, n_classes)),
        head_b=np.zeros(n_classes),
        proj1_fine=_orthogonal_rows(rng, k_dim, 16),
        proj1_seed=_orthogonal_rows(rng, k_dim, 32),
        proj2_fine=_orthogonal_rows(rng, k_dim, 32),
        proj2_seed=_orthogonal_rows(rng, k_dim, 64),
    )


# ---------------------------------------------------------------------------
# layers (batched, channel-last)
# ---------------------------------------------------------------------------


def _conv3x3(x, w, b):
    # edge padding keeps constant inputs constant across the whole output
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3)).reshape(bsz * h * wd, 9 * cin)
    out = cols @ w.reshape(9 * cin, cout) + b
    return out.reshape(bsz, h, wd, cout), cols


def _conv3x3_bwd(cols, x_shape, w, d_out):
    bsz, h, wd, cin = x_shape
    cout = w.shape[3]
    d2 = d_out.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(9 * cin, cout).T).reshape(bsz, h, wd, 3, 3, cin)
    dxp = np.zeros((bsz, h + 2, wd + 2, cin))
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki : ki + h, kj : kj + wd] += dcols[:, :, :, ki, kj, :]
    # fold the replicated border rows/cols back onto the edge pixels
    dx = dxp[:, 1:-1, 1:-1].copy()
    dx[:, 0, :] += dxp[:, 0, 1:-1]
    dx[:, -1, :] += dxp[:, -1, 1:-1]
    dx[:, :, 0] += dxp[:, 1:-1, 0]
    dx[:, :, -1] += dxp[:, 1:-1, -1]
    dx[:, 0, 0] += dxp[:, 0, 0]
    dx[:, 0, -1] += dxp[:, 0, -1]
    dx[:, -1, 0] += dxp[:, -1, 0]
    dx[:, -1, -1] += dxp[:, -1, -1]
    return dx, dw, db


def _down2(x, w, b):
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    blk = x.reshape(bsz, h // 2, 2, wd // 2, 2, cin).transpose(0, 1, 3, 2, 4, 5)
    cols = np.ascontiguousarray(blk).reshape(-1, 4 * cin)
    out = cols @ w.reshape(4 * cin, cout) + b
    return out.reshape(bsz, h // 2, wd // 2, cout), cols


def _down2_bwd(cols, x_shape, w, d_out):
    bsz, h, wd, cin = x_shape
    cout = w.shape[3]
    d2 = d_out.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dblk = (d2 @ w.reshape(4 * cin, cout).T).reshape(bsz, h // 2, wd // 2, 2, 2, cin)
    dx = np.ascontiguousarray(dblk.transpose(0, 1, 3, 2, 4, 5)).reshape(bsz, h, wd, cin)
    return dx, dw, db


def _upsample4(x):
    out = _lerp_axis(x, 4, axis=1)
    return _lerp_axis(out, 4, axis=2)


def _upsample_axis_T(g, factor, n_in, axis):
    pos = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, float(n_in - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    wgt = pos - i0
    out_shape = list(g.shape)
    out_shape[axis] = n_in
    d = np.zeros(out_shape)
    gm = np.moveaxis(g, axis, 0)
    dm = np.moveaxis(d, axis, 0)
    wcol = wgt.reshape((-1,) + (1,) * (gm.ndim - 1))
    np.add.at(dm, i0, (1.0 - wcol) * gm)
    np.add.at(dm, i1, wcol * gm)
    return d


def _upsample4_T(g, h4, w4):
    d = _upsample_axis_T(g, 4, w4, axis=2)
    return _upsample_axis_T(d, 4, h4, axis=1)


def _softmax_ce(logits, labels):
    """Mean cross-entropy over all pixels, plus its logits gradient."""
    z = logits - logits.max(-1, keepdims=True)
    lse = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - lse
    n = labels.size
    loss = -np.take_along_axis(logp, labels[..., None], axis=-1).sum() / n
    grad = np.exp(logp)
    picked = np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0
    np.put_along_axis(grad, labels[..., None], picked, axis=-1)
    return loss, grad / n


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

_DEFAULT_CLUSTER = ClusteringConfig(tau=0.07, k_dim=16, similarity="cosine")


def _project(x, w):
    shape = x.shape[:-1] + (w.shape[0],)
    return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(shape)


def _trunk(p: ToyNetParams, images):
    z1, cols1 = _conv3x3(images, p.conv1_w, p.conv1_b)
    a1 = np.maximum(z1, 0.0)
    zd1, colsd1 = _down2(a1, p.down1_w, p.down1_b)
    s1 = np.maximum(zd1, 0.0)
    z2, cols2 = _conv3x3(s1, p.conv2_w, p.conv2_b)
    a2 = np.maximum(z2, 0.0)
    zd2, colsd2 = _down2(a2, p.down2_w, p.down2_b)
    s2 = np.maximum(zd2, 0.0)
    logits4 = _project(s2, p.head_w.T) + p.head_b
    cache = {
        "z1": z1, "a1": a1, "cols1": cols1,
        "zd1": zd1, "s1": s1, "colsd1": colsd1,
        "z2": z2, "a2": a2, "cols2": cols2,
        "zd2": zd2, "s2": s2, "colsd2": colsd2,
        "logits4": logits4,
    }
    return cache


def _assign_batch(p: ToyNetParams, cache, cfg: ClusteringConfig):
    """Per-sample assignment fields at both boundaries, from projected
    trunk activations."""
    bsz = cache["a1"].shape[0]
    f1p = _project(cache["a1"], p.proj1_fine)
    s1p = _project(cache["s1"], p.proj1_seed)
    f2p = _project(cache["a2"], p.proj2_fine)
    s2p = _project(cache["s2"], p.proj2_seed)
    fields1, fields2 = [], []
    for b in range(bsz):
        fields1.append(
            _kernels.soft_assign_core(f1p[b], s1p[b], cfg.tau, cfg.use_cosine, cfg.epsilon_norm)
        )
        fields2.append(
            _kernels.soft_assign_core(f2p[b], s2p[b], cfg.tau, cfg.use_cosine, cfg.epsilon_norm)
        )
    cache.update({"f1p": f1p, "s1p": s1p, "f2p": f2p, "s2p": s2p})
    return fields1, fields2


def _forward_batch(p: ToyNetParams, images, mode, cfg: ClusteringConfig):
    if images.ndim != 4 or images.shape[3] != 3:
        raise InvalidInputError(f"expected (B, H, W, 3) images, got shape {images.shape}")
    if images.shape[1] % 4 or images.shape[2] % 4:
        raise InvalidInputError(
            f"image dims must be divisible by 4, got {images.shape[1]}x{images.shape[2]}"
        )
    if mode not in ("cluster", "bilinear"):
        raise InvalidInputError(f"mode must be 'cluster' or 'bilinear', got {mode!r}")
    cache = _trunk(p, images)
    logits4 = cache["logits4"]
    bsz, h4, w4, nc = logits4.shape
    if mode == "bilinear":
        return _upsample4(logits4), None, None, cache
    fields1, fields2 = _assign_batch(p, cache, cfg)
    mids = np.empty((bsz, h4 * 2, w4 * 2, nc))
    outs = np.empty((bsz, h4 * 4, w4 * 4, nc))
    for b in range(bsz):
        i2, w2, c2 = fields2[b]
        mids[b] = _kernels.decode_core(i2, w2, c2, logits4[b].reshape(-1, nc))
        i1, w1, c1 = fields1[b]
        outs[b] = _kernels.decode_core(i1, w1, c1, mids[b].reshape(-1, nc))
    cache["mids"] = mids
    return outs, fields1, fields2, cache


def _backward_batch(p: ToyNetParams, images, d_logits_full, mode, cfg, fields1, fields2, cache):
    grads = {name: np.zeros_like(getattr(p, name)) for name in PARAM_FIELDS}
    bsz, h4, w4, nc = cache["logits4"].shape
    d_logits4 = np.empty_like(cache["logits4"])
    d_a1_cl = None
    if mode == "bilinear":
        d_logits4 = _upsample4_T(d_logits_full, h4, w4)
    else:
        d_a1_cl = np.zeros_like(cache["a1"])
        d_s1_cl = np.zeros_like(cache["s1"])
        d_a2_cl = np.zeros_like(cache["a2"])
        d_s2_cl = np.zeros_like(cache["s2"])
        k = p.proj1_fine.shape[0]
        for b in range(bsz):
            i1, w1, c1 = fields1[b]
            i2, w2, c2 = fields2[b]
            mid2d = cache["mids"][b].reshape(-1, nc)
            d_mid2d, d_w1 = _kernels.backward_decode_core(
                i1, w1, c1, mid2d, d_logits_full[b]
            )
            d_log2d, d_w2 = _kernels.backward_decode_core(
                i2, w2, c2, cache["logits4"][b].reshape(-1, nc), d_mid2d.reshape(cache["mids"][b].shape)
            )
            d_logits4[b] = d_log2d.reshape(h4, w4, nc)
            ga1, gb1 = _kernels.backward_assign_core(
                cache["f1p"][b], cache["s1p"][b], i1, w1, c1, d_w1,
                cfg.tau, cfg.use_cosine, cfg.epsilon_norm,
            )
            ga2, gb2 = _kernels.backward_assign_core(
                cache["f2p"][b], cache["s2p"][b], i2, w2, c2, d_w2,
                cfg.tau, cfg.use_cosine, cfg.epsilon_norm,
            )
            d_a1_cl[b] = _project(ga1, p.proj1_fine.T)
            d_s1_cl[b] = _project(gb1, p.proj1_seed.T)
            d_a2_cl[b] = _project(ga2, p.proj2_fine.T)
            d_s2_cl[b] = _project(gb2, p.proj2_seed.T)
            grads["proj1_fine"] += ga1.reshape(-1, k).T @ cache["a1"][b].reshape(-1, 16)
            grads["proj1_seed"] += gb1.reshape(-1, k).T @ cache["s1"][b].reshape(-1, 32)
            grads["proj2_fine"] += ga2.reshape(-1, k).T @ cache["a2"][b].reshape(-1, 32)
            grads["proj2_seed"] += gb2.reshape(-1, k).T @ cache["s2"][b].reshape(-1, 64)

    # head
    d_log2 = d_logits4.reshape(-1, nc)
    grads["head_w"] = cache["s2"].reshape(-1, 64).T @ d_log2
    grads["head_b"] = d_log2.sum(axis=0)
    d_s2 = _project(d_logits4, p.head_w)
    if mode == "cluster":
        d_s2 += d_s2_cl
    # down2
    d_zd2 = d_s2 * (cache["zd2"] > 0)
    d_a2, grads["down2_w"], grads["down2_b"] = _down2_bwd(
        cache["colsd2"], cache["a2"].shape, p.down2_w, d_zd2
    )
    if mode == "cluster":
        d_a2 += d_a2_cl
    # conv2
    d_z2 = d_a2 * (cache["z2"] > 0)
    d_s1, grads["conv2_w"], grads["conv2_b"] = _conv3x3_bwd(
        cache["cols2"], cache["s1"].shape, p.conv2_w, d_z2
    )
    if mode == "cluster":
        d_s1 += d_s1_cl
    # down1
    d_zd1 = d_s1 * (cache["zd1"] > 0)
    d_a1, grads["down1_w"], grads["down1_b"] = _down2_bwd(
        cache["colsd1"], cache["a1"].shape, p.down1_w, d_zd1
    )
    if mode == "cluster":
        d_a1 += d_a1_cl
    # conv1
    d_z1 = d_a1 * (cache["z1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv3x3_bwd(
        cache["cols1"], images.shape, p.conv1_w, d_z1
    )
    return grads


def forward(
    p: ToyNetParams, image: FeatureMap, mode: str, cfg: ClusteringConfig = _DEFAULT_CLUSTER
) -> ForwardResult:
    """Full-resolution logits for one image, plus the assignment fields
    retained in cluster mode."""
    logits, fields1, fields2, cache = _forward_batch(p, image.data[None], mode, cfg)
    fields = None
    if mode == "cluster":
        from .clustering import AssignmentField

        h, w = image.height, image.width
        f1 = AssignmentField(h, w, h // 2, w // 2, *fields1[0])
        f2 = AssignmentField(h // 2, w // 2, h // 4, w // 4, *fields2[0])
        fields = [f2, f1]  # coarsest first, ready for a DecodePlan
    activations = {k: cache[k][0] for k in ("a1", "s1", "a2", "s2", "logits4")}
    return ForwardResult(FeatureMap(logits[0]), fields, activations)


def loss_and_grads(
    p: ToyNetParams, images, labels, mode: str, cfg: ClusteringConfig = _DEFAULT_CLUSTER
):
    """Mean cross-entropy over a batch and gradients for every parameter."""
    logits, fields1, fields2, cache = _forward_batch(p, images, mode, cfg)
    loss, d_logits = _softmax_ce(logits, labels)
    grads = _backward_batch(p, images, d_logits, mode, cfg, fields1, fields2, cache)
    return loss, grads


def loss_only(p, images, labels, mode, cfg: ClusteringConfig = _DEFAULT_CLUSTER) -> float:
    logits, _, _, _ = _forward_batch(p, images, mode, cfg)
    return float(_softmax_ce(logits, labels)[0])


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------


def train(
    config: TrainConfig,
    dataset: list[SyntheticSample],
    params: ToyNetParams | None = None,
    cfg: ClusteringConfig = _DEFAULT_CLUSTER,
):
    """Momentum SGD with a poly learning-rate schedule; deterministic in
    the config seed. Returns (params, per-iteration loss curve)."""
    if not dataset:
        raise InvalidInputError("dataset must not be empty")
    if params is None:
        params = init_toy_params(config.seed)
    else:
        params = params.copy()
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
    images = np.stack([s.image.data for s in dataset])
    labels = np.stack([s.labels.labels for s in dataset])
    order = rng.permutation(len(dataset))
    cursor = 0
    curve = []
    for t in range(config.iterations):
        take = []
        while len(take) < config.batch_size:
            if cursor == len(order):
                order = rng.permutation(len(dataset))
                cursor = 0
            take.append(order[cursor])
            cursor += 1
        batch = np.asarray(take)
        loss, grads = loss_and_grads(params, images[batch], labels[batch], config.decoder, cfg)
        if not np.isfinite(loss):
            raise TrainingDivergedError(t)
        lr = config.lr_at(t)
        for name in PARAM_FIELDS:
            v = velocity[name]
            v *= config.momentum
            v += grads[name]
            getattr(params, name)[...] -= lr * v
        curve.append(float(loss))
    return params, curve


def _boundary_counts(pred, gt, tol=1):
    from .metrics import _dilate

    pb = boundary_mask(pred)
    gb = boundary_mask(gt)
    hits_p = int((pb & _dilate(gb, tol)).sum())
    hits_g = int((gb & _dilate(pb, tol)).sum())
    return hits_p, int(pb.sum()), hits_g, int(gb.sum())


def evaluate(
    p: ToyNetParams,
    dataset: list[SyntheticSample],
    mode: str,
    cfg: ClusteringConfig = _DEFAULT_CLUSTER,
    batch_size: int = 16,
) -> dict:
    """Dataset-level mIoU, pixel accuracy, and boundary F-score at 1 px."""
    preds = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        images = np.stack([s.image.data for s in chunk])
        logits, _, _, _ = _forward_batch(p, images, mode, cfg)
        preds.extend(np.argmax(logits, axis=-1))
    gts = [s.labels.labels for s in dataset]
    tall_pred = LabelMap(np.concatenate(preds, axis=0))
    tall_gt = LabelMap(np.concatenate(gts, axis=0))
    miou, pix = miou_pixacc(tall_pred, tall_gt, N_CLASSES)
    hp = tp = hg = tg = 0
    for pr, gt in zip(preds, gts):
        a, b, c, d = _boundary_counts(pr, gt)
        hp, tp, hg, tg = hp + a, tp + b, hg + c, tg + d
    precision = hp / tp if tp else 1.0
    recall = hg / tg if tg else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"miou": miou, "pixel_acc": pix, "boundary_f1": f1}


# ---------------------------------------------------------------------------
# checkpoints: magic "TNP1", u32 section count, then per section u16 name
# length, name, u8 ndim, ndim x u32 dims, f64 payload, all little-endian
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"TNP1"


def save_params(p: ToyNetParams, path) -> None:
    blobs = [_CKPT_MAGIC, struct.pack("<I", len(PARAM_FIELDS))]
    for name in PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(p, name), dtype="<f8")
        nb = name.encode("ascii")
        blobs.append(struct.pack("<H", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<B", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(arr.tobytes())
    payload = b"".join(blobs)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path) -> ToyNetParams:
    from .errors import ParseError

    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise ParseError(f"bad checkpoint magic {raw[:4]!r}", byte_offset=0)
    (count,) = struct.unpack("<I", raw[4:8])
    pos = 8
    sections = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", raw[pos : pos + 2])
        pos += 2
        name = raw[pos : pos + nlen].decode("ascii")
        pos += nlen
        ndim = raw[pos]
        pos += 1
        dims = struct.unpack(f"<{ndim}I", raw[pos : pos + 4 * ndim])
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, "<f8", count=size, offset=pos).reshape(dims)
        pos += 8 * size
        sections[name] = arr.astype(np.float64)
    missing = [n for n in PARAM_FIELDS if n not in sections]
    if missing:
        raise ParseError(f"checkpoint is missing sections: {missing}", byte_offset=pos)
    return ToyNetParams(**{n: sections[n] for n in PARAM_FIELDS})

"""Nine-candidate soft assignment between a fine grid and its seed grid.

Each fine pixel is matched against the seeds in the 3x3 window of seed cells
around its own cell (floor(h/2), floor(w/2)). Window offsets that leave the
seed grid are dropped and the temperature softmax renormalizes over the
survivors, so every row of the assignment stays stochastic. The hard variant
moves each row's mass onto its argmax candidate.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidConfigError, InvalidInputError, ParseError, ResourceLimitError
from .grid import FeatureMap, LabelMap, avg_pool2, subsample2

# a dense fine-by-seed matrix above this many entries is refused
DENSE_GUARD_ELEMS = 10_000_000

_SIMILARITIES = ("cosine", "nse")


@dataclass
class ClusteringConfig:
    """Temperature, projection width, and similarity choice for assignment."""

    tau: float = 0.07
    k_dim: int = 64
    similarity: str = "cosine"
    epsilon_norm: float = 1e-12

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidConfigError(f"tau must be positive, got {self.tau}")
        if not self.epsilon_norm > 0:
            raise InvalidConfigError(f"epsilon_norm must be positive, got {self.epsilon_norm}")
        if self.k_dim < 1:
            raise InvalidConfigError(f"k_dim must be a positive integer, got {self.k_dim}")
        if self.similarity not in _SIMILARITIES:
            raise InvalidConfigError(
                f"similarity must be one of {_SIMILARITIES}, got {self.similarity!r}"
            )

    @property
    def use_cosine(self) -> bool:
        return self.similarity == "cosine"


@dataclass
class ProjectionPair:
    """The two learnable matrices mapping fine and seed features into K dims."""

    w_fine: np.ndarray
    w_seed: np.ndarray

    def __post_init__(self):
        self.w_fine = np.asarray(self.w_fine, dtype=np.float64)
        self.w_seed = np.asarray(self.w_seed, dtype=np.float64)
        if self.w_fine.ndim != 2 or self.w_seed.ndim != 2:
            raise InvalidInputError("projection matrices must be 2-d")
        if self.w_fine.shape[0] != self.w_seed.shape[0]:
            raise InvalidInputError(
                f"projection rows disagree: {self.w_fine.shape[0]} vs {self.w_seed.shape[0]}"
            )
        if not (np.isfinite(self.w_fine).all() and np.isfinite(self.w_seed).all()):
            raise InvalidInputError("projection matrices contain non-finite values")

    @classmethod
    def identity(cls, channels: int) -> "ProjectionPair":
        eye = np.eye(channels)
        return cls(eye, eye.copy())


@dataclass
class SeedGrid:
    """A half-resolution feature map whose pixels act as cluster seeds."""

    features: FeatureMap

    @property
    def height(self) -> int:
        return self.features.height

    @property
    def width(self) -> int:
        return self.features.width

    @classmethod
    def from_fine(cls, fine: FeatureMap, sampling: str = "avg") -> "SeedGrid":
        """Downsample a fine map into its seed grid ('avg' or 'stride')."""
        if sampling == "avg":
            return cls(avg_pool2(fine))
        if sampling == "stride":
            return cls(subsample2(fine))
        raise InvalidConfigError(f"sampling must be 'avg' or 'stride', got {sampling!r}")


@dataclass
class AssignmentField:
    """Per fine pixel, up to nine (seed index, weight) candidate pairs.

    Slots 0..counts-1 are populated in row-major (dy, dx) window order; the
    remaining slots are padding with weight 0 and index 0. Soft fields carry
    a softmax row per pixel, hard fields a one-hot row.
    """

    fine_height: int
    fine_width: int
    seed_height: int
    seed_width: int
    indices: np.ndarray
    weights: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        expected = (self.fine_height, self.fine_width, 9)
        if self.indices.shape != expected or self.weights.shape != expected:
            raise InvalidInputError(
                f"candidate arrays must have shape {expected}, got "
                f"{self.indices.shape} and {self.weights.shape}"
            )
        if self.counts.shape != (self.fine_height, self.fine_width):
            raise InvalidInputError(f"counts must have shape {expected[:2]}, got {self.counts.shape}")

    @property
    def fine_shape(self):
        return (self.fine_height, self.fine_width)

    @property
    def seed_shape(self):
        return (self.seed_height, self.seed_width)

    @property
    def num_seeds(self) -> int:
        return self.seed_height * self.seed_width

    def validate(self) -> None:
        """Check row-stochasticity, index ranges, and window membership."""
        mask = _kernels.slot_mask(self.counts)
        sums = np.where(mask, self.weights, 0.0).sum(-1)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=1e-9):
            raise InvalidInputError("assignment rows do not sum to 1 within 1e-9")
        if (self.weights[~mask] != 0.0).any():
            raise InvalidInputError("padding slots must carry zero weight")
        exp_idx, exp_cnt = _kernels.candidate_slots(self.fine_shape, self.seed_shape)
        if not np.array_equal(exp_cnt, self.counts):
            raise InvalidInputError("candidate counts disagree with the window geometry")
        if not np.array_equal(np.where(mask, self.indices, 0), exp_idx):
            raise InvalidInputError("stored seed indices are not the window candidates")


def candidate_seeds(h: int, w: int, seed_shape) -> list[tuple[int, int]]:
    """In-bounds seed cells of the 3x3 window around pixel (h, w)'s own cell.

    Cells are returned in row-major (dy, dx) order, the same order candidate
    slots are stored in.
    """
    sh, sw = seed_shape
    if not (0 <= h < 2 * sh and 0 <= w < 2 * sw):
        raise InvalidInputError(f"pixel ({h}, {w}) outside the fine grid for seed dims {seed_shape}")
    bi, bj = h // 2, w // 2
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            si, sj = bi + dy, bj + dx
            if 0 <= si < sh and 0 <= sj < sw:
                out.append((si, sj))
    return out


def similarity(a: np.ndarray, b: np.ndarray, config: ClusteringConfig) -> float:
    """Scalar similarity between two K-vectors under the configured mode."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    if config.use_cosine:
        na = max(float(np.linalg.norm(a)), config.epsilon_norm)
        nb = max(float(np.linalg.norm(b)), config.epsilon_norm)
        return float(a @ b) / (na * nb)
    d = a - b
    return float(-(d @ d))


def _check_assign_inputs(fine: FeatureMap, seeds: SeedGrid, proj: ProjectionPair):
    expected = ((fine.height + 1) // 2, (fine.width + 1) // 2)
    if (seeds.height, seeds.width) != expected:
        raise InvalidInputError(
            f"seed grid {seeds.height}x{seeds.width} does not match fine dims "
            f"{fine.height}x{fine.width} (expected {expected[0]}x{expected[1]})"
        )
    if proj.w_fine.shape[1] != fine.channels:
        raise InvalidInputError(
            f"fine projection expects {proj.w_fine.shape[1]} channels, map has {fine.channels}"
        )
    if proj.w_seed.shape[1] != seeds.features.channels:
        raise InvalidInputError(
            f"seed projection expects {proj.w_seed.shape[1]} channels, "
            f"map has {seeds.features.channels}"
        )


def _project_pair(fine_data, seed_data, proj: ProjectionPair):
    h, w, n = fine_data.shape
    sh, sw, m = seed_data.shape
    fine_p = (fine_data.reshape(-1, n) @ proj.w_fine.T).reshape(h, w, -1)
    seed_p = (seed_data.reshape(-1, m) @ proj.w_seed.T).reshape(sh, sw, -1)
    return fine_p, seed_p


def soft_assign(
    fine: FeatureMap,
    seeds: SeedGrid,
    proj: ProjectionPair,
    config: ClusteringConfig,
    threads: int = 1,
) -> AssignmentField:
    """Temperature-softmax assignment of every fine pixel to its window seeds.

    The weight of candidate j for pixel i is
    exp(S(W_f x_i, W_s s_j) / tau) normalized over the pixel's in-bounds
    candidates, so each row sums to one.
    """
    _check_assign_inputs(fine, seeds, proj)
    fine_p, seed_p = _project_pair(fine.data, seeds.features.data, proj)
    indices, weights, counts = _kernels.soft_assign_core(
        fine_p, seed_p, config.tau, config.use_cosine, config.epsilon_norm, threads=threads
    )
    return AssignmentField(
        fine.height, fine.width, seeds.height, seeds.width, indices, weights, counts
    )


def hard_assign(fld: AssignmentField) -> tuple[AssignmentField, LabelMap]:
    """One-hot field plus winning-seed labels; ties go to the lowest slot."""
    winner = np.argmax(fld.weights, axis=-1)
    one_hot = np.zeros_like(fld.weights)
    np.put_along_axis(one_hot, winner[:, :, None], 1.0, axis=-1)
    labels = np.take_along_axis(fld.indices, winner[:, :, None], axis=-1)[:, :, 0]
    hard = AssignmentField(
        fld.fine_height,
        fld.fine_width,
        fld.seed_height,
        fld.seed_width,
        fld.indices.copy(),
        one_hot,
        fld.counts.copy(),
    )
    return hard, LabelMap(labels, num_labels=fld.num_seeds)


def full_soft_assign(
    fine: FeatureMap, seeds: SeedGrid, proj: ProjectionPair, config: ClusteringConfig
) -> np.ndarray:
    """Dense softmax over every seed, as a (fine pixels, seeds) matrix.

    Exists as a testing oracle for the windowed path; refuses instances whose
    dense matrix would exceed the element guard.
    """
    _check_assign_inputs(fine, seeds, proj)
    n_fine = fine.height * fine.width
    n_seed = seeds.height * seeds.width
    if n_fine * n_seed > DENSE_GUARD_ELEMS:
        raise ResourceLimitError(
            f"dense assignment of {n_fine} x {n_seed} = {n_fine * n_seed} entries "
            f"exceeds the {DENSE_GUARD_ELEMS} element guard"
        )
    fine_p, seed_p = _project_pair(fine.data, seeds.features.data, proj)
    a = fine_p.reshape(n_fine, -1)
    b = seed_p.reshape(n_seed, -1)
    if config.use_cosine:
        na = np.maximum(np.linalg.norm(a, axis=1), config.epsilon_norm)
        nb = np.maximum(np.linalg.norm(b, axis=1), config.epsilon_norm)
        sims = (a @ b.T) / np.outer(na, nb)
    else:
        sims = 2.0 * (a @ b.T) - (a * a).sum(1)[:, None] - (b * b).sum(1)[None, :]
    z = (sims - sims.max(axis=1, keepdims=True)) / config.tau
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# serialization: magic "ASF1", u32 dims, then per pixel u8 count and
# count x (u32 seed index, f64 weight) pairs, all little-endian
# ---------------------------------------------------------------------------

_MAGIC = b"ASF1"
_PAIR = np.dtype([("idx", "<u4"), ("wgt", "<f8")])


def save_field(fld: AssignmentField, path) -> None:
    mask = _kernels.slot_mask(fld.counts)
    counts = fld.counts.reshape(-1).astype(np.int64)
    total = int(counts.sum())
    pairs = np.empty(total, dtype=_PAIR)
    pairs["idx"] = fld.indices[mask]
    pairs["wgt"] = fld.weights[mask]
    starts = np.zeros(counts.size, np.int64)
    np.cumsum(1 + 12 * counts[:-1], out=starts[1:])
    body = np.zeros(int(starts[-1] + 1 + 12 * counts[-1]) if counts.size else 0, np.uint8)
    body[starts] = counts
    first_pair = np.cumsum(counts) - counts
    dst = np.repeat(starts + 1, counts) + 12 * (np.arange(total) - np.repeat(first_pair, counts))
    body[dst[:, None] + np.arange(12)] = np.frombuffer(pairs.tobytes(), np.uint8).reshape(-1, 12)
    header = _MAGIC + struct.pack(
        "<4I", fld.fine_height, fld.fine_width, fld.seed_height, fld.seed_width
    )
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(body.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_field(path) -> AssignmentField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ParseError(f"bad magic {raw[:4]!r}, expected {_MAGIC!r}", byte_offset=0)
    if len(raw) < 20:
        raise ParseError("truncated header", byte_offset=len(raw))
    fh_, fw, sh, sw = struct.unpack("<4I", raw[4:20])
    counts = _kernels.window_counts((fh_, fw), (sh, sw)).reshape(-1).astype(np.int64)
    body = np.frombuffer(raw, np.uint8, offset=20)
    expected_len = int((1 + 12 * counts).sum())
    if body.size != expected_len:
        raise ParseError(
            f"body is {body.size} bytes, geometry implies {expected_len}", byte_offset=20
        )
    starts = np.zeros(counts.size, np.int64)
    np.cumsum(1 + 12 * counts[:-1], out=starts[1:])
    if not np.array_equal(body[starts], counts):
        bad = int(np.nonzero(body[starts] != counts)[0][0])
        raise ParseError(
            f"stored candidate count disagrees with geometry at pixel {bad}",
            byte_offset=20 + int(starts[bad]),
        )
    total = int(counts.sum())
    first_pair = np.cumsum(counts) - counts
    src = np.repeat(starts + 1, counts) + 12 * (np.arange(total) - np.repeat(first_pair, counts))
    pairs = np.frombuffer(body[src[:, None] + np.arange(12)].tobytes(), dtype=_PAIR)
    counts2 = counts.reshape(fh_, fw).astype(np.uint8)
    mask = _kernels.slot_mask(counts2)
    indices = np.zeros((fh_, fw, 9), np.int64)
    weights = np.zeros((fh_, fw, 9), np.float64)
    indices[mask] = pairs["idx"]
    weights[mask] = pairs["wgt"]
    fld = AssignmentField(fh_, fw, sh, sw, indices, weights, counts2)
    fld.validate()
    return fld

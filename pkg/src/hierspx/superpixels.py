"""Training-free hierarchical superpixels from handcrafted pixel features.

Each level pools the previous level's features into seeds, assigns with
identity projections, and hardens the assignment; composing the per-level
winners yields a full-resolution label map per level. Features are a color
triple (Lab by default) plus weighted normalized coordinates. This runs the
same assignment math as the learned path, but on fixed features.
"""

from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    AssignmentField,
    ClusteringConfig,
    ProjectionPair,
    SeedGrid,
    hard_assign,
    soft_assign,
)
from .decode import compose_hard_labels
from .errors import InvalidConfigError, InvalidInputError
from .grid import FeatureMap, LabelMap

# sRGB -> XYZ (D65) and the Lab white point
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass
class PipelineConfig:
    levels: int = 3
    tau: float = 0.07
    similarity: str = "nse"
    pos_weight: float = 0.5
    color_space: str = "lab"
    seed_sampling: str = "avg"

    def __post_init__(self):
        if not 1 <= self.levels <= 5:
            raise InvalidConfigError(f"levels must lie in 1..5, got {self.levels}")
        if not self.tau > 0:
            raise InvalidConfigError(f"tau must be positive, got {self.tau}")
        if self.pos_weight < 0:
            raise InvalidConfigError(f"pos_weight must be >= 0, got {self.pos_weight}")
        if self.color_space not in ("lab", "rgb"):
            raise InvalidConfigError(f"color_space must be 'lab' or 'rgb', got {self.color_space!r}")
        if self.seed_sampling not in ("avg", "stride"):
            raise InvalidConfigError(
                f"seed_sampling must be 'avg' or 'stride', got {self.seed_sampling!r}"
            )


@dataclass
class LevelResult:
    """One boundary's assignment plus the composed full-resolution labels."""

    field: AssignmentField
    labels: LabelMap


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Standard sRGB (in [0, 1]) to CIE Lab under the D65 white point."""
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T / _WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta ** 3, np.cbrt(xyz), xyz / (3 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def pixel_features(image: FeatureMap, config: PipelineConfig) -> FeatureMap:
    """Five channels per pixel: color triple plus pos_weight * (y/H, x/W)."""
    if image.channels != 3:
        raise InvalidInputError(f"expected a 3-channel image, got {image.channels} channels")
    h, w = image.height, image.width
    color = srgb_to_lab(image.data) if config.color_space == "lab" else image.data
    ys = np.broadcast_to((config.pos_weight * np.arange(h) / h)[:, None], (h, w))
    xs = np.broadcast_to((config.pos_weight * np.arange(w) / w)[None, :], (h, w))
    return FeatureMap(np.concatenate([color, ys[..., None], xs[..., None]], axis=2))


def hierarchical_superpixels(image: FeatureMap, config: PipelineConfig) -> list[LevelResult]:
    """Cluster at every downsampling boundary and compose per-level labels."""
    if image.height < 2 ** config.levels or image.width < 2 ** config.levels:
        raise InvalidInputError(
            f"{image.height}x{image.width} image is too small for {config.levels} levels"
        )
    cluster_cfg = ClusteringConfig(tau=config.tau, k_dim=5, similarity=config.similarity)
    proj = ProjectionPair.identity(5)
    feats = pixel_features(image, config)
    fields: list[AssignmentField] = []
    results: list[LevelResult] = []
    for _ in range(config.levels):
        seeds = SeedGrid.from_fine(feats, sampling=config.seed_sampling)
        fld = soft_assign(feats, seeds, proj, cluster_cfg)
        fields.append(fld)
        # coarsest-first ordering for composition
        labels = compose_hard_labels(list(reversed(fields)))
        results.append(LevelResult(field=fld, labels=labels))
        feats = seeds.features
    return results


def overlay_boundaries(image: FeatureMap, labels: LabelMap) -> FeatureMap:
    """Recolor label boundaries (4-neighbor changes) to yellow."""
    if (image.height, image.width) != (labels.height, labels.width):
        raise InvalidInputError(
            f"image {image.height}x{image.width} does not match labels "
            f"{labels.height}x{labels.width}"
        )
    from .metrics import boundary_mask

    out = image.data.copy()
    out[boundary_mask(labels.labels)] = (1.0, 1.0, 0.0)
    return FeatureMap(out)

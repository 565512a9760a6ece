"""Hierarchical soft pixel clustering at downsampling boundaries.

Fine pixels are softly assigned to the seeds of their 3x3 seed-cell window;
coarse predictions are decoded back to full resolution through those
assignments instead of bilinear interpolation. The package also ships the
analytic adjoints needed to train through the assignment, a small trainable
net demonstrating the decoders side by side, a training-free superpixel
pipeline, segmentation metrics, file I/O, a CLI, and a benchmark harness.
"""

from ._backend import HAVE_NUMBA, USE_NUMBA
from .bench import run_bench
from .clustering import (
    AssignmentField,
    ClusteringConfig,
    ProjectionPair,
    SeedGrid,
    candidate_seeds,
    full_soft_assign,
    hard_assign,
    load_field,
    save_field,
    similarity,
    soft_assign,
)
from .decode import DecodePlan, compose_hard_labels, decode_hierarchy, decode_once
from .errors import (
    InvalidConfigError,
    InvalidInputError,
    NumericalError,
    ParseError,
    ResourceLimitError,
    TrainingDivergedError,
)
from .fileio import read_image, read_labels, write_image, write_labels, write_report
from .gradients import (
    AssignAdjoint,
    DecodeAdjoint,
    backward_decode,
    backward_soft_assign,
    finite_diff_check,
)
from .grid import FeatureMap, LabelMap, avg_pool2, bilinear_upsample, project, subsample2
from .metrics import (
    MetricReport,
    asa,
    boundary_recall,
    full_report,
    miou_pixacc,
    undersegmentation_error,
)
from .superpixels import (
    PipelineConfig,
    hierarchical_superpixels,
    overlay_boundaries,
    pixel_features,
    srgb_to_lab,
)
from .toynet import (
    SyntheticSample,
    ToyNetParams,
    TrainConfig,
    evaluate,
    forward,
    gen_synthetic,
    init_toy_params,
    load_params,
    save_params,
    train,
)

__version__ = "0.1.0"

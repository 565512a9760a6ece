"""Hand-derived adjoints for decoding and soft assignment, plus a
central-difference checker.

For decoding (fine_i = sum_j w_ij coarse_j):

* d coarse_j = sum_i w_ij upstream_i  (deterministic serial scatter-add)
* d w_ij     = upstream_i . coarse_j

For soft assignment the chain runs through the per-row softmax jacobian,
the similarity derivative (cosine: dS/da = b/(|a||b|) - S a/|a|^2, with the
curvature term dropped whenever the forward clamped that norm at epsilon),
and the two linear projections. Hard assignment is an argmax and carries no
gradient by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .clustering import (
    AssignmentField,
    ClusteringConfig,
    ProjectionPair,
    SeedGrid,
    _check_assign_inputs,
    _project_pair,
)
from .errors import InvalidInputError, NumericalError
from .grid import FeatureMap


@dataclass
class DecodeAdjoint:
    """Gradients of a scalar loss with respect to decode_once inputs."""

    d_coarse: np.ndarray  # (seed_h, seed_w, C)
    d_weights: np.ndarray  # (fine_h, fine_w, 9), zero in padding slots


@dataclass
class AssignAdjoint:
    """Gradients of a scalar loss with respect to soft_assign inputs."""

    d_fine: np.ndarray  # (fine_h, fine_w, N)
    d_seeds: np.ndarray  # (seed_h, seed_w, M)
    d_w_fine: np.ndarray  # (K, N)
    d_w_seed: np.ndarray  # (K, M)


def backward_decode(
    fld: AssignmentField, coarse: FeatureMap, upstream: np.ndarray
) -> DecodeAdjoint:
    """Adjoint of decode_once for an upstream fine-map gradient."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if (coarse.height, coarse.width) != fld.seed_shape:
        raise InvalidInputError(
            f"coarse map {coarse.height}x{coarse.width} does not match seed dims {fld.seed_shape}"
        )
    if upstream.shape != (fld.fine_height, fld.fine_width, coarse.channels):
        raise InvalidInputError(
            f"upstream shape {upstream.shape} does not match decode output "
            f"({fld.fine_height}, {fld.fine_width}, {coarse.channels})"
        )
    d_coarse2d, d_weights = _kernels.backward_decode_core(
        fld.indices, fld.weights, fld.counts, coarse.data.reshape(-1, coarse.channels), upstream
    )
    return DecodeAdjoint(d_coarse2d.reshape(coarse.data.shape), d_weights)


def backward_soft_assign(
    fine: FeatureMap,
    seeds: SeedGrid,
    proj: ProjectionPair,
    config: ClusteringConfig,
    upstream: np.ndarray,
    fld: AssignmentField | None = None,
) -> AssignAdjoint:
    """Adjoint of soft_assign for an upstream (H, W, 9) weight gradient.

    ``upstream`` follows the field's slot layout; padding slots are ignored.
    The forward field is recomputed unless passed in.
    """
    _check_assign_inputs(fine, seeds, proj)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (fine.height, fine.width, 9):
        raise InvalidInputError(
            f"upstream shape {upstream.shape} does not match ({fine.height}, {fine.width}, 9)"
        )
    fine_p, seed_p = _project_pair(fine.data, seeds.features.data, proj)
    if fld is None:
        indices, weights, counts = _kernels.soft_assign_core(
            fine_p, seed_p, config.tau, config.use_cosine, config.epsilon_norm
        )
    else:
        indices, weights, counts = fld.indices, fld.weights, fld.counts
    d_fine_p, d_seed_p = _kernels.backward_assign_core(
        fine_p,
        seed_p,
        indices,
        weights,
        counts,
        upstream,
        config.tau,
        config.use_cosine,
        config.epsilon_norm,
    )
    k = fine_p.shape[2]
    d_fine = (d_fine_p.reshape(-1, k) @ proj.w_fine).reshape(fine.data.shape)
    d_seeds = (d_seed_p.reshape(-1, k) @ proj.w_seed).reshape(seeds.features.data.shape)
    d_w_fine = d_fine_p.reshape(-1, k).T @ fine.data.reshape(-1, fine.channels)
    d_w_seed = d_seed_p.reshape(-1, k).T @ seeds.features.data.reshape(
        -1, seeds.features.channels
    )
    return AssignAdjoint(d_fine, d_seeds, d_w_fine, d_w_seed)


def finite_diff_check(func, point: np.ndarray, analytic: np.ndarray, eps: float = 1e-6) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |numeric|).

    ``func`` maps a flat float64 vector to a scalar and must be twice
    differentiable at ``point`` (keep clear of argmax ties and kinks).
    """
    if not 1e-8 <= eps <= 1e-3:
        raise InvalidInputError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if analytic.shape != point.shape:
        raise InvalidInputError(
            f"analytic gradient has {analytic.size} entries, point has {point.size}"
        )
    worst = 0.0
    x = point.copy()
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        f_plus = float(func(x))
        x[i] = orig - eps
        f_minus = float(func(x))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"non-finite function value while perturbing coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        if not np.isfinite(analytic[i]):
            raise NumericalError(f"non-finite analytic gradient at coordinate {i}")
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return float(worst)

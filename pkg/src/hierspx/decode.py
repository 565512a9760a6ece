"""Recover fine resolution from coarse maps through assignment fields.

Decoding applies each level's sparse row-stochastic field in sequence (at
most nine multiply-adds per pixel per level); the dense per-level matrices
are never materialized. A trailing bilinear factor covers any remaining
resolution gap.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .clustering import AssignmentField, hard_assign
from .errors import InvalidInputError
from .grid import FeatureMap, LabelMap, bilinear_upsample


def _check_chain(fields):
    for a, b in zip(fields, fields[1:]):
        if a.fine_shape != b.seed_shape:
            raise InvalidInputError(
                f"fields do not chain: fine dims {a.fine_shape} feed seed dims {b.seed_shape}"
            )


@dataclass
class DecodePlan:
    """Assignment fields ordered coarsest boundary first, plus a final
    bilinear factor applied after the last field."""

    fields: list[AssignmentField] = field(default_factory=list)
    final_factor: int = 1

    def __post_init__(self):
        if not isinstance(self.final_factor, (int, np.integer)) or self.final_factor < 1:
            raise InvalidInputError(
                f"final bilinear factor must be a positive integer, got {self.final_factor!r}"
            )
        _check_chain(self.fields)

    @property
    def coarsest_shape(self):
        return self.fields[0].seed_shape if self.fields else None


def decode_once(fld: AssignmentField, coarse: FeatureMap, threads: int = 1) -> FeatureMap:
    """One level of decoding: each fine pixel takes the weighted combination
    of its candidate seeds' values."""
    if (coarse.height, coarse.width) != fld.seed_shape:
        raise InvalidInputError(
            f"coarse map {coarse.height}x{coarse.width} does not match seed dims {fld.seed_shape}"
        )
    out = _kernels.decode_core(
        fld.indices, fld.weights, fld.counts, coarse.data.reshape(-1, coarse.channels), threads
    )
    return FeatureMap(out)


def decode_hierarchy(plan: DecodePlan, coarsest: FeatureMap, threads: int = 1) -> FeatureMap:
    """Apply every field coarsest-to-finest, then the final bilinear factor."""
    if plan.fields and (coarsest.height, coarsest.width) != plan.fields[0].seed_shape:
        raise InvalidInputError(
            f"coarsest map {coarsest.height}x{coarsest.width} does not match "
            f"deepest seed dims {plan.fields[0].seed_shape}"
        )
    cur = coarsest
    for fld in plan.fields:
        cur = decode_once(fld, cur, threads=threads)
    if plan.final_factor > 1:
        cur = bilinear_upsample(cur, plan.final_factor)
    return cur


def compose_hard_labels(fields: list[AssignmentField]) -> LabelMap:
    """Label each finest pixel with the coarsest seed its argmax chain reaches.

    ``fields`` are ordered coarsest first, as in :class:`DecodePlan`.
    """
    if not fields:
        raise InvalidInputError("need at least one field to compose labels")
    _check_chain(fields)
    winners = [hard_assign(f)[1].labels for f in fields]
    lab = winners[-1]
    for deeper in reversed(winners[:-1]):
        lab = deeper.reshape(-1)[lab]
    return LabelMap(lab, num_labels=fields[0].num_seeds)

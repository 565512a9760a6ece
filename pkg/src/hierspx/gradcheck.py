"""Central-difference verification of every analytic adjoint.

Each entry perturbs one input of a scalar objective and compares against the
hand-derived gradient; the report maps operation names to max relative
errors (relative to max(1, |numeric|)).
"""

import numpy as np

from .clustering import ClusteringConfig, ProjectionPair, SeedGrid, soft_assign
from .decode import decode_once
from .gradients import backward_decode, backward_soft_assign, finite_diff_check
from .grid import FeatureMap
from . import _kernels
from .toynet import PARAM_FIELDS, init_toy_params, loss_and_grads, loss_only

THRESHOLD = 1e-5


def _decode_checks(rng, eps):
    cfg = ClusteringConfig(tau=0.3, k_dim=5, similarity="cosine")
    fine = FeatureMap(rng.standard_normal((6, 6, 3)))
    seeds = SeedGrid(FeatureMap(rng.standard_normal((3, 3, 4))))
    proj = ProjectionPair(rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
    fld = soft_assign(fine, seeds, proj, cfg)
    coarse = FeatureMap(rng.standard_normal((3, 3, 3)))
    probe = rng.standard_normal((6, 6, 3))
    adj = backward_decode(fld, coarse, probe)

    def wrt_coarse(v):
        return float(
            (decode_once(fld, FeatureMap(v.reshape(coarse.data.shape))).data * probe).sum()
        )

    err_coarse = finite_diff_check(wrt_coarse, coarse.data, adj.d_coarse, eps)

    coarse2d = coarse.data.reshape(-1, 3)

    def wrt_weights(v):
        out = _kernels.decode_core(fld.indices, v.reshape(6, 6, 9), fld.counts, coarse2d)
        return float((out * probe).sum())

    err_weights = finite_diff_check(wrt_weights, fld.weights, adj.d_weights, eps)
    return {"backward_decode.d_coarse": err_coarse, "backward_decode.d_weights": err_weights}


def _assign_checks(rng, eps):
    out = {}
    mask = None
    for sim in ("cosine", "nse"):
        cfg = ClusteringConfig(tau=0.2, k_dim=5, similarity=sim)
        fine = FeatureMap(rng.standard_normal((6, 6, 3)))
        seeds = SeedGrid(FeatureMap(rng.standard_normal((3, 3, 4))))
        proj = ProjectionPair(rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
        fld = soft_assign(fine, seeds, proj, cfg)
        mask = _kernels.slot_mask(fld.counts)
        probe = rng.standard_normal((6, 6, 9)) * mask
        adj = backward_soft_assign(fine, seeds, proj, cfg, probe)

        def objective(f=fine.data, s=seeds.features.data, wf=proj.w_fine, ws=proj.w_seed):
            field = soft_assign(
                FeatureMap(f), SeedGrid(FeatureMap(s)), ProjectionPair(wf, ws), cfg
            )
            return float((field.weights * probe).sum())

        checks = {
            "d_fine": (fine.data, adj.d_fine, lambda v: objective(f=v.reshape(6, 6, 3))),
            "d_seeds": (seeds.features.data, adj.d_seeds, lambda v: objective(s=v.reshape(3, 3, 4))),
            "d_w_fine": (proj.w_fine, adj.d_w_fine, lambda v: objective(wf=v.reshape(5, 3))),
            "d_w_seed": (proj.w_seed, adj.d_w_seed, lambda v: objective(ws=v.reshape(5, 4))),
        }
        for name, (point, analytic, fn) in checks.items():
            out[f"backward_soft_assign[{sim}].{name}"] = finite_diff_check(fn, point, analytic, eps)
    return out


def _toy_checks(rng, eps):
    params = init_toy_params(int(rng.integers(1 << 31)))
    images = rng.uniform(0.0, 1.0, size=(1, 8, 8, 3))
    labels = rng.integers(0, 3, size=(1, 8, 8))
    _, grads = loss_and_grads(params, images, labels, "cluster")
    base = params
    out = {}
    for name in PARAM_FIELDS:
        arr = getattr(base, name)

        def fn(v, name=name, arr=arr):
            trial = base.copy()
            getattr(trial, name)[...] = v.reshape(arr.shape)
            return loss_only(trial, images, labels, "cluster")

        out[f"toy_loss.{name}"] = finite_diff_check(fn, arr, grads[name], eps)
    return out


def run_gradcheck(seed: int = 42, eps: float = 1e-6) -> dict[str, float]:
    """Every adjoint's max relative error under central differences."""
    rng = np.random.default_rng(seed)
    report = {}
    report.update(_decode_checks(rng, eps))
    report.update(_assign_checks(rng, eps))
    report.update(_toy_checks(rng, eps))
    return report

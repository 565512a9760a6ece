"""Timing harness for the decode paths.

Compares the sparse per-pixel decode against plain bilinear upsampling and,
when the size guard allows, against a dense matrix decode oracle. When the
numba backend is active, the pure-numpy kernels are timed alongside it so
the two implementations can be compared on the same inputs. Wall time comes
from the monotonic clock; the warm-up run is excluded from statistics.
"""

import time

import numpy as np

from . import _kernels
from ._backend import USE_NUMBA, set_threads, thread_limit
from .clustering import DENSE_GUARD_ELEMS
from .errors import InvalidInputError
from .grid import FeatureMap, bilinear_upsample


def random_fields(rng, height, width, levels):
    """Random row-stochastic fields chained coarsest-first."""
    fields = []
    h, w = height, width
    for _ in range(levels):
        sh, sw = (h + 1) // 2, (w + 1) // 2
        indices, counts = _kernels.candidate_slots((h, w), (sh, sw))
        mask = _kernels.slot_mask(counts)
        weights = rng.uniform(0.05, 1.0, size=(h, w, 9)) * mask
        weights /= weights.sum(-1, keepdims=True)
        fields.append((indices, weights, counts, (h, w), (sh, sw)))
        h, w = sh, sw
    fields.reverse()
    return fields


def _sparse_chain(fields, coarse2d, backend, threads=1):
    cur = coarse2d
    for indices, weights, counts, fine_shape, _seed_shape in fields:
        if backend == "numpy":
            cur = _kernels._decode_np(indices, weights, counts, cur)
        else:
            cur = _kernels.decode_core(indices, weights, counts, cur, threads=threads)
        cur = cur.reshape(-1, cur.shape[-1])
    return cur


def _dense_matrix(indices, weights, counts, num_seeds):
    h, w, _ = indices.shape
    u = h * w
    mask = _kernels.slot_mask(counts).reshape(u, 9)
    rows = np.broadcast_to(np.arange(u)[:, None], (u, 9))[mask]
    dense = np.zeros((u, num_seeds))
    dense[rows, indices.reshape(u, 9)[mask]] = weights.reshape(u, 9)[mask]
    return dense


def counted_decode(indices, weights, counts, coarse2d):
    """Naive per-pixel decode that counts its multiply-adds (small inputs only)."""
    h, w = counts.shape
    c = coarse2d.shape[1]
    out = np.zeros((h, w, c))
    macs = 0
    for i in range(h):
        for j in range(w):
            for t in range(int(counts[i, j])):
                v = indices[i, j, t]
                for ch in range(c):
                    out[i, j, ch] += weights[i, j, t] * coarse2d[v, ch]
                    macs += 1
    return out, macs


def sparse_op_count(fields, channels):
    """Multiply-adds the sparse chain performs: valid candidates x channels."""
    return int(sum(int(f[2].sum()) * channels for f in fields))


def _time_kernel(fn, trials):
    fn()  # warm-up, excluded
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return {
        "trials": trials,
        "mean_s": float(arr.mean()),
        "median_s": float(np.median(arr)),
        "min_s": float(arr.min()),
    }


def run_bench(
    height: int,
    width: int,
    levels: int = 2,
    trials: int = 30,
    channels: int = 3,
    threads: int | None = None,
    seed: int = 42,
) -> dict:
    """Time the decode kernels on synthetic fields and cross-check outputs."""
    if trials < 1:
        raise InvalidInputError(f"trials must be >= 1, got {trials}")
    if levels < 1:
        raise InvalidInputError(f"levels must be >= 1, got {levels}")
    if height % (1 << levels) or width % (1 << levels):
        raise InvalidInputError(
            f"dims {height}x{width} must be divisible by 2^levels = {1 << levels}"
        )
    rng = np.random.default_rng(seed)
    fields = random_fields(rng, height, width, levels)
    ch, cw = fields[0][4]
    coarsest = rng.standard_normal((ch, cw, channels))
    coarse2d = coarsest.reshape(-1, channels)
    backend = "numba" if USE_NUMBA else "numpy"

    report = {
        "height": height,
        "width": width,
        "levels": levels,
        "channels": channels,
        "trials": trials,
        "backend": backend,
        "kernels": {},
        "agreement": {},
        "op_count": {"sparse_multiply_adds": sparse_op_count(fields, channels)},
    }

    sparse_out = _sparse_chain(fields, coarse2d, backend)
    stats = _time_kernel(lambda: _sparse_chain(fields, coarse2d, backend), trials)
    stats["checksum"] = float(sparse_out.sum())
    report["kernels"]["sparse_decode"] = stats

    if threads is not None and threads > 1:
        set_threads(threads)
        try:
            par = _time_kernel(lambda: _sparse_chain(fields, coarse2d, backend, threads), trials)
        finally:
            set_threads(thread_limit())
        par["threads"] = threads
        report["kernels"]["sparse_decode_parallel"] = par

    if backend == "numba":
        np_out = _sparse_chain(fields, coarse2d, "numpy")
        stats = _time_kernel(lambda: _sparse_chain(fields, coarse2d, "numpy"), trials)
        stats["checksum"] = float(np_out.sum())
        report["kernels"]["sparse_decode_numpy"] = stats
        report["agreement"]["numba_vs_numpy_max_abs"] = float(
            np.abs(sparse_out - np_out).max()
        )

    fmap = FeatureMap(coarsest)
    factor = 1 << levels
    stats = _time_kernel(lambda: bilinear_upsample(fmap, factor), trials)
    stats["checksum"] = float(bilinear_upsample(fmap, factor).data.sum())
    report["kernels"]["bilinear_upsample"] = stats

    largest = max(f[3][0] * f[3][1] * f[4][0] * f[4][1] for f in fields)
    if largest > DENSE_GUARD_ELEMS:
        report["kernels"]["dense_decode"] = {
            "skipped": True,
            "reason": f"dense matrix would hold {largest} elements "
            f"(guard {DENSE_GUARD_ELEMS})",
        }
        report["agreement"]["sparse_vs_dense_max_abs"] = None
    else:
        mats = [_dense_matrix(f[0], f[1], f[2], f[4][0] * f[4][1]) for f in fields]

        def dense_chain():
            cur = coarse2d
            for m in mats:
                cur = m @ cur
            return cur

        dense_out = dense_chain()
        stats = _time_kernel(dense_chain, trials)
        stats["checksum"] = float(dense_out.sum())
        report["kernels"]["dense_decode"] = stats
        report["agreement"]["sparse_vs_dense_max_abs"] = float(
            np.abs(sparse_out - dense_out).max()
        )
    return report

"""Hot per-pixel kernels, in numba and pure-numpy flavours.

Every kernel works on raw arrays. An assignment field is the triple
``(indices, weights, counts)``:

* ``indices``: (H, W, 9) int64, flat seed index per candidate slot,
* ``weights``: (H, W, 9) float64, row-stochastic over the first ``counts``
  slots, zero in the padding slots,
* ``counts``:  (H, W) uint8, number of in-bounds candidates (1..9).

Candidate slots follow row-major (dy, dx) order over the 3x3 seed window
centred at a pixel's own cell (floor(h/2), floor(w/2)); out-of-bounds
offsets are dropped and the surviving slots are packed to the front. This
order is part of the on-disk format, so both backends must produce it
bit-identically.

Scatter-adds (the backward kernels) stay serial: gradient accumulation
order must not depend on a thread schedule.
"""

import math

import numpy as np

from ._backend import USE_NUMBA, set_threads, thread_limit

if USE_NUMBA:
    from numba import njit, prange
else:  # pragma: no cover - exercised only without numba
    prange = range

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


# offsets in the serialized slot order
_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def _soft_assign_impl(fine_p, seed_p, tau, use_cosine, eps, indices, weights, counts):
    h, w, k = fine_p.shape
    sh, sw = seed_p.shape[0], seed_p.shape[1]
    for i in prange(h):
        sims = np.empty(9, np.float64)
        bi = i // 2
        for j in range(w):
            bj = j // 2
            n = 0
            for dy in range(-1, 2):
                si = bi + dy
                if si < 0 or si >= sh:
                    continue
                for dx in range(-1, 2):
                    sj = bj + dx
                    if sj < 0 or sj >= sw:
                        continue
                    if use_cosine:
                        dot = 0.0
                        na = 0.0
                        nb = 0.0
                        for c in range(k):
                            a = fine_p[i, j, c]
                            b = seed_p[si, sj, c]
                            dot += a * b
                            na += a * a
                            nb += b * b
                        na = math.sqrt(na)
                        nb = math.sqrt(nb)
                        if na < eps:
                            na = eps
                        if nb < eps:
                            nb = eps
                        s = dot / (na * nb)
                    else:
                        s = 0.0
                        for c in range(k):
                            d = fine_p[i, j, c] - seed_p[si, sj, c]
                            s -= d * d
                    sims[n] = s
                    indices[i, j, n] = si * sw + sj
                    n += 1
            m = sims[0]
            for t in range(1, n):
                if sims[t] > m:
                    m = sims[t]
            tot = 0.0
            for t in range(n):
                e = math.exp((sims[t] - m) / tau)
                weights[i, j, t] = e
                tot += e
            for t in range(n):
                weights[i, j, t] /= tot
            counts[i, j] = n


def _decode_impl(indices, weights, counts, coarse2d, out):
    h, w = counts.shape
    c = coarse2d.shape[1]
    for i in prange(h):
        for j in range(w):
            n = counts[i, j]
            for t in range(n):
                wgt = weights[i, j, t]
                v = indices[i, j, t]
                for ch in range(c):
                    out[i, j, ch] += wgt * coarse2d[v, ch]


def _backward_decode_impl(indices, weights, counts, coarse2d, upstream, d_coarse2d, d_weights):
    h, w = counts.shape
    c = coarse2d.shape[1]
    for i in range(h):
        for j in range(w):
            n = counts[i, j]
            for t in range(n):
                v = indices[i, j, t]
                wgt = weights[i, j, t]
                acc = 0.0
                for ch in range(c):
                    u = upstream[i, j, ch]
                    d_coarse2d[v, ch] += wgt * u
                    acc += u * coarse2d[v, ch]
                d_weights[i, j, t] = acc


def _backward_assign_impl(
    fine_p, seed_p, indices, weights, counts, upstream, tau, use_cosine, eps, d_fine_p, d_seed_p2d
):
    h, w, k = fine_p.shape
    sw = seed_p.shape[1]
    for i in range(h):
        for j in range(w):
            n = counts[i, j]
            uw = 0.0
            for t in range(n):
                uw += upstream[i, j, t] * weights[i, j, t]
            for t in range(n):
                # softmax jacobian row, then the 1/tau from the exponent
                gs = weights[i, j, t] * (upstream[i, j, t] - uw) / tau
                v = indices[i, j, t]
                si = v // sw
                sj = v % sw
                if use_cosine:
                    dot = 0.0
                    na2 = 0.0
                    nb2 = 0.0
                    for c in range(k):
                        a = fine_p[i, j, c]
                        b = seed_p[si, sj, c]
                        dot += a * b
                        na2 += a * a
                        nb2 += b * b
                    na = math.sqrt(na2)
                    nb = math.sqrt(nb2)
                    # when a norm is clamped the forward treats it as constant,
                    # so the corresponding curvature term vanishes
                    free_a = na > eps
                    free_b = nb > eps
                    if na < eps:
                        na = eps
                    if nb < eps:
                        nb = eps
                    inv = 1.0 / (na * nb)
                    s = dot * inv
                    for c in range(k):
                        a = fine_p[i, j, c]
                        b = seed_p[si, sj, c]
                        da = b * inv
                        if free_a:
                            da -= s * a / (na * na)
                        db = a * inv
                        if free_b:
                            db -= s * b / (nb * nb)
                        d_fine_p[i, j, c] += gs * da
                        d_seed_p2d[v, c] += gs * db
                else:
                    for c in range(k):
                        d = fine_p[i, j, c] - seed_p[si, sj, c]
                        d_fine_p[i, j, c] += gs * (-2.0 * d)
                        d_seed_p2d[v, c] += gs * (2.0 * d)


if USE_NUMBA:
    _soft_assign_serial = njit(cache=True)(_soft_assign_impl)
    _soft_assign_parallel = njit(parallel=True, cache=True)(_soft_assign_impl)
    _decode_serial = njit(cache=True)(_decode_impl)
    _decode_parallel = njit(parallel=True, cache=True)(_decode_impl)
    _backward_decode_nb = njit(cache=True)(_backward_decode_impl)
    _backward_assign_nb = njit(cache=True)(_backward_assign_impl)


# ---------------------------------------------------------------------------
# pure-numpy twins
# ---------------------------------------------------------------------------

# row block sizes keep the (rows, W, 9, C) gather temporaries bounded
_BLOCK_ELEMS = 4_000_000


def slot_mask(counts):
    """Boolean (H, W, 9) mask of the populated candidate slots."""
    return np.arange(9)[None, None, :] < counts[:, :, None]


def window_counts(fine_shape, seed_shape):
    """Per-pixel count of in-bounds candidates, from geometry alone."""
    h, w = fine_shape
    sh, sw = seed_shape
    by = np.arange(h) // 2
    bx = np.arange(w) // 2
    wy = ((by[:, None] + np.array([-1, 0, 1])[None, :] >= 0)
          & (by[:, None] + np.array([-1, 0, 1])[None, :] < sh)).sum(axis=1)
    wx = ((bx[:, None] + np.array([-1, 0, 1])[None, :] >= 0)
          & (bx[:, None] + np.array([-1, 0, 1])[None, :] < sw)).sum(axis=1)
    return (wy[:, None] * wx[None, :]).astype(np.uint8)


def candidate_slots(fine_shape, seed_shape):
    """Compacted candidate indices and counts for a whole grid.

    Returns (indices (H, W, 9) int64 zero-padded, counts (H, W) uint8), in
    the same slot order the kernels produce.
    """
    h, w = fine_shape
    sh, sw = seed_shape
    by = np.arange(h) // 2
    bx = np.arange(w) // 2
    idx = np.zeros((h, w, 9), np.int64)
    valid = np.zeros((h, w, 9), bool)
    for slot, (dy, dx) in enumerate(_OFFSETS):
        sy = by + dy
        sx = bx + dx
        oky = (sy >= 0) & (sy < sh)
        okx = (sx >= 0) & (sx < sw)
        syc = np.clip(sy, 0, sh - 1)
        sxc = np.clip(sx, 0, sw - 1)
        idx[:, :, slot] = syc[:, None] * sw + sxc[None, :]
        valid[:, :, slot] = oky[:, None] & okx[None, :]
    order = np.argsort(~valid, axis=-1, kind="stable")
    idx = np.take_along_axis(idx, order, -1)
    valid = np.take_along_axis(valid, order, -1)
    idx[~valid] = 0
    return idx, valid.sum(-1).astype(np.uint8)


def _soft_assign_np(fine_p, seed_p, tau, use_cosine, eps):
    h, w, k = fine_p.shape
    sh, sw = seed_p.shape[0], seed_p.shape[1]
    seed2 = seed_p.reshape(-1, k)
    bx = np.arange(w) // 2
    if use_cosine:
        fnorm = np.maximum(np.sqrt((fine_p ** 2).sum(-1)), eps)
        snorm = np.maximum(np.sqrt((seed2 ** 2).sum(-1)), eps)
    indices = np.zeros((h, w, 9), np.int64)
    weights = np.zeros((h, w, 9), np.float64)
    counts = np.zeros((h, w), np.uint8)
    step = max(1, _BLOCK_ELEMS // max(1, w * 9 * k))
    for r0 in range(0, h, step):
        r1 = min(h, r0 + step)
        by = np.arange(r0, r1) // 2
        sims = np.full((r1 - r0, w, 9), -np.inf)
        idx = np.zeros((r1 - r0, w, 9), np.int64)
        valid = np.zeros((r1 - r0, w, 9), bool)
        for slot, (dy, dx) in enumerate(_OFFSETS):
            sy = by + dy
            sx = bx + dx
            oky = (sy >= 0) & (sy < sh)
            okx = (sx >= 0) & (sx < sw)
            flat = np.clip(sy, 0, sh - 1)[:, None] * sw + np.clip(sx, 0, sw - 1)[None, :]
            ok = oky[:, None] & okx[None, :]
            g = seed2[flat]
            if use_cosine:
                s = np.einsum("hwk,hwk->hw", fine_p[r0:r1], g) / (fnorm[r0:r1] * snorm[flat])
            else:
                s = -((fine_p[r0:r1] - g) ** 2).sum(-1)
            sims[:, :, slot] = np.where(ok, s, -np.inf)
            idx[:, :, slot] = flat
            valid[:, :, slot] = ok
        order = np.argsort(~valid, axis=-1, kind="stable")
        sims = np.take_along_axis(sims, order, -1)
        idx = np.take_along_axis(idx, order, -1)
        valid = np.take_along_axis(valid, order, -1)
        ex = np.exp((sims - sims.max(-1, keepdims=True)) / tau)
        ex[~valid] = 0.0
        idx[~valid] = 0
        indices[r0:r1] = idx
        weights[r0:r1] = ex / ex.sum(-1, keepdims=True)
        counts[r0:r1] = valid.sum(-1)
    return indices, weights, counts


def _decode_np(indices, weights, counts, coarse2d):
    h, w, _ = indices.shape
    c = coarse2d.shape[1]
    out = np.empty((h, w, c), np.float64)
    step = max(1, _BLOCK_ELEMS // max(1, w * 9 * c))
    for r0 in range(0, h, step):
        r1 = min(h, r0 + step)
        g = coarse2d[indices[r0:r1]]
        out[r0:r1] = np.einsum("hwt,hwtc->hwc", weights[r0:r1], g)
    return out


def _backward_decode_np(indices, weights, counts, coarse2d, upstream):
    h, w, _ = indices.shape
    v, c = coarse2d.shape
    d_coarse = np.zeros((v, c), np.float64)
    d_weights = np.zeros((h, w, 9), np.float64)
    mask = slot_mask(counts)
    step = max(1, _BLOCK_ELEMS // max(1, w * 9 * c))
    for r0 in range(0, h, step):
        r1 = min(h, r0 + step)
        g = coarse2d[indices[r0:r1]]
        d_weights[r0:r1] = np.einsum("hwc,hwtc->hwt", upstream[r0:r1], g) * mask[r0:r1]
        contrib = weights[r0:r1, :, :, None] * upstream[r0:r1, :, None, :]
        np.add.at(d_coarse, indices[r0:r1].reshape(-1), contrib.reshape(-1, c))
    return d_coarse, d_weights


def _backward_assign_np(fine_p, seed_p, indices, weights, counts, upstream, tau, use_cosine, eps):
    h, w, k = fine_p.shape
    sh, sw = seed_p.shape[0], seed_p.shape[1]
    seed2 = seed_p.reshape(-1, k)
    mask = slot_mask(counts)
    up = np.where(mask, upstream, 0.0)
    gs = weights * (up - (up * weights).sum(-1, keepdims=True)) / tau
    d_fine = np.zeros((h, w, k), np.float64)
    d_seed2 = np.zeros((sh * sw, k), np.float64)
    if use_cosine:
        na = np.sqrt((fine_p ** 2).sum(-1))
        free_a = na > eps
        na = np.maximum(na, eps)
        nb_all = np.sqrt((seed2 ** 2).sum(-1))
        free_b_all = nb_all > eps
        nb_all = np.maximum(nb_all, eps)
    step = max(1, _BLOCK_ELEMS // max(1, w * 9 * k))
    for r0 in range(0, h, step):
        r1 = min(h, r0 + step)
        idx = indices[r0:r1]
        g = seed2[idx]
        fp = fine_p[r0:r1, :, None, :]
        gz = gs[r0:r1, :, :, None]
        if use_cosine:
            nb = nb_all[idx]
            inv = 1.0 / (na[r0:r1, :, None] * nb)
            s = np.einsum("hwtk,hwk->hwt", g, fine_p[r0:r1]) * inv
            da = g * inv[..., None] - np.where(
                free_a[r0:r1, :, None, None],
                (s / na[r0:r1, :, None] ** 2)[..., None] * fp,
                0.0,
            )
            db = fp * inv[..., None] - np.where(
                free_b_all[idx][..., None], (s / nb ** 2)[..., None] * g, 0.0
            )
        else:
            diff = fp - g
            da = -2.0 * diff
            db = 2.0 * diff
        d_fine[r0:r1] = (gz * da).sum(2)
        np.add.at(d_seed2, idx.reshape(-1), (gz * db).reshape(-1, k))
    return d_fine, d_seed2.reshape(sh, sw, k)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def soft_assign_core(fine_p, seed_p, tau, use_cosine, eps, threads=1):
    if not USE_NUMBA:
        return _soft_assign_np(fine_p, seed_p, tau, use_cosine, eps)
    h, w = fine_p.shape[0], fine_p.shape[1]
    indices = np.zeros((h, w, 9), np.int64)
    weights = np.zeros((h, w, 9), np.float64)
    counts = np.zeros((h, w), np.uint8)
    fn = _soft_assign_parallel if threads > 1 else _soft_assign_serial
    fn(fine_p, seed_p, tau, use_cosine, eps, indices, weights, counts)
    return indices, weights, counts


def decode_core(indices, weights, counts, coarse2d, threads=1):
    if not USE_NUMBA:
        return _decode_np(indices, weights, counts, coarse2d)
    h, w = counts.shape
    out = np.zeros((h, w, coarse2d.shape[1]), np.float64)
    fn = _decode_parallel if threads > 1 else _decode_serial
    fn(indices, weights, counts, coarse2d, out)
    return out


def backward_decode_core(indices, weights, counts, coarse2d, upstream):
    if not USE_NUMBA:
        return _backward_decode_np(indices, weights, counts, coarse2d, upstream)
    h, w = counts.shape
    d_coarse = np.zeros_like(coarse2d)
    d_weights = np.zeros((h, w, 9), np.float64)
    _backward_decode_nb(indices, weights, counts, coarse2d, upstream, d_coarse, d_weights)
    return d_coarse, d_weights


def backward_assign_core(fine_p, seed_p, indices, weights, counts, upstream, tau, use_cosine, eps):
    if not USE_NUMBA:
        return _backward_assign_np(
            fine_p, seed_p, indices, weights, counts, upstream, tau, use_cosine, eps
        )
    d_fine = np.zeros_like(fine_p)
    d_seed2 = np.zeros((seed_p.shape[0] * seed_p.shape[1], seed_p.shape[2]), np.float64)
    _backward_assign_nb(
        fine_p, seed_p, indices, weights, counts, upstream, tau, use_cosine, eps, d_fine, d_seed2
    )
    return d_fine, d_seed2.reshape(seed_p.shape)


def warmup():
    """Compile (or load from cache) every numba kernel on tiny inputs."""
    if not USE_NUMBA:
        return
    rng = np.random.default_rng(0)
    fine = rng.standard_normal((4, 4, 2))
    seed = rng.standard_normal((2, 2, 2))
    for use_cosine in (True, False):
        idx, wts, cnt = soft_assign_core(fine, seed, 0.5, use_cosine, 1e-12)
        idxp = np.zeros((4, 4, 9), np.int64)
        wtsp = np.zeros((4, 4, 9), np.float64)
        cntp = np.zeros((4, 4), np.uint8)
        _soft_assign_parallel(fine, seed, 0.5, use_cosine, 1e-12, idxp, wtsp, cntp)
        coarse2d = seed.reshape(-1, 2)
        decode_core(idx, wts, cnt, coarse2d)
        out = np.zeros((4, 4, 2), np.float64)
        _decode_parallel(idx, wts, cnt, coarse2d, out)
        up = rng.standard_normal((4, 4, 2))
        backward_decode_core(idx, wts, cnt, coarse2d, up)
        backward_assign_core(fine, seed, idx, wts, cnt, wtsp, 0.5, use_cosine, 1e-12)


set_threads(thread_limit())

"""Kernel backend selection and thread control.

The hot per-pixel kernels ship in two versions: numba ``@njit`` loops and a
pure-numpy path. ``HIERSPX_NUMBA=0`` forces the numpy path; otherwise numba
is used whenever it imports. ``HIERSPX_THREADS`` caps internal parallelism:
unset or 1 means single-threaded, 0 means all cores, n means n threads.
"""

import os
import warnings

# The workqueue layer is always available and fork-safe; picking it up front
# avoids numba probing TBB/OpenMP at first parallel call.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_flag = os.environ.get("HIERSPX_NUMBA", "1").strip().lower()

HAVE_NUMBA = False
if _flag not in ("0", "false", "no", "off"):
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        warnings.warn("numba not importable; using pure-numpy kernels", stacklevel=1)

USE_NUMBA = HAVE_NUMBA


def thread_limit() -> int:
    """Resolve HIERSPX_THREADS to a concrete thread count."""
    raw = os.environ.get("HIERSPX_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 0:
        raise ValueError(f"HIERSPX_THREADS must be >= 0, got {n}")
    if n == 0:
        return os.cpu_count() or 1
    return n


def set_threads(n: int) -> None:
    """Cap numba's parallel regions at n threads (no-op on the numpy path)."""
    if HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))

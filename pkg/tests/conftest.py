import pytest

from hierspx import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile (or load cached) numba kernels once so timed tests measure
    # the algorithms, not JIT latency
    _kernels.warmup()

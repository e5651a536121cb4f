"""Numba threading setup shared by every compiled kernel in the package."""
import os

import numba

if "NUMBA_THREADING_LAYER" not in os.environ:
    try:
        import numba.np.ufunc.omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        numba.config.THREADING_LAYER = "default"


def set_threads(n):
    """Use ``n`` worker threads for compiled kernels, capped at the launch-time pool size.

    Results never depend on this setting; only speed does.
    """
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n

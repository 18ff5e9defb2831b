"""Kernel backend selection.

The hot numeric kernels (convolution gather/scatter in
:mod:`kwspot.autodiff.kernels`) exist in two variants: numba ``@njit``
loops and a pure-numpy path.  Selection happens once at import time:

* ``KWSPOT_NUMBA=0`` (or ``false``/``off``/``no``) forces the numpy path;
* otherwise numba is used when it imports cleanly.

``benchmarks/bench_backend.py`` compares the two paths.
"""

import os


def _env_wants_numba() -> bool:
    value = os.environ.get("KWSPOT_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if _env_wants_numba():
    try:
        import numba

        # prefer omp: tbb probing is noisy on old TBB builds
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if NUMBA_ENABLED else "numpy"

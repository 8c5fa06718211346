"""Backend selection for the hot kernels.

Kernels are written in the numba-compatible subset of numpy. When numba is
importable and ``CAEV_NUMBA`` is not set to ``0``, they are compiled with
``numba.njit``; otherwise the identical source runs as plain numpy.
"""

import os

_flag = os.environ.get("CAEV_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the env
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _wanted


def jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

"""Optional numba acceleration.

Every hot kernel has a numba implementation and a pure-numpy one. Which one
the public dispatchers call is decided once at import time: set
``FEDCOHORT_DISABLE_NUMBA=1`` to force the numpy path.
"""
from __future__ import annotations

import os

_FLAG = "FEDCOHORT_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes")


def njit(fn):
    """Compile ``fn`` with numba when it is importable, else return it unchanged.

    Compilation does not depend on the env flag so the benchmark can always
    compare both paths.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

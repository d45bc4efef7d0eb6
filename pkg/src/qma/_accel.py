"""Numba switch.

The hot per-grid-point kernels in :mod:`qma.kernels` are compiled with numba
when it is importable.  Setting ``QMA_DISABLE_NUMBA=1`` selects the pure numpy
implementations instead (useful for debugging and for the benchmark).
"""

import os

_FLAG = os.environ.get("QMA_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

numba_kwargs = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(fn):
    """Compile ``fn`` with numba if available, else return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.jit(**numba_kwargs)(fn)


def default_backend() -> str:
    return "numba" if HAVE_NUMBA and not DISABLED else "numpy"

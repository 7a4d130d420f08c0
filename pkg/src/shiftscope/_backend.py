"""Kernel backend selection.

``SHIFTSCOPE_BACKEND=numpy`` forces the pure-numpy kernels; anything else
(or unset) uses numba when it can be imported.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


def _requested():
    value = os.environ.get("SHIFTSCOPE_BACKEND", "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"SHIFTSCOPE_BACKEND must be 'numba' or 'numpy', got {value!r}")
    return value


def active_backend():
    """Name of the backend kernels dispatch to right now."""
    if _requested() == "numba" and HAVE_NUMBA:
        return "numba"
    return "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn

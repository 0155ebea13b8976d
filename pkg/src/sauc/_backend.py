"""Kernel backend selection.

``SAUC_BACKEND=numpy`` forces the vectorised numpy kernels; the default
(``numba``) JIT-compiles the loop kernels when numba is importable.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional at runtime
    numba = None

_requested = os.environ.get("SAUC_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"SAUC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

HAS_NUMBA = numba is not None
BACKEND = "numba" if (_requested == "numba" and HAS_NUMBA) else "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise."""
    if numba is None:
        return func
    return numba.njit(cache=True)(func)

"""Selection between the numba-compiled and the plain numpy kernels.

Set ``MGSTA_DISABLE_NUMBA=1`` to force the numpy path (useful for debugging
or on platforms without numba). Both paths run the same kernel source.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED = os.environ.get("MGSTA_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
AVAILABLE = numba is not None


def default_backend() -> str:
    return "numba" if AVAILABLE and not DISABLED else "numpy"


def njit(fn):
    """Compile ``fn`` in nopython mode."""
    if numba is None:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=False, fastmath=False)(fn)

"""Compute-backend selection.

Hot kernels exist twice: a numba @njit build and a pure-numpy build
with identical summation order, so both produce bit-identical matmul
results. The active backend is chosen once at import time:

    PESL_BACKEND=numba   force numba (ImportError if unavailable)
    PESL_BACKEND=numpy   force the pure-numpy fallback
    unset or empty       numba when importable, numpy otherwise

`active_backend()` reports which build is bound to the public ops.
"""

import os

from .errors import ConfigError

_ENV_VAR = "PESL_BACKEND"


def _detect() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ConfigError(
            f"{_ENV_VAR}: expected 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if requested == "numba":
            raise ImportError(
                f"{_ENV_VAR}=numba but numba is not importable"
            )
        return "numpy"


ACTIVE_BACKEND = _detect()
HAVE_NUMBA = ACTIVE_BACKEND == "numba"


def active_backend() -> str:
    """Name of the backend bound to the public ops: 'numba' or 'numpy'."""
    return ACTIVE_BACKEND

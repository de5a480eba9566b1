"""Backend switch for the numeric kernels.

Numba is used when it imports cleanly and ``SKETCHDECOMP_DISABLE_NUMBA`` is
unset (or set to ``0``/``false``).  Every kernel has a pure-numpy twin, and
both paths must produce identical results; the test suite runs both.
"""

import logging
import os

logger = logging.getLogger(__name__)

_FLAG = os.environ.get("SKETCHDECOMP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False
    logger.warning("numba not importable; using numpy kernels")

USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

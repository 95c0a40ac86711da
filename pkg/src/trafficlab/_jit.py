"""Numba switch.

Hot kernels are compiled with ``numba.njit`` unless the environment variable
``TRAFFICLAB_DISABLE_NUMBA`` is set to a truthy value or numba is not
importable, in which case the pure-numpy fallback paths are used.
"""

import os

_FLAG = os.environ.get("TRAFFICLAB_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is available, otherwise a no-op decorator.

    Kernels decorated here are always compiled when numba is importable so
    the benchmark can compare both paths; the env flag only changes which
    path the dispatchers pick.
    """
    if HAVE_NUMBA:
        from numba import njit as _njit

        return _njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap

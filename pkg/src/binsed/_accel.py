"""Numba switch.

Set ``BINSED_DISABLE_NUMBA=1`` (before import) to run every kernel on its
pure-numpy path. When numba is missing the numpy path is used as well.
"""

import os

_disabled = os.environ.get("BINSED_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    USING_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in a subprocess
    _njit = None
    USING_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a pass-through when numba is off."""
    if _njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)

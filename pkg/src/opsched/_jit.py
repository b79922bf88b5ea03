"""Optional numba acceleration.

Set ``OPSCHED_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging and for the kernel benchmark).
"""
import os

_disabled = os.environ.get("OPSCHED_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError("numba disabled by OPSCHED_DISABLE_NUMBA")
    from numba import njit as _njit
    NUMBA_AVAILABLE = True
except ImportError:
    _njit = None
    NUMBA_AVAILABLE = False


def njit(func=None, **kwargs):
    """``numba.njit`` when available, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if NUMBA_AVAILABLE:
            return _njit(**kwargs)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap

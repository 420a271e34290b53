"""Numba switch.

Hot loops are written once in numba-compatible Python and decorated with
:func:`jit`. Setting ``OBLIVANN_DISABLE_NUMBA=1`` (or running without numba
installed) turns the decorator into a no-op, and the vectorizable kernels in
:mod:`oblivann.kernels` switch to their pure-numpy versions.
"""
import os

DISABLE_ENV = "OBLIVANN_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

_disabled = os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")
NUMBA_ENABLED = _numba is not None and not _disabled


def jit(fn=None, **options):
    """``numba.njit`` with project defaults, or identity when disabled."""
    def wrap(f):
        if not NUMBA_ENABLED:
            return f
        opts = dict(cache=True, nogil=True, error_model="numpy")
        opts.update(options)
        return _numba.njit(**opts)(f)

    if fn is not None:
        return wrap(fn)
    return wrap


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"

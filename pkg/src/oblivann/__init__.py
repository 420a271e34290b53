"""Oblivious approximate nearest-neighbor search over untrusted block storage."""
from ._accel import NUMBA_ENABLED, backend_name

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "backend_name", "__version__"]

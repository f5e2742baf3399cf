"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``NETCHOICE_PURE=1`` forces
the numpy fallback (handy for debugging and for the backend benchmark).
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("NETCHOICE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels
else:
    _impl = _pykernels

clogit_eval = _impl.clogit_eval
categorical_eval = _impl.categorical_eval
Fenwick = _impl.Fenwick

__all__ = ["BACKEND", "clogit_eval", "categorical_eval", "Fenwick"]

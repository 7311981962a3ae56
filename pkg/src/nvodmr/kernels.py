"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``NVODMR_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("NVODMR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
jacobi_eigh_batch = _impl.jacobi_eigh_batch
lorentzian_accumulate = _impl.lorentzian_accumulate
inverse_sixth_sums = _impl.inverse_sixth_sums
track_branches = _impl.track_branches

__all__ = [
    "BACKEND",
    "jacobi_eigh_batch",
    "lorentzian_accumulate",
    "inverse_sixth_sums",
    "track_branches",
]

"""Hot-loop dispatch: compiled Cython kernels when built, numpy otherwise.

Set ``ARRIVAL_LAB_PURE=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"

if os.environ.get("ARRIVAL_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
if _compiled is not None:
    BACKEND = "cython"


def antidiagonal_gather(rho):
    """``A[j, k] = rho[j + s, j - s]`` with ``s`` the signed FFT index of ``k``; zero off-grid."""
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"need a square matrix, got shape {rho.shape}")
    return _impl.antidiagonal_gather(rho)


def anti_wick_assemble(g, h):
    """``out[x, y] = sum_q g[q, x] g[q, y] h[q, x - y + n - 1]`` for real ``g``."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.complex128)
    if g.ndim != 2 or h.shape != (g.shape[0], 2 * g.shape[1] - 1):
        raise ValueError(f"shape mismatch: g {g.shape}, h {h.shape}")
    return _impl.anti_wick_assemble(g, h)


__all__ = ["BACKEND", "antidiagonal_gather", "anti_wick_assemble"]

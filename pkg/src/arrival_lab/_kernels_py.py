"""Pure numpy implementations of the hot loops.

These are the reference versions; ``_kernels.pyx`` mirrors them one for one
and must agree to rounding.
"""
import numpy as np


def antidiagonal_gather(rho):
    """Return ``A[j, k] = rho[j + s, j - s]`` with ``s`` the signed FFT index of ``k``.

    Entries whose source indices fall outside the grid are zero.
    """
    n = rho.shape[0]
    j = np.arange(n)[:, None]
    s = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)[None, :]
    a = j + s
    b = j - s
    ok = (a >= 0) & (a < n) & (b >= 0) & (b < n)
    out = np.zeros((n, n), dtype=np.complex128)
    out[ok] = rho[a[ok], b[ok]]
    return out


def anti_wick_assemble(g, h):
    """Sum ``out[x, y] = sum_q g[q, x] * g[q, y] * h[q, x - y + n - 1]``.

    ``g`` holds real coherent-state envelopes (one row per phase-space
    position), ``h`` the momentum-integrated weight as a function of the
    separation ``x - y``.
    """
    nq, n = g.shape
    idx = np.arange(n)[:, None] - np.arange(n)[None, :] + n - 1
    out = np.zeros((n, n), dtype=np.complex128)
    for q in range(nq):
        gq = g[q]
        if not np.any(gq):
            continue
        out += np.outer(gq, gq) * h[q][idx]
    return out

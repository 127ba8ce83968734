"""Uniform 1D grids, states on them, and the transforms everything else uses.

Conventions: hbar = 1, the momentum grid is the FFT dual of the position grid,
and a grid function is identified with its band-limited (trigonometric)
interpolant.  Half-line expectations are exact integrals of that interpolant,
so ``P + Pbar = 1`` holds to rounding and ``d<P>/dt = -J(0)`` holds exactly for
free evolution.  Projection *operators* acting on states are the grid masks
``x_i >= 0`` / ``x_i < 0``, which are genuine orthogonal projectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import matmul_toeplitz

from . import kernels
from .errors import (
    AliasingError,
    BoundaryLeakError,
    InvariantError,
    UnresolvableWidthError,
)

EDGE_TOL = 1e-12


@dataclass(frozen=True)
class SimulationGrid:
    n_points: int
    x_min: float
    x_max: float

    def __post_init__(self):
        n = int(self.n_points)
        if n < 4 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 4, got {self.n_points}")
        if not self.x_min < 0.0 < self.x_max:
            raise ValueError("the origin must lie strictly inside (x_min, x_max)")
        object.__setattr__(self, "n_points", n)

    @classmethod
    def symmetric(cls, n_points: int, half_width: float) -> "SimulationGrid":
        """Grid on ``[-half_width, half_width)``; ``x = 0`` is a grid point."""
        return cls(n_points, -float(half_width), float(half_width))

    @classmethod
    def from_spacing(cls, dx: float, x_min: float, x_max: float) -> "SimulationGrid":
        """Smallest power-of-two grid with spacing <= dx covering [x_min, x_max).

        The window is widened to keep ``x_min`` an integer multiple of the
        spacing so the origin stays on the grid.
        """
        n = 4
        while (x_max - x_min) / n > dx:
            n *= 2
        step = (x_max - x_min) / n
        lo = np.floor(x_min / step) * step
        return cls(n, lo, lo + n * step)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def dp(self) -> float:
        return 2.0 * np.pi / self.length

    @property
    def p_max(self) -> float:
        return np.pi / self.dx

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def p(self) -> np.ndarray:
        """Momenta in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    @property
    def k_sorted(self) -> np.ndarray:
        """Integer mode labels -n/2 .. n/2-1 (the interpolant's band)."""
        n = self.n_points
        return np.arange(-n // 2, n // 2)

    @property
    def p_sorted(self) -> np.ndarray:
        return self.dp * self.k_sorted

    @property
    def zero_index(self) -> int:
        """Index of the first grid point with x >= 0."""
        return int(np.searchsorted(self.x, -1e-9 * self.dx, side="left"))

    @property
    def positive_mask(self) -> np.ndarray:
        """Mask of theta(x) on the grid; x = 0 belongs to the positive side."""
        m = np.zeros(self.n_points, dtype=bool)
        m[self.zero_index:] = True
        return m

    def to_sorted(self, coeffs: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.fft.fftshift(coeffs, axes=axis)

    def half_line_overlap(self, d: np.ndarray, a: float = 0.0, b: float | None = None) -> np.ndarray:
        """``I(d) = int_a^b exp(i d dp (x - x_min)) dx`` for integer mode offsets ``d``."""
        b = self.x_max if b is None else b
        d = np.asarray(d)
        theta = d * self.dp
        lo, hi = a - self.x_min, b - self.x_min
        out = np.empty(d.shape, dtype=np.complex128)
        nz = d != 0
        th = theta[nz]
        out[nz] = (np.exp(1j * th * hi) - np.exp(1j * th * lo)) / (1j * th)
        out[~nz] = hi - lo
        return out


@dataclass(frozen=True)
class WaveFunction:
    grid: SimulationGrid
    psi: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.complex128)
        if psi.shape != (self.grid.n_points,):
            raise ValueError("amplitude array does not match the grid")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        return self.replace(self.psi / np.sqrt(self.norm()))

    def replace(self, psi: np.ndarray) -> "WaveFunction":
        return WaveFunction(self.grid, psi, self.m)

    def momentum_coefficients(self) -> np.ndarray:
        """FFT coefficients in FFT order (no normalization)."""
        return np.fft.fft(self.psi)

    def momentum_density(self) -> np.ndarray:
        """|psi~(p)|^2 on the FFT-ordered momentum grid, normalized so sum * dp = norm."""
        c = self.momentum_coefficients()
        return np.abs(c) ** 2 * self.grid.dx ** 2 / (2.0 * np.pi)

    def inner(self, other: "WaveFunction") -> complex:
        return complex(np.vdot(self.psi, other.psi) * self.grid.dx)

    def __add__(self, other: "WaveFunction") -> "WaveFunction":
        return self.replace(self.psi + other.psi)

    def __sub__(self, other: "WaveFunction") -> "WaveFunction":
        return self.replace(self.psi - other.psi)

    def __mul__(self, c) -> "WaveFunction":
        return self.replace(self.psi * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DensityMatrix:
    grid: SimulationGrid
    rho: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.complex128)
        n = self.grid.n_points
        if rho.shape != (n, n):
            raise ValueError("density matrix does not match the grid")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def pure(cls, wf: WaveFunction) -> "DensityMatrix":
        return cls(wf.grid, np.outer(wf.psi, wf.psi.conj()), wf.m)

    @classmethod
    def mixture(cls, states, weights) -> "DensityMatrix":
        states = list(states)
        rho = sum(w * np.outer(s.psi, s.psi.conj()) for s, w in zip(states, weights))
        return cls(states[0].grid, rho, states[0].m)

    def replace(self, rho: np.ndarray) -> "DensityMatrix":
        return DensityMatrix(self.grid, rho, self.m)

    def trace(self) -> complex:
        return complex(np.trace(self.rho) * self.grid.dx)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def operator_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the operator represented by the kernel (kernel * dx)."""
        h = 0.5 * (self.rho + self.rho.conj().T)
        return np.linalg.eigvalsh(h * self.grid.dx)

    def check(self, herm_tol=1e-10, trace_tol=1e-10, psd_tol=1e-8):
        scale = max(1.0, float(np.max(np.abs(self.rho))))
        if self.hermiticity_error() > herm_tol * scale:
            raise InvariantError(f"density matrix not Hermitian ({self.hermiticity_error():.3e})")
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise InvariantError(f"density matrix trace {tr.real:.12f} != 1")
        if self.operator_eigenvalues()[0] < -psd_tol:
            raise InvariantError("density matrix has a negative eigenvalue")
        return self


@dataclass(frozen=True)
class GaussianPacketSpec:
    x0: float
    p0: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def wigner(self, p, q, t: float = 0.0, m: float = 1.0):
        """Closed-form Wigner function of the freely moving packet."""
        return np.exp(
            -((q - self.x0 - self.p0 * t / m) ** 2) / (2 * self.sigma ** 2)
            - 2 * self.sigma ** 2 * (p - self.p0) ** 2
        ) / np.pi


@dataclass(frozen=True)
class WignerFunction:
    grid: SimulationGrid
    p: np.ndarray
    q: np.ndarray
    values: np.ndarray  # shape (len(p), len(q))

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    @property
    def dq(self) -> float:
        return float(self.q[1] - self.q[0])

    def integral(self) -> float:
        return float(self.values.sum() * self.dp * self.dq)

    def position_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.dp

    def momentum_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.dq

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


State = Union[WaveFunction, DensityMatrix]


def edge_density(psi: np.ndarray, width: int = 2) -> float:
    return float(max(np.max(np.abs(psi[:width]) ** 2), np.max(np.abs(psi[-width:]) ** 2)))


def check_boundary(wf: WaveFunction, tol: float = EDGE_TOL) -> None:
    leak = edge_density(wf.psi)
    if leak > tol:
        raise BoundaryLeakError(f"density {leak:.3e} at the grid edge exceeds {tol:.1e}")


def gaussian_amplitudes(grid: SimulationGrid, spec: GaussianPacketSpec) -> np.ndarray:
    x = grid.x
    return (2 * np.pi * spec.sigma ** 2) ** -0.25 * np.exp(
        -((x - spec.x0) ** 2) / (4 * spec.sigma ** 2) + 1j * spec.p0 * x
    )


def prepare_gaussian(spec: GaussianPacketSpec, grid: SimulationGrid, m: float = 1.0,
                     edge_tol: float = EDGE_TOL) -> WaveFunction:
    """Normalized Gaussian packet with position width ``sigma`` centred at (x0, p0)."""
    if spec.sigma < 4 * grid.dx:
        raise UnresolvableWidthError(f"sigma={spec.sigma} < 4*dx={4 * grid.dx:.4g}")
    if abs(spec.p0) > 0.5 * grid.p_max:
        raise AliasingError(f"|p0|={abs(spec.p0)} exceeds half the grid momentum {grid.p_max:.4g}")
    wf = WaveFunction(grid, gaussian_amplitudes(grid, spec), m)
    if edge_density(wf.psi) > edge_tol:
        raise BoundaryLeakError("Gaussian tails reach the grid edge")
    return wf.normalized()


def superpose(*terms) -> WaveFunction:
    """Normalized superposition of ``(coefficient, WaveFunction)`` pairs."""
    c0, w0 = terms[0]
    psi = sum(c * w.psi for c, w in terms)
    return w0.replace(psi).normalized()


def position_moments(wf: WaveFunction):
    rho = np.abs(wf.psi) ** 2 * wf.grid.dx
    n = rho.sum()
    mean = float((wf.grid.x * rho).sum() / n)
    var = float(((wf.grid.x - mean) ** 2 * rho).sum() / n)
    return mean, var


def momentum_moments(wf: WaveFunction):
    w = np.abs(wf.momentum_coefficients()) ** 2
    p = wf.grid.p
    n = w.sum()
    mean = float((p * w).sum() / n)
    var = float(((p - mean) ** 2 * w).sum() / n)
    return mean, var


def energy_moments(wf: WaveFunction):
    """Mean free-particle energy and its spread sqrt(<H^2> - <H>^2)."""
    w = np.abs(wf.momentum_coefficients()) ** 2
    w = w / w.sum()
    h = wf.grid.p ** 2 / (2 * wf.m)
    e = float((w * h).sum())
    var = float((w * h ** 2).sum() - e ** 2)
    return e, float(np.sqrt(max(var, 0.0)))


def _sorted_coefficients(wf: WaveFunction) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft(wf.psi))


def _half_line_pure(wf: WaveFunction, a: float, b: float) -> float:
    g = wf.grid
    n = g.n_points
    phi = _sorted_coefficients(wf)
    d = np.arange(n)
    col = g.half_line_overlap(-d, a, b)  # T[k, 0] = I(0 - k)
    row = g.half_line_overlap(d, a, b)   # T[0, l] = I(l)
    tphi = matmul_toeplitz((col, row), phi)
    return float(np.real(np.vdot(phi, tphi)) / n ** 2)


def sorted_density_coefficients(dm: DensityMatrix) -> np.ndarray:
    """``F rho F^H`` with both axes in sorted (interpolant) order."""
    n = dm.grid.n_points
    r = n * np.fft.ifft(np.fft.fft(dm.rho, axis=0), axis=1)
    return np.fft.fftshift(r, axes=(0, 1))


def _half_line_mixed(dm: DensityMatrix, a: float, b: float) -> float:
    g = dm.grid
    n = g.n_points
    rt = sorted_density_coefficients(dm)
    k = np.arange(n)
    overlap = g.half_line_overlap(k[:, None] - k[None, :], a, b)
    return float(np.real(np.sum(rt * overlap)) / n ** 2)


def expectation_P(state: State) -> float:
    """<theta(x)>: weight of the band-limited state on the half-line x >= 0."""
    g = state.grid
    if isinstance(state, WaveFunction):
        return _half_line_pure(state, 0.0, g.x_max)
    return _half_line_mixed(state, 0.0, g.x_max)


def expectation_Pbar(state: State) -> float:
    g = state.grid
    if isinstance(state, WaveFunction):
        return _half_line_pure(state, g.x_min, 0.0)
    return _half_line_mixed(state, g.x_min, 0.0)


def expectation_P_mask(state: State) -> float:
    """Expectation of the grid-mask projector (the operator histories use)."""
    g = state.grid
    z = g.zero_index
    if isinstance(state, WaveFunction):
        return float(np.sum(np.abs(state.psi[z:]) ** 2) * g.dx)
    return float(np.real(np.trace(state.rho[z:, z:])) * g.dx)


def project(wf: WaveFunction, positive: bool = True) -> WaveFunction:
    mask = wf.grid.positive_mask if positive else ~wf.grid.positive_mask
    return wf.replace(np.where(mask, wf.psi, 0.0))


def project_density(dm: DensityMatrix, left: bool | None, right: bool | None) -> DensityMatrix:
    """Apply ``P_left rho P_right``; ``None`` leaves that side untouched."""
    g = dm.grid
    rho = np.array(dm.rho)
    if left is not None:
        mask = g.positive_mask if left else ~g.positive_mask
        rho[~mask, :] = 0.0
    if right is not None:
        mask = g.positive_mask if right else ~g.positive_mask
        rho[:, ~mask] = 0.0
    return dm.replace(rho)


def wigner_transform(rho: DensityMatrix, herm_tol: float = 1e-10) -> WignerFunction:
    """W(p, q) = (1/2pi) int dxi rho(q + xi/2, q - xi/2) exp(-i p xi).

    The xi integral runs over anti-diagonals (xi = 2 k dx), so the phase-space
    momentum grid has spacing pi / (n dx).
    """
    g = rho.grid
    scale = max(1.0, float(np.max(np.abs(rho.rho))))
    if rho.hermiticity_error() > herm_tol * scale:
        raise InvariantError("Wigner transform needs a Hermitian density matrix")
    n = g.n_points
    a = kernels.antidiagonal_gather(np.ascontiguousarray(rho.rho))
    w = np.fft.fft(a, axis=1) * (g.dx / np.pi)
    w = np.fft.fftshift(w, axes=1).T.real
    p = (np.pi / (n * g.dx)) * np.arange(-n // 2, n // 2)
    return WignerFunction(g, p, g.x, np.ascontiguousarray(w))


def wigner_column(state: State, q_index: int | None = None):
    """One q-column of the Wigner function: returns (p, W(p, q))."""
    g = state.grid
    n = g.n_points
    j = g.zero_index if q_index is None else q_index
    s = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    a, b = j + s, j - s
    ok = (a >= 0) & (a < n) & (b >= 0) & (b < n)
    f = np.zeros(n, dtype=np.complex128)
    if isinstance(state, WaveFunction):
        f[ok] = state.psi[a[ok]] * state.psi[b[ok]].conj()
    else:
        f[ok] = state.rho[a[ok], b[ok]]
    w = np.fft.fftshift(np.fft.fft(f)).real * (g.dx / np.pi)
    p = (np.pi / (n * g.dx)) * np.arange(-n // 2, n // 2)
    return p, w


def evaluate_at(wf: WaveFunction, x: float = 0.0):
    """Band-limited interpolant and its derivative at an arbitrary point."""
    g = wf.grid
    phi = _sorted_coefficients(wf)
    ps = g.p_sorted
    e = np.exp(1j * ps * (x - g.x_min))
    n = g.n_points
    return complex(np.sum(phi * e) / n), complex(np.sum(1j * ps * phi * e) / n)


def random_wavefunction(grid: SimulationGrid, rng: np.random.Generator, m: float = 1.0,
                        n_terms: int = 3, x_range=None, p_range=(-3.0, -0.5),
                        sigma_range=(1.0, 2.0)) -> WaveFunction:
    """Random normalized superposition of Gaussians (a band-limited test state)."""
    if x_range is None:
        x_range = (0.2 * grid.x_max, 0.5 * grid.x_max)
    terms = []
    for _ in range(n_terms):
        spec = GaussianPacketSpec(rng.uniform(*x_range), rng.uniform(*p_range),
                                  rng.uniform(*sigma_range))
        c = rng.normal() + 1j * rng.normal()
        terms.append((c, WaveFunction(grid, gaussian_amplitudes(grid, spec), m)))
    return superpose(*terms)

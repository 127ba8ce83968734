"""Arrival-time observables at the origin: the probability current, the three
equivalent arrival-probability formulas, the flux operator C and backflow.

Sign convention: ``J = (i/2m)(psi* psi' - psi psi*')`` is the flux through the
origin towards x < 0, so left-moving packets have J > 0 and
``int_{t1}^{t2} J dt = <P(t1)> - <P(t2)>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, InvariantError, TruncationError
from .grid import (
    DensityMatrix,
    SimulationGrid,
    WaveFunction,
    expectation_P,
    wigner_column,
)
from .propagators import QBMParams, QBMStepper, default_qbm_step, evolve_free, qbm_evolve

CHANNELS = ("unitary", "qbm")


# -- the current ---------------------------------------------------------------

def _derivative_at(f: np.ndarray, grid: SimulationGrid, index: int) -> float:
    """Spectral derivative of a real grid function at one grid point."""
    n = grid.n_points
    k = np.fft.rfftfreq(n, d=grid.dx) * 2 * np.pi
    c = np.fft.rfft(f) * 1j * k
    if n % 2 == 0:
        c[-1] = 0.0
    # evaluate a single sample of irfft(c)
    j = np.arange(c.size)
    w = np.where((j == 0) | ((n % 2 == 0) & (j == c.size - 1)), 1.0, 2.0)
    return float(np.sum(w * np.real(c * np.exp(2j * np.pi * j * index / n))) / n)


def current_at_origin(psi: WaveFunction) -> float:
    """J(0) = -(1/m) Im(psi* psi') with the derivative taken spectrally."""
    g = psi.grid
    z = g.zero_index
    u, v = psi.psi.real, psi.psi.imag
    du = _derivative_at(u, g, z) if np.any(u) else 0.0
    dv = _derivative_at(v, g, z) if np.any(v) else 0.0
    return -(u[z] * dv - v[z] * du) / psi.m


def current_qbm(rho: DensityMatrix) -> float:
    """J = (i/2m)(d_x - d_y) rho(x, y) at x = y = 0.

    For a Hermitian kernel this is -(1/m) d_x Im rho(x, 0) at x = 0.
    """
    g = rho.grid
    z = g.zero_index
    col = 0.5 * (rho.rho[:, z] + rho.rho[z, :].conj())
    v = col.imag
    if not np.any(v):
        return 0.0
    return -_derivative_at(v, g, z) / rho.m


def current_smeared(psi: WaveFunction, width: float) -> float:
    """Current smeared with a normalized Gaussian of the given width about x = 0."""
    g = psi.grid
    phi = np.fft.fft(psi.psi)
    p = np.where(np.arange(g.n_points) == g.n_points // 2, 0.0, g.p)
    dpsi = np.fft.ifft(1j * p * phi)
    j = -np.imag(psi.psi.conj() * dpsi) / psi.m
    wgt = np.exp(-0.5 * (g.x / width) ** 2)
    wgt /= np.sum(wgt) * g.dx
    return float(np.sum(wgt * j) * g.dx)


def _unitary_current_series(psi: WaveFunction, times: np.ndarray, chunk: int = 512) -> np.ndarray:
    """J(0, t) for many t from the mode sum; modes with negligible weight are dropped."""
    g = psi.grid
    n = g.n_points
    z = g.zero_index
    phi = np.fft.fft(psi.psi)
    keep = np.abs(phi) > 1e-15 * np.max(np.abs(phi))
    p = g.p[keep]
    a = phi[keep] * np.exp(2j * np.pi * np.nonzero(keep)[0] * z / n) / n
    dp = np.where(np.nonzero(keep)[0] == n // 2, 0.0, p)
    e = 0.5 * p ** 2 / psi.m
    out = np.empty(times.size)
    for s in range(0, times.size, chunk):
        ph = np.exp(-1j * np.outer(times[s:s + chunk], e))
        val = ph @ a
        der = ph @ (1j * dp * a)
        out[s:s + chunk] = -np.imag(val.conj() * der) / psi.m
    return out


def current_series(psi: WaveFunction, times) -> np.ndarray:
    """J(0, t) of the freely evolving state on an array of times."""
    return _unitary_current_series(psi, np.asarray(times, dtype=float))


def _wigner_flux(state) -> float:
    p, w = wigner_column(state)
    return float(np.sum(-p / state.m * w) * (p[1] - p[0]))


def _unitary_wigner_series(psi: WaveFunction, times: np.ndarray) -> np.ndarray:
    out = np.empty(times.size)
    for i, t in enumerate(times):
        out[i] = _wigner_flux(evolve_free(psi, float(t)))
    return out


def _as_density(state) -> DensityMatrix:
    return DensityMatrix.pure(state) if isinstance(state, WaveFunction) else state


def _qbm_series(rho0: DensityMatrix, t1: float, t2: float, n_int: int, params: QBMParams,
                dt: float, observable) -> np.ndarray:
    h = (t2 - t1) / n_int
    sub = max(1, math.ceil(h / dt - 1e-12))
    rho = qbm_evolve(rho0, t1, params, dt).rho if t1 > 0 else rho0.rho
    stepper = QBMStepper(rho0.grid, params, h / sub, rho0.m)
    out = np.empty(n_int + 1)
    for j in range(n_int + 1):
        if j:
            rho = stepper.advance(rho, sub)
        out[j] = observable(rho0.replace(rho))
    return out


# -- quadrature ----------------------------------------------------------------

def _simpson(f: np.ndarray, h: float) -> float:
    return h / 3.0 * (f[0] + f[-1] + 4 * np.sum(f[1:-1:2]) + 2 * np.sum(f[2:-1:2]))


def integrate_series(sample, t1: float, t2: float, n0: int = 16, rtol: float = 1e-7,
                     atol: float = 1e-10, max_intervals: int = 1 << 16):
    """Composite Simpson with Richardson refinement.

    ``sample(n)`` returns the integrand on ``n + 1`` uniform nodes.  Each level
    forms Richardson values from the n, n/2 and n/4 meshes; the mesh doubles
    until two successive Richardson values agree to ``rtol`` (relative) or
    ``atol``.  Returns (value, info).
    """
    n = max(8, n0 - n0 % 4)
    last = None
    while n <= max_intervals:
        f = sample(n)
        h = (t2 - t1) / n
        s1, s2, s4 = _simpson(f, h), _simpson(f[::2], 2 * h), _simpson(f[::4], 4 * h)
        r1 = s1 + (s1 - s2) / 15.0
        r2 = s2 + (s2 - s4) / 15.0
        change = abs(r1 - r2)
        if change <= rtol * abs(r1) + atol:
            return r1, {"intervals": n, "change": change, "converged": True}
        last = change
        n *= 2
    raise ConvergenceError(f"time quadrature did not converge (last change {last:.2e})")


def _check_window(t1: float, t2: float):
    if not (t2 >= t1 >= 0):
        raise ValueError("need t2 >= t1 >= 0")


def _check_channel(channel: str, params):
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    if channel == "qbm" and params is None:
        raise ValueError("channel 'qbm' needs QBMParams")


# -- the three arrival-probability formulas --------------------------------------

def arrival_prob_current(psi0, t1: float, t2: float, channel: str = "unitary",
                         params: QBMParams | None = None, dt: float | None = None,
                         rtol: float = 1e-7, return_info: bool = False):
    """int_{t1}^{t2} J(t) dt over evolved snapshots."""
    _check_window(t1, t2)
    _check_channel(channel, params)
    info = {"intervals": 0, "change": 0.0, "converged": True}
    if t1 == t2:
        return (0.0, info) if return_info else 0.0
    if channel == "unitary":
        if not isinstance(psi0, WaveFunction):
            raise TypeError("the unitary current route takes a WaveFunction")

        def sample(n):
            return _unitary_current_series(psi0, np.linspace(t1, t2, n + 1))
        val, info = integrate_series(sample, t1, t2, rtol=rtol)
    else:
        rho0 = _as_density(psi0)
        dt = default_qbm_step(rho0.grid, params, rho0.m) if dt is None else dt
        n0 = 4 * max(4, math.ceil((t2 - t1) / dt / 4))

        def sample(n):
            return _qbm_series(rho0, t1, t2, n, params, dt * n0 / n, current_qbm)
        val, info = integrate_series(sample, t1, t2, n0=n0, rtol=rtol, max_intervals=16 * n0)
    return (val, info) if return_info else val


def arrival_prob_projector(psi0, t1: float, t2: float, channel: str = "unitary",
                           params: QBMParams | None = None, dt: float | None = None) -> float:
    """<P(t1)> - <P(t2)> with P the half-line projector."""
    _check_window(t1, t2)
    _check_channel(channel, params)
    if t1 == t2:
        return 0.0
    if channel == "unitary":
        if isinstance(psi0, WaveFunction):
            return expectation_P(evolve_free(psi0, t1)) - expectation_P(evolve_free(psi0, t2))
        zero = QBMParams(0.0)
        a = qbm_evolve(psi0, t1, zero, dt)
        return expectation_P(a) - expectation_P(qbm_evolve(a, t2 - t1, zero, dt))
    rho0 = _as_density(psi0)
    a = qbm_evolve(rho0, t1, params, dt)
    b = qbm_evolve(a, t2 - t1, params, dt)
    return expectation_P(a) - expectation_P(b)


def arrival_prob_wigner(rho0, t1: float, t2: float, channel: str = "unitary",
                        params: QBMParams | None = None, dt: float | None = None,
                        rtol: float = 1e-7) -> float:
    """int dt int dp (-p/m) W_t(p, 0): the q = 0 column of the evolved Wigner function."""
    _check_window(t1, t2)
    _check_channel(channel, params)
    if t1 == t2:
        return 0.0
    if channel == "unitary" and isinstance(rho0, WaveFunction):
        def sample(n):
            return _unitary_wigner_series(rho0, np.linspace(t1, t2, n + 1))
        return integrate_series(sample, t1, t2, rtol=rtol, max_intervals=1 << 12)[0]
    rho0 = _as_density(rho0)
    if channel == "unitary":
        params = QBMParams(0.0)
    dt = default_qbm_step(rho0.grid, params, rho0.m) if dt is None else dt
    n0 = 4 * max(4, math.ceil((t2 - t1) / dt / 4))

    def sample(n):
        return _qbm_series(rho0, t1, t2, n, params, dt * n0 / n, _wigner_flux)
    return integrate_series(sample, t1, t2, n0=n0, rtol=rtol, max_intervals=16 * n0)[0]


@dataclass
class ArrivalRecord:
    t1: float
    t2: float
    p_current: float
    p_projector: float
    p_wigner: float
    channel: str = "unitary"
    meta: dict = field(default_factory=dict)

    @property
    def max_disagreement(self) -> float:
        v = (self.p_current, self.p_projector, self.p_wigner)
        return max(abs(a - b) for a in v for b in v)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["max_disagreement"] = self.max_disagreement
        return d


def arrival_record(psi0, t1: float, t2: float, channel: str = "unitary",
                   params: QBMParams | None = None, dt: float | None = None) -> ArrivalRecord:
    pc, info = arrival_prob_current(psi0, t1, t2, channel, params, dt, return_info=True)
    pp = arrival_prob_projector(psi0, t1, t2, channel, params, dt)
    pw = arrival_prob_wigner(psi0, t1, t2, channel, params, dt)
    return ArrivalRecord(t1, t2, pc, pp, pw, channel,
                         {"quadrature": info, "dt": dt, "projector": "band-limited half-line"})


# -- flux operator and backflow ------------------------------------------------

@dataclass
class FluxOperatorMatrix:
    """C = P(t1) - P(t2) between negative-momentum plane waves e^{ipx}/sqrt(L)."""
    grid: SimulationGrid
    basis: np.ndarray          # momenta, all < 0
    basis_index: np.ndarray    # FFT indices on ``grid``
    entries: np.ndarray
    t1: float
    t2: float
    m: float = 1.0

    def __post_init__(self):
        err = float(np.max(np.abs(self.entries - self.entries.conj().T))) if self.entries.size else 0.0
        if err > 1e-10:
            raise InvariantError(f"flux operator not Hermitian ({err:.2e})")

    @property
    def size(self) -> int:
        return self.basis.size

    def eigenvalues(self) -> np.ndarray:
        return sla.eigvalsh(self.entries)

    def lambda_min(self):
        """Most negative eigenvalue and its eigenvector."""
        w, v = sla.eigh(self.entries, subset_by_index=[0, 0])
        return float(w[0]), v[:, 0]

    def check_range(self, tol: float = 1e-8):
        top = float(sla.eigvalsh(self.entries, subset_by_index=[self.size - 1, self.size - 1])[0])
        if top > 1 + tol:
            raise InvariantError(f"flux operator eigenvalue {top:.6g} exceeds 1")
        return top

    def synthesize(self, coeffs: np.ndarray) -> WaveFunction:
        """Grid state sum_k c_k e^{i p_k x} / sqrt(L)."""
        g = self.grid
        phi = np.zeros(g.n_points, dtype=np.complex128)
        phi[self.basis_index] = g.n_points * coeffs * np.exp(1j * self.basis * g.x_min) / math.sqrt(g.length)
        return WaveFunction(g, np.fft.ifft(phi), self.m)


def _window_integral(de: np.ndarray, t1: float, t2: float) -> np.ndarray:
    """int_{t1}^{t2} exp(i de t) dt, elementwise."""
    big_t = t2 - t1
    z = 1j * de * big_t
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    ratio = np.where(small, 1 + 0.5 * z, np.expm1(zs) / zs)
    return np.exp(1j * de * t1) * big_t * ratio


def flux_basis(grid: SimulationGrid, p_cutoff: float):
    """Negative grid momenta -k dp, k = 1, 2, ..., down to p_cutoff."""
    if not p_cutoff < 0:
        raise ValueError("p_cutoff must be negative")
    if -p_cutoff > grid.p_max * (1 + 1e-12):
        raise TruncationError(f"cutoff {p_cutoff:g} beyond grid momentum {grid.p_max:g}")
    n = grid.n_points
    kmax = int(math.floor(-p_cutoff / grid.dp + 1e-9))
    k = np.arange(1, kmax + 1)
    return -k * grid.dp, (-k) % n


def flux_operator(grid: SimulationGrid, t1: float, t2: float, m: float = 1.0,
                  p_cutoff: float | None = None, check_truncation: bool = False,
                  truncation_tol: float = 0.1) -> FluxOperatorMatrix:
    """C_kl = -(p_k + p_l)/(2 m L) int_{t1}^{t2} exp(i (E_k - E_l) t) dt.

    With ``check_truncation`` the lowest eigenvalue is recomputed on the basis
    cut at half the momentum range, and ``TruncationError`` is raised when the
    two differ by more than ``truncation_tol`` relative, or when neighbouring
    modes dephase by more than pi across the window.
    """
    if not t2 >= t1:
        raise ValueError("need t2 >= t1")
    if p_cutoff is None:
        p_cutoff = -0.5 * grid.p_max
    p, idx = flux_basis(grid, p_cutoff)
    e = 0.5 * p ** 2 / m
    c = -(p[:, None] + p[None, :]) / (2 * m * grid.length) * _window_integral(e[:, None] - e[None, :], t1, t2)
    c = 0.5 * (c + c.conj().T)
    op = FluxOperatorMatrix(grid, p, idx, c, t1, t2, m)
    if check_truncation and p.size >= 4:
        spread = grid.dp * abs(p_cutoff) * (t2 - t1) / m
        if spread > np.pi:
            raise TruncationError(f"mode spacing under-resolves the window (phase {spread:.2f} > pi)")
        lam = op.lambda_min()[0]
        w = _lambda_min(c[: p.size // 2, : p.size // 2])
        if abs(lam - w) > truncation_tol * max(abs(lam), 1e-3):
            raise TruncationError(f"lambda_min moved {abs(lam - w):.2e} when halving the basis")
    return op


def _lambda_min(a: np.ndarray) -> float:
    return float(sla.eigvalsh(a, subset_by_index=[0, 0])[0])


def backflow_search(grid: SimulationGrid, t1: float, t2: float, m: float = 1.0,
                    p_cutoff: float | None = None, return_info: bool = False):
    """Lowest eigenvector of C synthesized onto the grid, with its current integral."""
    op = flux_operator(grid, t1, t2, m, p_cutoff)
    lam, vec = op.lambda_min()
    state = op.synthesize(vec)
    amount = arrival_prob_current(state, t1, t2)
    if return_info:
        return state, amount, {"lambda_min": lam, "basis_size": op.size}
    return state, amount


@dataclass
class BackflowEstimate:
    """Raw lowest eigenvalues on a 2 x 2 ladder and the extrapolated limit.

    ``raw[(a, b)]`` uses box length L / 2**a and cutoff p_cutoff / 2**b.  The
    truncation errors are first order in 1/|p_cutoff| and in dp, so
    ``extrapolated`` applies one Richardson step in each.
    """
    raw: dict
    extrapolated: float
    basis_size: int

    @property
    def lambda_min(self) -> float:
        return self.raw[(0, 0)]

    def as_dict(self) -> dict:
        return {"lambda_min": self.lambda_min, "extrapolated": self.extrapolated,
                "basis_size": self.basis_size,
                "raw": {f"L/{2 ** a},p/{2 ** b}": v for (a, b), v in self.raw.items()}}


def backflow_lambda(grid: SimulationGrid, t1: float, t2: float, m: float = 1.0,
                    p_cutoff: float | None = None) -> BackflowEstimate:
    if p_cutoff is None:
        p_cutoff = -0.5 * grid.p_max
    coarse = SimulationGrid(grid.n_points // 2, 0.5 * grid.x_min, 0.5 * grid.x_max)
    raw = {}
    size = 0
    for a, g in ((0, grid), (1, coarse)):
        op = flux_operator(g, t1, t2, m, p_cutoff)
        size = size or op.size
        raw[(a, 0)] = op.lambda_min()[0]
        half = int(np.count_nonzero(op.basis >= 0.5 * p_cutoff - 1e-12))
        raw[(a, 1)] = _lambda_min(op.entries[:half, :half])
    rich = {a: 2 * raw[(a, 0)] - raw[(a, 1)] for a in (0, 1)}
    return BackflowEstimate(raw, 2 * rich[0] - rich[1], size)

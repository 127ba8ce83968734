"""Time evolution: free, complex absorbing potential, pulsed projections,
Dirichlet-restricted, and the high-temperature quantum Brownian motion channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dst, idst

from .errors import BoundaryLeakError, ConvergenceError, KernelError, SupportViolationError
from .grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    WaveFunction,
    check_boundary,
    energy_moments,
    wigner_transform,
)


@dataclass(frozen=True)
class ComplexPotentialSpec:
    """V(x) = -i v0 theta(-x): absorption on the half-line x < 0."""
    v0: float

    def __post_init__(self):
        if not self.v0 >= 0:
            raise ValueError("v0 must be non-negative")


@dataclass(frozen=True)
class PulsedSchedule:
    epsilon: float
    n_steps: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @property
    def tau(self) -> float:
        return self.n_steps * self.epsilon


@dataclass(frozen=True)
class QBMParams:
    """High-temperature, dissipationless QBM with decoherence coefficient D."""
    d_coeff: float

    def __post_init__(self):
        if not self.d_coeff >= 0:
            raise ValueError("d_coeff must be non-negative")

    def tau_l(self, m: float = 1.0) -> float:
        return math.sqrt(2 * m / self.d_coeff) if self.d_coeff > 0 else math.inf

    def tau_s(self, p0: float) -> float:
        return p0 ** 2 / self.d_coeff if self.d_coeff > 0 else math.inf

    def positivity_time(self, m: float = 1.0) -> float:
        return (3.0 / 16.0) ** 0.25 * self.tau_l(m)


# -- free evolution -----------------------------------------------------------

def kinetic_phase(grid: SimulationGrid, t: float, m: float) -> np.ndarray:
    return np.exp(-0.5j * grid.p ** 2 * t / m)


def evolve_free(psi: WaveFunction, t: float, check: bool = False,
                edge_tol: float = 1e-10) -> WaveFunction:
    """Exact spectral free evolution; ``check`` enforces the boundary-leak test."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return psi
    out = psi.replace(np.fft.ifft(np.fft.fft(psi.psi) * kinetic_phase(psi.grid, t, psi.m)))
    if check:
        check_boundary(out, edge_tol)
    return out


def evolve_free_many(psi: WaveFunction, times) -> np.ndarray:
    """Amplitude snapshots, one row per time."""
    phi = np.fft.fft(psi.psi)
    e = 0.5 * psi.grid.p ** 2 / psi.m
    times = np.asarray(times, dtype=float)
    return np.fft.ifft(phi[None, :] * np.exp(-1j * np.outer(times, e)), axis=1)


# -- complex potential --------------------------------------------------------

def default_cap_step(v0: float) -> float:
    return min(0.005, 0.05 / v0) if v0 > 0 else 0.005


class ComplexPotentialStepper:
    """Strang splitting for H - i v0 theta(-x): half absorb, drift, half absorb."""

    def __init__(self, grid: SimulationGrid, v0: float, dt: float, m: float = 1.0):
        self.grid = grid
        self.dt = dt
        neg = ~grid.positive_mask
        self.half = np.where(neg, np.exp(-0.5 * v0 * dt), 1.0)
        self.full = self.half ** 2
        self.kin = kinetic_phase(grid, dt, m)

    def advance(self, psi: np.ndarray, n_steps: int) -> np.ndarray:
        if n_steps == 0:
            return psi
        out = psi * self.half
        for i in range(n_steps):
            out = np.fft.ifft(np.fft.fft(out) * self.kin)
            out = out * (self.full if i < n_steps - 1 else self.half)
        return out


def _cap_run(psi: WaveFunction, t: float, v0: float, n_steps: int) -> np.ndarray:
    stepper = ComplexPotentialStepper(psi.grid, v0, t / n_steps, psi.m)
    return stepper.advance(psi.psi, n_steps)


def evolve_complex_potential(psi: WaveFunction, t: float, spec: ComplexPotentialSpec,
                             dt: float | None = None, tol: float | None = None,
                             max_halvings: int = 6) -> WaveFunction:
    """Evolve under H - i v0 theta(-x).

    With ``tol`` set, the step is halved until two successive runs differ by
    less than ``tol`` in L2 norm; otherwise a single run at ``dt`` is returned.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return psi
    if spec.v0 == 0:
        return evolve_free(psi, t)
    dt = default_cap_step(spec.v0) if dt is None else dt
    n = max(1, math.ceil(t / dt - 1e-12))
    out = _cap_run(psi, t, spec.v0, n)
    if tol is None:
        return psi.replace(out)
    for _ in range(max_halvings):
        n *= 2
        finer = _cap_run(psi, t, spec.v0, n)
        diff = np.sqrt(np.sum(np.abs(finer - out) ** 2) * psi.grid.dx)
        out = finer
        if diff < tol:
            return psi.replace(out)
    raise ConvergenceError(f"complex-potential splitting did not converge to {tol:g} (last change {diff:.2e})")


# -- pulsed projections and the Zeno limit -------------------------------------

def evolve_pulsed(psi: WaveFunction, sched: PulsedSchedule) -> WaveFunction:
    """``exp(-iH tau) P(n eps) ... P(eps) |psi>``: n rounds of drift then mask."""
    if sched.n_steps == 0:
        return psi
    kin = kinetic_phase(psi.grid, sched.epsilon, psi.m)
    mask = psi.grid.positive_mask
    out = psi.psi
    for _ in range(sched.n_steps):
        out = np.fft.ifft(np.fft.fft(out) * kin)
        out = np.where(mask, out, 0.0)
    return psi.replace(out)


def restricted_propagate(psi: WaveFunction, t: float, leak_tol: float = 1e-10) -> WaveFunction:
    """Unitary evolution on x > 0 with a Dirichlet wall at the origin.

    Sine modes on (x_w, x_max) with x_w the first non-negative grid point; the
    far end is a second wall, which packets are sized never to reach.
    """
    g = psi.grid
    z = g.zero_index
    leak = float(np.sum(np.abs(psi.psi[: z + 1]) ** 2) * g.dx)
    if leak > leak_tol:
        raise SupportViolationError(f"state has weight {leak:.2e} on x <= 0")
    if t == 0:
        return psi
    u = psi.psi[z + 1:]
    big_m = g.n_points - z
    k = np.arange(1, big_m)
    energy = 0.5 * (k * np.pi / (big_m * g.dx)) ** 2 / psi.m
    coeff = dst(u, type=1, norm="ortho") * np.exp(-1j * energy * t)
    out = np.zeros_like(psi.psi)
    out[z + 1:] = idst(coeff, type=1, norm="ortho")
    return psi.replace(out)


# -- QBM channel ---------------------------------------------------------------

class QBMStepper:
    """Strang splitting for the high-temperature master equation

    d rho/dt = (i/2m)(d_x^2 - d_y^2) rho - D (x - y)^2 rho.
    """

    def __init__(self, grid: SimulationGrid, params: QBMParams, dt: float, m: float = 1.0):
        self.grid = grid
        self.dt = dt
        x = grid.x
        sep2 = (x[:, None] - x[None, :]) ** 2
        self.half = np.exp(-0.5 * params.d_coeff * sep2 * dt)
        self.full = self.half ** 2
        e = 0.5 * grid.p ** 2 / m
        self.kin = np.exp(-1j * (e[:, None] - e[None, :]) * dt)

    def drift(self, rho: np.ndarray) -> np.ndarray:
        x = np.fft.ifft(np.fft.fft(rho, axis=0), axis=1) * self.kin
        return np.fft.fft(np.fft.ifft(x, axis=0), axis=1)

    def advance(self, rho: np.ndarray, n_steps: int) -> np.ndarray:
        if n_steps == 0:
            return rho
        out = rho * self.half
        for i in range(n_steps):
            out = self.drift(out)
            out = out * (self.full if i < n_steps - 1 else self.half)
        return out


def default_qbm_step(grid: SimulationGrid, params: QBMParams, m: float = 1.0) -> float:
    return 0.01


def qbm_step(rho: DensityMatrix, dt: float, params: QBMParams) -> DensityMatrix:
    """One Strang step of the QBM master equation."""
    if dt == 0:
        return rho
    stepper = QBMStepper(rho.grid, params, dt, rho.m)
    return rho.replace(stepper.advance(rho.rho, 1))


def qbm_evolve(rho: DensityMatrix, t: float, params: QBMParams, dt: float | None = None) -> DensityMatrix:
    """Compose Strang steps over ``t`` (step at most ``dt``)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return rho
    dt = default_qbm_step(rho.grid, params, rho.m) if dt is None else dt
    n = max(1, math.ceil(t / dt - 1e-12))
    stepper = QBMStepper(rho.grid, params, t / n, rho.m)
    return rho.replace(stepper.advance(rho.rho, n))


def qbm_apply(rho: np.ndarray, grid: SimulationGrid, t: float, params: QBMParams,
              m: float = 1.0, dt: float | None = None) -> np.ndarray:
    """The QBM superoperator on an arbitrary (not necessarily Hermitian) kernel."""
    if t <= 0:
        return rho
    dt = 0.01 if dt is None else dt
    n = max(1, math.ceil(t / dt - 1e-12))
    return QBMStepper(grid, params, t / n, m).advance(rho, n)


def qbm_kernel_propagate(rho: DensityMatrix, t1: float, t2: float, params: QBMParams,
                         trace_tol: float = 1e-6) -> DensityMatrix:
    """Propagate with the closed-form Gaussian density-matrix kernel

    J = m/(2 pi t) exp{(i m / 2t)[(x2-x1)^2 - (y2-y1)^2]
                       - (D t / 3)[xi1^2 + xi1 xi2 + xi2^2]},   t = t2 - t1,

    xi = x - y.  The quadrature is evaluated diagonal by diagonal of ``rho``.
    """
    if t2 < t1:
        raise ValueError("t2 must not precede t1")
    t = t2 - t1
    if t == 0:
        return rho
    g = rho.grid
    m = rho.m
    image_period = 2 * np.pi * t / (m * g.dx)
    if image_period < g.length:
        raise KernelError(
            f"interval {t:g} too short for kernel quadrature on this grid "
            f"(image period {image_period:.3g} < box {g.length:.3g})"
        )
    x = g.x
    n = g.n_points
    a = np.exp(0.5j * m * (x[:, None] - x[None, :]) ** 2 / t)
    c = m / (2 * np.pi * t) * g.dx ** 2
    d = params.d_coeff
    if d == 0:
        out = a @ rho.rho @ a.conj().T
    else:
        w = d * t / 3.0
        xi2 = (x[:, None] - x[None, :])
        acc = np.zeros((n, n), dtype=np.complex128)
        r = rho.rho
        for d1 in range(-(n - 1), n):
            v = np.diagonal(r, offset=-d1)  # rho[i, i - d1]
            if d1 >= 0:
                cols_x = np.arange(d1, n)
            else:
                cols_x = np.arange(0, n + d1)
            if not np.any(v):
                continue
            cols_y = cols_x - d1
            blk = (a[:, cols_x] * v[None, :]) @ a[:, cols_y].conj().T
            xi1 = d1 * g.dx
            acc += blk * np.exp(-w * (xi1 ** 2 + xi1 * xi2))
        out = acc * np.exp(-w * xi2 ** 2)
    out = out * c
    tr = np.trace(out) * g.dx
    if abs(tr - rho.trace()) > trace_tol:
        raise KernelError(f"kernel trace drift {abs(tr - rho.trace()):.2e}")
    out = 0.5 * (out + out.conj().T)
    out *= rho.trace().real / (np.trace(out).real * g.dx)
    return rho.replace(out)


def gaussian_qbm_moments(spec: GaussianPacketSpec, t: float, params: QBMParams, m: float = 1.0):
    """Mean and covariance of the Wigner Gaussian after time t of QBM.

    Returns (q_mean, p_mean, var_q, cov_qp, var_p).
    """
    d = params.d_coeff
    vp0 = 1.0 / (4 * spec.sigma ** 2)
    var_p = vp0 + 2 * d * t
    cov = vp0 * t / m + d * t ** 2 / m
    var_q = spec.sigma ** 2 + vp0 * t ** 2 / m ** 2 + 2 * d * t ** 3 / (3 * m ** 2)
    return spec.x0 + spec.p0 * t / m, spec.p0, var_q, cov, var_p


def gaussian_qbm_density(grid: SimulationGrid, spec: GaussianPacketSpec, t: float,
                         params: QBMParams, m: float = 1.0) -> DensityMatrix:
    """Closed-form density matrix of a Gaussian packet after time t of QBM."""
    qm, pm, vq, cqp, vp = gaussian_qbm_moments(spec, t, params, m)
    x = grid.x
    big_x = 0.5 * (x[:, None] + x[None, :])
    xi = x[:, None] - x[None, :]
    fx = np.exp(-((big_x - qm) ** 2) / (2 * vq)) / np.sqrt(2 * np.pi * vq)
    mu = pm + (cqp / vq) * (big_x - qm)
    s2 = vp - cqp ** 2 / vq
    return DensityMatrix(grid, fx * np.exp(1j * mu * xi - 0.5 * s2 * xi ** 2), m)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    diff = (a.rho - b.rho) * a.grid.dx
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


# -- pulsed vs complex potential -----------------------------------------------

@dataclass
class PositivityScan:
    times: np.ndarray
    ratio: np.ndarray
    crossing: float | None
    threshold: float
    t_positivity: float

    @property
    def crossing_ratio(self) -> float | None:
        return None if self.crossing is None else self.crossing / self.t_positivity

    def as_dict(self) -> dict:
        return {"crossing": self.crossing, "t_positivity": self.t_positivity,
                "crossing_ratio": self.crossing_ratio, "threshold": self.threshold}


def positivity_crossing(rho: DensityMatrix, params: QBMParams, t_max: float | None = None,
                        dt: float | None = None, threshold: float = 1e-6) -> PositivityScan:
    """First time at which min W >= -threshold * max W along the QBM flow.

    Scans on a uniform mesh (default tau_l / 200) up to ``t_max`` (default
    three positivity times); ``crossing`` is None if the Wigner function
    stays negative throughout.
    """
    tp = params.positivity_time(rho.m)
    t_max = 3 * tp if t_max is None else t_max
    dt = params.tau_l(rho.m) / 200 if dt is None else dt
    n = max(1, math.ceil(t_max / dt - 1e-12))
    h = t_max / n
    stepper = QBMStepper(rho.grid, params, h, rho.m)
    r = rho.rho
    times, ratio, crossing = [], [], None
    for j in range(n + 1):
        if j:
            r = stepper.advance(r, 1)
        w = wigner_transform(rho.replace(r))
        q = w.min() / w.max()
        times.append(j * h)
        ratio.append(q)
        if crossing is None and q >= -threshold:
            crossing = j * h
            break
    return PositivityScan(np.array(times), np.array(ratio), crossing, threshold, tp)


@dataclass
class EquivalenceReport:
    tau: float
    epsilon: float
    n_steps: int
    v0: float
    l2_difference: float
    amplitude_distance: float
    norm_pulsed: float
    norm_cap: float
    energy: float
    delta_h: float
    eps_e: float
    eps_dh: float
    reflected_pulsed: float
    reflected_cap: float
    in_regime: bool
    reflection_expected: bool
    sensitivity: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def reflected_weight(wf: WaveFunction) -> float:
    """Weight on x >= 0 carried by positive momenta."""
    g = wf.grid
    phi = np.fft.fft(np.where(g.positive_mask, wf.psi, 0.0))
    phi[g.p <= 0] = 0.0
    return float(np.sum(np.abs(np.fft.ifft(phi)) ** 2) * g.dx)


def equivalence_check(psi: WaveFunction, tau: float, epsilon: float,
                      v0_factor: float = 0.5, cap_dt: float | None = None,
                      sensitivity=()) -> EquivalenceReport:
    """Compare pulsed projections at spacing epsilon with the complex potential
    v0 = v0_factor / epsilon over the same total time.

    ``l2_difference`` is the squared-norm ratio ||psi_pulsed - psi_cap||^2 / ||psi||^2;
    ``amplitude_distance`` is its square root.

    ``epsilon`` is adjusted to ``tau / n`` with ``n`` the nearest integer.
    """
    n = max(1, int(round(tau / epsilon)))
    eps = tau / n
    e, dh = energy_moments(psi)

    def run(factor):
        v0 = factor / eps
        pulsed = evolve_pulsed(psi, PulsedSchedule(eps, n))
        dt = cap_dt if cap_dt is not None else min(default_cap_step(v0), eps / 4)
        cap = evolve_complex_potential(psi, tau, ComplexPotentialSpec(v0), dt=dt)
        return v0, pulsed, cap, (pulsed - cap).norm()

    v0, pulsed, cap, l2 = run(v0_factor)
    sens = {float(f): run(f)[3] for f in sensitivity}
    norm0 = psi.norm()
    return EquivalenceReport(
        tau=tau, epsilon=eps, n_steps=n, v0=v0,
        l2_difference=l2 / norm0,
        amplitude_distance=math.sqrt(l2 / norm0),
        norm_pulsed=pulsed.norm(), norm_cap=cap.norm(),
        energy=e, delta_h=dh, eps_e=eps * e, eps_dh=eps * dh,
        reflected_pulsed=reflected_weight(pulsed), reflected_cap=reflected_weight(cap),
        in_regime=(eps * e >= 10.0 and eps * dh <= 0.1),
        reflection_expected=eps * e < 1.0,
        sensitivity={k: v / norm0 for k, v in sens.items()},
    )

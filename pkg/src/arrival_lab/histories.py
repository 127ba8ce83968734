"""Decoherent-histories machinery for crossing the origin: class operators
built from half-line projectors, the complex-potential crossing operator, the
decoherence functional and the Delta diagnostic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessError, ConvergenceError, InvariantError
from .grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    WaveFunction,
    _half_line_mixed,
    project,
    random_wavefunction,
)
from .propagators import (
    ComplexPotentialStepper,
    QBMParams,
    QBMStepper,
    default_cap_step,
    default_qbm_step,
    evolve_free,
    gaussian_qbm_density,
    gaussian_qbm_moments,
    kinetic_phase,
    qbm_apply,
)

DECOHERENCE_THRESHOLD = 0.01


class Side(enum.Enum):
    POSITIVE = "P"
    NEGATIVE = "Pbar"

    @property
    def positive(self) -> bool:
        return self is Side.POSITIVE


@dataclass(frozen=True)
class HistorySpec:
    """Time-ordered string of half-line projections."""
    steps: tuple
    label: str = ""

    def __post_init__(self):
        steps = tuple((float(t), Side(s)) for t, s in self.steps)
        if not steps:
            raise ValueError("a history needs at least one projection")
        times = [t for t, _ in steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("projection times must be strictly increasing")
        if times[0] < 0:
            raise ValueError("projection times must be non-negative")
        object.__setattr__(self, "steps", steps)

    @property
    def times(self):
        return [t for t, _ in self.steps]

    def side_at(self, t: float):
        for s_t, side in self.steps:
            if s_t == t:
                return side
        return None


def first_crossing_operators(t_grid) -> list:
    """C_1 = Pbar(t1), C_k = Pbar(t_k) P(t_{k-1}) ... P(t1), and the
    no-crossing string P(t_n) ... P(t1)."""
    ts = [float(t) for t in t_grid]
    if not ts:
        raise ValueError("need at least one time")
    out = []
    for k in range(len(ts)):
        steps = [(t, Side.POSITIVE) for t in ts[:k]] + [(ts[k], Side.NEGATIVE)]
        out.append(HistorySpec(tuple(steps), f"cross[{k + 1}]"))
    out.append(HistorySpec(tuple((t, Side.POSITIVE) for t in ts), "no-cross"))
    return out


def apply_class_operator(spec: HistorySpec, psi: WaveFunction, t_final: float | None = None) -> WaveFunction:
    """Branch state exp(-iH t_final) C_alpha psi (unnormalized).

    Evolution and projection alternate in the Schroedinger picture; the common
    final time makes inner products between branches the Heisenberg ones.
    """
    t_last = spec.times[-1]
    t_final = t_last if t_final is None else t_final
    if t_final < t_last:
        raise ValueError("t_final precedes the last projection")
    out, now = psi, 0.0
    for t, side in spec.steps:
        out = project(evolve_free(out, t - now), side.positive)
        now = t
    return evolve_free(out, t_final - now)


def _completeness_residual(alphas, grid: SimulationGrid, m: float, n_states: int = 3,
                           seed: int = 12345) -> float:
    t_final = max(a.times[-1] for a in alphas)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        psi = random_wavefunction(grid, rng, m)
        total = sum(apply_class_operator(a, psi, t_final).psi for a in alphas)
        ref = evolve_free(psi, t_final).psi
        worst = max(worst, float(np.sqrt(np.sum(np.abs(total - ref) ** 2) * grid.dx)))
    return worst


def check_completeness(alphas, grid: SimulationGrid, m: float = 1.0, tol: float = 1e-10) -> float:
    """Sum of class operators against bare evolution on random states."""
    res = _completeness_residual(alphas, grid, m)
    if res > tol:
        raise CompletenessError(f"class operators do not sum to one (residual {res:.2e})")
    return res


# -- complex-potential crossing operator ----------------------------------------

def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _cp_march(psi: WaveFunction, edges, v0: float, dt: float):
    """March the complex-potential run across consecutive windows.

    For each window returns the Simpson sums of exp(iHt) V psi_t (momentum
    representation) on the h and 2h meshes, h <= dt.
    """
    g = psi.grid
    m = psi.m
    e = 0.5 * g.p ** 2 / m
    v = np.where(g.positive_mask, 0.0, v0)
    out = psi.psi
    t0 = edges[0]
    if t0 > 0:
        n0 = max(1, math.ceil(t0 / dt - 1e-12))
        out = ComplexPotentialStepper(g, v0, t0 / n0, m).advance(out, n0)
    sums = []
    for t_k, t_k1 in zip(edges[:-1], edges[1:]):
        n_int = 2 * max(2, math.ceil((t_k1 - t_k) / dt / 2))
        h = (t_k1 - t_k) / n_int
        step = ComplexPotentialStepper(g, v0, h, m)
        w1 = _simpson_weights(n_int) * h
        w2 = _simpson_weights(n_int // 2) * 2 * h
        acc1 = np.zeros(g.n_points, dtype=np.complex128)
        acc2 = np.zeros(g.n_points, dtype=np.complex128)
        for j in range(n_int + 1):
            if j:
                out = step.advance(out, 1)
            f = np.fft.fft(v * out) * np.exp(1j * e * (t_k + j * h))
            acc1 += w1[j] * f
            if j % 2 == 0:
                acc2 += w2[j // 2] * f
        sums.append((acc1, acc2, n_int))
    return sums, out


def crossing_class_operators_cp(psi: WaveFunction, edges, v0: float, tau: float,
                                dt: float | None = None, rtol: float = 1e-3, atol: float = 1e-7,
                                max_halvings: int = 5, return_info: bool = False):
    """Branch states C_k psi for consecutive windows [edges[k], edges[k+1]], with

    C_k = int dt exp(-iH(tau - t)) V exp(-iHt - Vt),  V = v0 theta(-x).

    The complex-potential run is marched once; the interaction-picture
    integrand is accumulated with Simpson weights on the h and 2h meshes, and
    the step halves until the two agree for every window.

    The sharp absorber edge feeds momenta up to the grid cutoff, so the h/2h
    change stalls near 2e-4 relative; rtol below that does not converge.
    """
    edges = [float(t) for t in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] < 0:
        raise ValueError("edges must be increasing, non-negative, at least two")
    if tau < edges[-1]:
        raise ValueError("tau must not precede the last window end")
    g = psi.grid
    span = min(b - a for a, b in zip(edges, edges[1:]))
    dt = min(default_cap_step(v0), span / 16) if dt is None else dt
    kin = kinetic_phase(g, tau, psi.m)
    worst = 0.0
    for _ in range(max_halvings + 1):
        sums, final = _cp_march(psi, edges, v0, dt)
        branches, worst, ok = [], 0.0, True
        for a1, a2, _n in sums:
            res = a1 + (a1 - a2) / 15.0
            diff = float(np.sqrt(np.sum(np.abs(a1 - a2) ** 2) / g.n_points * g.dx))
            size = float(np.sqrt(np.sum(np.abs(res) ** 2) / g.n_points * g.dx))
            worst = max(worst, diff)
            ok = ok and diff <= rtol * size + atol
            branches.append(psi.replace(np.fft.ifft(res * kin)))
        if ok:
            info = {"dt": dt, "change": worst, "converged": True,
                    "surviving": psi.replace(final)}
            return (branches, info) if return_info else branches
        dt /= 2
    raise ConvergenceError(f"crossing-operator quadrature did not converge (last change {worst:.2e})")


def crossing_class_operator_cp(psi: WaveFunction, t_k: float, t_k1: float, v0: float,
                               tau: float, dt: float | None = None, rtol: float = 1e-3,
                               atol: float = 1e-7, max_halvings: int = 5,
                               return_info: bool = False):
    """int_{t_k}^{t_k1} dt exp(-iH(tau - t)) V exp(-iHt - Vt) psi for one window."""
    if not t_k1 > t_k >= 0:
        raise ValueError("need t_k1 > t_k >= 0")
    if tau < t_k1:
        raise ValueError("tau must not precede the window end")
    out = crossing_class_operators_cp(psi, [t_k, t_k1], v0, tau, dt, rtol, atol,
                                      max_halvings, return_info)
    if return_info:
        return out[0][0], out[1]
    return out[0]


# -- decoherence functional ----------------------------------------------------

@dataclass
class DecoherenceReport:
    labels: list
    matrix: np.ndarray
    probabilities: np.ndarray
    q: np.ndarray
    channel: str = "unitary"
    threshold: float = DECOHERENCE_THRESHOLD
    deltas: dict = field(default_factory=dict)
    regime: dict | None = None

    def __post_init__(self):
        d = self.matrix
        if np.max(np.abs(d - d.conj().T)) > 1e-10:
            raise InvariantError("decoherence functional is not Hermitian")
        if np.min(self.probabilities) < -1e-10:
            raise InvariantError("negative history probability")

    @property
    def total(self) -> complex:
        return complex(np.sum(self.matrix))

    @property
    def max_off_diagonal(self) -> float:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return float(np.max(np.abs(off))) if off.size > 1 else 0.0

    @property
    def normalized_off_diagonal(self) -> float:
        """max |D(a,b)| / sqrt(D(a,a) D(b,b)) over a != b with both weights non-zero."""
        p = np.clip(self.probabilities, 0.0, None)
        scale = np.sqrt(np.outer(p, p))
        n = p.size
        worst = 0.0
        for a in range(n):
            for b in range(n):
                if a != b and scale[a, b] > 1e-14:
                    worst = max(worst, abs(self.matrix[a, b]) / scale[a, b])
        return worst

    @property
    def decoherent(self) -> bool:
        return self.normalized_off_diagonal < self.threshold

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "probabilities": [float(v) for v in self.probabilities],
            "q_real": [float(v.real) for v in self.q],
            "q_imag": [float(v.imag) for v in self.q],
            "total": [self.total.real, self.total.imag],
            "max_off_diagonal": self.max_off_diagonal,
            "normalized_off_diagonal": self.normalized_off_diagonal,
            "decoherent": self.decoherent,
            "threshold": self.threshold,
            "channel": self.channel,
            "deltas": self.deltas,
            "regime": self.regime,
        }


def _drift(rho: np.ndarray, grid: SimulationGrid, t: float, channel: str, params, m: float, dt):
    if t <= 0:
        return rho
    if channel == "qbm":
        return qbm_apply(rho, grid, t, params, m, dt)
    return QBMStepper(grid, QBMParams(0.0), t, m).drift(rho)


def _pair_term(rho0: np.ndarray, grid, a: HistorySpec, b: HistorySpec, channel, params, m, dt) -> complex:
    times = sorted(set(a.times) | set(b.times))
    r, now = rho0, 0.0
    pos = grid.positive_mask
    for t in times:
        r = _drift(r, grid, t - now, channel, params, m, dt)
        now = t
        sa, sb = a.side_at(t), b.side_at(t)
        if sa is not None:
            r = r * (pos if sa.positive else ~pos)[:, None]
        if sb is not None:
            r = r * (pos if sb.positive else ~pos)[None, :]
    return complex(np.trace(r) * grid.dx)


def decoherence_functional(state, alphas, channel: str = "unitary", params: QBMParams | None = None,
                           dt: float | None = None, check: bool = True,
                           threshold: float = DECOHERENCE_THRESHOLD) -> DecoherenceReport:
    """D(a, b) = Tr(C_a rho C_b^dagger) over a complete set of histories."""
    alphas = list(alphas)
    if channel not in ("unitary", "qbm"):
        raise ValueError(f"unknown channel {channel!r}")
    if channel == "qbm" and params is None:
        raise ValueError("channel 'qbm' needs QBMParams")
    grid, m = state.grid, state.m
    if check:
        check_completeness(alphas, grid, m)
    n = len(alphas)
    if channel == "unitary" and isinstance(state, WaveFunction):
        t_final = max(a.times[-1] for a in alphas)
        branches = np.array([apply_class_operator(a, state, t_final).psi for a in alphas])
        dmat = (branches.conj() @ branches.T).T * grid.dx   # D[a, b] = <b|a>
    else:
        rho = state.rho if isinstance(state, DensityMatrix) else DensityMatrix.pure(state).rho
        if channel == "qbm" and dt is None:
            dt = default_qbm_step(grid, params, m)
        dmat = np.zeros((n, n), dtype=np.complex128)
        for i in range(n):
            for j in range(i, n):
                v = _pair_term(rho, grid, alphas[i], alphas[j], channel, params, m, dt)
                dmat[i, j] = v
                dmat[j, i] = np.conj(v)
    dmat = 0.5 * (dmat + dmat.conj().T)
    total = np.sum(dmat)
    norm = state.norm() if isinstance(state, WaveFunction) else state.trace().real
    if abs(total - norm) > 1e-8:
        raise InvariantError(f"decoherence functional sums to {total:.10g}, expected {norm:.10g}")
    probs = np.real(np.diag(dmat)).copy()
    q = dmat.sum(axis=1)  # Tr(C_a rho) since the C_b sum to one
    return DecoherenceReport([a.label for a in alphas], dmat, probs, q, channel, threshold)


# -- Delta --------------------------------------------------------------------

@dataclass
class DeltaResult:
    delta: float
    d_squared: float | None
    t1: float
    t2: float
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def delta_bound(state, t1: float, t2: float, channel: str = "unitary",
                params: QBMParams | None = None, dt: float | None = None,
                slack: float = 1e-12) -> DeltaResult:
    """Delta = Tr(P(t2) Pbar(t1) rho Pbar(t1)) and |d|^2, d = Tr(P(t2) Pbar(t1) rho).

    Raises ``InvariantError`` if |d|^2 exceeds Delta by more than ``slack``.
    """
    if not t2 > t1 >= 0:
        raise ValueError("need t2 > t1 >= 0")
    g = state.grid
    pos = g.positive_mask
    if channel == "unitary" and isinstance(state, WaveFunction):
        a = evolve_free(state, t1)
        c = evolve_free(project(a, positive=False), t2 - t1)
        delta = float(np.sum(np.abs(c.psi[pos]) ** 2) * g.dx)
        ref = evolve_free(a, t2 - t1)
        d = complex(np.vdot(ref.psi[pos], c.psi[pos]) * g.dx)
    else:
        if channel == "qbm" and params is None:
            raise ValueError("channel 'qbm' needs QBMParams")
        rho = state.rho if isinstance(state, DensityMatrix) else DensityMatrix.pure(state).rho
        if channel == "qbm" and dt is None:
            dt = default_qbm_step(g, params, state.m)
        r1 = _drift(rho, g, t1, channel, params, state.m, dt)
        left = r1 * (~pos)[:, None]
        both = left * (~pos)[None, :]
        left = _drift(left, g, t2 - t1, channel, params, state.m, dt)
        both = _drift(both, g, t2 - t1, channel, params, state.m, dt)
        delta = float(np.real(np.trace(both[np.ix_(pos, pos)])) * g.dx)
        d = complex(np.trace(left[np.ix_(pos, pos)]) * g.dx)
    d2 = abs(d) ** 2
    if d2 > delta + slack:
        raise InvariantError(f"|d|^2 = {d2:.3e} exceeds Delta = {delta:.3e}")
    return DeltaResult(delta, d2, t1, t2, {"channel": channel})


def _window_delta_on_grid(rho_fn, params, n_points, a, shift, kappa, win, m, n_steps):
    length = 4 * a + max(shift, 0.0)
    dx = length / n_points
    x_lo = -round(3 * a / dx) * dx  # x = 0 on the grid
    g = SimulationGrid(n_points, x_lo, x_lo + length)
    x = g.x
    rho = rho_fn(g)
    ramp = np.sin(0.5 * np.pi * np.clip((x + 1.5 * a) / (0.5 * a), 0.0, 1.0)) ** 2
    neg = (x < -0.25 * dx).astype(float) * ramp
    rho = rho * np.outer(neg, neg) * np.exp(1j * kappa * (x[:, None] - x[None, :]))
    out = QBMStepper(g, params, win / n_steps, m).advance(rho, n_steps)
    return _half_line_mixed(DensityMatrix(g, out, m), shift, g.x_max), g


def gaussian_window_delta(spec: GaussianPacketSpec, params: QBMParams, t1: float, t2: float,
                          m: float = 1.0, n_points: int | None = None, n_steps: int = 10,
                          n_std: float = 6.0, rtol: float = 0.02, max_points: int = 4096) -> DeltaResult:
    """Delta for a Gaussian packet evolved under QBM to t1, then projected.

    The state at t1 is the closed-form QBM Gaussian.  Only the part of it that
    can reach x > 0 before t2 matters, so it is tapered to a causal window
    (-1.5 a, 0) with a = 1.5 v_max (t2 - t1), boosted to remove the mean
    momentum (the master equation is Galilean covariant, the boost moves the
    final half-line to x > -p0 (t2 - t1)/m) and evolved on a local grid.

    Delta is set by the far momentum tail of the cut state, so without an
    explicit ``n_points`` the grid doubles until two runs agree to ``rtol``.
    """
    if not t2 > t1 >= 0:
        raise ValueError("need t2 > t1 >= 0")
    _, pm, _, _, vp = gaussian_qbm_moments(spec, t1, params, m)
    sp = math.sqrt(vp)
    kappa = -pm
    win = t2 - t1
    pmax_needed = n_std * sp
    vmax = pmax_needed / m
    a = max(1.5 * vmax * win, 8 * math.sqrt(win / m))
    shift = kappa * win / m
    length = 4 * a + max(shift, 0.0)

    def rho_fn(g):
        return gaussian_qbm_density(g, spec, t1, params, m).rho

    def run(n):
        return _window_delta_on_grid(rho_fn, params, n, a, shift, kappa, win, m, n_steps)

    change = None
    if n_points is not None:
        delta, g = run(n_points)
    else:
        # return trips need momenta past max(kappa, n_std sp); start at twice that
        p_req = 2.0 * max(abs(kappa), pmax_needed)
        n = 256
        while math.pi * n / length < p_req and n < max_points:
            n *= 2
        delta, g = run(n)
        while True:
            if 2 * n > max_points:
                raise ConvergenceError(f"Delta not converged at {n} points (last change {change})")
            new, g2 = run(2 * n)
            change = abs(new - delta) / max(abs(new), 1e-300)
            delta, g, n = new, g2, 2 * n
            if change <= rtol:
                break
    return DeltaResult(delta, None, t1, t2, {"grid_points": g.n_points, "window": a,
                                             "x_range": [g.x_min, g.x_max], "boost": kappa,
                                             "grid_change": change})


# -- regime tags ---------------------------------------------------------------

@dataclass
class RegimeReport:
    tau_l: float
    tau_s: float
    t1_over_tau_l: float
    window_over_tau_l: float
    window_over_tau_s: float
    e_window: float
    tag: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def regime_classify(params: QBMParams, state: GaussianPacketSpec, t1: float, t2: float,
                    m: float = 1.0, large: float = 3.0, small: float = 1.0 / 3.0) -> RegimeReport:
    """Tag a window as free, weak-environment, strong-environment or out-of-theory.

    A ratio counts as large when >= ``large`` and small when <= ``small``;
    anything in between is a boundary case and is tagged out-of-theory.
    """
    tl = params.tau_l(m)
    ts = params.tau_s(state.p0)
    win = t2 - t1
    r1 = t1 / tl if math.isfinite(tl) else 0.0
    rw = win / tl if math.isfinite(tl) else 0.0
    rs = win / ts if math.isfinite(ts) else 0.0
    e0 = state.p0 ** 2 / (2 * m)
    if r1 <= small and rw <= small:
        tag = "free"
    elif r1 >= large and rw <= small:
        tag = "weak-environment"
    elif r1 >= large and rw >= large and rs <= small:
        tag = "strong-environment"
    else:
        tag = "out-of-theory"
    return RegimeReport(tl, ts, r1, rw, rs, e0 * win, tag)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arrival_lab.arrival import current_qbm
from arrival_lab.errors import KernelError, UnresolvableWidthError
from arrival_lab.grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    expectation_P,
    prepare_gaussian,
    random_wavefunction,
)
from arrival_lab.povm import (
    PhasePoint,
    SmearingKernel,
    anti_wick,
    arrival_kernel,
    arrival_operator_E,
    arrival_operator_F,
    b_matrix,
    coherent_projector,
    coherent_state,
    expectation_F_integral,
    gaussian_phase_kernel,
    identity_operator,
    kernel_feasible_time,
    optimal_smearing,
    phase_grid,
    povm_element,
)
from arrival_lab.propagators import QBMParams, qbm_evolve

D = 0.1
PRM = QBMParams(D)


@pytest.fixture(scope="module")
def pgrid():
    return SimulationGrid.symmetric(512, 64.0)


@pytest.fixture(scope="module")
def packet(pgrid):
    # classical crossing at t = 6.4, past the kernel feasibility time 5.68
    return prepare_gaussian(GaussianPacketSpec(32.0, -5.0, 1.0), pgrid)


@pytest.fixture(scope="module")
def rho0(packet):
    return DensityMatrix.pure(packet)


# -- kernels ----------------------------------------------------------------------

def test_phase_point_finite():
    with pytest.raises(ValueError):
        PhasePoint(math.nan, 0.0)
    assert np.array_equal(PhasePoint(1.0, 2.0).z, [1.0, 2.0])


def test_kernel_values():
    a = SmearingKernel(((2.0, 0.3), (0.3, 0.5)))
    assert gaussian_phase_kernel(PhasePoint(0, 0), a) == pytest.approx(1 / (2 * np.pi * math.sqrt(a.det)))
    ident = SmearingKernel(((1.0, 0.0), (0.0, 1.0)))
    assert gaussian_phase_kernel(PhasePoint(1, 0), ident) == pytest.approx(math.exp(-0.5) / (2 * np.pi))


def test_kernel_normalized_by_quadrature():
    a = SmearingKernel(((2.0, 0.3), (0.3, 0.5)))
    p = np.linspace(-12, 12, 241)
    q = np.linspace(-6, 6, 241)
    vals = np.array([[gaussian_phase_kernel(PhasePoint(pp, qq), a) for qq in q] for pp in p])
    total = np.trapezoid(np.trapezoid(vals, q, axis=1), p)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_kernel_rejects_non_pd():
    with pytest.raises(KernelError):
        SmearingKernel(((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(KernelError):
        SmearingKernel(((1.0, 0.1), (0.2, 1.0)))


def test_b_entry_arithmetic():
    t = QBMParams(1.0).tau_l()
    s = math.sqrt(t / 2)
    b = b_matrix(t, QBMParams(1.0), 1.0, s)
    assert b[0, 0] == pytest.approx(1.5 * t)
    # the s^2 = Dt/2 choice is never positive definite: det B = -3/4
    assert np.linalg.det(b) == pytest.approx(-0.75, rel=1e-9)
    with pytest.raises(KernelError):
        arrival_kernel(t, QBMParams(1.0), 1.0, s)


def test_feasible_time():
    tf = kernel_feasible_time(PRM)
    arrival_kernel(tf * 1.01, PRM)
    with pytest.raises(KernelError):
        arrival_kernel(tf * 0.99, PRM)
    assert optimal_smearing(2.0) ** 2 == pytest.approx(math.sqrt(3) / 4)


# -- coherent states ----------------------------------------------------------------

def test_coherent_projector_basics(pgrid):
    z = PhasePoint(-2.0, 5.0)
    proj = coherent_projector(z, 1.0, pgrid)
    assert np.real(np.trace(proj.matrix())) == pytest.approx(1.0, abs=1e-10)
    psi = coherent_state(z, 1.0, pgrid)
    assert proj.expectation(psi) == pytest.approx(1.0, abs=1e-10)
    far = coherent_state(PhasePoint(4.0, 20.0), 1.0, pgrid)
    assert proj.expectation(far) < 1e-8


def test_unresolvable_width(pgrid):
    with pytest.raises(UnresolvableWidthError):
        coherent_state(PhasePoint(0, 0), 0.5 * pgrid.dx, pgrid)


def test_resolution_of_identity(pgrid):
    # (1/2pi) int dz |z><z| on the periodic phase grid
    ident = identity_operator(pgrid, 1.0)
    assert np.max(np.abs(ident.matrix() - np.eye(pgrid.n_points))) < 1e-10
    rng = np.random.default_rng(1)
    wf = random_wavefunction(pgrid, rng)
    assert ident.expectation(wf) == pytest.approx(1.0, abs=1e-10)


# -- P_z --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pz(pgrid):
    b = SmearingKernel(((0.5, 0.1), (0.1, 0.8)), s=0.5)
    return povm_element(PhasePoint(-2.0, 4.0), b, pgrid), b


def test_pz_peaks_at_center(pz, pgrid):
    op, b = pz
    width = 1.0
    center = op.expectation(coherent_state(PhasePoint(-2.0, 4.0), width, pgrid))
    for dp, dq in ((0.5, 0), (-0.5, 0), (0, 0.5), (0, -0.5), (0.4, 0.4)):
        assert op.expectation(coherent_state(PhasePoint(-2.0 + dp, 4.0 + dq), width, pgrid)) < center


def test_pz_positive(pz, pgrid):
    op, _ = pz
    rng = np.random.default_rng(7)
    for _ in range(50):
        wf = random_wavefunction(pgrid, rng, x_range=(-10, 10), p_range=(-4, 4))
        assert op.expectation(wf) >= -1e-10


def test_pz_family_resolves_identity(pgrid):
    # sum_z P_z dz = (1/2pi) int dz' |z'><z'| sum_z g(z - z'; B) dz: the lattice
    # sum of g must be 1 at every z', which leaves the resolution of identity
    b = SmearingKernel(((0.5, 0.1), (0.1, 0.8)), s=0.5)
    bi = np.linalg.inv(b.matrix)
    h = 0.25
    zp, zq = np.meshgrid(np.arange(-12, 12, h), np.arange(-12, 12, h), indexing="ij")
    rng = np.random.default_rng(11)
    for p1, q1 in rng.uniform(-1, 1, size=(5, 2)):
        dp, dq = zp - p1, zq - q1
        quad = bi[0, 0] * dp ** 2 + 2 * bi[0, 1] * dp * dq + bi[1, 1] * dq ** 2
        assert np.sum(np.exp(-0.5 * quad)) * h * h / (2 * np.pi * math.sqrt(b.det)) == pytest.approx(1.0, abs=1e-3)
    pg = phase_grid(pgrid, 1.0)
    op = anti_wick(pgrid, pg, np.ones((pg.p.size, pg.q.size)), 1.0)
    wf = random_wavefunction(pgrid, rng, x_range=(-20, 20), p_range=(-4, 4))
    assert np.real(np.vdot(wf.psi, op @ wf.psi)) * pgrid.dx ** 2 == pytest.approx(1.0, abs=1e-3)


# -- F ---------------------------------------------------------------------------

def test_f_matches_qbm_current(pgrid, rho0):
    for t in (6.0, 6.5):
        f = arrival_operator_F(t, PRM, pgrid)
        j = current_qbm(qbm_evolve(rho0, t, PRM))
        assert f.expectation(rho0) == pytest.approx(j, rel=0.1)
        assert f.expectation(rho0) == pytest.approx(j, rel=1e-4)


def test_f_ignores_positive_momentum(pgrid):
    wf = prepare_gaussian(GaussianPacketSpec(20.0, 5.0, 1.0), pgrid)
    f = arrival_operator_F(6.0, PRM, pgrid)
    assert f.expectation(wf) <= 1e-6


def test_f_delta_regularization(pgrid, rho0):
    # narrow-Gaussian delta, width -> 0, extrapolated quadratically
    exact = arrival_operator_F(6.2, PRM, pgrid).expectation(rho0)
    w = 0.05
    a = arrival_operator_F(6.2, PRM, pgrid, delta_width=2 * w).expectation(rho0)
    b = arrival_operator_F(6.2, PRM, pgrid, delta_width=w).expectation(rho0)
    assert (4 * b - a) / 3 == pytest.approx(exact, abs=1e-4)


def test_f_warns_before_positivity_time(pgrid):
    k = SmearingKernel(((0.2, 0.0), (0.0, 0.2)), s=0.5)
    with pytest.warns(UserWarning):
        arrival_operator_F(1.0, PRM, pgrid, kernel=k)


# -- E ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def e_window(pgrid):
    return arrival_operator_E(6.0, 7.0, PRM, pgrid)


def test_e_empty_window(pgrid):
    e = arrival_operator_E(6.5, 6.5, PRM, pgrid)
    assert np.max(np.abs(e.kernel)) == 0.0


def test_e_matches_f_integral_and_projector(pgrid, rho0, e_window):
    val = e_window.expectation(rho0)
    via_f = expectation_F_integral(rho0, 6.0, 7.0, PRM, pgrid, n_nodes=9)
    a = qbm_evolve(rho0, 6.0, PRM)
    proj = expectation_P(a) - expectation_P(qbm_evolve(a, 1.0, PRM))
    assert val == pytest.approx(via_f, rel=0.05)
    assert val == pytest.approx(proj, rel=0.10)
    assert val == pytest.approx(proj, rel=1e-3)


def test_e_negative_momentum_positivity(e_window):
    assert e_window.min_eigenvalue_negative_momentum() >= -1e-6


def test_e_random_negative_momentum_states(pgrid, e_window):
    rng = np.random.default_rng(5)
    for _ in range(10):
        wf = random_wavefunction(pgrid, rng, x_range=(10.0, 40.0), p_range=(-8.0, -3.0))
        v = e_window.expectation(wf)
        assert -1e-6 <= v <= 1 + 1e-6


def test_e_telescoping_with_shared_kernel(pgrid):
    k = arrival_kernel(6.5, PRM)
    e13 = arrival_operator_E(6.0, 7.0, PRM, pgrid, kernel=k)
    e12 = arrival_operator_E(6.0, 6.4, PRM, pgrid, kernel=k)
    e23 = arrival_operator_E(6.4, 7.0, PRM, pgrid, kernel=k)
    assert np.max(np.abs((e13 - e12).matrix() - e23.matrix())) < 1e-8


def test_e_tiling_normalization(pgrid, rho0):
    edges = [5.8, 6.6, 7.4, 8.2, 9.4, 11.0, 13.0, 16.0]
    total = sum(arrival_operator_E(a, b, PRM, pgrid).expectation(rho0) for a, b in zip(edges, edges[1:]))
    # earlier arrivals before 5.8 counted by the projector
    before = 1.0 - expectation_P(qbm_evolve(rho0, 5.8, PRM))
    assert total + before == pytest.approx(1.0, abs=0.02)


def test_e_classical_limit(pgrid):
    wf = prepare_gaussian(GaussianPacketSpec(32.0, -5.0, 4.0), pgrid)
    k = arrival_kernel(6.4, PRM).scaled(0.01)
    e = arrival_operator_E(3.0, 10.0, PRM, pgrid, kernel=k, width=2.5)
    # Husimi crossing time of the coherent state (x0, p0): classical indicator 1
    assert e.expectation(wf) == pytest.approx(1.0, abs=0.02)


def test_e_rejects_infeasible_s(pgrid):
    with pytest.raises(KernelError):
        arrival_operator_E(6.0, 7.0, PRM, pgrid, s=math.sqrt(D * 6.5 / 2))
    with pytest.raises(ValueError):
        arrival_operator_E(7.0, 6.0, PRM, pgrid)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-0.9, 0.9))
def test_kernel_pd_property(scale, rho):
    cov = ((scale, rho * math.sqrt(scale)), (rho * math.sqrt(scale), 1.0))
    k = SmearingKernel(cov)
    assert k.det > 0
    assert gaussian_phase_kernel(PhasePoint(0.0, 0.0), k) > gaussian_phase_kernel(PhasePoint(0.3, 0.3), k)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from arrival_lab.errors import (
    AliasingError,
    BoundaryLeakError,
    InvariantError,
    UnresolvableWidthError,
)
from arrival_lab.grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    WaveFunction,
    energy_moments,
    expectation_P,
    expectation_P_mask,
    expectation_Pbar,
    momentum_moments,
    position_moments,
    prepare_gaussian,
    random_wavefunction,
    superpose,
    wigner_column,
    wigner_transform,
)


# -- SimulationGrid -------------------------------------------------------------

@pytest.mark.parametrize("n,half", [(64, 3.0), (1024, 51.2), (4096, 204.8)])
def test_reciprocity(n, half):
    g = SimulationGrid.symmetric(n, half)
    assert g.dx * g.dp * g.n_points == pytest.approx(2 * np.pi, rel=1e-14)


def test_zero_on_grid(grid):
    z = grid.zero_index
    assert grid.x[z] == pytest.approx(0.0, abs=1e-12)
    assert grid.x[z - 1] < 0
    assert grid.positive_mask.sum() == grid.n_points - z


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        SimulationGrid(100, -1.0, 1.0)
    with pytest.raises(ValueError):
        SimulationGrid(64, 1.0, 2.0)


# -- prepare_gaussian ------------------------------------------------------------

def test_centered_gaussian_moments(grid):
    wf = prepare_gaussian(GaussianPacketSpec(0.0, 0.0, 1.0), grid)
    assert wf.norm() == pytest.approx(1.0, abs=1e-12)
    assert position_moments(wf)[0] == pytest.approx(0.0, abs=1e-12)
    assert momentum_moments(wf)[0] == pytest.approx(0.0, abs=1e-12)


def test_default_gaussian_moments(default_packet):
    x, vx = position_moments(default_packet)
    p, vp = momentum_moments(default_packet)
    assert x == pytest.approx(10.0, abs=1e-8)
    assert p == pytest.approx(-2.0, abs=1e-8)
    # quadrature oracle: closed-form density on a 10x finer grid
    xf = np.linspace(-51.2, 51.2, 10 * 1024, endpoint=False)
    dens = np.exp(-((xf - 10.0) ** 2) / 2) / math.sqrt(2 * np.pi)
    dxf = xf[1] - xf[0]
    var_oracle = np.sum((xf - 10.0) ** 2 * dens) * dxf
    assert vx == pytest.approx(var_oracle, rel=1e-8)
    assert vx == pytest.approx(1.0, rel=1e-8)
    assert vp == pytest.approx(0.25, rel=1e-8)


def test_prepare_errors(grid):
    with pytest.raises(UnresolvableWidthError):
        prepare_gaussian(GaussianPacketSpec(0.0, 0.0, 2 * grid.dx), grid)
    with pytest.raises(AliasingError):
        prepare_gaussian(GaussianPacketSpec(0.0, 0.6 * grid.p_max, 1.0), grid)
    with pytest.raises(BoundaryLeakError):
        prepare_gaussian(GaussianPacketSpec(48.0, 0.0, 1.0), grid)


# -- DensityMatrix ----------------------------------------------------------------

def test_density_invariants(grid, default_packet):
    g = SimulationGrid.symmetric(128, 16.0)
    wf = prepare_gaussian(GaussianPacketSpec(2.0, -1.0, 1.0), g)
    rho = DensityMatrix.pure(wf)
    rho.check()
    assert rho.trace() == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(InvariantError):
        DensityMatrix(g, rho.rho + 1e-3j * np.triu(np.ones((128, 128)), 1), 1.0).check()


# -- Wigner ------------------------------------------------------------------------

def test_wigner_pure_gaussian():
    g = SimulationGrid.symmetric(256, 16.0)
    spec = GaussianPacketSpec(0.0, 0.0, 1.0)
    w = wigner_transform(DensityMatrix.pure(prepare_gaussian(spec, g)))
    exact = np.exp(-w.q[None, :] ** 2 / 2 - 2 * w.p[:, None] ** 2) / np.pi
    assert np.max(np.abs(w.values - exact)) < 1e-10
    assert w.min() > -1e-14
    assert w.integral() == pytest.approx(1.0, abs=1e-8)


def test_wigner_marginals(rng):
    g = SimulationGrid.symmetric(256, 32.0)
    wf = random_wavefunction(g, rng)
    w = wigner_transform(DensityMatrix.pure(wf))
    assert np.max(np.abs(w.position_marginal() - np.abs(wf.psi) ** 2)) < 1e-8
    assert w.integral() == pytest.approx(1.0, abs=1e-8)


def test_wigner_momentum_marginal():
    # the phase-space p lattice has spacing dp/2; compare on the shared points
    g = SimulationGrid.symmetric(256, 32.0)
    wf = prepare_gaussian(GaussianPacketSpec(0.0, -1.0, 1.5), g)
    w = wigner_transform(DensityMatrix.pure(wf))
    mm = w.momentum_marginal()
    exact = np.exp(-2 * 1.5 ** 2 * (w.p + 1.0) ** 2) * 1.5 * math.sqrt(2 / np.pi)
    assert np.max(np.abs(mm - exact)) < 1e-8


def test_wigner_cat_fringe():
    g = SimulationGrid.symmetric(256, 25.6)
    a = prepare_gaussian(GaussianPacketSpec(-5.0, -2.0, 1.0), g)
    b = prepare_gaussian(GaussianPacketSpec(5.0, -2.0, 1.0), g)
    cat = superpose((1.0, a), (1.0, b))
    w = wigner_transform(DensityMatrix.pure(cat))
    assert w.min() < 0
    # direct xi-integral oracle at q = 0
    p, col = wigner_column(cat)
    j = g.zero_index
    xi = np.arange(-g.n_points, g.n_points)
    xi = xi[(j + xi >= 0) & (j + xi < g.n_points) & (j - xi >= 0) & (j - xi < g.n_points)]
    vals = cat.psi[j + xi] * cat.psi[j - xi].conj()
    direct = np.array([np.sum(vals * np.exp(-1j * pp * 2 * xi * g.dx)).real * g.dx / np.pi for pp in p])
    assert np.max(np.abs(direct - col)) < 1e-10
    assert np.max(np.abs(w.values[:, j] - col)) < 1e-12
    assert col.min() < 0


def test_wigner_rejects_non_hermitian():
    g = SimulationGrid.symmetric(64, 8.0)
    rho = np.zeros((64, 64), complex)
    rho[3, 5] = 1.0
    with pytest.raises(InvariantError):
        wigner_transform(DensityMatrix(g, rho, 1.0))


# -- expectation_P -----------------------------------------------------------------

def test_expectation_p_examples(grid):
    right = prepare_gaussian(GaussianPacketSpec(10.0, 0.0, 1.0), grid)
    left = prepare_gaussian(GaussianPacketSpec(-10.0, 0.0, 1.0), grid)
    mid = prepare_gaussian(GaussianPacketSpec(0.0, 0.0, 1.0), grid)
    assert 1 - expectation_P(right) <= 1e-12
    assert expectation_P(left) <= 1e-12
    assert expectation_P(mid) == pytest.approx(0.5, abs=1e-9)


def test_expectation_p_erf_oracle(grid):
    wf = prepare_gaussian(GaussianPacketSpec(1.3, 0.0, 1.0), grid)
    assert expectation_P(wf) == pytest.approx(0.5 * (1 + erf(1.3 / math.sqrt(2))), abs=1e-12)


def test_partition(rng, grid):
    for _ in range(5):
        wf = random_wavefunction(grid, rng, x_range=(-5.0, 5.0))
        assert expectation_P(wf) + expectation_Pbar(wf) == pytest.approx(wf.norm(), abs=1e-12)
        mask_sum = expectation_P_mask(wf) + np.sum(np.abs(wf.psi[~grid.positive_mask]) ** 2) * grid.dx
        assert mask_sum == pytest.approx(wf.norm(), abs=1e-14)


def test_expectation_p_density_matches_pure(rng):
    g = SimulationGrid.symmetric(128, 16.0)
    wf = random_wavefunction(g, rng, x_range=(-3.0, 3.0))
    assert expectation_P(DensityMatrix.pure(wf)) == pytest.approx(expectation_P(wf), abs=1e-12)


# -- energy_moments ----------------------------------------------------------------

def test_energy_moments(default_packet):
    e, dh = energy_moments(default_packet)
    assert e == pytest.approx(2.125, rel=1e-10)


def test_energy_zero_momentum_limit():
    g = SimulationGrid.symmetric(4096, 512.0)
    es = [energy_moments(prepare_gaussian(GaussianPacketSpec(0.0, 0.0, s), g))[0] for s in (5.0, 15.0, 40.0)]
    assert es[0] > es[1] > es[2]
    assert es[2] < 1e-4


def test_energy_spread_plane_wave_limit():
    g = SimulationGrid.symmetric(4096, 204.8)
    wf = prepare_gaussian(GaussianPacketSpec(0.0, -5.0, 20.0), g)
    _, dh = energy_moments(wf)
    assert dh == pytest.approx(5.0 / (2 * 20.0), rel=0.01)


# -- properties ----------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_parseval(seed):
    g = SimulationGrid.symmetric(256, 32.0)
    r = np.random.default_rng(seed)
    psi = r.normal(size=256) + 1j * r.normal(size=256)
    wf = WaveFunction(g, psi, 1.0)
    assert np.sum(wf.momentum_density()) * g.dp == pytest.approx(wf.norm(), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-20.0, 20.0), st.floats(-3.0, 3.0), st.floats(0.5, 3.0))
def test_gaussian_normalized(x0, p0, sigma):
    g = SimulationGrid.symmetric(1024, 51.2)
    wf = prepare_gaussian(GaussianPacketSpec(x0, p0, sigma), g)
    assert wf.norm() == pytest.approx(1.0, abs=1e-12)

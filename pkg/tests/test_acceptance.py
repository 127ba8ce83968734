"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
when output capture is on.
"""
import math
import time

import numpy as np
import pytest

from arrival_lab.arrival import (
    arrival_prob_current,
    arrival_prob_projector,
    backflow_lambda,
    backflow_search,
)
from arrival_lab.grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    expectation_P,
    prepare_gaussian,
    random_wavefunction,
    superpose,
)
from arrival_lab.histories import (
    crossing_class_operators_cp,
    decoherence_functional,
    delta_bound,
    first_crossing_operators,
    gaussian_window_delta,
    regime_classify,
)
from arrival_lab.povm import arrival_operator_E, expectation_F_integral
from arrival_lab.propagators import (
    PulsedSchedule,
    QBMParams,
    equivalence_check,
    evolve_pulsed,
    gaussian_qbm_density,
    positivity_crossing,
    qbm_evolve,
    qbm_kernel_propagate,
    qbm_step,
    trace_distance,
)


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_01_identity_suite(capsys):
    g = SimulationGrid.symmetric(1024, 51.2)
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        wf = random_wavefunction(g, rng)  # p in (-3, -0.5): left-moving
        t1 = rng.uniform(0.0, 4.0)
        t2 = t1 + rng.uniform(1.0, 8.0)
        diff = abs(arrival_prob_current(wf, t1, t2) - arrival_prob_projector(wf, t1, t2))
        worst = max(worst, diff)
    took = time.perf_counter() - start
    _report(capsys, 1, worst < 1e-6 and took < 60.0, f"max |int J - dP| = {worst:.2e}, {took:.1f} s")


def test_02_normalization(capsys):
    g = SimulationGrid.symmetric(1024, 51.2)
    spec = GaussianPacketSpec(10.0, -2.0, 1.0)
    t_end = 3 * spec.x0 / abs(spec.p0)
    p = arrival_prob_current(prepare_gaussian(spec, g), 0.0, t_end)
    _report(capsys, 2, abs(p - 1.0) <= 0.01, f"cumulative probability at t = {t_end:g}: {p:.6f}")


def test_03_backflow(capsys):
    box = 2 * math.pi / 0.05
    base = backflow_lambda(SimulationGrid.symmetric(2048, box / 2), 0.0, 1.0, 1.0, -40.0)
    # twice the points over twice the box: dp halves, the basis doubles
    fine_grid = SimulationGrid.symmetric(4096, box)
    fine = backflow_lambda(fine_grid, 0.0, 1.0, 1.0, -40.0)
    _, flux, info = backflow_search(fine_grid, 0.0, 1.0, 1.0, -40.0, return_info=True)
    lam = fine.extrapolated
    shift = abs(fine.extrapolated - base.extrapolated)
    ok = lam < -1e-3 and shift < 1e-4 and abs(flux - info["lambda_min"]) < 1e-4
    _report(capsys, 3, ok,
            f"lambda_min = {lam:.6f} (raw {info['lambda_min']:.6f}, basis {fine.basis_size}), "
            f"doubling shift {shift:.1e}, eigenstate flux - lambda = {flux - info['lambda_min']:.1e}")


def test_04_zeno(capsys):
    g = SimulationGrid.symmetric(512, 25.6)
    wf = prepare_gaussian(GaussianPacketSpec(10.0, -2.0, 1.0), g)
    tau = 10.0
    surv = []
    for k in range(5):
        eps = 1.6e-3 / 2 ** k
        surv.append(evolve_pulsed(wf, PulsedSchedule(eps, int(round(tau / eps)))).norm())
    ok = bool(np.all(np.diff(surv) > 0)) and surv[-1] > 0.99
    _report(capsys, 4, ok, "survival " + ", ".join(f"{s:.4f}" for s in surv))


def test_05_equivalence(capsys):
    g = SimulationGrid.symmetric(4096, 204.8)
    wf = prepare_gaussian(GaussianPacketSpec(100.0, -10.0, 12.0), g)
    inside = equivalence_check(wf, 14.8, 0.2)
    outside = [equivalence_check(wf, 14.8, eps) for eps in (2.96, 7.4, 14.8)]
    worst = max(r.l2_difference for r in outside)
    ok = inside.in_regime and inside.l2_difference < 0.05 and worst > 0.15
    _report(capsys, 5, ok,
            f"in regime (eps E = {inside.eps_e:.0f}, eps dH = {inside.eps_dh:.3f}): {inside.l2_difference:.4f}; "
            f"outside max {worst:.3f}")


def test_06_class_operator_reduction(capsys):
    g = SimulationGrid.symmetric(4096, 128.0)
    wf = prepare_gaussian(GaussianPacketSpec(50.0, -20.0, 10.0), g)
    v0, dt = 100.0, 0.2
    edges = 2.5 + dt * np.arange(-3, 4)
    branches = crossing_class_operators_cp(wf, edges, v0, edges[-1])
    rel = []
    for b, t1, t2 in zip(branches, edges[:-1], edges[1:]):
        ref = arrival_prob_projector(wf, t1, t2)
        rel.append(abs(b.norm() - ref) / ref)
    worst = max(rel)
    _report(capsys, 6, worst < 0.05, f"V0 dt = {v0 * dt:g}, max relative branch error {worst:.4f}")


def test_07_positivity_time(capsys):
    ratios = []
    for d in (0.02, 0.2, 2.0, 20.0):
        prm = QBMParams(d)
        ell = math.sqrt(prm.tau_l())
        g = SimulationGrid.symmetric(256, 16.0 * ell)
        cat = superpose((1, prepare_gaussian(GaussianPacketSpec(-ell, 0.0, 0.5 * ell), g)),
                        (1, prepare_gaussian(GaussianPacketSpec(ell, 0.0, 0.5 * ell), g)))
        scan = positivity_crossing(DensityMatrix.pure(cat), prm)
        ratios.append(scan.crossing_ratio)
    ok = all(r is not None and 0.5 <= r <= 2.0 for r in ratios)
    _report(capsys, 7, ok, "crossing / t_p for D = 0.02 .. 20: " + ", ".join(f"{r}" for r in ratios))


def test_08_povm(capsys):
    prm = QBMParams(0.1)
    g = SimulationGrid.symmetric(512, 64.0)
    spec = GaussianPacketSpec(32.0, -5.0, 1.0)
    rho0 = DensityMatrix.pure(prepare_gaussian(spec, g))
    t1, t2 = 6.0, 7.0
    e = arrival_operator_E(t1, t2, prm, g)
    val = e.expectation(rho0)
    via_f = expectation_F_integral(rho0, t1, t2, prm, g, n_nodes=9)
    a = qbm_evolve(rho0, t1, prm)
    proj = expectation_P(a) - expectation_P(qbm_evolve(a, t2 - t1, prm))
    lam = e.min_eigenvalue_negative_momentum()
    rf, rp = abs(val / via_f - 1), abs(val / proj - 1)
    ok = rf < 0.05 and rp < 0.10 and lam >= -1e-6
    _report(capsys, 8, ok,
            f"t2/tau_s = {t2 / prm.tau_s(spec.p0):.3f}; Tr E rho = {val:.6f}, vs F {rf:.2e}, "
            f"vs projector {rp:.2e}, min eig {lam:.2e}")


def test_09_free_delta(capsys):
    g = SimulationGrid.symmetric(4096, 102.4)
    p0, t1, t2 = -10.0, 2.0, 3.0
    e0 = p0 ** 2 / 2
    rows = []
    for sigma in (1.0, 2.0, 5.0):
        r = delta_bound(prepare_gaussian(GaussianPacketSpec(20.0, p0, sigma), g), t1, t2)
        rows.append((sigma * abs(p0), r.delta, 1 / (sigma * abs(p0))))
    ok = e0 * (t2 - t1) >= 10 and all(d <= b for _, d, b in rows)
    _report(capsys, 9, ok, "; ".join(f"sigma|p0| = {s:g}: {d:.2e} <= {b:.2e}" for s, d, b in rows))


def test_10_weak_environment(capsys):
    prm = QBMParams(2.0)
    tl = prm.tau_l()
    p0 = -10.0
    e0 = p0 ** 2 / 2
    rows, ok = [], True
    for ratio in (3.0, 10.0, 30.0):
        t1 = ratio * tl
        t2 = t1 + 0.1 * tl
        spec = GaussianPacketSpec(abs(p0) * t1, p0, 1.0)
        tag = regime_classify(prm, spec, t1, t2).tag
        d = gaussian_window_delta(spec, prm, t1, t2).delta
        bound = math.sqrt(1 / (e0 * t1)) * tl / t1
        ok &= tag == "weak-environment" and d <= bound
        rows.append(f"t1/tau_l = {ratio:g}: {d:.2e} <= {bound:.2e}")
    _report(capsys, 10, ok, "; ".join(rows))


def test_11_cauchy_schwarz(capsys):
    g = SimulationGrid.symmetric(1024, 51.2)
    rng = np.random.default_rng(11)
    worst = -math.inf
    for _ in range(50):
        wf = random_wavefunction(g, rng, p_range=(-3.0, 1.0))
        t1 = rng.uniform(0.0, 5.0)
        r = delta_bound(wf, t1, t1 + rng.uniform(0.1, 3.0))
        worst = max(worst, r.d_squared - r.delta)
    _report(capsys, 11, worst <= 1e-12, f"max(|d|^2 - Delta) = {worst:.2e}")


def test_12_qbm_cross_validation(capsys):
    g = SimulationGrid.symmetric(256, 16.0)
    spec = GaussianPacketSpec(3.0, -1.0, 1.0)
    prm = QBMParams(0.5)
    t1 = 0.5
    t2 = t1 + prm.tau_l()
    r1 = gaussian_qbm_density(g, spec, t1, prm)
    kern = qbm_kernel_propagate(r1, t1, t2, prm)
    n = 400
    stepped = r1
    for _ in range(n):
        stepped = qbm_step(stepped, (t2 - t1) / n, prm)
    dist = trace_distance(kern, stepped)
    _report(capsys, 12, dist < 1e-4, f"trace distance over [{t1:g}, {t2:g}]: {dist:.2e}")


def test_13_decoherence_backflow(capsys):
    g = SimulationGrid.symmetric(4096, 102.4)
    rng = np.random.default_rng(13)
    ts = [4.5, 5.0, 5.5]
    edges = [0.0] + ts
    n_dec, worst = 0, math.inf
    for i in range(40):
        if i % 2:
            wf = random_wavefunction(g, rng, x_range=(40.0, 60.0), p_range=(-12.0, -8.0), sigma_range=(3.0, 6.0))
        else:
            spec = GaussianPacketSpec(rng.uniform(40.0, 60.0), rng.uniform(-12.0, -8.0), rng.uniform(3.0, 6.0))
            wf = prepare_gaussian(spec, g)
        if not decoherence_functional(wf, first_crossing_operators(ts)).decoherent:
            continue
        n_dec += 1
        worst = min(worst, min(arrival_prob_current(wf, a, b) for a, b in zip(edges[:-1], edges[1:])))
    ok = n_dec > 0 and worst >= -1e-6
    _report(capsys, 13, ok, f"{n_dec}/40 states decoherent; smallest window probability {worst:.2e}")

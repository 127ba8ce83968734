"""Scenario-driven command line front end.

    arrival-lab run <config>
    arrival-lab validate <config>
    arrival-lab sweep <config> --param <dotted.name> --values <v1,v2,...>
    arrival-lab report <dir>

Configs are YAML.  Every run writes ``table.csv`` (17 significant digits) and
``summary.json`` into the output directory.  Exit codes: 0 ok, 2 config
error, 3 convergence failure, 4 acceptance violation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ArrivalLabError, ConfigError, ConvergenceError
from .grid import (
    DensityMatrix,
    GaussianPacketSpec,
    SimulationGrid,
    WaveFunction,
    energy_moments,
    expectation_P,
    gaussian_amplitudes,
    prepare_gaussian,
    superpose,
)

log = logging.getLogger("arrival_lab")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_ACCEPTANCE = 0, 2, 3, 4
OUTPUT_ENV = "ARRIVAL_LAB_OUTPUT"
EXPERIMENTS = ("arrival-dist", "equivalence", "zeno", "backflow", "positivity-time", "decohere",
               "povm-check")
CHANNELS = ("unitary", "complex-potential", "pulsed", "qbm")
MAX_DENSITY_POINTS = 512

DEFAULT_CONFIG = {
    "experiment": {"name": "arrival-dist"},
    "grid": {"n_points": 2048, "x_min": -51.2, "x_max": 51.2},
    "state": {"kind": "gaussian", "x0": 10.0, "p0": -2.0, "sigma": 1.0},
    "dynamics": {"channel": "unitary", "m": 1.0, "v0": None, "epsilon": None, "D": None, "s": None},
    "output": {"directory": "results", "formats": ["csv", "json"]},
}

# experiment options and their defaults (None: derived from the state)
EXPERIMENT_DEFAULTS = {
    "arrival-dist": {"t_end": None, "n_times": 200},
    "equivalence": {"tau": None, "v0_factor": 0.5},
    "zeno": {"tau": 10.0, "n_rungs": 5},
    "backflow": {"t1": 0.0, "t2": 1.0, "p_cutoff": None},
    "positivity-time": {"t_max": None, "dt": None, "threshold": 1e-6},
    "decohere": {"times": None, "threshold": 0.01},
    "povm-check": {"t1": None, "t2": None, "n_nodes": 17},
}


# -- config handling ------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict | None) -> dict:
    """Fill defaults; ``experiment`` may be given as a bare name."""
    raw = copy.deepcopy(raw or {})
    if isinstance(raw.get("experiment"), str):
        raw["experiment"] = {"name": raw["experiment"]}
    cfg = _merge(DEFAULT_CONFIG, raw)
    name = cfg["experiment"].get("name")
    if name in EXPERIMENT_DEFAULTS:
        cfg["experiment"] = _merge(EXPERIMENT_DEFAULTS[name], cfg["experiment"])
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: YAML parse error: {exc}"]) from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    return resolve_config(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _state_terms(state: dict) -> list:
    if state.get("kind", "gaussian") == "gaussian":
        return [state]
    return list(state.get("terms") or [])


def validate_config(cfg: dict) -> list:
    """Every problem found, each naming its field; an empty list means valid."""
    cfg = resolve_config(cfg)
    errs = []
    exp = cfg.get("experiment") or {}
    name = exp.get("name")
    if name not in EXPERIMENTS:
        errs.append(f"experiment.name: unknown experiment {name!r} (one of {', '.join(EXPERIMENTS)})")

    g = cfg.get("grid") or {}
    grid = None
    n = g.get("n_points")
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 8 and n & (n - 1) == 0):
        errs.append(f"grid.n_points: must be a power of two >= 8, got {n!r}")
    for key in ("x_min", "x_max"):
        if not _num(g.get(key)):
            errs.append(f"grid.{key}: missing or not a number")
    if not errs or all(not e.startswith("grid.") for e in errs):
        if not g["x_min"] < 0 < g["x_max"]:
            errs.append("grid: need x_min < 0 < x_max (the origin is the detector)")
        else:
            try:
                grid = SimulationGrid(n, float(g["x_min"]), float(g["x_max"]))
            except (ArrivalLabError, ValueError) as exc:
                errs.append(f"grid: {exc}")

    dyn = cfg.get("dynamics") or {}
    channel = dyn.get("channel")
    m = dyn.get("m", 1.0)
    if channel not in CHANNELS:
        errs.append(f"dynamics.channel: unknown channel {channel!r} (one of {', '.join(CHANNELS)})")
    if not (_num(m) and m > 0):
        errs.append("dynamics.m: mass must be a positive number")
    if channel == "qbm":
        if dyn.get("D") is None:
            errs.append("dynamics.D: missing D with channel=qbm")
        elif not (_num(dyn["D"]) and dyn["D"] > 0):
            errs.append("dynamics.D: must be positive with channel=qbm")
        if grid is not None and grid.n_points > MAX_DENSITY_POINTS:
            errs.append(f"grid.n_points: channel=qbm carries a density matrix; at most {MAX_DENSITY_POINTS} points")
    if channel == "complex-potential":
        if dyn.get("v0") is None:
            errs.append("dynamics.v0: missing v0 with channel=complex-potential")
        elif not (_num(dyn["v0"]) and dyn["v0"] > 0):
            errs.append("dynamics.v0: must be positive")
    if channel == "pulsed" or name in ("equivalence", "zeno"):
        eps = dyn.get("epsilon")
        if eps is None:
            errs.append(f"dynamics.epsilon: missing epsilon with {'channel=pulsed' if channel == 'pulsed' else 'experiment=' + str(name)}")
        elif not (_num(eps) and eps > 0):
            errs.append("dynamics.epsilon: must be positive")
    if dyn.get("s") is not None and not (_num(dyn["s"]) and dyn["s"] > 0):
        errs.append("dynamics.s: must be positive")
    if name in ("positivity-time", "povm-check") and channel != "qbm":
        errs.append(f"dynamics.channel: experiment={name} needs channel=qbm")
    if name == "arrival-dist" and channel == "pulsed":
        errs.append("dynamics.channel: experiment=arrival-dist supports unitary, complex-potential or qbm")

    st = cfg.get("state") or {}
    kind = st.get("kind", "gaussian")
    if kind not in ("gaussian", "superposition"):
        errs.append(f"state.kind: unknown kind {kind!r}")
    else:
        terms = _state_terms(st)
        if not terms:
            errs.append("state.terms: superposition needs at least one term")
        for i, t in enumerate(terms):
            where = "state" if kind == "gaussian" else f"state.terms[{i}]"
            bad = [k for k in ("x0", "p0", "sigma") if not _num(t.get(k))]
            if bad:
                errs.append(f"{where}.{bad[0]}: missing or not a number")
                continue
            if t["sigma"] <= 0:
                errs.append(f"{where}.sigma: must be positive")
                continue
            if grid is not None:
                if t["sigma"] < 4 * grid.dx:
                    errs.append(f"{where}.sigma: σ={t['sigma']:g} < 4dx={4 * grid.dx:g} → unresolvable-width")
                if abs(t["p0"]) > 0.5 * grid.p_max:
                    errs.append(f"{where}.p0: |p0| exceeds half the grid momentum {grid.p_max:.4g} → aliasing")
                if not (grid.x_min + 6 * t["sigma"] <= t["x0"] <= grid.x_max - 6 * t["sigma"]):
                    errs.append(f"{where}.x0: packet tails reach the grid edge → boundary-leak")
            if "weight" in t and not _num(t["weight"]):
                errs.append(f"{where}.weight: not a number")

    for key, val in exp.items():
        if key == "name" or val is None:
            continue
        if key == "times":
            if not (isinstance(val, list) and val and all(_num(v) and v >= 0 for v in val)
                    and all(b > a for a, b in zip(val, val[1:]))):
                errs.append("experiment.times: must be a non-empty increasing list of non-negative times")
        elif not _num(val):
            errs.append(f"experiment.{key}: not a number")
    if name in EXPERIMENT_DEFAULTS:
        unknown = set(exp) - set(EXPERIMENT_DEFAULTS[name]) - {"name"}
        for key in sorted(unknown):
            errs.append(f"experiment.{key}: unknown option for experiment={name}")
    t1, t2 = exp.get("t1"), exp.get("t2")
    if _num(t1) and _num(t2) and not t2 > t1 >= 0:
        errs.append("experiment.t2: need t2 > t1 >= 0")
    if name == "zeno" and _num(exp.get("n_rungs")) and exp["n_rungs"] < 2:
        errs.append("experiment.n_rungs: need at least 2 rungs")

    out = cfg.get("output") or {}
    fmts = out.get("formats", [])
    if not isinstance(fmts, list) or not set(fmts) <= {"csv", "json"}:
        errs.append("output.formats: subset of [csv, json]")
    if not isinstance(out.get("directory"), str):
        errs.append("output.directory: must be a path string")

    sw = cfg.get("sweep")
    if sw is not None:
        if not isinstance(sw, dict) or "param" not in sw or "values" not in sw:
            errs.append("sweep: needs param and values")
        else:
            if _lookup(cfg, sw["param"]) is _MISSING:
                errs.append(f"sweep.param: {sw['param']!r} does not name a config field")
            if not (isinstance(sw["values"], list) and sw["values"]):
                errs.append("sweep.values: must be a non-empty list")
    return errs


_MISSING = object()


def _lookup(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return _MISSING
        node = node[part]
    return node


def set_param(cfg: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


# -- results --------------------------------------------------------------------

@dataclass
class ResultTable:
    columns: list
    units: list
    rows: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.size == 0:
            self.rows = self.rows.reshape(0, len(self.columns))
        if self.rows.shape[1] != len(self.columns) or len(self.units) != len(self.columns):
            raise ValueError("table is not rectangular")
        if "converged" not in self.columns:
            raise ValueError("every table carries a converged column")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# {json.dumps(self.meta, sort_keys=True, default=str)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            w.writerow(self.units)
            for r in self.rows:
                w.writerow(["%.16e" % v for v in r])

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path) as fh:
            meta = json.loads(fh.readline()[2:])
            rd = csv.reader(fh)
            cols = next(rd)
            units = next(rd)
            rows = [[float(v) for v in r] for r in rd]
        return cls(cols, units, np.array(rows).reshape(-1, len(cols)), meta)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


@dataclass
class RunResult:
    table: ResultTable
    metrics: dict
    flags: dict
    violations: list

    @property
    def exit_code(self) -> int:
        return EXIT_ACCEPTANCE if self.violations else EXIT_OK


# -- builders -------------------------------------------------------------------

def build_grid(cfg: dict) -> SimulationGrid:
    g = cfg["grid"]
    return SimulationGrid(int(g["n_points"]), float(g["x_min"]), float(g["x_max"]))


def _spec(t: dict) -> GaussianPacketSpec:
    return GaussianPacketSpec(float(t["x0"]), float(t["p0"]), float(t["sigma"]))


def build_state(cfg: dict, grid: SimulationGrid) -> WaveFunction:
    st = cfg["state"]
    m = float(cfg["dynamics"].get("m", 1.0))
    if st.get("kind", "gaussian") == "gaussian":
        return prepare_gaussian(_spec(st), grid, m)
    terms = [(complex(t.get("weight", 1.0)), WaveFunction(grid, gaussian_amplitudes(grid, _spec(t)), m))
             for t in st["terms"]]
    return superpose(*terms)


def _lead(cfg: dict) -> GaussianPacketSpec:
    return _spec(_state_terms(cfg["state"])[0])


def _qbm(cfg: dict):
    from .propagators import QBMParams
    return QBMParams(float(cfg["dynamics"]["D"]))


# -- experiments ----------------------------------------------------------------

def _exp_arrival_dist(cfg, grid, psi):
    from .arrival import current_qbm, current_series
    from .propagators import ComplexPotentialStepper, QBMStepper, default_cap_step, evolve_free
    from .arrival import _simpson
    exp, dyn = cfg["experiment"], cfg["dynamics"]
    m = psi.m
    lead = _lead(cfg)
    t_nat = 3 * m * abs(lead.x0) / abs(lead.p0) if lead.p0 else 10.0
    t_end = float(exp["t_end"] or t_nat)
    n = int(exp["n_times"])
    n += n % 2
    times = np.linspace(0.0, t_end, n + 1)
    ch = dyn["channel"]
    if ch == "unitary":
        j = current_series(psi, times)
        p_right = np.array([expectation_P(evolve_free(psi, float(t))) for t in times])
        cum = p_right[0] - p_right
    elif ch == "qbm":
        step = QBMStepper(grid, _qbm(cfg), times[1] / max(1, math.ceil(times[1] / 0.01)), m)
        sub = max(1, math.ceil(times[1] / 0.01))
        rho = DensityMatrix.pure(psi)
        r = rho.rho
        j, p_right = np.empty(n + 1), np.empty(n + 1)
        for i in range(n + 1):
            if i:
                r = step.advance(r, sub)
            cur = rho.replace(r)
            j[i], p_right[i] = current_qbm(cur), expectation_P(cur)
        cum = p_right[0] - p_right
    else:
        v0 = float(dyn["v0"])
        sub = max(1, math.ceil(times[1] / default_cap_step(v0)))
        step = ComplexPotentialStepper(grid, v0, times[1] / sub, m)
        out = psi.psi
        j, cum = np.empty(n + 1), np.empty(n + 1)
        left = ~grid.positive_mask
        for i in range(n + 1):
            if i:
                out = step.advance(out, sub)
            dens = np.abs(out) ** 2 * grid.dx
            j[i] = 2 * v0 * float(np.sum(dens[left]))
            cum[i] = psi.norm() - float(np.sum(dens))
    integral = _simpson(j, times[1])
    conv = abs(integral - cum[-1]) <= 1e-3 * max(1.0, abs(cum[-1]))
    table = ResultTable(["t", "J", "cumulative", "converged"], ["time", "1/time", "1", "bool"],
                        np.column_stack([times, j, cum, np.full(n + 1, float(conv))]))
    metrics = {"final_cumulative": float(cum[-1]), "current_integral": float(integral),
               "t_end": t_end, "t_normalization": t_nat, "min_current": float(j.min())}
    violations = []
    if ch == "unitary" and t_end >= t_nat - 1e-12 and abs(cum[-1] - psi.norm()) > 0.01:
        violations.append(f"normalization: cumulative {cum[-1]:.6f} not within 0.01 of 1 by t={t_end:g}")
    return RunResult(table, metrics, {"converged": conv}, violations)


def _exp_equivalence(cfg, grid, psi):
    from .propagators import equivalence_check
    exp, dyn = cfg["experiment"], cfg["dynamics"]
    lead = _lead(cfg)
    tau = float(exp["tau"] or (lead.x0 + 4 * lead.sigma) / abs(lead.p0) * psi.m)
    r = equivalence_check(psi, tau, float(dyn["epsilon"]), v0_factor=float(exp["v0_factor"]))
    row = [r.epsilon, r.eps_e, r.eps_dh, r.v0, r.l2_difference, r.amplitude_distance,
           r.norm_pulsed, r.norm_cap, float(r.in_regime), 1.0]
    table = ResultTable(["epsilon", "eps_E", "eps_dH", "v0", "l2_difference", "amplitude_distance",
                         "norm_pulsed", "norm_cap", "in_regime", "converged"],
                        ["time", "1", "1", "energy", "1", "1", "1", "1", "bool", "bool"], [row])
    violations = []
    if r.in_regime and r.l2_difference >= 0.05:
        violations.append(f"equivalence: in-regime l2 difference {r.l2_difference:.4f} >= 0.05")
    return RunResult(table, r.as_dict(), {"in_regime": r.in_regime}, violations)


def _exp_zeno(cfg, grid, psi):
    from .propagators import PulsedSchedule, evolve_pulsed
    exp, dyn = cfg["experiment"], cfg["dynamics"]
    tau = float(exp["tau"])
    eps0 = float(dyn["epsilon"])
    rows = []
    for k in range(int(exp["n_rungs"])):
        n = max(1, round(tau / (eps0 / 2 ** k)))
        out = evolve_pulsed(psi, PulsedSchedule(tau / n, n))
        rows.append([tau / n, n, out.norm() / psi.norm(), 1.0])
    rows = np.array(rows)
    surv = rows[:, 2]
    mono = bool(np.all(np.diff(surv) > 0))
    table = ResultTable(["epsilon", "n_steps", "survival", "converged"], ["time", "1", "1", "bool"], rows)
    violations = [] if mono else ["zeno: survival not monotone as epsilon halves"]
    return RunResult(table, {"survival": surv.tolist(), "tau": tau}, {"monotone": mono}, violations)


def _exp_backflow(cfg, grid, psi):
    from .arrival import arrival_prob_current, backflow_lambda, flux_operator
    from .errors import InvariantError
    exp = cfg["experiment"]
    m = float(cfg["dynamics"].get("m", 1.0))
    t1, t2 = float(exp["t1"]), float(exp["t2"])
    pc = exp["p_cutoff"]
    op = flux_operator(grid, t1, t2, m, pc)
    ev = op.eigenvalues()
    lam, vec = op.lambda_min()
    state = op.synthesize(vec)
    flux = arrival_prob_current(state, t1, t2)
    est = backflow_lambda(grid, t1, t2, m, pc)
    violations = []
    try:
        op.check_range()
    except InvariantError as exc:
        violations.append(f"backflow: {exc}")
    if abs(flux - lam) > 1e-4:
        violations.append(f"backflow: eigenstate flux {flux:.6g} differs from lambda_min {lam:.6g}")
    rows = np.column_stack([np.arange(ev.size), ev, np.ones(ev.size)])
    table = ResultTable(["index", "eigenvalue", "converged"], ["1", "1", "bool"], rows)
    metrics = {"lambda_min": lam, "lambda_max": float(ev[-1]), "eigenstate_flux": flux,
               "extrapolated": est.extrapolated, "basis_size": op.size, "raw": est.as_dict()["raw"]}
    return RunResult(table, metrics, {"backflow": lam < 0}, violations)


def _exp_positivity(cfg, grid, psi):
    from .propagators import positivity_crossing
    exp = cfg["experiment"]
    prm = _qbm(cfg)
    scan = positivity_crossing(DensityMatrix.pure(psi), prm, exp["t_max"], exp["dt"], float(exp["threshold"]))
    ok = scan.crossing is not None
    rows = np.column_stack([scan.times, scan.ratio, np.full(scan.times.size, float(ok))])
    table = ResultTable(["t", "min_over_max_W", "converged"], ["time", "1", "bool"], rows)
    violations = []
    if not ok:
        violations.append("positivity-time: Wigner function still negative at t_max")
    elif not 0.5 <= scan.crossing_ratio <= 2.0:
        violations.append(f"positivity-time: crossing at {scan.crossing_ratio:.3f} x the positivity time")
    return RunResult(table, scan.as_dict(), {"crossed": ok}, violations)


def _exp_decohere(cfg, grid, psi):
    from .arrival import arrival_prob_projector
    from .histories import decoherence_functional, first_crossing_operators
    exp, dyn = cfg["experiment"], cfg["dynamics"]
    lead = _lead(cfg)
    if exp["times"]:
        times = [float(t) for t in exp["times"]]
    else:
        tc = psi.m * lead.x0 / abs(lead.p0)
        w = psi.m * lead.sigma / abs(lead.p0)
        times = [max(0.0, tc - 2 * w) + k * w for k in range(5)]
    ch = "qbm" if dyn["channel"] == "qbm" else "unitary"
    params = _qbm(cfg) if ch == "qbm" else None
    state = psi if ch == "unitary" else DensityMatrix.pure(psi)
    rep = decoherence_functional(state, first_crossing_operators(times), ch, params,
                                 threshold=float(exp["threshold"]))
    windows = [arrival_prob_projector(state, a, b, ch, params) for a, b in zip(times, times[1:])]
    k = len(rep.labels)
    rows = [[a, b, rep.matrix[a, b].real, rep.matrix[a, b].imag, 1.0] for a in range(k) for b in range(k)]
    table = ResultTable(["alpha", "beta", "re_D", "im_D", "converged"], ["1", "1", "1", "1", "bool"], rows)
    violations = []
    if rep.decoherent and min(windows) < -1e-6:
        violations.append(f"decohere: decoherent set with window probability {min(windows):.3g} < -1e-6")
    metrics = {**rep.as_dict(), "times": times, "window_probabilities": windows}
    return RunResult(table, metrics, {"decoherent": rep.decoherent}, violations)


def _exp_povm(cfg, grid, psi):
    from .arrival import arrival_prob_projector
    from .povm import arrival_operator_E, expectation_F_integral
    exp, dyn = cfg["experiment"], cfg["dynamics"]
    prm = _qbm(cfg)
    m = psi.m
    lead = _lead(cfg)
    tc = m * lead.x0 / abs(lead.p0)
    t1 = float(exp["t1"] if exp["t1"] is not None else tc - 0.5)
    t2 = float(exp["t2"] if exp["t2"] is not None else tc + 0.5)
    s = dyn.get("s")
    rho = DensityMatrix.pure(psi)
    e_op = arrival_operator_E(t1, t2, prm, grid, m, s=s)
    tr_e = e_op.expectation(rho)
    f_int = expectation_F_integral(rho, t1, t2, prm, grid, m, int(exp["n_nodes"]), s=s)
    proj = arrival_prob_projector(rho, t1, t2, "qbm", prm)
    lam = e_op.min_eigenvalue_negative_momentum()
    rel_f = abs(tr_e - f_int) / abs(f_int)
    rel_p = abs(tr_e - proj) / abs(proj)
    row = [t1, t2, tr_e, f_int, proj, rel_f, rel_p, lam, 1.0]
    table = ResultTable(["t1", "t2", "tr_E", "int_tr_F", "p_projector", "rel_F", "rel_projector",
                         "min_eig_negative_p", "converged"],
                        ["time", "time", "1", "1", "1", "1", "1", "1", "bool"], [row])
    violations = []
    if rel_f >= 0.05:
        violations.append(f"povm: Tr(E rho) vs int Tr(F rho) differ by {rel_f:.3%}")
    if rel_p >= 0.10:
        violations.append(f"povm: Tr(E rho) vs projector probability differ by {rel_p:.3%}")
    if lam < -1e-6:
        violations.append(f"povm: E has eigenvalue {lam:.3g} on negative momenta")
    metrics = dict(zip(table.columns[:-1], row[:-1]))
    metrics["t_ref"] = e_op.meta["t_ref"]
    metrics["s"] = e_op.meta["s"]
    return RunResult(table, metrics, {"positive_on_negative_p": lam >= -1e-6}, violations)


RUNNERS = {
    "arrival-dist": _exp_arrival_dist,
    "equivalence": _exp_equivalence,
    "zeno": _exp_zeno,
    "backflow": _exp_backflow,
    "positivity-time": _exp_positivity,
    "decohere": _exp_decohere,
    "povm-check": _exp_povm,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def run_scenario(cfg: dict, out_dir=None) -> RunResult:
    """Validate, run and (when ``out_dir`` is given) write table.csv and summary.json."""
    cfg = resolve_config(cfg)
    errs = validate_config(cfg)
    if errs:
        raise ConfigError(errs)
    grid = build_grid(cfg)
    psi = build_state(cfg, grid)
    name = cfg["experiment"]["name"]
    res = RUNNERS[name](cfg, grid, psi)
    res.table.meta.update({"experiment": name, "config_hash": config_hash(cfg), "version": __version__})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fmts = cfg["output"]["formats"]
        if "csv" in fmts:
            res.table.write_csv(out / "table.csv")
        summary = {"experiment": name, "metrics": res.metrics, "flags": res.flags,
                   "violations": res.violations, "config_hash": config_hash(cfg),
                   "version": __version__}
        if "json" in fmts:
            with open(out / "summary.json", "w") as fh:
                json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        with open(out / "config.resolved.yaml", "w") as fh:
            yaml.safe_dump(cfg, fh, sort_keys=True)
    return res


# -- sweep and report -----------------------------------------------------------

def parse_values(text: str) -> list:
    """Comma-separated values parsed as YAML scalars."""
    return [yaml.safe_load(v) for v in text.split(",") if v.strip()]


def _sweep_point(args):
    cfg, out_dir = args
    try:
        res = run_scenario(cfg, out_dir)
        return res.exit_code, res.violations
    except ConfigError as exc:
        return EXIT_CONFIG, exc.errors
    except ConvergenceError as exc:
        return EXIT_CONVERGENCE, [str(exc)]


def run_sweep(cfg: dict, param: str, values: list, out_dir, workers: int | None = None) -> dict:
    """One run per value in its own directory, then a merged table in value order."""
    cfg = resolve_config(cfg)
    if _lookup(cfg, param) is _MISSING:
        raise ConfigError([f"sweep.param: {param!r} does not name a config field"])
    out = Path(out_dir)
    points = []
    errs = []
    for i, v in enumerate(values):
        c = set_param(cfg, param, v)
        e = validate_config(c)
        errs += [f"{param}={v!r}: {x}" for x in e]
        points.append((c, str(out / f"point_{i:03d}")))
    if errs:
        raise ConfigError(errs)
    workers = workers or min(len(points), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_point, points))
    else:
        codes = [_sweep_point(p) for p in points]
    merged_rows, columns, units = [], None, None
    for (c, d), v in zip(points, values):
        path = Path(d) / "table.csv"
        if not path.exists():
            continue
        t = ResultTable.read_csv(path)
        columns, units = columns or t.columns, units or t.units
        val = float(v) if _num(v) else float("nan")
        merged_rows += [[val, *r] for r in t.rows]
    if columns is not None:
        ResultTable([param] + columns, ["-"] + units, np.array(merged_rows),
                    {"sweep": param, "values": values}).write_csv(out / "sweep.csv")
    status = {"param": param, "values": values, "exit_codes": [c for c, _ in codes],
              "violations": [v for _, v in codes]}
    with open(out / "sweep.json", "w") as fh:
        json.dump(_jsonable(status), fh, indent=2, sort_keys=True)
    return status


def build_report(directory) -> Path:
    """Collect every table.csv below ``directory`` into one long-format file."""
    root = Path(directory)
    if not root.is_dir():
        raise ConfigError([f"report: {directory} is not a directory"])
    tables = sorted(root.rglob("table.csv"))
    out = root / "report_long.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "experiment", "row", "variable", "value"])
        for path in tables:
            t = ResultTable.read_csv(path)
            run = str(path.parent.relative_to(root)) or "."
            for i, r in enumerate(t.rows):
                for name, v in zip(t.columns, r):
                    w.writerow([run, t.meta.get("experiment", ""), i, name, "%.16e" % v])
    return out


# -- entry point ----------------------------------------------------------------

def _output_dir(cfg: dict) -> str:
    return os.environ.get(OUTPUT_ENV) or cfg["output"]["directory"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="arrival-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run")
    p.add_argument("config")
    p = sub.add_parser("validate")
    p.add_argument("config")
    p = sub.add_parser("sweep")
    p.add_argument("config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("report")
    p.add_argument("dir")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "report":
            print(build_report(args.dir))
            return EXIT_OK
        cfg = load_config(args.config)
        if args.cmd == "validate":
            errs = validate_config(cfg)
            for e in errs:
                print(e)
            if not errs:
                print("ok")
            return EXIT_CONFIG if errs else EXIT_OK
        if args.cmd == "run":
            res = run_scenario(cfg, _output_dir(cfg))
            print(json.dumps(_jsonable({"experiment": cfg["experiment"]["name"], "flags": res.flags,
                                        "violations": res.violations})))
            return res.exit_code
        status = run_sweep(cfg, args.param, parse_values(args.values), _output_dir(cfg), args.workers)
        codes = status["exit_codes"]
        print(json.dumps(_jsonable(status)))
        return max(codes) if codes else EXIT_OK
    except ConfigError as exc:
        for e in exc.errors:
            print(e, file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ArrivalLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

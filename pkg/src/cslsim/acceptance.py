"""Acceptance suite: end-to-end checks of the package's headline claims.

Each criterion is an independent runner returning a pass/fail record
with a one-line quantitative detail.  Statistical criteria use pinned
master seeds and 3-sigma (or wider) bands, so reruns and seed changes
keep a comfortable margin.  The CLI ``verify`` subcommand and the test
suite both execute these runners.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List

import numpy as np

from .ensemble import DensityMatrix, lindblad_propagate, run_ensemble
from .errors import LowEffectiveSampleError
from .ledger import build_ledger, conservation_check, observable_drift, system_energy
from .postulate import (MomentumGrid, build_window_state, collapse_residual,
                        gaussian_state, make_superposition,
                        moment_divergence_scan, tail_exponent)
from .scenarios import free_particle_grid, qubit_dephasing, random_dense, two_level_collapse
from .tolerances import QUADRATURE

# Pinned master seeds, one per statistical criterion.
SEED_BORN = 101
SEED_DECAY = 202
SEED_GRID_INTERACTION = 505
SEED_FIELD_ENERGY = 707
SEED_EQUIVALENCE = 1010


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.number:>2}  {self.name:<28} {self.seconds:7.2f}s  {self.detail}"


def _fit_slope(t: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(t, y, 1)[0])


def _operator_norm(op) -> float:
    return float(np.abs(op.spectrum().eigenvalues).max())


@lru_cache(maxsize=2)
def _born_rule_stats(threads: int):
    scenario = two_level_collapse()
    return run_ensemble(scenario, 10_000, "cooked", SEED_BORN, threads=threads)


def criterion_born_rule(threads: int = 1) -> CriterionResult:
    """Collapse frequencies reproduce the squared initial weights."""
    t0 = time.perf_counter()
    stats = _born_rule_stats(threads)
    freq, _ = stats.frequency(1.0)
    band = 3.0 * math.sqrt(0.7 * 0.3 / stats.n_success)
    passed = abs(freq - 0.7) <= band
    detail = f"freq(+1)={freq:.5f}, target 0.70000 +- {band:.5f}"
    return CriterionResult(1, "born_rule_frequency", passed, detail,
                           time.perf_counter() - t0)


def criterion_off_diagonal_decay(threads: int = 1) -> CriterionResult:
    """Coherence decays at rate (lam/2)(Delta a)^2, deterministically and in MC."""
    t0 = time.perf_counter()
    scenario = two_level_collapse(weight_upper=0.5, relative_phase=0.9,
                                  lam=1.0, t_end=5.0, steps=1024)
    rho0 = DensityMatrix.from_state(scenario.psi0)
    series = lindblad_propagate(rho0, scenario)
    rho12_0 = rho0.entries[0, 1]
    exact = rho12_0 * np.exp(-2.0 * series.times)
    got = series.rhos[:, 0, 1]
    rel = float(np.max(np.abs(got - exact) / np.abs(exact)))

    mc_scenario = two_level_collapse(weight_upper=0.5, relative_phase=0.9,
                                     lam=0.25, t_end=1.0, steps=400)
    stats = run_ensemble(mc_scenario, 10_000, "cooked", SEED_DECAY,
                         keep_final_states=True, threads=threads)
    states = stats.final_states
    outer = states[:, :, None] * states[:, None, :].conj()
    mc_rho = outer.mean(axis=0)
    dev = outer - mc_rho
    se = np.sqrt(np.mean(dev.real**2 + dev.imag**2, axis=0) / states.shape[0])
    decay = math.exp(-0.5 * mc_scenario.params.lam * 4.0 * mc_scenario.grid.t_end)
    c1, c2 = mc_scenario.psi0.amplitudes
    exact_rho = np.array([[abs(c1) ** 2, c1 * np.conj(c2) * decay],
                          [np.conj(c1) * c2 * decay, abs(c2) ** 2]])
    sigmas = np.abs(mc_rho - exact_rho) / se
    passed = rel <= 1e-8 and bool(np.all(sigmas <= 4.0))
    detail = f"deterministic rel err {rel:.2e} (<=1e-8), MC max dev {sigmas.max():.2f} SE (<=4)"
    return CriterionResult(2, "off_diagonal_decay", passed, detail,
                           time.perf_counter() - t0)


@lru_cache(maxsize=1)
def _random_scenario_pack():
    """Ledgers and drift data for 20 seeded random dense scenarios.

    Shared by the balance and drift criteria so the Lindblad series is
    integrated once per scenario.
    """
    pack = []
    for i in range(20):
        lam_rng = np.random.default_rng(9000 + i)
        lam = 0.1 + 0.9 * float(lam_rng.random())
        scenario = random_dense(3000 + i, dim=8, lam=lam, t_end=2.0, steps=2048)
        rho0 = DensityMatrix.from_state(scenario.psi0)
        series = lindblad_propagate(rho0, scenario)
        ledger = build_ledger(scenario, series=series)
        h_norm = _operator_norm(scenario.hamiltonian)
        deviation = conservation_check(ledger)

        energy = system_energy(series, scenario.hamiltonian)
        formula = observable_drift(scenario.hamiltonian, scenario, series)
        h = series.times[1] - series.times[0]
        idx = np.arange(2, series.times.size - 2, 37)
        d_h = (energy[idx + 1] - energy[idx - 1]) / (2.0 * h)
        d_2h = (energy[idx + 2] - energy[idx - 2]) / (4.0 * h)
        fd = (4.0 * d_h - d_2h) / 3.0
        drift_rel = float(np.max(np.abs(fd - formula[idx])) / np.max(np.abs(formula)))
        pack.append({"lam": lam, "h_norm": h_norm, "deviation": deviation,
                     "drift_rel": drift_rel})
    return pack


def criterion_ledger_balance(threads: int = 1) -> CriterionResult:
    """System plus field energy stays at its initial value."""
    t0 = time.perf_counter()
    pack = _random_scenario_pack()
    worst = max(item["deviation"] / (QUADRATURE * item["h_norm"]) for item in pack)
    passed = worst <= 1.0
    detail = f"20 random scenarios, worst deviation {worst:.3f} of the 1e-6*|H| budget"
    return CriterionResult(3, "energy_ledger_balance", passed, detail,
                           time.perf_counter() - t0)


def criterion_drift_law(threads: int = 1) -> CriterionResult:
    """d<H>/dt matches the double-commutator drift formula."""
    t0 = time.perf_counter()
    pack = _random_scenario_pack()
    worst = max(item["drift_rel"] for item in pack)
    passed = worst <= 1e-6
    detail = f"20 random scenarios, worst FD-vs-formula rel err {worst:.2e} (<=1e-6)"
    return CriterionResult(4, "drift_law", passed, detail,
                           time.perf_counter() - t0)


@lru_cache(maxsize=1)
def _free_particle_ledger():
    scenario = free_particle_grid()
    return scenario, build_ledger(scenario)


def criterion_free_particle(threads: int = 1) -> CriterionResult:
    """Kinetic energy of a free packet heats at lam*hbar^2/2m."""
    t0 = time.perf_counter()
    scenario, ledger = _free_particle_ledger()
    p = scenario.params
    expected = p.lam * p.hbar**2 / (2.0 * scenario.grid_info.mass)
    slope = _fit_slope(ledger.times, ledger.system)
    field_final = float(ledger.field[-1])
    field_expected = -expected * scenario.grid.t_end
    slope_rel = abs(slope - expected) / expected
    field_rel = abs(field_final - field_expected) / abs(field_expected)
    passed = slope_rel <= 0.05 and field_rel <= 0.05
    detail = (f"slope {slope:.6f} vs {expected:.6f} ({100 * slope_rel:.2f}%), "
              f"field {field_final:.6f} vs {field_expected:.6f} ({100 * field_rel:.2f}%)")
    return CriterionResult(5, "free_particle_heating", passed, detail,
                           time.perf_counter() - t0)


def criterion_interaction_zero(threads: int = 1) -> CriterionResult:
    """The terminal coupling-field cross term averages to zero."""
    t0 = time.perf_counter()
    stats_a = _born_rule_stats(threads)
    za = abs(stats_a.interaction_mean) / stats_a.interaction_se
    grid_scenario = free_particle_grid()
    stats_b = run_ensemble(grid_scenario, 1_500, "cooked", SEED_GRID_INTERACTION,
                           threads=threads)
    zb = abs(stats_b.interaction_mean) / stats_b.interaction_se
    passed = za <= 3.0 and zb <= 3.0
    detail = f"two-level {za:.2f} sigma, free particle {zb:.2f} sigma (<=3)"
    return CriterionResult(6, "interaction_mean_zero", passed, detail,
                           time.perf_counter() - t0)


def criterion_field_energy(threads: int = 1) -> CriterionResult:
    """Per-trajectory field-energy estimator matches the quadrature value."""
    t0 = time.perf_counter()
    scenario = qubit_dephasing()
    p = scenario.params
    omega = 1.0
    target = omega * (1.0 - math.exp(-2.0 * p.lam * scenario.grid.t_end))
    stats = run_ensemble(scenario, 10_000, "raw", SEED_FIELD_ENERGY,
                         with_field_energy=True, threads=threads)
    z = abs(stats.field_energy_mean - target) / stats.field_energy_se
    ledger = build_ledger(scenario)
    quad_rel = abs(float(ledger.field[-1]) - target) / target
    passed = z <= 3.0 and quad_rel <= QUADRATURE
    detail = (f"estimator {stats.field_energy_mean:.5f} vs {target:.5f} "
              f"({z:.2f} sigma), quadrature rel err {quad_rel:.2e}")
    return CriterionResult(7, "field_energy_estimator", passed, detail,
                           time.perf_counter() - t0)


def criterion_window_conservation(threads: int = 1) -> CriterionResult:
    """Disjoint momentum windows conserve both generating functions."""
    t0 = time.perf_counter()
    grid = MomentumGrid(4096, -8.0, 8.0)
    w1 = build_window_state(grid, -6.0, -2.0, 0)
    w2 = build_window_state(grid, 2.0, 6.0, 0)
    amp = 1.0 / math.sqrt(2.0)
    sup = make_superposition(amp, amp, w1, w2)
    b_values = np.linspace(0.05, 5.0, 100)
    a_values = np.linspace(0.05, 5.0, 100)
    worst_p = max(collapse_residual(sup, "momentum", b) for b in b_values)
    worst_e = max(collapse_residual(sup, "energy", a, mass=1.0) for a in a_values)

    g1 = gaussian_state(grid, 1.0, x0=-5.0)
    g2 = gaussian_state(grid, 1.0, x0=5.0)
    sup_g = make_superposition(amp, amp, g1, g2)
    gauss_peak = max(collapse_residual(sup_g, "momentum", b)
                     for b in np.linspace(0.5, 15.0, 100))
    passed = worst_p <= 1e-10 and worst_e <= 1e-10 and gauss_peak >= 1e-4
    detail = (f"windows: P {worst_p:.1e}, E {worst_e:.1e} (<=1e-10); "
              f"gaussians: peak {gauss_peak:.3f} (>=1e-4)")
    return CriterionResult(8, "joint_conservation_windows", passed, detail,
                           time.perf_counter() - t0)


def criterion_tail_asymptotics(threads: int = 1) -> CriterionResult:
    """Window-edge zeros set the position tail and moment convergence."""
    t0 = time.perf_counter()
    grid = MomentumGrid(4096, -8.0, 8.0)
    exponent = tail_exponent(build_window_state(grid, -3.0, 3.0, 0))

    def builder(n):
        return lambda g: build_window_state(g, -3.0, 3.0, n)

    scan0 = moment_divergence_scan(builder(0), 2, grid, doublings=4)
    scan3 = moment_divergence_scan(builder(3), 2, grid, doublings=4)
    passed = (abs(exponent - 1.0) <= 0.1 and scan0.verdict == "divergent"
              and scan3.verdict == "convergent")
    detail = (f"tail exponent {exponent:.3f} (1.0 +- 0.1), "
              f"<x^2> scans: n=0 {scan0.verdict}, n=3 {scan3.verdict}")
    return CriterionResult(9, "window_tail_asymptotics", passed, detail,
                           time.perf_counter() - t0)


def criterion_sampler_equivalence(threads: int = 1) -> CriterionResult:
    """Raw reweighting and cooked sampling give the same statistics.

    The literal collapse endpoint of the frequency scenario is too deep
    for raw sampling (the effective sample size collapses to below one
    path in ten thousand), and the runner asserts that refusal; the
    statistical comparison runs at a fifth of that horizon, where both
    modes are healthy.
    """
    t0 = time.perf_counter()
    scenario = two_level_collapse(t_end=0.5, steps=100)
    cooked = run_ensemble(scenario, 10_000, "cooked", SEED_EQUIVALENCE,
                          threads=threads)
    raw = run_ensemble(scenario, 10_000, "raw", SEED_EQUIVALENCE + 1,
                       threads=threads)
    f_c, se_c = cooked.frequency(1.0)
    f_r, se_r = raw.frequency(1.0)
    z_freq = abs(f_r - f_c) / math.sqrt(se_c**2 + se_r**2)
    z_weight = abs(raw.mean_weight - 1.0) / raw.mean_weight_se

    deep = two_level_collapse()
    try:
        run_ensemble(deep, 200, "raw", SEED_EQUIVALENCE + 2, threads=threads)
        refused = False
    except LowEffectiveSampleError:
        refused = True
    passed = z_freq <= 3.0 and z_weight <= 3.0 and refused
    detail = (f"freq raw {f_r:.4f} vs cooked {f_c:.4f} ({z_freq:.2f} sigma), "
              f"E[weight]-1 at {z_weight:.2f} sigma, deep-horizon raw refused: {refused}")
    return CriterionResult(10, "sampler_equivalence", passed, detail,
                           time.perf_counter() - t0)


RUNNERS: List[Callable[[int], CriterionResult]] = [
    criterion_born_rule,
    criterion_off_diagonal_decay,
    criterion_ledger_balance,
    criterion_drift_law,
    criterion_free_particle,
    criterion_interaction_zero,
    criterion_field_energy,
    criterion_window_conservation,
    criterion_tail_asymptotics,
    criterion_sampler_equivalence,
]


def run_all(threads: int = 1, report: Callable[[str], None] = None) -> List[CriterionResult]:
    """Run every acceptance criterion, optionally reporting each line."""
    results = []
    for runner in RUNNERS:
        result = runner(threads)
        results.append(result)
        if report is not None:
            report(result.line())
    return results

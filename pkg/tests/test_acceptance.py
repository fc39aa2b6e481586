"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runs are cached per session so criteria 5 and 9, which audit "every run
above", reuse the integrations of criteria 3, 4, 7 and 8.  Run directly with
``python3 tests/test_acceptance.py`` for the summary lines alone.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from viscstar.energy import build_cutoffs, energy_inequality_monitor, pressure_form_residual
from viscstar.lagrangian import eulerian_mass, from_profile
from viscstar.momentum import LINEAR_TOL, mass_norm
from viscstar.polytrope import PolytropeConfig, lane_emden_solve, stationary_exponents, stationary_star
from viscstar.stepper import MemorySink, SimulationConfig, initial_state, picard_step, run
from viscstar.validation import (
    boundary_exponent,
    free_expansion_config,
    free_expansion_errors,
    lane_emden_closed_form,
    observed_orders,
    temporal_study,
)

pytestmark = pytest.mark.acceptance

RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
    RESULTS[n] = line
    print(line)
    return ok


class timed:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# ---------------------------------------------------------------- cached runs

PERTURBED = SimulationConfig(gamma=5.0 / 3.0, A=1.0, mu=1.0, n_cells=200, dt=1e-4, t_end=0.1,
                             hubble_perturbation=1e-3, output_every=5)


@functools.lru_cache(maxsize=None)
def hydrostatic_run(n_cells: int):
    cfg = SimulationConfig(gamma=5.0 / 3.0, A=1.0, mu=1.0, n_cells=n_cells, dt=1e-4, t_end=0.1,
                           output_every=50)
    sink = MemorySink()
    with timed() as tm:
        res = run(cfg, sink=sink)
    return res, sink, tm.elapsed


@functools.lru_cache(maxsize=None)
def free_expansion_run(dt: float):
    cfg = free_expansion_config(dt=dt)
    sink = MemorySink()
    with timed() as tm:
        res = run(cfg, sink=sink)
    return res, sink, tm.elapsed


@functools.lru_cache(maxsize=None)
def perturbed_run(iterate_energies: bool = False, picard_tol: float = 1e-10):
    cfg = replace(PERTURBED, iterate_energies=iterate_energies, picard_tol=picard_tol)
    sink = MemorySink()
    with timed() as tm:
        res = run(cfg, sink=sink, energies=iterate_energies or picard_tol == 1e-10)
    return res, sink, tm.elapsed


def audited_runs():
    """Every integration used by criteria 3, 4, 7 and 8."""
    runs = [hydrostatic_run(200), hydrostatic_run(400)]
    runs += [free_expansion_run(dt) for dt in (4e-3, 2e-3, 1e-3)]
    runs += [perturbed_run(False, 1e-10), perturbed_run(True), perturbed_run(False, 1e-8)]
    return runs


# ---------------------------------------------------------------- criteria

def test_01_lane_emden_closed_forms():
    with timed() as tm:
        p1 = lane_emden_solve(PolytropeConfig(2.0, 1.0, 1.0), xi_max=4.0)
        err1 = float(np.max(np.abs(p1.theta - lane_emden_closed_form(1, p1.xi))))
        dxi1 = abs(p1.xi1 - math.pi)
        p5 = lane_emden_solve(PolytropeConfig(1.2, 1.0, 1.0), xi_max=20.0)
        err5 = float(np.max(np.abs(p5.theta - lane_emden_closed_form(5, p5.xi))))
    ok = err1 <= 1e-8 and dxi1 <= 1e-6 and err5 <= 1e-8 and p5.xi[-1] >= 20.0 and tm.elapsed < 1.0
    assert report(1, ok, f"n=1 sup err {err1:.2e}, |xi1-pi| {dxi1:.2e}, n=5 sup err {err5:.2e}, "
                         f"{tm.elapsed:.2f} s")


def test_02_stationary_vacuum_exponents():
    worst = 0.0
    parts = []
    with timed() as tm:
        for gamma in (1.4, 5.0 / 3.0, 1.9):
            prof = stationary_star(gamma, 1.0)
            eul, lag = stationary_exponents(prof, n_samples=800)
            grid = boundary_exponent(from_profile(prof, 800, "radial"))
            errs = (abs(eul * (gamma - 1.0) - 1.0), abs(lag * gamma - 1.0), abs(grid * gamma - 1.0))
            worst = max(worst, *errs)
            parts.append(f"g={gamma:.3g}: {eul:.4f}/{lag:.4f}/{grid:.4f}")
    ok = worst <= 0.05 and tm.elapsed < 5.0
    assert report(2, ok, f"eul/lag/grid {'; '.join(parts)}; worst rel err {worst:.3f}, "
                         f"{tm.elapsed:.2f} s")


def test_03_hydrostatic_preservation():
    r200, _, t200 = hydrostatic_run(200)
    r400, _, t400 = hydrostatic_run(400)
    ratio = r400.sup_u / r200.sup_u
    ok = r200.ok and r400.ok and ratio <= 1.0 / 3.0 and t200 + t400 < 60.0
    assert report(3, ok, f"sup|u| N=200 {r200.sup_u:.3e}, N=400 {r400.sup_u:.3e}, ratio "
                         f"{ratio:.3f}, {t200 + t400:.1f} s")


def test_04_free_expansion():
    res, _, tm = free_expansion_run(1e-3)
    errs = free_expansion_errors(res, 0.1)
    with timed() as tt:
        study = temporal_study(free_expansion_config(), [4e-3, 2e-3, 1e-3])
    orders = study.orders["rho"] + study.orders["r"]
    ok = (res.ok and abs(res.final_state.t - 0.5) < 1e-12 and errs["rho"] <= 1e-4
          and errs["r"] <= 1e-4 and min(orders) >= 0.9 and tm + tt.elapsed < 30.0)
    assert report(4, ok, f"rel err rho {errs['rho']:.2e}, r {errs['r']:.2e}; dt orders "
                         f"{', '.join(f'{o:.2f}' for o in orders)}; {tm + tt.elapsed:.1f} s")


def test_05_mass_conservation():
    worst = 0.0
    for res, sink, _ in audited_runs():
        worst = max(worst, res.max_mass_residual)
        for st in sink.snapshots:
            worst = max(worst, abs(eulerian_mass(st) - 1.0))
        for row in res.rows:
            worst = max(worst, row["mass_residual"])
    assert report(5, worst <= 1e-6, f"max |mass - 1| over all runs and outputs {worst:.2e}")


def test_06_unconditional_dissipation():
    rng = np.random.default_rng(2024)
    increases, worst, total = 0, -math.inf, 0.0
    for dt in (1e-2, 1e-1, 1.0):
        cfg = SimulationConfig(n_cells=64, dt=dt, gravity_on=False, pressure_on=False,
                               initial="uniform_ball")
        state = initial_state(cfg)
        rn = state.r_nodes / state.R
        u = sum(rng.normal() * np.sin(k * np.pi * rn) / k**2 for k in range(1, 6))
        state = state.with_fields(u_nodes=0.1 * u)
        prev = mass_norm(state.u_nodes, state.dx)
        with timed() as tm:
            for _ in range(10_000):
                state, _ = picard_step(state, cfg, dt)
                cur = mass_norm(state.u_nodes, state.dx)
                if cur > prev:
                    increases += 1
                    worst = max(worst, cur - prev)
                prev = cur
        total += tm.elapsed
    ok = increases == 0 and total < 30.0
    assert report(6, ok, f"{increases} norm increases over 3 x 10^4 steps, {total:.1f} s")


def test_07_energy_boundedness():
    res, sink, tm = perturbed_run(False, 1e-10)
    E = res.column("E")
    mon = energy_inequality_monitor(res.column("t"), E, res.column("D"))
    ratio = float(np.max(E) / E[0])
    ok = res.ok and ratio <= 2.0 and mon.feasible and mon.violation_fraction <= 0.05 and tm < 60
    assert report(7, ok, f"max E/E0 {ratio:.4f}; monitor feasible={mon.feasible} C1={mon.C1:.3g} "
                         f"C2={mon.C2:.3g} violations {mon.violation_fraction:.1%}; {tm:.1f} s")


def test_08_picard_behaviour():
    res, _, t_iter = perturbed_run(True)
    fine, _, t_fine = perturbed_run(False, 1e-10)
    loose, _, t_loose = perturbed_run(False, 1e-8)
    a, b = fine.final_state, loose.final_state
    diff = max(float(np.max(np.abs(a.u_nodes - b.u_nodes))),
               float(np.max(np.abs(a.rho_cells - b.rho_cells) / a.rho_cells)))
    ratios = [r for s in res.step_reports for r in s.contraction_ratios]
    ok = (res.ok and fine.ok and loose.ok and res.max_F_ratio <= 2.0 and res.max_H_ratio <= 2.0
          and all(r < 1.0 for r in ratios) and diff <= 1e-6 and t_iter + t_loose + t_fine < 120)
    assert report(8, ok, f"max F {res.max_F_ratio:.6f}, H {res.max_H_ratio:.6f} x iterate 0; "
                         f"max contraction {max(ratios, default=0):.3g}; tol 1e-8 vs 1e-10 "
                         f"sup diff {diff:.2e}; {t_iter + t_loose + t_fine:.1f} s")


def test_09_rt_margin_and_boundary_residual():
    rt = min(r.min_rt_margin for r, _, _ in audited_runs())
    bc = max(r.max_bc_ratio for r, _, _ in audited_runs())
    ok = rt >= -1e-12 and bc <= 10 * LINEAR_TOL
    assert report(9, ok, f"min rt margin {rt:.2e}; max bc residual / pressure scale {bc:.2e} "
                         f"(bound {10 * LINEAR_TOL:.0e})")


def test_10_pressure_form_identity():
    prof = stationary_star(5.0 / 3.0, 1.0)
    ns = [100, 200, 400]
    res = []
    for n in ns:
        st = from_profile(prof, n, "radial")
        res.append(pressure_form_residual(st, build_cutoffs(st), prof.config))
    orders = observed_orders(ns, res)
    ok = all(o >= 1.8 for o in orders)
    assert report(10, ok, f"residuals {', '.join(f'{r:.2e}' for r in res)}; orders "
                          f"{', '.join(f'{o:.2f}' for o in orders)}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))

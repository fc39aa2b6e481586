import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from viscstar.energy import (
    SMOOTHSTEP_SLOPE,
    EnergyEvaluator,
    Physics,
    build_cutoffs,
    cell_second_derivative,
    default_anchors,
    derivative_from_rates,
    dissipation,
    energy_inequality_monitor,
    energy_lagrangian,
    k_ledger_and_M,
    node_average,
    node_gradient,
    node_third_derivative,
    pressure_form_residual,
    rt_inequality_check,
    separated_energies,
    smoothstep,
    smoothstep_d1,
    spline_view,
    time_derivatives,
    weaving_ratio,
)
from viscstar.errors import AnchorsViolateCondr, SeriesTooShort
from viscstar.lagrangian import from_profile, mass_grid, uniform_ball
from viscstar.polytrope import PolytropeConfig, stationary_star
from viscstar.stepper import SimulationConfig, picard_step

GAMMA = 5.0 / 3.0
CFG = PolytropeConfig(GAMMA)
PHYS = Physics(CFG, 1.0)


@pytest.fixture(scope="module")
def star():
    return stationary_star(GAMMA)


@pytest.fixture(scope="module")
def state(star):
    return from_profile(star, 120, "radial")


@pytest.fixture(scope="module")
def cut(state):
    return build_cutoffs(state)


@st.composite
def smooth_velocity(draw, r):
    coef = draw(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=3, max_size=3))
    rn = r / r[-1]
    u = sum(c * np.sin((k + 1) * np.pi * rn / 2) for k, c in enumerate(coef))
    return np.asarray(u)


# ---------------------------------------------------------------- cutoffs

@settings(max_examples=50)
@given(st.floats(min_value=-0.5, max_value=1.5, allow_nan=False))
def test_smoothstep_bounds(t):
    s = smoothstep(t)
    assert 0.0 <= s <= 1.0
    assert 0.0 <= smoothstep_d1(t) <= SMOOTHSTEP_SLOPE + 1e-15


def test_smoothstep_endpoints():
    assert smoothstep(0.0) == 0.0 and smoothstep(1.0) == 1.0
    assert smoothstep_d1(0.0) == 0.0 and smoothstep_d1(1.0) == 0.0
    assert smoothstep(0.5) == pytest.approx(0.5)


def test_default_anchors_and_constraints(state, cut):
    x0, x1, x2 = default_anchors(state)
    assert 0 < x0 < x1 < x2 < 1
    assert x0 == pytest.approx(0.5 * x1) and x2 == pytest.approx(0.5 * (1 + x1))
    assert 2 * cut.d < cut.r0 and 3 * cut.d < cut.r2 - cut.r1
    assert cut.zeta_end <= state.R
    # unit-mass stars have R ~ 1, so 1/(r0 - d) <= 1 cannot hold
    assert not cut.unit_clause_ok


def test_cutoffs_cover_the_star(state, cut):
    x = np.linspace(0.0, 1.0, 2001)
    from viscstar.lagrangian import radius_of_mass
    total = cut.chi(x) + cut.zeta(radius_of_mass(state, x))
    assert np.all(total >= 1.0 - 1e-14)


def test_cutoff_slope_bounds(cut):
    x = np.linspace(0, 1, 4001)
    assert np.max(np.abs(cut.chi_d1(x))) <= cut.chi_slope_bound * (1 + 1e-12)
    r = np.linspace(0, cut.r2, 4001)
    assert np.max(np.abs(cut.zeta_d1(r))) <= cut.zeta_slope_bound * (1 + 1e-12)


def test_anchor_violations(state):
    with pytest.raises(AnchorsViolateCondr, match="0 < x0 < x1 < x2 < 1"):
        build_cutoffs(state, 0.3, 0.2, 0.9)
    with pytest.raises(AnchorsViolateCondr, match="2d < r0"):
        build_cutoffs(state, 0.01, 0.3, 0.6, d=0.2)
    with pytest.raises(AnchorsViolateCondr, match=r"1/\(r0 - d\)"):
        build_cutoffs(state, strict=True)


# ---------------------------------------------------------------- stencils

def test_derivative_from_rates_is_exact_on_polynomials():
    times = [0.3, 0.2, 0.05]
    rates = [np.array([t**2]) for t in times]  # f' = t^2
    assert derivative_from_rates(times, rates, 1)[0] == pytest.approx(0.09)
    assert derivative_from_rates(times, rates, 2)[0] == pytest.approx(0.5, rel=1e-12)  # 2 g[t0,t1]
    assert derivative_from_rates(times, rates, 3)[0] == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        derivative_from_rates(times, rates, 4)


@pytest.mark.parametrize("grading", ["uniform", "boundary_graded"])
def test_stencils_second_order(grading):
    errs = []
    for n in (40, 80, 160):
        x = mass_grid(n, grading)
        xc = 0.5 * (x[1:] + x[:-1])
        f = np.cos(3 * xc)
        g = node_gradient(x, f, boundary_value=math.cos(3.0))
        d2 = cell_second_derivative(x, f, boundary_value=math.cos(3.0))
        e1 = np.max(np.abs(g[1:-1] + 3 * np.sin(3 * x[1:-1])))
        e2 = np.max(np.abs(d2[1:-1] + 9 * np.cos(3 * xc[1:-1])))
        errs.append((e1, e2))
    for k in range(2):
        order = math.log2(errs[1][k] / errs[2][k])
        # non-uniform three-point second derivative is first order
        assert order > (1.9 if grading == "uniform" or k == 0 else 0.9)


def test_third_derivative_of_cubic():
    x = mass_grid(50)
    xc = 0.5 * (x[1:] + x[:-1])
    g = node_third_derivative(x, xc**3, boundary_value=1.0)
    np.testing.assert_allclose(g[2:-2], 6.0, rtol=1e-6)
    # the last node sees the half-spacing face ghost and is only first order
    assert np.isfinite(g[-2])
    assert np.isnan(g[0]) and np.isnan(g[1]) and np.isnan(g[-1])


def test_node_average_vacuum_value():
    out = node_average(np.array([4.0, 2.0]))
    np.testing.assert_array_equal(out, [4.0, 3.0, 1.0])


# ---------------------------------------------------------------- energies

def test_hubble_ball_density_rate():
    s = uniform_ball(30)
    s = s.with_fields(u_nodes=0.2 * s.r_nodes)
    phys = Physics(CFG, 1.0, gravity=False, pressure=False)
    d = time_derivatives(s, phys, max_order=1)
    np.testing.assert_allclose(d.rho[1], -0.6 * s.rho_cells, rtol=1e-12)
    assert np.all(np.isfinite(d.u[1]))


def test_hubble_flow_viscous_force_vanishes_under_refinement():
    phys = Physics(CFG, 1.0, gravity=False, pressure=False)
    mid = []
    for n in (40, 80, 160):
        s = uniform_ball(n)
        s = s.with_fields(u_nodes=0.3 * s.r_nodes)
        mid.append(abs(time_derivatives(s, phys, max_order=1).u[1][n // 2]))
        # the face row carries the unbalanced viscous flux mu c through x = 1
        assert time_derivatives(s, phys, max_order=1).u[1][-1] < 0
    assert math.log2(mid[0] / mid[1]) > 1.9 and math.log2(mid[1] / mid[2]) > 1.9


def test_absent_terms_without_history(state, cut):
    br = energy_lagrangian(state, cut, PHYS)
    # one level: first time derivatives come from the equations, higher ones are absent
    assert set(br.absent) == {"dt_u_2", "dt_u_3", "viscous_2", "rho_x_2"}
    assert "dt_u_1" in br.terms and "rho_xx_1" in br.terms
    assert br.total > 0 and all(math.isfinite(v) for v in br.terms.values())


def test_history_fills_all_orders(state, cut):
    cfg = SimulationConfig(n_cells=120, dt=1e-4, hubble_perturbation=1e-3)
    s = state.with_fields(u_nodes=1e-3 * state.r_nodes)
    for _ in range(3):
        s, _ = picard_step(s, cfg)
    br = energy_lagrangian(s, cut, PHYS)
    assert br.absent == []
    assert {"dt_u_3", "rho_x_2", "rho_xx_1", "rho_xxx"} <= set(br.terms)


@settings(max_examples=20, deadline=None)
@given(st.data())
def test_dissipation_nonnegative_and_ledger_finite(state, cut, data):
    u = data.draw(smooth_velocity(state.r_nodes))
    u[0] = 0.0
    s = state.with_fields(u_nodes=u)
    view = spline_view(s.level(), np.linspace(0, cut.zeta_end, 200))
    D = dissipation(s, view, cut, PHYS)
    assert D.total >= 0 and all(v >= 0 for v in D.terms.values())
    led, M = k_ledger_and_M(s, view, cut, PHYS)
    assert all(math.isfinite(v) and v >= 0 for v in led.values())
    assert M >= 0


@settings(max_examples=60, deadline=None)
@given(st.data(), st.floats(min_value=0.2, max_value=3.0))
def test_rt_margin_nonnegative(state, data, scale):
    u = data.draw(smooth_velocity(state.r_nodes))
    u[0] = 0.0
    noise = data.draw(st.lists(st.floats(0.5, 2.0), min_size=state.n_cells,
                               max_size=state.n_cells))
    s = state.with_fields(u_nodes=scale * u, rho_cells=state.rho_cells * np.array(noise))
    chk = rt_inequality_check(s)
    assert chk["margin"] >= -1e-12 * max(1.0, chk["rhs"])
    assert np.all(chk["field"] >= -1e-12 * np.abs(chk["field"]).max())


def test_rt_hubble_flow_approaches_equality():
    rel = []
    for n in (40, 80, 160):
        s = uniform_ball(n)
        chk = rt_inequality_check(s.with_fields(u_nodes=0.3 * s.r_nodes))
        assert chk["margin"] >= 0
        rel.append(chk["margin"] / chk["rhs"])
    assert rel[0] < 1e-2 and math.log2(rel[1] / rel[2]) > 0.95


def test_pressure_form_second_order(star):
    res = []
    for n in (100, 200, 400):
        s = from_profile(star, n, "radial")
        res.append(pressure_form_residual(s, build_cutoffs(s), CFG))
    assert math.log2(res[0] / res[1]) > 1.8 and math.log2(res[1] / res[2]) > 1.8


def test_report_and_separated_energies(state, cut):
    ev = EnergyEvaluator(cut, PHYS)
    s = state.with_fields(u_nodes=1e-3 * state.r_nodes)
    rep = ev.report(s)
    d = rep.to_dict()
    assert d["E"] == pytest.approx(rep.E_L.total + rep.E_E.total)
    assert rep.K == max(rep.K_ledger.values())
    F, H = separated_energies(s, cut, PHYS, max_order=1, eulerian_order=0)
    assert F > 0 and H > 0
    F2, H2 = ev.picard_hook(s)(s, None, None)
    assert (F2, H2) == pytest.approx((F, H))


def test_weaving_ratio():
    assert weaving_ratio(2.0, 1.0) == pytest.approx(1.0)
    assert math.isinf(weaving_ratio(1.0, 0.0))


# ---------------------------------------------------------------- energy inequality monitor

def test_monitor_recovers_growth_rate():
    t = np.linspace(0, 1, 201)
    c = 0.7
    E = np.exp(c * t)
    rep = energy_inequality_monitor(t, E, np.zeros_like(t))
    assert rep.feasible and rep.violation_fraction == 0.0
    assert rep.C1 == pytest.approx(c, rel=1e-4)
    assert rep.C2 == pytest.approx(0.0, abs=1e-6)


def test_monitor_decaying_series_needs_no_constants():
    t = np.linspace(0, 1, 50)
    E = np.exp(-t)
    rep = energy_inequality_monitor(t, E, 0.5 * E)
    assert rep.feasible and rep.C1 == 0.0 and rep.C2 == 0.0


def test_monitor_needs_samples():
    with pytest.raises(SeriesTooShort):
        energy_inequality_monitor(np.arange(5.0), np.ones(5), np.zeros(5))

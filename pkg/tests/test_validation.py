import math

import numpy as np
import pytest

from viscstar.errors import UnknownChoice
from viscstar.lagrangian import from_profile
from viscstar.polytrope import stationary_star
from viscstar.stepper import SimulationConfig, run
from viscstar.validation import (
    ConvergenceStudy,
    bc_residual,
    boundary_exponent,
    convergence_driver,
    free_expansion_config,
    free_expansion_errors,
    hydrostatic_shooting_oracle,
    lane_emden_closed_form,
    lane_emden_reference,
    mms_problem,
    mms_study,
    mms_unsteady_error,
    observed_orders,
    vacuum_exponent_track,
)


def test_closed_forms():
    xi = np.linspace(0, 2, 5)
    np.testing.assert_allclose(lane_emden_closed_form(0, xi), 1 - xi**2 / 6)
    assert lane_emden_closed_form(1, 0.0) == 1.0
    assert lane_emden_closed_form(5.0000000001, 0.0) == 1.0
    with pytest.raises(ValueError):
        lane_emden_closed_form(2, xi)


def test_reference_integrator_against_closed_form():
    sol, xi1 = lane_emden_reference(1.0, 4.0)
    assert xi1 == pytest.approx(math.pi, abs=1e-9)
    xi = np.linspace(0.1, 3.0, 30)
    np.testing.assert_allclose(sol.sol(xi)[0], np.sin(xi) / xi, atol=1e-10)


def test_shooting_oracle_agrees_with_lane_emden_path():
    rho_c, R = hydrostatic_shooting_oracle(5.0 / 3.0)
    prof = stationary_star(5.0 / 3.0)
    assert rho_c == pytest.approx(prof.central_density, rel=1e-7)
    assert R == pytest.approx(prof.radius, rel=1e-7)


def test_observed_orders():
    assert observed_orders([10, 20, 40], [1.0, 0.25, 0.0625]) == pytest.approx([2.0, 2.0])
    assert math.isnan(observed_orders([1, 2], [0.0, 0.0])[0])


def test_study_validation():
    with pytest.raises(ValueError):
        ConvergenceStudy("x", [20, 10])
    st = ConvergenceStudy("x", [10, 20])
    with pytest.raises(ValueError):
        st.add("e", [1.0, math.nan])
    st.add("e", [1.0, 0.5])
    assert st.rows() == [{"N": 10, "e": 1.0}, {"N": 20, "e": 0.5}]
    assert st.min_order("e") == pytest.approx(1.0)


def test_mms_smooth_second_order():
    st = mms_study("smooth", [50, 100, 200])
    assert st.min_order("u_sup") > 1.9


def test_mms_degenerate_second_order_on_graded_grid():
    st = mms_study("degenerate", [50, 100, 200])
    assert st.extra["grading"] == "boundary_graded"
    assert st.min_order("u_sup") > 1.8


def test_mms_unsteady_first_order_in_time():
    prob = mms_problem("smooth")
    errs = [mms_unsteady_error(prob, 200, dt, t_end=0.2) for dt in (0.04, 0.02, 0.01)]
    orders = observed_orders([5, 10, 20], errs)
    assert min(orders) > 0.85


def test_mms_unknown_choice():
    with pytest.raises(UnknownChoice):
        mms_problem("wiggly")


def test_free_expansion_short():
    cfg = free_expansion_config(n_cells=100, t_end=0.1, dt=1e-3)
    res = run(cfg, energies=False)
    errs = free_expansion_errors(res, 0.1)
    assert errs["rho"] < 1e-5 and errs["r"] < 1e-5


def test_convergence_driver_stationary():
    cfg = SimulationConfig(n_cells=40, dt=1e-3, t_end=0.01, output_every=5)
    st = convergence_driver(cfg, [40, 80, 160])
    assert all(a is None for a in st.extra["aborts"])
    assert st.min_order("sup_u") > 1.7
    with pytest.raises(UnknownChoice):
        convergence_driver(cfg, [40, 80, 160], oracle="moon")
    with pytest.raises(ValueError):
        convergence_driver(cfg, [40, 80])


def test_bc_residual_on_stationary_state():
    prof = stationary_star(5.0 / 3.0)
    st = from_profile(prof, 200, "radial")
    res = bc_residual(st, prof.config)
    # at rest only the extrapolated face pressure remains, below the last cell's
    assert 0.0 <= res["face_relative"] < 1.0
    assert res["implied"] < 1.0
    assert res["pressure_scale"] > 0


def test_boundary_exponent_and_track():
    prof = stationary_star(5.0 / 3.0)
    st = from_profile(prof, 400, "radial")
    k = boundary_exponent(st)
    assert k == pytest.approx(0.6, rel=0.05)
    track = vacuum_exponent_track([st, st.with_fields(t=1.0)])
    assert [t for t, _ in track] == [0.0, 1.0]
    with pytest.raises(ValueError):
        boundary_exponent(st, n_fit=4)

from dataclasses import replace

import numpy as np
import pytest

from viscstar.errors import DtUnderflow, NonFinite
from viscstar.lagrangian import eulerian_mass
from viscstar.stepper import (
    ALL_COLUMNS,
    MemorySink,
    SimulationConfig,
    dt_controller,
    initial_state,
    picard_step,
    run,
)

SHORT = SimulationConfig(n_cells=60, dt=1e-4, t_end=2e-3, hubble_perturbation=1e-3,
                         output_every=5)


@pytest.mark.parametrize("kw", [dict(n_cells=8), dict(dt=0.0), dict(grading="spiral"),
                                dict(initial="cube"), dict(picard_max=0), dict(x0=0.1),
                                dict(x0=0.5, x1=0.4, x2=0.9), dict(picard_tol=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimulationConfig(**kw)


def test_config_echo_roundtrip():
    cfg = SimulationConfig(gamma=1.5, mu=0.3)
    assert SimulationConfig(**cfg.to_dict()) == cfg


def test_picard_step_converges_and_conserves_mass():
    st = initial_state(SHORT)
    new, rep = picard_step(st, SHORT)
    assert rep.accepted and rep.picard_iters <= 5
    assert rep.changes[-1] <= SHORT.picard_tol
    assert all(r < 1 for r in rep.contraction_ratios)
    assert abs(eulerian_mass(new) - 1.0) < 1e-13
    assert new.t == pytest.approx(SHORT.dt)
    assert len(new.history) == 1


def test_density_update_stays_positive():
    st = initial_state(SHORT)
    st = st.with_fields(u_nodes=0.5 * st.r_nodes)
    new, _ = picard_step(st, replace(SHORT, gravity_on=False, pressure_on=False), dt=1e-2)
    assert np.all(new.rho_cells > 0)


def test_run_collects_rows_and_snapshots():
    sink = MemorySink()
    res = run(SHORT, sink=sink)
    assert res.ok and res.n_steps == 20
    assert res.final_state.t == pytest.approx(SHORT.t_end)
    assert len(res.rows) == 1 + 20 // 5
    assert set(res.rows[0]) == set(ALL_COLUMNS)
    assert len(sink.snapshots) == 2 and sink.snapshots[0].t == 0.0
    assert res.min_rt_margin >= -1e-12 and res.max_bc_ratio < 1e-11
    assert res.max_mass_residual < 1e-12
    summary = res.summary()
    assert summary["status"] == "ok" and summary["n_outputs"] == len(res.rows)


def test_run_is_deterministic():
    a, b = run(SHORT), run(SHORT)
    np.testing.assert_array_equal(a.final_state.u_nodes, b.final_state.u_nodes)
    # repr keeps nan == nan
    assert [repr(r) for r in a.rows] == [repr(r) for r in b.rows]


def test_zero_end_time_gives_single_output():
    res = run(replace(SHORT, t_end=0.0))
    assert res.ok and res.n_steps == 0 and len(res.rows) == 1


def test_stiff_star_with_large_dt_aborts_cleanly():
    # gamma = 1.4 packs rho_c ~ 8.5e4 into R ~ 0.09; dt = 1e-3 is far above its dynamical time
    res = run(SimulationConfig(gamma=1.4, n_cells=50, dt=1e-3, t_end=2e-3), energies=False)
    assert not res.ok and res.abort_kind == "NonFinite"
    assert "reduce dt" in res.abort_reason or "representable" in res.abort_reason


def test_adaptive_dt_reaches_end():
    cfg = replace(SHORT, adaptive_dt=True, dt=1e-5, dt_max=5e-4, t_end=3e-3)
    res = run(cfg, energies=False)
    assert res.ok
    assert res.final_state.t == pytest.approx(3e-3, rel=1e-12)
    dts = [r.dt for r in res.step_reports]
    assert dts[1] > dts[0]


def test_dt_controller():
    cfg = SimulationConfig(dt_min=1e-6)
    assert dt_controller(1e-3, cfg, None) == pytest.approx(1.2e-3)
    assert dt_controller(1e-3, cfg, None, diverged=True) == pytest.approx(5e-4)
    with pytest.raises(DtUnderflow):
        dt_controller(1.5e-6, cfg, None, diverged=True)


def test_uniform_ball_initial_data():
    st = initial_state(SimulationConfig(initial="uniform_ball", rho0=3.0, n_cells=32))
    np.testing.assert_allclose(st.rho_cells, 3.0)
    assert st.R == pytest.approx(1.0)


def test_predictor_range_error():
    st = initial_state(SHORT)
    st = st.with_fields(u_nodes=-1e6 * st.r_nodes)
    with pytest.raises(NonFinite):
        picard_step(st, SHORT, dt=1.0)

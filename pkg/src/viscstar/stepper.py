"""Time stepping by per-step Picard iteration.

Each step freezes (rho, r) at the current iterate, solves the implicit
momentum equation for u, updates the density along particle paths with the
exponential formula, rebuilds r, and repeats until the iterates stop moving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import momentum
from .errors import DtUnderflow, MonitorTripped, NonFinite, PicardDiverged, SingularSystem
from .energy import CutoffPair, EnergyEvaluator, Physics, build_cutoffs, rt_inequality_check
from .lagrangian import (
    LagrangianState,
    divergence,
    eulerian_mass,
    from_profile,
    radius_from_density,
    uniform_ball,
)
from .polytrope import PolytropeConfig, StationaryProfile, stationary_star

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationConfig:
    gamma: float = 5.0 / 3.0
    A: float = 1.0
    mu: float = 1.0
    n_cells: int = 200
    grading: str = "radial"
    grading_power: float = 2.0
    dt: float = 1e-4
    t_end: float = 0.1
    picard_tol: float = 1e-10
    picard_max: int = 30
    # cutoff anchors in mass coordinates; None = automatic placement
    x0: float | None = None
    x1: float | None = None
    x2: float | None = None
    d: float | None = None
    output_every: int = 10
    snapshot_every: int = 0
    gravity_on: bool = True
    pressure_on: bool = True
    viscosity_on: bool = True
    hubble_perturbation: float = 0.0
    adaptive_dt: bool = False
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    dt_growth: float = 1.2
    c_safety: float = 0.05
    M_cap: float = 1e3
    energy_blowup: float = 10.0
    iterate_energies: bool = False
    xi_step: float = 1e-3
    initial: str = "lane_emden"
    rho0: float = 3.0
    seed: int = 12345

    def __post_init__(self):
        PolytropeConfig(self.gamma, self.A, self.mu)
        if self.n_cells < 16:
            raise ValueError("n_cells must be >= 16")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.initial not in ("lane_emden", "uniform_ball"):
            raise ValueError(f"unknown initial data {self.initial!r}")
        if self.grading not in ("uniform", "boundary_graded", "radial"):
            raise ValueError(f"unknown grading {self.grading!r}")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        anchors = [a for a in (self.x0, self.x1, self.x2) if a is not None]
        if anchors and len(anchors) != 3:
            raise ValueError("give all of x0, x1, x2 or none")
        if anchors and not 0 < self.x0 < self.x1 < self.x2 < 1:
            raise ValueError("anchors must satisfy 0 < x0 < x1 < x2 < 1")

    @property
    def polytrope(self) -> PolytropeConfig:
        return PolytropeConfig(self.gamma, self.A, self.mu)

    @property
    def mu_eff(self) -> float:
        return self.mu if self.viscosity_on else 0.0

    @property
    def physics(self) -> Physics:
        return Physics(self.polytrope, self.mu_eff, gravity=self.gravity_on,
                       pressure=self.pressure_on)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepReport:
    picard_iters: int = 0
    changes: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    M_iterates: list = field(default_factory=list)
    F_energy: list = field(default_factory=list)
    H_energy: list = field(default_factory=list)
    linear_residual: float = 0.0
    diagonally_dominant: bool = True
    dt: float = 0.0
    accepted: bool = False
    reason: str = ""

    @property
    def M(self) -> float:
        return self.M_iterates[-1] if self.M_iterates else 0.0


def initial_state(config: SimulationConfig,
                  profile: StationaryProfile | None = None) -> LagrangianState:
    """Lane-Emden star (or a constant-density ball) at rest, plus the Hubble perturbation."""
    if config.initial == "uniform_ball":
        grading = "uniform" if config.grading == "radial" else config.grading
        state = uniform_ball(config.n_cells, config.rho0, grading=grading,
                             power=config.grading_power)
    else:
        if profile is None:
            profile = stationary_star(config.gamma, config.A, config.mu, step=config.xi_step)
        state = from_profile(profile, config.n_cells, config.grading, config.grading_power)
    if config.hubble_perturbation:
        state = state.with_fields(u_nodes=state.u_nodes + config.hubble_perturbation * state.r_nodes)
    return state


def _predictor(state: LagrangianState, dt: float):
    """Starting iterate: density advanced with the current divergence, velocity
    linearly extrapolated from the newest history level."""
    u = state.u_nodes
    if state.history:
        prev = state.history[0]
        u = u + (u - prev.u) * (dt / (state.t - prev.t))
    div = divergence(state.dx, state.rho_cells, state.r_nodes, state.u_nodes)
    with np.errstate(over="ignore", under="ignore"):
        rho = state.rho_cells * np.exp(-dt * div)
    if not (np.all(np.isfinite(rho)) and np.all(rho > 0)):
        raise NonFinite("density predictor left the representable range; reduce dt")
    return rho, radius_from_density(state.dx, rho), u


def _coefficients(rho, r, x, config: SimulationConfig):
    return momentum.freeze(rho, r, x, config.polytrope, pressure=config.pressure_on,
                           gravity=config.gravity_on)


def picard_step(state: LagrangianState, config: SimulationConfig, dt: float | None = None,
                tol: float | None = None, energy_hook=None):
    """Advance one step; returns (new_state, StepReport).

    ``energy_hook(candidate_state, coeff_rho, coeff_r)`` returns (F, H) for a
    candidate level; it is called for the committed state (iterate 0) and every
    iterate when given.
    """
    dt = config.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    tol = config.picard_tol if tol is None else tol
    mu = config.mu_eff
    x, dx = state.x_nodes, state.dx
    rho_old, u_old = state.rho_cells, state.u_nodes
    rho_k, r_k, u_k = _predictor(state, dt)
    report = StepReport(dt=dt)
    if energy_hook is not None:
        F0, H0 = energy_hook(state, None, None)
        report.F_energy.append(F0)
        report.H_energy.append(H0)
    bad = 0
    for k in range(config.picard_max):
        coeffs = _coefficients(rho_k, r_k, x, config)
        u_new, srep = momentum.solve(coeffs, u_old, dt, mu)
        div = divergence(dx, rho_k, r_k, u_new)
        with np.errstate(over="ignore", under="ignore"):
            rho_new = rho_old * np.exp(-dt * div)
        if not (np.all(np.isfinite(rho_new)) and np.all(rho_new > 0)):
            raise NonFinite("density left the representable range in a Picard iterate")
        r_new = radius_from_density(dx, rho_new)
        change = float(np.max(np.abs(u_new - u_k)) + np.max(np.abs(rho_new - rho_k) / rho_k))
        report.changes.append(change)
        report.M_iterates.append(float(np.max(np.abs(div))))
        report.linear_residual = srep.residual
        report.diagonally_dominant = srep.diagonally_dominant
        if len(report.changes) > 1:
            prev = report.changes[-2]
            ratio = change / prev if prev > 0 else 0.0
            report.contraction_ratios.append(ratio)
            bad = bad + 1 if ratio > 1.0 else 0
        rho_k, r_k, u_k = rho_new, r_new, u_new
        report.picard_iters = k + 1
        if energy_hook is not None:
            cand = state.advanced(rho_new, u_new, r_new, state.t + dt)
            F, H = energy_hook(cand, coeffs.rho_cells, coeffs.r_nodes)
            report.F_energy.append(F)
            report.H_energy.append(H)
        if change <= tol:
            report.accepted = True
            break
        if bad >= 3:
            report.reason = "contraction ratio above 1 for 3 consecutive iterates"
            raise PicardDiverged(report.reason)
    if not report.accepted:
        report.reason = f"no convergence in {config.picard_max} iterates"
        raise PicardDiverged(report.reason)
    new_state = state.advanced(rho_k, u_k, r_k, state.t + dt)
    return new_state, report


def dt_controller(dt: float, config: SimulationConfig, last_report: StepReport | None,
                  diverged: bool = False) -> float:
    """dt_next = min(dt * growth, dt_max, c_safety / (1 + M)); halves after a divergence."""
    if diverged:
        nxt = 0.5 * dt
    else:
        M = last_report.M if last_report is not None else 0.0
        nxt = min(dt * config.dt_growth, config.dt_max, config.c_safety / (1.0 + M))
    if nxt < config.dt_min:
        raise DtUnderflow(f"dt={nxt:.3g} below dt_min={config.dt_min:.3g}")
    return nxt


SERIES_COLUMNS = ["t", "E_L", "E_E", "D", "M", "mass_residual", "bc_residual", "R",
                  "picard_iters"]
DIAGNOSTIC_COLUMNS = ["dt", "E", "K", "weaving_ratio", "rt_margin", "kinematic_residual",
                      "pressure_form_residual"]
E_L_TERMS = ["kinetic", "internal", "dt_u_1", "dt_u_2", "dt_u_3", "viscous_0", "viscous_1",
             "viscous_2", "rho_x_0", "rho_x_1", "rho_x_2", "rho_xx_0", "rho_xx_1", "rho_xxx"]
E_E_TERMS = [f"rho_{k}" for k in range(4)] + [f"u_{k}" for k in range(4)]
D_TERMS = [f"eulerian_{k}" for k in range(1, 5)] + [f"viscous_{j}" for j in range(4)] \
    + [f"dt_u_{j}" for j in range(1, 4)]
BREAKDOWN_COLUMNS = [f"E_L.{n}" for n in E_L_TERMS] + [f"E_E.{n}" for n in E_E_TERMS] \
    + [f"D.{n}" for n in D_TERMS]
ALL_COLUMNS = SERIES_COLUMNS + DIAGNOSTIC_COLUMNS + BREAKDOWN_COLUMNS


class NullSink:
    """Receives run output as it is produced; the default discards it."""

    def series(self, row: dict):
        pass

    def snapshot(self, index: int, state: LagrangianState):
        pass

    def audit(self, record: dict):
        pass


@dataclass
class RunResult:
    config: SimulationConfig
    cutoffs: CutoffPair | None
    rows: list = field(default_factory=list)
    step_reports: list = field(default_factory=list)
    final_state: LagrangianState | None = None
    abort_reason: str | None = None
    abort_kind: str | None = None
    n_steps: int = 0
    E0: float = math.nan
    max_E_ratio: float = 0.0
    min_rt_margin: float = math.inf
    max_bc_ratio: float = 0.0
    max_mass_residual: float = 0.0
    max_kinematic_residual: float = 0.0
    max_picard_iters: int = 0
    max_contraction_ratio: float = 0.0
    max_F_ratio: float = 0.0
    max_H_ratio: float = 0.0
    sup_u: float = 0.0
    n_snapshots: int = 0

    @property
    def ok(self) -> bool:
        return self.abort_reason is None

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def summary(self) -> dict:
        fs = self.final_state
        return {
            "status": "ok" if self.ok else "aborted",
            "abort_reason": self.abort_reason,
            "abort_kind": self.abort_kind,
            "n_steps": self.n_steps,
            "t_final": fs.t if fs is not None else None,
            "R_final": fs.R if fs is not None else None,
            # last committed time with every monitor green; stands in for an a-priori T*
            "safe_horizon": fs.t if fs is not None else 0.0,
            "E0": self.E0,
            "max_E_ratio": self.max_E_ratio,
            "min_rt_margin": self.min_rt_margin,
            "max_bc_residual": self.max_bc_ratio,
            "max_mass_residual": self.max_mass_residual,
            "max_kinematic_residual": self.max_kinematic_residual,
            "max_picard_iters": self.max_picard_iters,
            "max_contraction_ratio": self.max_contraction_ratio,
            "max_F_ratio": self.max_F_ratio,
            "max_H_ratio": self.max_H_ratio,
            "sup_u": self.sup_u,
            "n_outputs": len(self.rows),
            "n_snapshots": self.n_snapshots,
            "cutoffs": self.cutoffs.to_dict() if self.cutoffs is not None else None,
        }


def state_bc_residual(state: LagrangianState, config: SimulationConfig) -> float:
    """Relative boundary-flux residual of a committed state (see momentum.boundary_flux_residual)."""
    coeffs = _coefficients(state.rho_cells, state.r_nodes, state.x_nodes, config)
    if state.history:
        prev = state.history[0]
        res, scale = momentum.boundary_flux_residual(coeffs, state.u_nodes, config.mu_eff,
                                                     prev.u, state.t - prev.t)
    else:
        res, scale = momentum.boundary_flux_residual(coeffs, state.u_nodes, config.mu_eff)
    return res / scale if scale > 0 else 0.0


def _series_row(state, report, energy, config, bc, kin, step_report, dt) -> dict:
    row = {c: math.nan for c in ALL_COLUMNS}
    row.update(t=state.t, E_L=energy.E_L.total, E_E=energy.E_E.total, D=energy.D.total,
               M=energy.M, mass_residual=abs(eulerian_mass(state) - 1.0), bc_residual=bc,
               R=state.R, picard_iters=step_report.picard_iters if step_report else 0,
               dt=dt, E=energy.E, K=energy.K, weaving_ratio=energy.weaving_ratio,
               rt_margin=energy.rt["margin"], kinematic_residual=kin,
               pressure_form_residual=energy.pressure_form_residual)
    for prefix, br in (("E_L", energy.E_L), ("E_E", energy.E_E), ("D", energy.D)):
        for k, v in br.terms.items():
            row[f"{prefix}.{k}"] = v
    return row


def run(config: SimulationConfig, profile: StationaryProfile | None = None,
        state: LagrangianState | None = None, sink=None, audit: bool = False,
        cutoffs: CutoffPair | None = None, energies: bool = True) -> RunResult:
    """Integrate to ``config.t_end`` or until a monitor trips.

    Aborts (Picard divergence, dt underflow, non-finite values, energy
    blow-up, M above the cap) end the run with ``abort_reason`` set; all
    output produced so far stays in the result and the sink.
    """
    sink = sink if sink is not None else NullSink()
    if state is None:
        state = initial_state(config, profile)
    if cutoffs is None and energies:
        cutoffs = build_cutoffs(state, config.x0, config.x1, config.x2, config.d)
    result = RunResult(config=config, cutoffs=cutoffs)
    evaluator = EnergyEvaluator(cutoffs, config.physics) if energies else None

    def emit(st, step_report, dt, bc, kin):
        if evaluator is None:
            return None
        rep = evaluator.report(st)
        row = _series_row(st, step_report, rep, config, bc, kin, step_report, dt)
        result.rows.append(row)
        sink.series(row)
        if audit:
            sink.audit(rep.to_dict())
        return rep

    rep0 = emit(state, None, 0.0, state_bc_residual(state, config), 0.0)
    if rep0 is not None:
        result.E0 = rep0.E
        result.min_rt_margin = rep0.rt["margin"]
    result.max_mass_residual = abs(eulerian_mass(state) - 1.0)
    result.sup_u = float(np.max(np.abs(state.u_nodes)))
    sink.snapshot(0, state)
    result.n_snapshots = 1

    t_end = config.t_end
    dt = min(config.dt, config.dt_max) if config.adaptive_dt else config.dt
    n_fixed = int(round(t_end / config.dt)) if not config.adaptive_dt else None
    step = 0
    last_report = None
    try:
        while True:
            if n_fixed is not None:
                if step >= n_fixed:
                    break
            elif state.t >= t_end * (1 - 1e-12) or t_end == 0:
                break
            if config.adaptive_dt:
                dt = min(dt, t_end - state.t)
            hook = None
            if config.iterate_energies and evaluator is not None:
                hook = evaluator.picard_hook(state)
            try:
                new_state, srep = picard_step(state, config, dt=dt, energy_hook=hook)
            except PicardDiverged:
                if not config.adaptive_dt:
                    raise
                dt = dt_controller(dt, config, last_report, diverged=True)
                continue
            step += 1
            kin = abs((new_state.R - state.R) / dt - new_state.u_nodes[-1])
            bc = state_bc_residual(new_state, config)
            result.max_kinematic_residual = max(result.max_kinematic_residual, kin)
            result.max_bc_ratio = max(result.max_bc_ratio, bc)
            result.max_mass_residual = max(result.max_mass_residual,
                                           abs(eulerian_mass(new_state) - 1.0))
            result.min_rt_margin = min(result.min_rt_margin,
                                       rt_inequality_check(new_state, cutoffs)["margin"]
                                       if cutoffs is not None else
                                       rt_inequality_check(new_state)["margin"])
            result.max_picard_iters = max(result.max_picard_iters, srep.picard_iters)
            if srep.contraction_ratios:
                result.max_contraction_ratio = max(result.max_contraction_ratio,
                                                   max(srep.contraction_ratios))
            if srep.F_energy and srep.F_energy[0] > 0:
                result.max_F_ratio = max(result.max_F_ratio,
                                         max(srep.F_energy) / srep.F_energy[0])
            if srep.H_energy and srep.H_energy[0] > 0:
                result.max_H_ratio = max(result.max_H_ratio,
                                         max(srep.H_energy) / srep.H_energy[0])
            result.sup_u = max(result.sup_u, float(np.max(np.abs(new_state.u_nodes))))
            result.step_reports.append(srep)
            state = new_state
            result.final_state = state
            result.n_steps = step
            last_report = srep
            if srep.M > config.M_cap:
                raise MonitorTripped(f"M={srep.M:.6g} above M_cap={config.M_cap:.6g}")
            final = (n_fixed is not None and step >= n_fixed) or \
                (n_fixed is None and state.t >= t_end * (1 - 1e-12))
            if step % config.output_every == 0 or final:
                rep = emit(state, srep, dt, bc, kin)
                if rep is not None and result.E0 > 0:
                    ratio = rep.E / result.E0
                    result.max_E_ratio = max(result.max_E_ratio, ratio)
                    if not math.isfinite(rep.E):
                        raise NonFinite("non-finite energy")
                    if ratio > config.energy_blowup:
                        raise MonitorTripped(
                            f"energy {rep.E:.6g} above {config.energy_blowup:g} x E(0)")
            if config.snapshot_every and step % config.snapshot_every == 0:
                sink.snapshot(result.n_snapshots, state)
                result.n_snapshots += 1
            if config.adaptive_dt:
                dt = dt_controller(dt, config, srep)
    except (PicardDiverged, DtUnderflow, NonFinite, SingularSystem, MonitorTripped) as exc:
        result.abort_kind = type(exc).__name__
        result.abort_reason = str(exc)
        log.warning("run aborted at t=%.6g: %s", state.t, exc)
    result.final_state = state
    if result.n_steps > 0 and not (config.snapshot_every and
                                   result.n_steps % config.snapshot_every == 0):
        sink.snapshot(result.n_snapshots, state)
        result.n_snapshots += 1
    return result


class MemorySink(NullSink):
    """Keeps rows, snapshots and audit records in memory."""

    def __init__(self):
        self.rows, self.snapshots, self.audits = [], [], []

    def series(self, row):
        self.rows.append(row)

    def snapshot(self, index, state):
        self.snapshots.append(state)

    def audit(self, record):
        self.audits.append(record)

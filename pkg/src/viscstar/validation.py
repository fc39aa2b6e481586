"""Independent oracles and convergence studies.

Nothing here reuses the code path it checks: the Lane-Emden references are
scipy ODE integrations, the hydrostatic oracle shoots on the physical
equations directly, and manufactured sources are closed forms.

Manufactured solutions (frozen coefficients, forcing off).  The linear
momentum operator is

    L u = D_t u - mu D_x(a D_x u) + 2 mu u / (rho r^2),   a = rho r^4.

``smooth``:  rho = 1 + x/2, r = 1/2 + x, u = sin(pi x / 2) e^{-t}.  Then
a' = (1/2)(1/2 + x)^4 + 4 (1 + x/2)(1/2 + x)^3 and

    f = -u - mu (a' u_x + a u_xx) + 2 mu u / (rho r^2),

with u_x = (pi/2) cos(pi x/2) e^{-t}, u_xx = -(pi/2)^2 u.  The flux
a u_x vanishes at x = 1 because cos(pi/2) = 0.

``degenerate``:  rho = (1 - x)^{1/gamma} (1 + x), same r and u.  Now a
vanishes at x = 1 like (1 - x)^{1/gamma}, the flux is again zero there, and
the reaction term 2 mu u / (rho r^2) is integrable but unbounded.

The steady variants drop the time factor and the D_t u term.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import brentq

from . import momentum
from .errors import InsufficientPoints, UnknownChoice
from .lagrangian import LagrangianState, mass_grid
from .polytrope import PolytropeConfig, power_law_exponent

MMS_CHOICES = ("smooth", "degenerate")


# ---------------------------------------------------------------- Lane-Emden references

def lane_emden_closed_form(n: float, xi):
    """Closed-form solutions for n = 0, 1, 5."""
    xi = np.asarray(xi, dtype=float)
    n = round(n) if abs(n - round(n)) < 1e-9 else n
    if n == 0:
        return 1.0 - xi**2 / 6.0
    if n == 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(xi > 0, np.sin(xi) / np.where(xi > 0, xi, 1.0), 1.0)
    if n == 5:
        return 1.0 / np.sqrt(1.0 + xi**2 / 3.0)
    raise ValueError("closed forms exist for n = 0, 1, 5 only")


def lane_emden_reference(n: float, xi_max: float, xi_start: float = 1e-6):
    """High-accuracy DOP853 integration; returns (dense solution, first zero or None)."""
    def rhs(xi, y):
        th, ph = y
        return [ph, -np.sign(th) * abs(th) ** n - 2.0 * ph / xi]

    def zero(xi, y):
        return y[0]
    zero.terminal = True
    zero.direction = -1
    th0 = 1.0 - xi_start**2 / 6.0
    ph0 = -xi_start / 3.0
    sol = solve_ivp(rhs, (xi_start, xi_max), [th0, ph0], method="DOP853", rtol=1e-13,
                    atol=1e-15, dense_output=True, events=zero)
    xi1 = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    return sol, xi1


def hydrostatic_shooting_oracle(gamma: float, A: float = 1.0):
    """(rho_c, R) of the unit-mass star from the physical equations.

    Integrates dx/dr = rho r^2, dp/dr = -4 pi rho x / r^2 outward until the
    pressure vanishes and adjusts rho_c by root finding until x(R) = 1.
    """
    def shoot(rho_c):
        p_c = A * rho_c**gamma

        def rhs(r, y):
            x, p = y
            rho = (max(p, 0.0) / A) ** (1.0 / gamma)
            return [rho * r * r, -4.0 * np.pi * rho * x / (r * r)]

        def surface(r, y):
            return y[1] - 1e-14 * p_c
        surface.terminal = True
        r0 = 1e-6 * rho_c ** (-(gamma - 2.0) / 2.0) if gamma != 2 else 1e-6
        r0 = min(r0, 1e-4)
        y0 = [rho_c * r0**3 / 3.0, p_c - 2.0 * np.pi * rho_c**2 * r0**2 / 3.0]
        sol = solve_ivp(rhs, (r0, 1e3), y0, method="DOP853", rtol=1e-12, atol=1e-300,
                        events=surface)
        if not sol.t_events[0].size:
            return math.inf, math.inf
        r_e = float(sol.t_events[0][0])
        x_e, p_e = sol.y_events[0][0]
        # p ~ (R - r)^(n+1) near the surface: extrapolate the remaining gap
        dp = rhs(r_e, [x_e, p_e])[1]
        R = r_e + (1.0 / (gamma - 1.0) + 1.0) * p_e / abs(dp)
        return float(x_e), R

    f = lambda lrc: shoot(math.exp(lrc))[0] - 1.0
    lo, hi = -10.0, 20.0
    lrc = brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)
    rho_c = math.exp(lrc)
    return rho_c, shoot(rho_c)[1]


# ---------------------------------------------------------------- manufactured solutions

@dataclass(frozen=True)
class MMSProblem:
    choice: str
    rho: Callable
    r: Callable
    exact: Callable          # exact(t, x)
    source: Callable         # source(t, x) of the time-dependent problem
    steady_exact: Callable   # exact(x) of the steady problem
    steady_source: Callable
    mu: float = 1.0
    boundary_flux: float = 0.0
    grading: str = "uniform"

    def cell_density(self, x_nodes) -> np.ndarray:
        """Harmonic cell averages dx / int 1/rho, i.e. cell mass over cell volume."""
        vol = cell_integrals(lambda s: 1.0 / float(self.rho(s)), x_nodes)
        return np.diff(x_nodes) / vol

    def coefficients(self, x_nodes) -> momentum.FrozenCoefficients:
        rho = self.cell_density(x_nodes)
        r = self.r(x_nodes)
        zeros_c = np.zeros_like(rho)
        return momentum.FrozenCoefficients(x_nodes=x_nodes, rho_cells=rho, r_nodes=r,
                                           pressure_cells=zeros_c,
                                           gravity_nodes=np.zeros_like(r))


def mms_problem(choice: str, amplitude: float = 1.0, mu: float = 1.0,
                gamma: float = 5.0 / 3.0) -> MMSProblem:
    k = math.pi / 2.0
    if choice == "smooth":
        def rho(x):
            return 1.0 + 0.5 * np.asarray(x)

        def drho(x):
            return 0.5 + 0.0 * np.asarray(x)
    elif choice == "degenerate":
        g = 1.0 / gamma

        def rho(x):
            x = np.asarray(x)
            return (1.0 - x) ** g * (1.0 + x)

        def drho(x):
            x = np.asarray(x)
            return (1.0 - x) ** g - g * (1.0 - x) ** (g - 1.0) * (1.0 + x)
    else:
        raise UnknownChoice(f"unknown manufactured solution {choice!r}; choose from {MMS_CHOICES}")

    def r(x):
        return 0.5 + np.asarray(x, dtype=float)

    def steady_exact(x):
        return amplitude * np.sin(k * np.asarray(x, dtype=float))

    def steady_source(x):
        x = np.asarray(x, dtype=float)
        rr = r(x)
        a = rho(x) * rr**4
        da = drho(x) * rr**4 + 4.0 * rho(x) * rr**3
        u = amplitude * np.sin(k * x)
        ux = amplitude * k * np.cos(k * x)
        uxx = -k * k * u
        return -mu * (da * ux + a * uxx) + 2.0 * mu * u / (rho(x) * rr**2)

    def exact(t, x):
        return steady_exact(x) * math.exp(-t)

    def source(t, x):
        return (steady_source(x) - steady_exact(x)) * math.exp(-t)

    # the degenerate coefficient needs cells shrinking towards x = 1: on a
    # uniform grid the lumped reaction at the last node caps the order near 0.75
    grading = "boundary_graded" if choice == "degenerate" else "uniform"
    return MMSProblem(choice=choice, rho=rho, r=r, exact=exact, source=source,
                      steady_exact=steady_exact, steady_source=steady_source, mu=mu,
                      grading=grading)


def _quad(f, a, b) -> float:
    with warnings.catch_warnings():
        # endpoint singularities of the degenerate case trip QUADPACK's
        # round-off heuristic well below the tolerances that matter here
        warnings.simplefilter("ignore", IntegrationWarning)
        return quad(f, a, b, limit=200, epsabs=1e-15, epsrel=1e-13)[0]


def cell_integrals(f: Callable, x_nodes) -> np.ndarray:
    """integral of f over each mass cell."""
    return np.array([_quad(f, a, b) for a, b in zip(x_nodes[:-1], x_nodes[1:])])


def dual_cell_loads(f: Callable, x_nodes) -> np.ndarray:
    """integral of f over each dual cell [x_{i-1/2}, x_{i+1/2}] for nodes 1..N (adaptive quadrature)."""
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    lo = xc
    hi = np.append(xc[1:], x_nodes[-1])
    out = np.empty(lo.size)
    for i, (a, b) in enumerate(zip(lo, hi)):
        out[i] = _quad(lambda s: float(f(s)), a, b)
    return out


def mms_steady_error(problem: MMSProblem, n_cells: int, grading: str | None = None) -> float:
    """Sup-norm nodal error of the steady manufactured solve."""
    x = mass_grid(n_cells, grading or problem.grading)
    coeffs = problem.coefficients(x)
    src = dual_cell_loads(problem.steady_source, x)
    # the M/dt term vanishes relative to K at this dt, leaving K u = b
    u, _ = momentum.solve(coeffs, np.zeros(n_cells + 1), 1e30, problem.mu, source=src,
                          boundary_flux=problem.boundary_flux)
    return float(np.max(np.abs(u - problem.steady_exact(x))))


def mms_unsteady_error(problem: MMSProblem, n_cells: int, dt: float, t_end: float = 0.5) -> float:
    """Sup-norm error at t_end of implicit Euler with the time-dependent source."""
    x = mass_grid(n_cells, problem.grading)
    coeffs = problem.coefficients(x)
    n = int(round(t_end / dt))
    u = problem.exact(0.0, x)
    sysm = momentum.assemble(coeffs, dt, problem.mu, boundary_flux=problem.boundary_flux)
    for k in range(1, n + 1):
        src = dual_cell_loads(lambda s: problem.source(k * dt, s), x)
        u, _ = momentum.solve(coeffs, u, dt, problem.mu, source=src, system=sysm)
    return float(np.max(np.abs(u - problem.exact(n * dt, x))))


# ---------------------------------------------------------------- convergence studies

def observed_orders(resolutions, errors) -> list:
    """Pairwise log2-style orders log(e_k / e_{k+1}) / log(N_{k+1} / N_k)."""
    out = []
    for k in range(len(errors) - 1):
        e0, e1 = errors[k], errors[k + 1]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(resolutions[k + 1] / resolutions[k]))
        else:
            out.append(math.nan)
    return out


@dataclass
class ConvergenceStudy:
    kind: str
    resolutions: list
    errors: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValueError("resolutions must be strictly increasing")

    def add(self, name: str, errors):
        errors = [float(e) for e in errors]
        if any(e < 0 or not math.isfinite(e) for e in errors):
            raise ValueError(f"errors for {name} must be finite and nonnegative")
        self.errors[name] = errors
        self.orders[name] = observed_orders(self.resolutions, errors)

    def min_order(self, name: str) -> float:
        vals = [o for o in self.orders[name] if math.isfinite(o)]
        return min(vals) if vals else math.nan

    def to_dict(self) -> dict:
        return {"kind": self.kind, "resolutions": list(self.resolutions),
                "errors": self.errors, "orders": self.orders, "extra": self.extra}

    def rows(self) -> list:
        out = []
        for i, n in enumerate(self.resolutions):
            row = {"N": n}
            for name, errs in self.errors.items():
                row[name] = errs[i]
            out.append(row)
        return out


def mms_study(choice: str, resolutions=(100, 200, 400), grading: str | None = None,
              **kw) -> ConvergenceStudy:
    problem = mms_problem(choice, **kw)
    study = ConvergenceStudy(kind=f"mms:{choice}", resolutions=list(resolutions))
    study.add("u_sup", [mms_steady_error(problem, n, grading) for n in resolutions])
    study.extra["grading"] = grading or problem.grading
    return study


def free_expansion_errors(result, c: float) -> dict:
    """Relative sup errors against rho0 / (1 + c t)^3 and r0 (1 + c t)."""
    from .stepper import initial_state
    init = initial_state(result.config)
    st = result.final_state
    s = 1.0 + c * st.t
    rho_ex = init.rho_cells / s**3
    r_ex = init.r_nodes * s
    return {"rho": float(np.max(np.abs(st.rho_cells - rho_ex) / rho_ex)),
            "r": float(np.max(np.abs(st.r_nodes[1:] - r_ex[1:]) / r_ex[1:]))}


def free_expansion_config(base=None, c: float = 0.1, **overrides):
    from .stepper import SimulationConfig
    kw = dict(gravity_on=False, pressure_on=False, viscosity_on=False,
              hubble_perturbation=c, t_end=0.5, dt=1e-3, n_cells=400)
    kw.update(overrides)
    if base is not None:
        from dataclasses import replace
        return replace(base, **kw)
    return SimulationConfig(**kw)


def convergence_driver(config, resolutions, oracle: str = "stationary",
                       dt_scaling: bool = True) -> ConvergenceStudy:
    """Run ``config`` at each resolution and fit orders against ``oracle``.

    ``stationary``: sup over the run of |u| (the exact answer is zero).
    ``free_expansion``: closed-form errors in rho and r; dt scales with 1/N
    when ``dt_scaling`` so the temporal order shows.
    """
    from dataclasses import replace

    from .stepper import run
    if len(resolutions) < 3:
        raise ValueError("need >= 3 resolutions")
    study = ConvergenceStudy(kind=oracle, resolutions=list(resolutions))
    n0 = resolutions[0]
    results = []
    for n in resolutions:
        dt = config.dt * n0 / n if (dt_scaling and oracle == "free_expansion") else config.dt
        cfg = replace(config, n_cells=n, dt=dt)
        res = run(cfg, energies=(oracle == "stationary"))
        results.append(res)
    if oracle == "stationary":
        study.add("sup_u", [r.sup_u for r in results])
        study.extra["sup_u_ratio"] = [a / b if b > 0 else math.inf for a, b in
                                      zip(study.errors["sup_u"], study.errors["sup_u"][1:])]
    elif oracle == "free_expansion":
        c = config.hubble_perturbation
        errs = [free_expansion_errors(r, c) for r in results]
        study.add("rho", [e["rho"] for e in errs])
        study.add("r", [e["r"] for e in errs])
    else:
        raise UnknownChoice(f"unknown oracle {oracle!r}")
    study.extra["aborts"] = [r.abort_reason for r in results]
    study.extra["max_mass_residual"] = max(r.max_mass_residual for r in results)
    return study


def temporal_study(config, dts, c: float | None = None) -> ConvergenceStudy:
    """Free-expansion errors over decreasing dt (resolutions are the step counts)."""
    from dataclasses import replace

    from .stepper import run
    c = config.hubble_perturbation if c is None else c
    steps = [int(round(config.t_end / dt)) for dt in dts]
    study = ConvergenceStudy(kind="free_expansion_dt", resolutions=steps)
    results = [run(replace(config, dt=dt), energies=False) for dt in dts]
    errs = [free_expansion_errors(r, c) for r in results]
    study.add("rho", [e["rho"] for e in errs])
    study.add("r", [e["r"] for e in errs])
    study.extra["max_mass_residual"] = max(r.max_mass_residual for r in results)
    study.extra["max_picard_iters"] = max(r.max_picard_iters for r in results)
    return study


# ---------------------------------------------------------------- boundary residual

def bc_residual(state: LagrangianState, config: PolytropeConfig, mu: float | None = None,
                gravity: bool = True, pressure: bool = True) -> dict:
    """Dynamic boundary condition mu rho r^2 D_x u - p at x = 1.

    ``face_*``: the face values, with rho extrapolated linearly from the last
    two cell centres (clamped at zero) and D_x u from the last cell.
    ``implied*``: the boundary flux implied by the discrete momentum equation
    on the last dual cell, relative to the magnitude of that row's terms.
    """
    mu = config.mu if mu is None else mu
    x, rho, u, r = state.x_nodes, state.rho_cells, state.u_nodes, state.r_nodes
    xc = state.x_cells
    slope = (rho[-1] - rho[-2]) / (xc[-1] - xc[-2])
    rho_f = max(rho[-1] + slope * (x[-1] - xc[-1]), 0.0)
    p_f = config.A * rho_f**config.gamma if pressure else 0.0
    dxu = (u[-1] - u[-2]) / (x[-1] - x[-2])
    face = abs(mu * rho_f * r[-1] ** 2 * dxu - p_f)
    p_scale = config.A * rho[-1] ** config.gamma
    coeffs = momentum.freeze(rho, r, x, config, pressure=pressure, gravity=gravity)
    if state.history:
        prev = state.history[0]
        res, scale = momentum.boundary_flux_residual(coeffs, u, mu, prev.u, state.t - prev.t)
    else:
        res, scale = momentum.boundary_flux_residual(coeffs, u, mu)
    return {
        "face_absolute": float(face),
        "face_relative": float(face / p_scale) if p_scale > 0 else float(face),
        "implied_absolute": res,
        "implied": res / scale if scale > 0 else 0.0,
        "pressure_scale": float(p_scale),
    }


# ---------------------------------------------------------------- vacuum exponent

def boundary_exponent(state: LagrangianState, n_fit: int = 16) -> float:
    """Slope of log rho against log(1 - x) over the n_fit cells before the last one."""
    if not 8 <= n_fit <= 24:
        raise ValueError("n_fit must lie in [8, 24]")
    if state.n_cells < n_fit + 1:
        raise InsufficientPoints(f"need {n_fit + 1} cells, have {state.n_cells}")
    sel = slice(state.n_cells - 1 - n_fit, state.n_cells - 1)
    return power_law_exponent(1.0 - state.x_cells[sel], state.rho_cells[sel], min_points=8)


def vacuum_exponent_track(snapshots, n_fit: int = 16):
    """(t, exponent) per snapshot state."""
    return [(float(s.t), boundary_exponent(s, n_fit)) for s in snapshots]

"""Energy functionals, dissipation, sup-norm ledger and monitors.

The domain is split by a cutoff pair: chi(x) weights the boundary region in
mass coordinates (Lagrangian terms), zeta(r) the interior ball in radius
(Eulerian terms).  Both ramps are the quintic smoothstep, so they are C^2
with closed-form derivative bounds.

Temporal derivatives come from the committed history.  D_t u is the
right-hand side of the momentum equation at each level and D_t rho is
-rho div; higher orders are divided differences of those over the levels.
A term whose order needs more history than is available is reported in
``absent`` and left out of the totals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import linprog

from . import momentum
from .errors import AnchorsViolateCondr, SeriesTooShort, ViewTooShort
from .lagrangian import LagrangianState, Level, divergence, radius_of_mass
from .polytrope import PolytropeConfig

SMOOTHSTEP_SLOPE = 15.0 / 8.0


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_d1(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t**2 * (1.0 - t) ** 2, 0.0)


def smoothstep_d2(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


@dataclass(frozen=True)
class CutoffPair:
    """chi ramps 0 -> 1 on [x0, x1]; zeta ramps 1 -> 0 on [r1 + d, r2 - d]."""

    x0: float
    x1: float
    x2: float
    r0: float
    r1: float
    r2: float
    d: float
    unit_clause_ok: bool = True

    @property
    def zeta_start(self) -> float:
        return self.r1 + self.d

    @property
    def zeta_end(self) -> float:
        return self.r2 - self.d

    def chi(self, x):
        return smoothstep((np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0))

    def chi_d1(self, x):
        w = self.x1 - self.x0
        return smoothstep_d1((np.asarray(x, dtype=float) - self.x0) / w) / w

    def chi_d2(self, x):
        w = self.x1 - self.x0
        return smoothstep_d2((np.asarray(x, dtype=float) - self.x0) / w) / w**2

    def zeta(self, r):
        w = self.zeta_end - self.zeta_start
        return 1.0 - smoothstep((np.asarray(r, dtype=float) - self.zeta_start) / w)

    def zeta_d1(self, r):
        w = self.zeta_end - self.zeta_start
        return -smoothstep_d1((np.asarray(r, dtype=float) - self.zeta_start) / w) / w

    def zeta_d2(self, r):
        w = self.zeta_end - self.zeta_start
        return -smoothstep_d2((np.asarray(r, dtype=float) - self.zeta_start) / w) / w**2

    @property
    def chi_slope_bound(self) -> float:
        return SMOOTHSTEP_SLOPE / (self.x1 - self.x0)

    @property
    def zeta_slope_bound(self) -> float:
        return SMOOTHSTEP_SLOPE / (self.r2 - self.r1 - 2.0 * self.d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("x0", "x1", "x2", "r0", "r1", "r2", "d", "unit_clause_ok")}


def default_anchors(state: LagrangianState, fraction: float = 0.6):
    """x1 where the density first drops to ``fraction`` of its central value."""
    rho, xc = state.rho_cells, state.x_cells
    target = fraction * rho[0]
    below = np.nonzero(rho <= target)[0]
    if below.size == 0 or below[0] == 0:
        raise AnchorsViolateCondr("0 < x0 < x1 < x2 < 1",
                                  "density never drops below the x1 threshold")
    i = below[0]
    # linear interpolation between the bracketing cell centres
    s = (rho[i - 1] - target) / (rho[i - 1] - rho[i])
    x1 = float(xc[i - 1] + s * (xc[i] - xc[i - 1]))
    return 0.5 * x1, x1, 0.5 * (1.0 + x1)


def build_cutoffs(state: LagrangianState, x0: float | None = None, x1: float | None = None,
                  x2: float | None = None, d: float | None = None,
                  strict: bool = False) -> CutoffPair:
    """Cutoff pair from mass anchors mapped to radii through ``state`` (the initial data).

    The clause 1/(r0 - d) <= 1 is checked and recorded in ``unit_clause_ok``;
    it raises only with ``strict=True`` since stars of unit mass have
    radii of order one and cannot meet it.
    """
    if x0 is None and x1 is None and x2 is None:
        x0, x1, x2 = default_anchors(state)
    elif None in (x0, x1, x2):
        raise AnchorsViolateCondr("0 < x0 < x1 < x2 < 1", "give all three anchors or none")
    if not 0.0 < x0 < x1 < x2 < 1.0:
        raise AnchorsViolateCondr("0 < x0 < x1 < x2 < 1", f"got {x0}, {x1}, {x2}")
    r0, r1, r2 = (float(v) for v in radius_of_mass(state, np.array([x0, x1, x2])))
    if d is None:
        d = min(r0 / 4.0, (r2 - r1) / 6.0)
    if not d > 0:
        raise AnchorsViolateCondr("d > 0", f"d={d}")
    if not 2.0 * d < r0:
        raise AnchorsViolateCondr("2d < r0", f"2d={2 * d:.6g}, r0={r0:.6g}")
    if not 3.0 * d < r2 - r1:
        raise AnchorsViolateCondr("3d < r2 - r1", f"3d={3 * d:.6g}, r2-r1={r2 - r1:.6g}")
    unit_ok = 1.0 / (r0 - d) <= 1.0
    if strict and not unit_ok:
        raise AnchorsViolateCondr("1/(r0 - d) <= 1", f"r0-d={r0 - d:.6g}")
    return CutoffPair(x0=float(x0), x1=float(x1), x2=float(x2), r0=r0, r1=r1, r2=r2,
                      d=float(d), unit_clause_ok=bool(unit_ok))


@dataclass(frozen=True)
class Physics:
    """What the energy code needs to evaluate the momentum right-hand side."""

    config: PolytropeConfig
    mu: float
    gravity: bool = True
    pressure: bool = True

    def coefficients(self, x_nodes, rho, r) -> momentum.FrozenCoefficients:
        return momentum.freeze(rho, r, x_nodes, self.config, pressure=self.pressure,
                               gravity=self.gravity)


# ---------------------------------------------------------------- time derivatives

def _divided_differences(times, values) -> np.ndarray:
    """Highest divided difference f[t0, ..., tk] of the stacked ``values``."""
    table = [np.asarray(v, dtype=float) for v in values]
    t = list(times)
    for k in range(1, len(table)):
        table = [(table[i] - table[i + 1]) / (t[i] - t[i + k]) for i in range(len(table) - 1)]
    return table[0]


def derivative_from_rates(times, rates, order: int) -> np.ndarray:
    """D_t^order f from first-derivative samples at ``times`` (newest first).

    D_t^j f = (j-1)! * g[t0..t_{j-1}] with g = D_t f, which needs j levels.
    """
    if order < 1 or order > len(rates):
        raise ValueError("not enough levels for this order")
    return math.factorial(order - 1) * _divided_differences(times[:order], rates[:order])


@dataclass
class TimeDerivatives:
    """D_t^j u at nodes and D_t^j rho at cells, j = 0.. up to what the history allows."""

    u: dict = field(default_factory=dict)
    rho: dict = field(default_factory=dict)


def level_rates(level: Level, x_nodes, physics: Physics, coeffs=None):
    """(D_t u, D_t rho) at one level from the equations."""
    if coeffs is None:
        coeffs = physics.coefficients(x_nodes, level.rho, level.r)
    du = momentum.acceleration(coeffs, level.u, physics.mu)
    dx = np.diff(x_nodes)
    drho = -level.rho * divergence(dx, level.rho, level.r, level.u)
    return du, drho


def time_derivatives(state: LagrangianState, physics: Physics, max_order: int = 3,
                     coeffs0=None) -> TimeDerivatives:
    """Temporal derivatives at the newest level of ``state``.

    ``coeffs0`` overrides the frozen coefficients used for the newest level's
    momentum right-hand side (a Picard candidate uses the previous iterate's).
    """
    levels = state.levels()
    out = TimeDerivatives(u={0: state.u_nodes}, rho={0: state.rho_cells})
    n = min(max_order, len(levels))
    if n < 1:
        return out
    times, du, drho = [], [], []
    for k, lev in enumerate(levels[:n]):
        a, b = level_rates(lev, state.x_nodes, physics, coeffs0 if k == 0 else None)
        times.append(lev.t)
        du.append(a)
        drho.append(b)
    for j in range(1, n + 1):
        out.u[j] = derivative_from_rates(times, du, j)
        out.rho[j] = derivative_from_rates(times, drho, j)
    return out


# ---------------------------------------------------------------- mass-grid stencils

def node_gradient(x_nodes, f_cells, boundary_value: float = 0.0) -> np.ndarray:
    """D_x of a cell field at nodes 1..N; node N uses the vacuum face value."""
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    g = np.full(x_nodes.size, np.nan)
    g[1:-1] = np.diff(f_cells) / np.diff(xc)
    g[-1] = (boundary_value - f_cells[-1]) / (x_nodes[-1] - xc[-1])
    return g


def cell_second_derivative(x_nodes, f_cells, boundary_value: float = 0.0) -> np.ndarray:
    """Three-point D_x^2 at cells 1..N-1 on the (non-uniform) cell centres."""
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    xs = np.append(xc, x_nodes[-1])
    fs = np.append(f_cells, boundary_value)
    hl = xs[1:-1] - xs[:-2]
    hr = xs[2:] - xs[1:-1]
    d2 = 2.0 * (fs[2:] * hl - fs[1:-1] * (hl + hr) + fs[:-2] * hr) / (hl * hr * (hl + hr))
    return np.concatenate(([np.nan], d2))


def node_third_derivative(x_nodes, f_cells, boundary_value: float = 0.0) -> np.ndarray:
    """D_x of the cell second derivative at nodes 2..N-1."""
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    d2 = cell_second_derivative(x_nodes, f_cells, boundary_value)
    g = np.full(x_nodes.size, np.nan)
    g[1:-1] = np.diff(d2) / np.diff(xc)
    return g


def node_average(f_cells, boundary_value: float = 0.0) -> np.ndarray:
    """Arithmetic node values; node 0 copies cell 0, node N averages with the face value."""
    out = np.empty(f_cells.size + 1)
    out[0] = f_cells[0]
    out[1:-1] = 0.5 * (f_cells[1:] + f_cells[:-1])
    out[-1] = 0.5 * (f_cells[-1] + boundary_value)
    return out


def _wsum(weights, values) -> float:
    """sum(weights * values) over entries where the stencil is defined."""
    ok = np.isfinite(values)
    return float(np.sum(weights[ok] * values[ok]))


# ---------------------------------------------------------------- Lagrangian energy

@dataclass
class Breakdown:
    total: float
    terms: dict
    absent: list = field(default_factory=list)


def _viscous(coeffs, f, chi_n, chi_c) -> float:
    return momentum.viscous_form(coeffs, f, 1.0, node_weight=chi_n, cell_weight=chi_c)


def _rho_weighted_terms(state, gamma, chi_n, chi_c, m, dx, rho_derivs, prefix_half):
    """Density-derivative lines shared by the energy and the separated H energy."""
    x, rho, r = state.x_nodes, state.rho_cells, state.r_nodes
    rho_n = node_average(rho)
    r_c = np.cbrt(0.5 * (r[1:] ** 3 + r[:-1] ** 3))
    terms, absent = {}, []
    c1 = 0.5 if prefix_half else 1.0
    for j in range(3):
        name = f"rho_x_{j}"
        if j not in rho_derivs:
            absent.append(name)
            continue
        g = node_gradient(x, rho_derivs[j])
        terms[name] = c1 * _wsum(m * chi_n, rho_n ** (2 * gamma - 2) * r**4 * g**2)
    for j in range(2):
        name = f"rho_xx_{j}"
        if j not in rho_derivs:
            absent.append(name)
            continue
        g = cell_second_derivative(x, rho_derivs[j])
        terms[name] = 0.5 * _wsum(dx * chi_c, rho ** (4 * gamma - 2) * r_c**8 * g**2)
    g = node_third_derivative(x, rho)
    terms["rho_xxx"] = 0.5 * _wsum(m * chi_n, rho_n ** (8 * gamma - 2) * r**12 * g**2)
    return terms, absent


def energy_lagrangian(state: LagrangianState, cutoffs: CutoffPair, physics: Physics,
                      derivs: TimeDerivatives | None = None) -> Breakdown:
    """Boundary-region energy, one entry per line of the functional."""
    cfg = physics.config
    gamma, A, mu = cfg.gamma, cfg.A, physics.mu
    if derivs is None:
        derivs = time_derivatives(state, physics)
    x, dx, m = state.x_nodes, state.dx, state.node_mass
    chi_n, chi_c = cutoffs.chi(x), cutoffs.chi(state.x_cells)
    coeffs = physics.coefficients(x, state.rho_cells, state.r_nodes)
    terms, absent = {}, []
    terms["kinetic"] = 0.5 * float(np.sum(m * chi_n * state.u_nodes**2))
    terms["internal"] = A / (gamma - 1.0) * float(np.sum(dx * chi_c * state.rho_cells ** (gamma - 1.0)))
    for j in range(1, 4):
        name = f"dt_u_{j}"
        if j in derivs.u:
            terms[name] = 0.5 * float(np.sum(m * chi_n * derivs.u[j] ** 2))
        else:
            absent.append(name)
    for j in range(3):
        name = f"viscous_{j}"
        if j in derivs.u:
            terms[name] = 0.5 * mu * _viscous(coeffs, derivs.u[j], chi_n, chi_c)
        else:
            absent.append(name)
    rho_terms, rho_absent = _rho_weighted_terms(state, gamma, chi_n, chi_c, m, dx,
                                                derivs.rho, prefix_half=False)
    terms.update(rho_terms)
    absent += rho_absent
    return Breakdown(total=float(sum(terms.values())), terms=terms, absent=absent)


def pressure_form_pair(state: LagrangianState, cutoffs: CutoffPair,
                       config: PolytropeConfig) -> tuple[float, float]:
    """First density-derivative term computed from rho weights and from D_x p."""
    x, m = state.x_nodes, state.node_mass
    chi_n = cutoffs.chi(x)
    rho, r = state.rho_cells, state.r_nodes
    g_rho = node_gradient(x, rho)
    rho_form = _wsum(m * chi_n, node_average(rho) ** (2 * config.gamma - 2) * r**4 * g_rho**2)
    g_p = node_gradient(x, config.pressure(rho))
    p_form = _wsum(m * chi_n, r**4 * g_p**2) / (config.A * config.gamma) ** 2
    return rho_form, p_form


def pressure_form_residual(state, cutoffs, config) -> float:
    a, b = pressure_form_pair(state, cutoffs, config)
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


# ---------------------------------------------------------------- Eulerian view

@dataclass(frozen=True)
class SplineView:
    """rho and u on a uniform radius grid via C^2 splines in r."""

    r: np.ndarray
    rho: np.ndarray
    u: np.ndarray

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])

    def d_r(self, f, order: int = 1) -> np.ndarray:
        out = np.asarray(f, dtype=float)
        for _ in range(order):
            out = np.gradient(out, self.h, edge_order=2)
        return out


def _level_splines(level: Level):
    r = level.r
    rc = np.cbrt(0.5 * (r[1:] ** 3 + r[:-1] ** 3))
    # even reflection of the density through the centre
    rr = np.concatenate((-rc[::-1], rc))
    rho = CubicSpline(rr, np.concatenate((level.rho[::-1], level.rho)))
    # odd reflection of the velocity
    ru = np.concatenate((-r[:0:-1], r))
    u = CubicSpline(ru, np.concatenate((-level.u[:0:-1], level.u)))
    return rho, u


def spline_view(level: Level, r_grid: np.ndarray) -> SplineView:
    rho_s, u_s = _level_splines(level)
    return SplineView(r=r_grid, rho=rho_s(r_grid), u=u_s(r_grid))


def eulerian_grid(state: LagrangianState, cutoffs: CutoffPair, n_samples: int | None = None):
    r_end = cutoffs.zeta_end
    if r_end > state.R:
        raise ViewTooShort(f"zeta support {r_end:.6g} beyond the star radius {state.R:.6g}")
    if n_samples is None:
        # sample spacing about one mean radial cell width
        n_samples = max(64, int(math.ceil(r_end / (state.R / state.n_cells))) + 1)
    return np.linspace(0.0, r_end, n_samples)


def _safe_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(b != 0, a / np.where(b != 0, b, 1.0), 0.0)
    return out


def scalar_gradient_norm2(view: SplineView, f, order: int) -> np.ndarray:
    """|grad^order f|^2 for a radial scalar (order 3 and up: radial surrogate)."""
    r = view.r
    if order == 0:
        return f**2
    f1 = view.d_r(f, 1)
    if order == 1:
        return f1**2
    if order == 2:
        f2 = view.d_r(f1, 1)
        return f2**2 + 2.0 * _safe_div(f1, r) ** 2
    return view.d_r(f, order) ** 2


def vector_gradient_norm2(view: SplineView, u, order: int) -> np.ndarray:
    """|grad^order u|^2 (Frobenius) for u = u(r) e_r (order 3 and up: radial surrogate)."""
    r = view.r
    if order == 0:
        return u**2
    if order == 1:
        return view.d_r(u, 1) ** 2 + 2.0 * _safe_div(u, r) ** 2
    if order == 2:
        g = _safe_div(u, r)
        g[0] = view.d_r(u, 1)[0]
        g1 = view.d_r(g, 1)
        g2 = view.d_r(g1, 1)
        b = _safe_div(g1, r)
        a = g2 - b
        return r**2 * (a * a + 6.0 * a * b + 15.0 * b * b)
    return view.d_r(u, order) ** 2


def _ball_integral(view: SplineView, integrand) -> float:
    r = view.r
    return float(np.trapezoid(4.0 * np.pi * r**2 * integrand, r))


def energy_eulerian(view: SplineView, cutoffs: CutoffPair, config: PolytropeConfig) -> Breakdown:
    """Interior energy from spatial derivatives up to third order."""
    zeta = cutoffs.zeta(view.r)
    rho, u = view.rho, view.u
    w_rho = config.A * config.gamma * rho ** (config.gamma - 2.0)
    terms = {}
    for k in range(4):
        terms[f"rho_{k}"] = 0.5 * _ball_integral(view, zeta * w_rho * scalar_gradient_norm2(view, rho, k))
    for k in range(4):
        terms[f"u_{k}"] = 0.5 * _ball_integral(view, zeta * rho * vector_gradient_norm2(view, u, k))
    return Breakdown(total=float(sum(terms.values())), terms=terms)


# ---------------------------------------------------------------- dissipation

def dissipation(state: LagrangianState, view: SplineView, cutoffs: CutoffPair,
                physics: Physics, derivs: TimeDerivatives | None = None) -> Breakdown:
    mu = physics.mu
    if derivs is None:
        derivs = time_derivatives(state, physics)
    x = state.x_nodes
    chi_n, chi_c = cutoffs.chi(x), cutoffs.chi(state.x_cells)
    coeffs = physics.coefficients(x, state.rho_cells, state.r_nodes)
    zeta = cutoffs.zeta(view.r)
    terms, absent = {}, []
    for k in range(1, 5):
        terms[f"eulerian_{k}"] = mu * _ball_integral(view, zeta * vector_gradient_norm2(view, view.u, k))
    for j in range(4):
        name = f"viscous_{j}"
        if j in derivs.u:
            terms[name] = mu * _viscous(coeffs, derivs.u[j], chi_n, chi_c)
        else:
            absent.append(name)
    m = state.node_mass
    for j in range(1, 4):
        name = f"dt_u_{j}"
        if j in derivs.u:
            terms[name] = float(np.sum(m * chi_n * derivs.u[j] ** 2))
        else:
            absent.append(name)
    return Breakdown(total=float(sum(terms.values())), terms=terms, absent=absent)


# ---------------------------------------------------------------- K ledger and M

def critical_M(state: LagrangianState) -> float:
    """sup over cells of |rho r^2 D_x u + 2u/r|."""
    div = divergence(state.dx, state.rho_cells, state.r_nodes, state.u_nodes)
    return float(np.max(np.abs(div)))


def _sup(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(np.max(np.abs(a))) if a.size else 0.0


def k_ledger_and_M(state: LagrangianState, view: SplineView, cutoffs: CutoffPair,
                   physics: Physics, derivs: TimeDerivatives | None = None):
    """Every sup-norm of the regularity assumption on its region; returns (ledger, M)."""
    if derivs is None:
        derivs = time_derivatives(state, physics, max_order=1)
    x, dx = state.x_nodes, state.dx
    rho, u, r = state.rho_cells, state.u_nodes, state.r_nodes
    gamma = physics.config.gamma
    sel_c = state.x_cells >= cutoffs.x0
    sel_n = x >= cutoffs.x0
    r_avg2 = 0.5 * (r[1:] ** 2 + r[:-1] ** 2)
    div = divergence(dx, rho, r, u)
    dxu = np.diff(u) / dx
    led = {}
    led["L_rho"] = _sup(rho[sel_c])
    led["L_u_over_r"] = _sup(_safe_div(u, r)[sel_n])
    led["L_div"] = _sup(div[sel_c])
    led["L_rho_r2_Dxu"] = _sup((rho * r_avg2 * dxu)[sel_c])
    if 1 in derivs.u:
        dtdxu = np.diff(derivs.u[1]) / dx
        led["L_rho_r2_DtDxu"] = _sup((rho * r_avg2 * dtdxu)[sel_c])
        led["L_Dtu_over_r"] = _sup(_safe_div(derivs.u[1], r)[sel_n])
    g = node_gradient(x, rho)
    led["L_rho_2g1_r2_Dxrho"] = _sup((node_average(rho) ** (2 * gamma - 1) * r**2 * g)[sel_n])
    # Eulerian entries on [0, r2 - d]; time derivatives at fixed r from D_t - u d_r
    er, erho, eu = view.r, view.rho, view.u
    drho = view.d_r(erho, 1)
    du = view.d_r(eu, 1)
    xs = np.interp(er, r, x)
    xc = state.x_cells
    div_e = np.interp(xs, xc, div)
    led["E_rho"] = _sup(erho)
    led["E_u"] = _sup(eu)
    led["E_dr_u"] = _sup(du)
    led["E_dt_rho_over_rho"] = _sup(-div_e - eu * drho / erho)
    led["E_dr_rho_over_rho"] = _sup(drho / erho)
    if 1 in derivs.u:
        dtu_e = np.interp(xs, x, derivs.u[1])
        led["E_dt_u"] = _sup(dtu_e - eu * du)
    return led, float(np.max(np.abs(div)))


# ---------------------------------------------------------------- divergence Cauchy bound

def rt_inequality_check(state: LagrangianState, cutoffs: CutoffPair | None = None) -> dict:
    """Per-cell Cauchy bound chi div^2 / rho <= 3 chi (rho r^4 |D_x u|^2 + 2 u^2 / (rho r^2)).

    On a cell the divergence splits exactly as a + b with
    a = rho <r^2> D_x u and b = 2 <u> / r_hat, where <.> is the node average
    and 2/r_hat = 3 (r_i + r_{i+1}) / (r_i^2 + r_i r_{i+1} + r_{i+1}^2).
    Hubble flow approaches the equality case at O(h).
    """
    dx, rho, r, u = state.dx, state.rho_cells, state.r_nodes, state.u_nodes
    chi = np.ones_like(rho) if cutoffs is None else cutoffs.chi(state.x_cells)
    rl, rr = r[:-1], r[1:]
    r_avg2 = 0.5 * (rl**2 + rr**2)
    two_over_rhat = 3.0 * (rl + rr) / (rl**2 + rl * rr + rr**2)
    u_avg = 0.5 * (u[1:] + u[:-1])
    dxu = np.diff(u) / dx
    a = rho * r_avg2 * dxu
    b = u_avg * two_over_rhat
    div = a + b
    lhs_c = chi * div**2 / rho * dx
    rhs_c = 3.0 * chi * (rho * r_avg2**2 * dxu**2 + 0.5 * b**2 / rho) * dx
    lhs, rhs = float(np.sum(lhs_c)), float(np.sum(rhs_c))
    return {"lhs": lhs, "rhs": rhs, "margin": rhs - lhs, "field": rhs_c - lhs_c}


# ---------------------------------------------------------------- separated F / H energies

def _eulerian_time_derivatives(levels, r_grid, max_order):
    """d_t^j at fixed r of (rho, u) by divided differences of resampled levels."""
    views = [spline_view(lev, r_grid) for lev in levels[: max_order + 1]]
    times = [lev.t for lev in levels[: max_order + 1]]
    rho_d, u_d = {0: views[0].rho}, {0: views[0].u}
    for j in range(1, len(views)):
        f = math.factorial(j)
        rho_d[j] = f * _divided_differences(times[: j + 1], [v.rho for v in views[: j + 1]])
        u_d[j] = f * _divided_differences(times[: j + 1], [v.u for v in views[: j + 1]])
    return views[0], rho_d, u_d


def separated_energies(state: LagrangianState, cutoffs: CutoffPair, physics: Physics,
                       coeff_rho=None, coeff_r=None, max_order: int = 3,
                       eulerian_order: int | None = None,
                       r_grid=None) -> tuple[float, float]:
    """(F, H): velocity-part and density-part energies of the newest level.

    The velocity part is weighted by the frozen coefficients (``coeff_rho``,
    ``coeff_r``; default: the level itself), the density part by the level.
    """
    cfg = physics.config
    gamma = cfg.gamma
    x, dx, m = state.x_nodes, state.dx, state.node_mass
    chi_n, chi_c = cutoffs.chi(x), cutoffs.chi(state.x_cells)
    crho = state.rho_cells if coeff_rho is None else coeff_rho
    cr = state.r_nodes if coeff_r is None else coeff_r
    coeffs = physics.coefficients(x, crho, cr)
    derivs = time_derivatives(state, physics, max_order=max_order, coeffs0=coeffs)
    levels = state.levels()
    if r_grid is None:
        r_grid = eulerian_grid(state, cutoffs)
    e_order = len(levels) - 1 if eulerian_order is None else eulerian_order
    e_order = min(max_order, e_order, len(levels) - 1)
    view, rho_t, u_t = _eulerian_time_derivatives(levels, r_grid, e_order)
    zeta = cutoffs.zeta(view.r)
    r2 = view.r**2
    mu = physics.mu

    F = 0.0
    for j, f in derivs.u.items():
        F += 0.5 * float(np.sum(m * chi_n * f**2))
        if j <= 2:
            F += 0.5 * mu * _viscous(coeffs, f, chi_n, chi_c)
    for j, f in u_t.items():
        F += 0.5 * float(np.trapezoid(zeta * view.rho * f**2 * r2, view.r))
        if j <= 2:
            F += 0.5 * mu * float(np.trapezoid(zeta * (view.d_r(f) ** 2 + 2.0 * _safe_div(f, view.r) ** 2) * r2, view.r))

    H = 1.0 / (gamma - 1.0) * float(np.sum(dx * chi_c * state.rho_cells ** (gamma - 1.0)))
    rho_terms, _ = _rho_weighted_terms(state, gamma, chi_n, chi_c, m, dx, derivs.rho,
                                       prefix_half=True)
    H += sum(rho_terms.values())
    w = view.rho ** (gamma - 2.0)
    for j, f in rho_t.items():
        for i in range(0, 4 - j):
            H += 0.5 * float(np.trapezoid(zeta * w * view.d_r(f, i) ** 2 * r2, view.r))
    return float(F), float(H)


# ---------------------------------------------------------------- full report

@dataclass
class EnergyReport:
    t: float
    E_L: Breakdown
    E_E: Breakdown
    D: Breakdown
    K_ledger: dict
    K: float
    M: float
    pressure_form_residual: float
    rt: dict

    @property
    def E(self) -> float:
        return self.E_L.total + self.E_E.total

    @property
    def weaving_ratio(self) -> float:
        return weaving_ratio(self.K, self.E)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "E": self.E,
            "E_L": self.E_L.total,
            "E_L_terms": self.E_L.terms,
            "E_L_absent": self.E_L.absent,
            "E_E": self.E_E.total,
            "E_E_terms": self.E_E.terms,
            "D": self.D.total,
            "D_terms": self.D.terms,
            "D_absent": self.D.absent,
            "K_ledger": self.K_ledger,
            "K": self.K,
            "M": self.M,
            "weaving_ratio": self.weaving_ratio,
            "pressure_form_residual": self.pressure_form_residual,
            "rt_lhs": self.rt["lhs"],
            "rt_rhs": self.rt["rhs"],
            "rt_margin": self.rt["margin"],
        }


def weaving_ratio(K: float, E: float) -> float:
    denom = math.sqrt(max(E, 0.0)) + E
    return K / denom if denom > 0 else math.inf


class EnergyEvaluator:
    """Evaluates the full report for states of one run (fixed cutoffs and physics)."""

    def __init__(self, cutoffs: CutoffPair, physics: Physics, n_samples: int | None = None):
        self.cutoffs = cutoffs
        self.physics = physics
        self.n_samples = n_samples

    def grid(self, state):
        return eulerian_grid(state, self.cutoffs, self.n_samples)

    def report(self, state: LagrangianState) -> EnergyReport:
        derivs = time_derivatives(state, self.physics)
        view = spline_view(state.level(), self.grid(state))
        EL = energy_lagrangian(state, self.cutoffs, self.physics, derivs)
        EE = energy_eulerian(view, self.cutoffs, self.physics.config)
        D = dissipation(state, view, self.cutoffs, self.physics, derivs)
        led, M = k_ledger_and_M(state, view, self.cutoffs, self.physics, derivs)
        return EnergyReport(
            t=state.t, E_L=EL, E_E=EE, D=D, K_ledger=led, K=max(led.values()), M=M,
            pressure_form_residual=pressure_form_residual(state, self.cutoffs, self.physics.config),
            rt=rt_inequality_check(state, self.cutoffs),
        )

    def picard_hook(self, base_state: LagrangianState):
        """Hook for :func:`stepper.picard_step` with orders fixed by the committed level."""
        # iterate 0 sees one level fewer than the candidates; fix the orders by it
        n_levels = len(base_state.levels())
        lag_order, eul_order = min(3, n_levels), min(3, n_levels - 1)
        grid = self.grid(base_state)

        def hook(cand, coeff_rho, coeff_r):
            return separated_energies(cand, self.cutoffs, self.physics, coeff_rho, coeff_r,
                                      max_order=lag_order, eulerian_order=eul_order,
                                      r_grid=grid)
        return hook


# ---------------------------------------------------------------- energy inequality monitor

@dataclass
class FeasibilityReport:
    feasible: bool
    C1: float
    C2: float
    violation_fraction: float
    n_samples: int
    n_intrinsic: int
    message: str = ""

    def to_dict(self) -> dict:
        return dict(feasible=self.feasible, C1=self.C1, C2=self.C2,
                    violation_fraction=self.violation_fraction, n_samples=self.n_samples,
                    n_intrinsic=self.n_intrinsic, message=self.message)


def energy_inequality_monitor(t, E, D, threshold: float = 0.95,
                              rtol: float = 1e-9) -> FeasibilityReport:
    """Search C1, C2 >= 0 with dE/dt + D/2 <= C1 E + C2 E^2 on the series.

    dE/dt is the forward difference between samples; E and D are taken at
    the interval midpoints.  Samples with E ~ 0 and a positive left side
    cannot be satisfied by any constants and count as violations; the rest
    are fitted by the linear programme min C1 + C2 E_max.
    """
    t, E, D = (np.asarray(a, dtype=float) for a in (t, E, D))
    if t.size < 10:
        raise SeriesTooShort(f"need >= 10 samples, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    y = np.diff(E) / np.diff(t) + 0.25 * (D[1:] + D[:-1])
    Em = 0.5 * (E[1:] + E[:-1])
    # round-off allowance: relative to the energy change resolvable per interval
    tol = rtol * (np.abs(np.diff(E)) + np.abs(Em) * 1e-6) / np.diff(t) + 1e-300
    need = y > tol
    tiny = Em <= 1e-14 * max(float(np.max(np.abs(E))), 1e-300)
    intrinsic = need & tiny
    fit = need & ~tiny
    n = y.size
    C1 = C2 = 0.0
    if np.any(fit):
        # solve in units e = E / Emax, z = y / ymax to keep the programme well scaled
        Emax = float(np.max(Em[fit]))
        ymax = float(np.max(y[fit]))
        e = Em[fit] / Emax
        A_ub = -np.column_stack((e, e**2))
        b_ub = -(y[fit] - tol[fit]) / ymax
        res = linprog(c=[1.0, 1.0], A_ub=A_ub, b_ub=b_ub, bounds=[(0, None), (0, None)],
                      method="highs")
        if res.status == 0:
            C1 = float(res.x[0]) * ymax / Emax
            C2 = float(res.x[1]) * ymax / Emax**2
            # HiGHS honours constraints to ~1e-7 only; scale up to exact feasibility
            fitted = C1 * Em[fit] + C2 * Em[fit] ** 2
            if np.all(fitted > 0):
                factor = max(1.0, float(np.max((y[fit] - tol[fit]) / fitted)))
                C1, C2 = C1 * factor, C2 * factor
        else:
            return FeasibilityReport(False, math.nan, math.nan, 1.0, n, int(intrinsic.sum()),
                                     f"linear programme failed: {res.message}")
    lhs = C1 * Em + C2 * Em**2
    violations = y > lhs + tol * (1 + 1e-9)
    frac = float(np.mean(violations))
    ok = frac <= 1.0 - threshold
    msg = "" if ok else f"{violations.sum()} of {n} samples violate the inequality"
    return FeasibilityReport(ok, C1, C2, frac, n, int(intrinsic.sum()), msg)

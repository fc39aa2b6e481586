"""Implicit solve of the linearised momentum equation on the mass grid.

With rho, r frozen the velocity obeys

    D_t u - mu D_x(rho r^4 D_x u) + 2 mu u / (rho r^2) = -r^2 D_x p - 4 pi x / r^2,

u(0) = 0 and mu rho r^4 D_x u = r^2 p at x = 1.  Integrating over dual cells
and stepping with implicit Euler gives the symmetric system

    (M/dt + K) u_new = M u_old / dt + b,

with M the diagonal of node masses, K the viscous stiffness (cell fluxes
mu rho r^4 (u_{i+1} - u_i)/dx) plus the reaction 2 mu v_i / r_i^2 (v_i the
dual-cell volume, i.e. the integral of 1/rho), and b the pressure and
gravity loads.  M/dt + K is positive definite for every dt > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .errors import NonFinite, SingularSystem
from .lagrangian import LagrangianState, node_mass
from .polytrope import PolytropeConfig

LINEAR_TOL = 1e-12


@dataclass(frozen=True)
class FrozenCoefficients:
    x_nodes: np.ndarray
    rho_cells: np.ndarray
    r_nodes: np.ndarray
    pressure_cells: np.ndarray
    gravity_nodes: np.ndarray
    boundary_pressure: float = 0.0

    @property
    def dx(self) -> np.ndarray:
        return np.diff(self.x_nodes)

    @property
    def cell_radius(self) -> np.ndarray:
        r = self.r_nodes
        return np.cbrt(0.5 * (r[1:] ** 3 + r[:-1] ** 3))

    @property
    def flux_weight(self) -> np.ndarray:
        """rho r^4 at cell centres."""
        return self.rho_cells * self.cell_radius**4

    @property
    def dual_volume(self) -> np.ndarray:
        dx, rho = self.dx, self.rho_cells
        v = np.zeros(dx.size + 1)
        v[:-1] += 0.5 * dx / rho
        v[1:] += 0.5 * dx / rho
        return v


def freeze(rho, r, x_nodes, config: PolytropeConfig, pressure: bool = True,
           gravity: bool = True) -> FrozenCoefficients:
    rho = np.asarray(rho, dtype=float)
    if pressure:
        p = config.pressure(rho)
    else:
        p = np.zeros_like(rho)
    g = np.zeros_like(r)
    if gravity:
        g[1:] = 4.0 * np.pi * x_nodes[1:] / r[1:] ** 2
    return FrozenCoefficients(x_nodes=x_nodes, rho_cells=rho, r_nodes=r,
                              pressure_cells=p, gravity_nodes=g)


def freeze_state(state: LagrangianState, config: PolytropeConfig, pressure: bool = True,
                 gravity: bool = True) -> FrozenCoefficients:
    return freeze(state.rho_cells, state.r_nodes, state.x_nodes, config, pressure, gravity)


@dataclass(frozen=True)
class SolveReport:
    residual: float
    diagonally_dominant: bool
    bc_residual: float


@dataclass(frozen=True)
class MomentumSystem:
    """Assembled implicit system on the unknowns u_1..u_N (u_0 = 0 is eliminated)."""

    dt: float
    mass: np.ndarray        # node masses m_1..m_N
    stiff: np.ndarray       # mu rho r^4 / dx per cell, cells 0..N-1
    reaction: np.ndarray    # 2 mu v_i / r_i^2, nodes 1..N
    load: np.ndarray        # pressure + gravity loads, nodes 1..N
    boundary_flux: float

    @property
    def size(self) -> int:
        return self.mass.size

    def stiffness_diagonals(self):
        """Diagonal and superdiagonal of K (viscous + reaction)."""
        k = self.stiff
        diag = self.reaction.copy()
        diag += k          # cell i-1/2 couples nodes i-1,i; node i = 1..N always gets it
        diag[:-1] += k[1:]  # cell i+1/2 for i = 1..N-1
        upper = -k[1:]
        return diag, upper

    def matrix_diagonals(self):
        diag, upper = self.stiffness_diagonals()
        return diag + self.mass / self.dt, upper

    def banded(self) -> np.ndarray:
        diag, upper = self.matrix_diagonals()
        ab = np.zeros((2, self.size))
        ab[0, 1:] = upper
        ab[1] = diag
        return ab

    def dense(self) -> np.ndarray:
        diag, upper = self.matrix_diagonals()
        return np.diag(diag) + np.diag(upper, 1) + np.diag(upper, -1)

    def per_node_rows(self):
        """Rows divided by node mass: the finite-difference stencil (lower, diag, upper)."""
        diag, upper = self.matrix_diagonals()
        m = self.mass
        lower = np.concatenate(([0.0], upper)) / m
        up = np.concatenate((upper, [0.0])) / m
        return lower, diag / m, up

    def apply_stiffness(self, v: np.ndarray) -> np.ndarray:
        diag, upper = self.stiffness_diagonals()
        out = diag * v
        out[:-1] += upper * v[1:]
        out[1:] += upper * v[:-1]
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.apply_stiffness(v) + self.mass * v / self.dt

    def rhs(self, u_prev_interior: np.ndarray, source: np.ndarray | None = None) -> np.ndarray:
        out = self.mass * u_prev_interior / self.dt + self.load
        if source is not None:
            out = out + source
        return out


def assemble(coeffs: FrozenCoefficients, dt: float, mu: float,
             boundary_flux: float | None = None) -> MomentumSystem:
    """Implicit-Euler system for the frozen coefficients.

    ``boundary_flux`` is the viscous flux mu rho r^4 D_x u through x = 1; by
    default the dynamic condition r^2 p_b with the vacuum pressure p_b.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    dx = coeffs.dx
    r = coeffs.r_nodes
    m = node_mass(dx)[1:]
    stiff = mu * coeffs.flux_weight / dx
    reaction = 2.0 * mu * coeffs.dual_volume[1:] / r[1:] ** 2
    p = coeffs.pressure_cells
    pb = coeffs.boundary_pressure
    p_right = np.append(p[1:], pb)
    load = -r[1:] ** 2 * (p_right - p) - m * coeffs.gravity_nodes[1:]
    fb = r[-1] ** 2 * pb if boundary_flux is None else boundary_flux
    load[-1] += fb
    return MomentumSystem(dt=dt, mass=m, stiff=stiff, reaction=reaction, load=load,
                          boundary_flux=fb)


def solve(coeffs: FrozenCoefficients, u_prev: np.ndarray, dt: float, mu: float,
          source: np.ndarray | None = None, boundary_flux: float | None = None,
          system: MomentumSystem | None = None):
    """One implicit step.  ``source`` are extra node loads (mass-integrated) for nodes 1..N."""
    if not (np.all(np.isfinite(coeffs.rho_cells)) and np.all(np.isfinite(coeffs.r_nodes))):
        raise NonFinite("non-finite coefficients")
    if np.any(coeffs.rho_cells <= 0):
        raise SingularSystem("non-positive density in momentum coefficients")
    sysm = system if system is not None else assemble(coeffs, dt, mu, boundary_flux)
    rhs = sysm.rhs(u_prev[1:], source)
    if not np.all(np.isfinite(rhs)):
        raise NonFinite("non-finite right-hand side")
    try:
        sol = solveh_banded(sysm.banded(), rhs, lower=False, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystem(f"momentum matrix not positive definite: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise NonFinite("non-finite velocity from momentum solve")
    u_next = np.concatenate(([0.0], sol))
    resid = sysm.apply(sol) - rhs
    scale = max(np.max(np.abs(rhs)), np.max(np.abs(sysm.mass * sol / dt)), np.finfo(float).tiny)
    rel = float(np.max(np.abs(resid)) / scale)
    diag, upper = sysm.matrix_diagonals()
    off = np.zeros_like(diag)
    off[:-1] += np.abs(upper)
    off[1:] += np.abs(upper)
    dd = bool(np.all(diag >= off))
    report = SolveReport(residual=rel, diagonally_dominant=dd,
                         bc_residual=float(abs(resid[-1])))
    return u_next, report


def viscous_form(coeffs: FrozenCoefficients, u: np.ndarray, mu: float,
                 node_weight: np.ndarray | None = None,
                 cell_weight: np.ndarray | None = None) -> float:
    """mu sum(rho r^4 |D_x u|^2 dx) + mu sum(2 u^2/(rho r^2)) with the solver's quadrature.

    Equals u.K u when both weights are one.
    """
    dx = coeffs.dx
    dxu = np.diff(u) / dx
    cw = 1.0 if cell_weight is None else cell_weight
    nw = 1.0 if node_weight is None else node_weight
    with np.errstate(divide="ignore", invalid="ignore"):
        react = np.where(coeffs.r_nodes > 0,
                         2.0 * coeffs.dual_volume * u**2 / coeffs.r_nodes**2, 0.0)
    return float(mu * (np.sum(cw * coeffs.flux_weight * dxu**2 * dx) + np.sum(nw * react)))


def discrete_energy_identity(u_prev: np.ndarray, u_next: np.ndarray,
                             coeffs: FrozenCoefficients, dt: float, mu: float,
                             source: np.ndarray | None = None) -> float:
    """Imbalance 1/2 (|u_next|^2 - |u_prev|^2) + dt (viscous - forcing . u_next).

    For the implicit step this equals -1/2 |u_next - u_prev|^2 in the mass norm.
    """
    sysm = assemble(coeffs, dt, mu)
    m = sysm.mass
    un, up = u_next[1:], u_prev[1:]
    forcing = sysm.load if source is None else sysm.load + source
    kin = 0.5 * (np.sum(m * un**2) - np.sum(m * up**2))
    return float(kin + dt * (viscous_form(coeffs, u_next, mu) - np.dot(forcing, un)))


def mass_norm(u: np.ndarray, dx: np.ndarray) -> float:
    return float(np.sqrt(np.sum(node_mass(dx) * u**2)))


def acceleration(coeffs: FrozenCoefficients, u: np.ndarray, mu: float) -> np.ndarray:
    """Right-hand side of the momentum equation at the nodes (D_t u from the equation)."""
    sysm = assemble(coeffs, 1.0, mu)
    a = (sysm.load - sysm.apply_stiffness(u[1:])) / sysm.mass
    return np.concatenate(([0.0], a))


def boundary_flux_residual(coeffs: FrozenCoefficients, u: np.ndarray, mu: float,
                           u_prev: np.ndarray | None = None, dt: float | None = None):
    """Dynamic boundary condition read off the last row of the momentum equation.

    The viscous flux through x = 1 implied by (coeffs, u) is
    m_N D_t u_N + (K u)_N - b_N with the boundary term left out of b_N; the
    condition asks it to equal r_N^2 p_b.  Returns (|residual|, scale) where
    scale sums the magnitudes of the row's terms.  Without ``u_prev`` the
    inertial term is dropped.
    """
    sysm = assemble(coeffs, 1.0 if dt is None else dt, mu, boundary_flux=0.0)
    un = u[1:]
    visc = sysm.apply_stiffness(un)[-1]
    inertia = 0.0
    if u_prev is not None and dt is not None:
        inertia = sysm.mass[-1] * (un[-1] - u_prev[-1]) / dt
    implied = inertia + visc - sysm.load[-1]
    target = coeffs.r_nodes[-1] ** 2 * coeffs.boundary_pressure
    p_last = coeffs.r_nodes[-1] ** 2 * coeffs.pressure_cells[-1]
    diag, upper = sysm.stiffness_diagonals()
    k_terms = abs(diag[-1] * un[-1]) + (abs(upper[-1] * un[-2]) if un.size > 1 else 0.0)
    scale = abs(inertia) + k_terms + abs(sysm.load[-1]) + abs(p_last) + abs(target)
    return float(abs(implied - target)), float(scale)

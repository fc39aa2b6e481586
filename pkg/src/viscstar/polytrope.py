"""Polytropic equation of state and Lane-Emden stationary stars.

The stationary star balances the pressure gradient against self-gravity,

    (p0)_r + 4 pi rho0 / r^2 * int_0^r rho0 s^2 ds = 0,   p0 = A rho0^gamma,

which, with rho0 = rho_c theta^n, r = alpha xi and n = 1/(gamma - 1), is the
Lane-Emden equation

    theta'' + 2 theta' / xi + theta^n = 0,   theta(0) = 1, theta'(0) = 0.

Units are those of the Lagrangian formulation used throughout the package:
G = 1 and total mass 4 pi, so the mass coordinate x = int_0^r rho s^2 ds runs
over [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    InsufficientPoints,
    IntegrationFailure,
    NoFiniteMassSolution,
    NormalizationError,
    NotCompact,
)

GAMMA_CRIT = 6.0 / 5.0
_GAMMA_EPS = 1e-12


@dataclass(frozen=True)
class PolytropeConfig:
    """Physical constants of the isentropic viscous gas."""

    gamma: float
    A: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.A > 0.0:
            raise ValueError(f"A must be positive, got {self.A}")
        if not self.mu > 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def index(self) -> float:
        """Polytropic index n = 1/(gamma - 1)."""
        return 1.0 / (self.gamma - 1.0)

    def pressure(self, rho):
        return self.A * np.power(rho, self.gamma)

    def sound_speed(self, rho):
        return np.sqrt(self.A * self.gamma * np.power(rho, self.gamma - 1.0))


def support_class(gamma: float) -> str:
    """Classify the stationary solutions with finite mass for a given gamma."""
    if abs(gamma - GAMMA_CRIT) <= _GAMMA_EPS:
        return "infinite"
    if gamma < GAMMA_CRIT:
        return "none"
    return "compact"


@dataclass(frozen=True)
class StationaryProfile:
    """A sampled Lane-Emden star.

    ``xi``, ``theta`` and ``dtheta`` hold the dimensionless solution on a
    uniform grid; for compact stars the last entry is the first zero xi1.
    Physical radius is ``alpha * xi`` and density ``central_density * theta**n``.
    """

    config: PolytropeConfig
    central_density: float
    alpha: float
    xi: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    xi1: float | None
    support_class: str
    step: float
    _interp: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def index(self) -> float:
        return self.config.index

    @property
    def radius(self) -> float:
        if self.xi1 is None:
            return math.inf
        return self.alpha * self.xi1

    @property
    def dtheta1(self) -> float | None:
        return None if self.xi1 is None else float(self.dtheta[-1])

    @property
    def r(self) -> np.ndarray:
        return self.alpha * self.xi

    @property
    def rho(self) -> np.ndarray:
        return self.central_density * np.power(np.maximum(self.theta, 0.0), self.index)

    @property
    def mass_scale(self) -> float:
        return self.alpha**3 * self.central_density

    @property
    def x_mass(self) -> np.ndarray:
        """Mass coordinate int_0^r rho s^2 ds, exact from xi^2 theta' = -int xi^2 theta^n."""
        return self.mass_scale * (-self.xi**2 * self.dtheta)

    def total_mass(self) -> float:
        """int_0^R rho0 s^2 ds (total mass divided by 4 pi)."""
        if self.xi1 is None:
            raise NotCompact("total mass of a non-compact profile is not sampled")
        return self.mass_scale * self.xi1**2 * abs(self.dtheta1)

    def _pchip(self, key, xs, ys):
        if key not in self._interp:
            self._interp[key] = PchipInterpolator(xs, ys, extrapolate=False)
        return self._interp[key]

    def theta_at(self, xi):
        f = self._pchip("theta", self.xi, self.theta)
        return np.nan_to_num(f(np.clip(xi, self.xi[0], self.xi[-1])))

    def rho_of_r(self, r):
        """Monotone-cubic resampling of rho0(r); zero beyond R."""
        r = np.asarray(r, dtype=float)
        th = self.theta_at(r / self.alpha)
        out = self.central_density * np.power(np.maximum(th, 0.0), self.index)
        return np.where(r >= self.radius, 0.0, out)

    def xi_of_x(self, x):
        """Invert the mass map x(xi) by monotone cubic interpolation."""
        xm = self.x_mass
        f = self._pchip("xi_of_x", xm, self.xi)
        return f(np.clip(x, xm[0], xm[-1]))

    def r_of_x(self, x):
        return self.alpha * self.xi_of_x(x)

    def rho_of_x(self, x):
        return self.rho_of_r(self.r_of_x(x))

    def quadrature_mass(self) -> float:
        """Independent trapezoid check of int rho s^2 ds on the sample grid."""
        return float(np.trapezoid(self.rho * self.r**2, self.r))


def _signed_pow(theta: float, n: float) -> float:
    # odd extension keeps the right-hand side continuous through the zero
    return math.copysign(abs(theta) ** n, theta)


def _rk4_step(xi, th, ph, h, n):
    def f(x, t, p):
        return p, -2.0 * p / x - _signed_pow(t, n)

    k1t, k1p = f(xi, th, ph)
    k2t, k2p = f(xi + 0.5 * h, th + 0.5 * h * k1t, ph + 0.5 * h * k1p)
    k3t, k3p = f(xi + 0.5 * h, th + 0.5 * h * k2t, ph + 0.5 * h * k2p)
    k4t, k4p = f(xi + h, th + h * k3t, ph + h * k3p)
    th_new = th + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
    ph_new = ph + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return th_new, ph_new


def _series(xi: float, n: float) -> tuple[float, float]:
    # regular expansion about the centre; xi^6 term included for larger steps
    x2 = xi * xi
    c6 = n * (8.0 * n - 5.0) / 15120.0
    theta = 1.0 - x2 / 6.0 + n * x2 * x2 / 120.0 - c6 * x2**3
    dtheta = -xi / 3.0 + n * xi * x2 / 30.0 - 6.0 * c6 * xi * x2 * x2
    return theta, dtheta


def _bisect_zero(xi0, th0, ph0, h, n, tol=1e-12):
    lo, hi = 0.0, h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _rk4_step(xi0, th0, ph0, mid, n)[0] > 0.0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    _, ph = _rk4_step(xi0, th0, ph0, s, n)
    return xi0 + s, ph


def lane_emden_solve(config: PolytropeConfig, xi_max: float = 50.0,
                     step: float = 1e-3) -> StationaryProfile:
    """Integrate the Lane-Emden equation with fixed-step RK4.

    Returns an unnormalised profile with central density 1.  For compact
    stars integration stops at the first zero, located by bisection on a
    partial RK4 step.
    """
    gamma = config.gamma
    cls = support_class(gamma)
    if cls == "none":
        raise NoFiniteMassSolution(
            f"gamma={gamma} < 6/5: no stationary solutions with finite total mass")
    if not (step > 0 and xi_max > 0):
        raise ValueError("step and xi_max must be positive")
    n = config.index
    nsteps = int(math.ceil(xi_max / step))
    xi = np.arange(nsteps + 1) * step
    theta = np.empty(nsteps + 1)
    dtheta = np.empty(nsteps + 1)
    n_series = min(10, nsteps + 1)
    for k in range(n_series):
        theta[k], dtheta[k] = _series(xi[k], n)

    xi1 = None
    last = nsteps
    th, ph = theta[n_series - 1], dtheta[n_series - 1]
    for k in range(n_series - 1, nsteps):
        th_new, ph_new = _rk4_step(xi[k], th, ph, step, n)
        if not (math.isfinite(th_new) and math.isfinite(ph_new)):
            raise IntegrationFailure(f"non-finite Lane-Emden state at xi={xi[k + 1]}")
        if th_new <= 0.0:
            xi1, ph1 = _bisect_zero(xi[k], th, ph, step, n)
            last = k
            break
        th, ph = th_new, ph_new
        theta[k + 1], dtheta[k + 1] = th, ph

    if xi1 is not None:
        keep = slice(0, last + 1)
        xi = np.append(xi[keep], xi1)
        theta = np.append(theta[keep], 0.0)
        dtheta = np.append(dtheta[keep], ph1)
    elif cls == "compact":
        raise IntegrationFailure(
            f"no zero of theta found on [0, {xi_max}] for gamma={gamma}; increase xi_max")

    rho_c = 1.0
    alpha = _alpha(config, rho_c)
    return StationaryProfile(config=config, central_density=rho_c, alpha=alpha,
                             xi=xi, theta=theta, dtheta=dtheta, xi1=xi1,
                             support_class=cls, step=step)


def _alpha(config: PolytropeConfig, rho_c: float) -> float:
    n = config.index
    return math.sqrt((n + 1.0) * config.A * rho_c ** (1.0 / n - 1.0) / (4.0 * math.pi))


def normalize_total_mass(profile: StationaryProfile) -> StationaryProfile:
    """Pick the central density that gives total mass 4 pi at fixed A.

    Homology: int rho s^2 ds = alpha^3 rho_c xi1^2 |theta'(xi1)| with
    alpha^3 rho_c proportional to rho_c^((3-n)/(2n)).  At n = 3 the mass does
    not depend on rho_c, so only a matching A can be normalised.
    """
    if profile.support_class != "compact" or profile.xi1 is None:
        raise NotCompact("mass normalisation needs a compact profile")
    cfg = profile.config
    n = cfg.index
    omega = profile.xi1**2 * abs(profile.dtheta1)
    k = (n + 1.0) * cfg.A / (4.0 * math.pi)
    expo = (3.0 - n) / (2.0 * n)
    if abs(expo) < 1e-12:
        mass = k**1.5 * omega
        if abs(mass - 1.0) > 1e-10:
            raise NormalizationError(
                f"gamma=4/3: mass {mass:.6g} is fixed by A; choose A = {4 * math.pi / (n + 1) * omega ** (-2 / 3):.12g}")
        rho_c = profile.central_density
    else:
        rho_c = (k**-1.5 / omega) ** (1.0 / expo)
    return StationaryProfile(config=cfg, central_density=rho_c, alpha=_alpha(cfg, rho_c),
                             xi=profile.xi, theta=profile.theta, dtheta=profile.dtheta,
                             xi1=profile.xi1, support_class=profile.support_class,
                             step=profile.step)


def stationary_star(gamma: float, A: float = 1.0, mu: float = 1.0,
                    xi_max: float = 50.0, step: float = 1e-3) -> StationaryProfile:
    """Convenience: solve and normalise in one go."""
    return normalize_total_mass(lane_emden_solve(PolytropeConfig(gamma, A, mu), xi_max, step))


def power_law_exponent(distance, values, min_points: int = 8) -> float:
    """Least-squares slope of log(values) against log(distance)."""
    distance = np.asarray(distance, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = (distance > 0) & (values > 0)
    if ok.sum() < min_points:
        raise InsufficientPoints(f"need >= {min_points} samples, got {int(ok.sum())}")
    slope, _ = np.polyfit(np.log(distance[ok]), np.log(values[ok]), 1)
    return float(slope)


def stationary_exponents(profile: StationaryProfile, window: float = 0.05,
                         n_samples: int = 800) -> tuple[float, float]:
    """Vacuum decay exponents of rho0 against (R - r) and against (1 - x).

    The profile is resampled on ``n_samples`` uniform radii; samples with
    0 < R - r <= window * R enter both fits.
    """
    if profile.support_class != "compact":
        raise NotCompact("exponents are defined for compact profiles only")
    if not 0.0 < window <= 0.2:
        raise ValueError("window must lie in (0, 0.2]")
    R = profile.radius
    r = np.linspace(0.0, R, n_samples + 1)[:-1]
    near = (R - r) <= window * R
    r = r[near]
    rho = profile.rho_of_r(r)
    xi = r / profile.alpha
    dth = PchipInterpolator(profile.xi, profile.dtheta)(xi)
    x = profile.mass_scale * (-xi**2 * dth) / profile.total_mass()
    eul = power_law_exponent(R - r, rho)
    lag = power_law_exponent(1.0 - x, rho)
    return eul, lag

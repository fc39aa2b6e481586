"""Viscous self-gravitating polytropic stars with a physical vacuum boundary.

Spherically symmetric compressible Navier-Stokes-Poisson flow in Lagrangian
mass coordinates: Lane-Emden initial data, a Picard-iterated implicit
scheme, and the energy diagnostics that track the solution's regularity.
"""

__version__ = "0.1.0"

from .errors import ViscStarError
from .polytrope import PolytropeConfig, StationaryProfile, lane_emden_solve, stationary_star
from .stepper import SimulationConfig, picard_step, run

__all__ = [
    "PolytropeConfig",
    "SimulationConfig",
    "StationaryProfile",
    "ViscStarError",
    "lane_emden_solve",
    "picard_step",
    "run",
    "stationary_star",
]

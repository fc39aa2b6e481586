"""Hydrostatic preservation across mass-grid gradings and initial sampling.

Prints sup_t |u| of the Lane-Emden star at rest for N = 200 and 400 and the
ratio between them (second-order balance gives about 1/4).
"""

import argparse
import time

from viscstar.lagrangian import from_profile
from viscstar.polytrope import stationary_star
from viscstar.stepper import SimulationConfig, run

CASES = [("uniform", 2.0, "volume"), ("uniform", 2.0, "center"),
         ("boundary_graded", 2.0, "volume"), ("boundary_graded", 3.0, "volume"),
         ("radial", 2.0, "volume")]


def sup_u(prof, n, grading, power, sampling, dt, t_end):
    cfg = SimulationConfig(n_cells=n, grading=grading, grading_power=power, dt=dt, t_end=t_end)
    state = from_profile(prof, n, grading, power, sampling)
    return run(cfg, state=state, energies=False).sup_u


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, default=5.0 / 3.0)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--t-end", type=float, default=0.1)
    args = ap.parse_args()
    prof = stationary_star(args.gamma)
    print(f"{'grading':>16} {'p':>4} {'sampling':>8} {'N=200':>11} {'N=400':>11} {'ratio':>6}")
    for grading, power, sampling in CASES:
        t0 = time.perf_counter()
        a = sup_u(prof, 200, grading, power, sampling, args.dt, args.t_end)
        b = sup_u(prof, 400, grading, power, sampling, args.dt, args.t_end)
        print(f"{grading:>16} {power:4.1f} {sampling:>8} {a:11.3e} {b:11.3e} {b / a:6.3f}"
              f"   ({time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()

"""Two computations of the first density-derivative energy term under refinement.

One uses the rho^(2 gamma - 2) weight on D_x rho, the other D_x p / (A gamma).
Prints the relative residual and its observed order for each grading.
"""

import numpy as np

from viscstar.energy import build_cutoffs, pressure_form_residual
from viscstar.lagrangian import from_profile
from viscstar.polytrope import stationary_star
from viscstar.validation import observed_orders


def main():
    prof = stationary_star(5.0 / 3.0)
    ns = [100, 200, 400, 800]
    for grading in ("radial", "uniform", "boundary_graded"):
        res = []
        for n in ns:
            st = from_profile(prof, n, grading)
            res.append(pressure_form_residual(st, build_cutoffs(st), prof.config))
        orders = observed_orders(ns, res)
        print(f"{grading:>16}: residuals {np.array(res)} orders {np.round(orders, 2)}")


if __name__ == "__main__":
    main()

"""Picard iterate counts and contraction ratios of the perturbed star versus dt."""

import argparse

import numpy as np

from viscstar.stepper import SimulationConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-cells", type=int, default=200)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args()
    print(f"{'dt':>8} {'max it':>6} {'mean it':>7} {'max ratio':>10} {'status':>8}")
    for dt in (1e-5, 3e-5, 1e-4, 3e-4, 1e-3):
        cfg = SimulationConfig(n_cells=args.n_cells, dt=dt, t_end=args.steps * dt,
                               hubble_perturbation=1e-3, picard_max=60)
        res = run(cfg, energies=False)
        its = [r.picard_iters for r in res.step_reports]
        status = "ok" if res.ok else res.abort_kind
        print(f"{dt:8.0e} {max(its, default=0):6d} {np.mean(its) if its else 0:7.2f} "
              f"{res.max_contraction_ratio:10.3g} {status:>8}")


if __name__ == "__main__":
    main()

"""Free expansion against the closed form rho0/(1+ct)^3, r0(1+ct).

Pressure, gravity and viscosity are off.  Prints the relative sup errors for
a dt sweep and the observed temporal orders, plus the vacuum exponent, which
should stay constant in time since the flow is a pure dilation.
"""

import argparse

from viscstar.stepper import MemorySink, run
from viscstar.validation import (
    free_expansion_config,
    free_expansion_errors,
    temporal_study,
    vacuum_exponent_track,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-cells", type=int, default=400)
    ap.add_argument("--c", type=float, default=0.1)
    ap.add_argument("--t-end", type=float, default=0.5)
    args = ap.parse_args()
    cfg = free_expansion_config(c=args.c, n_cells=args.n_cells, t_end=args.t_end,
                                snapshot_every=100)
    sink = MemorySink()
    res = run(cfg, sink=sink, energies=False)
    errs = free_expansion_errors(res, args.c)
    print(f"dt={cfg.dt:g}: rel err rho {errs['rho']:.3e}, r {errs['r']:.3e}, "
          f"max Picard iterates {res.max_picard_iters}")
    study = temporal_study(cfg, [4e-3, 2e-3, 1e-3])
    for name in ("rho", "r"):
        print(f"{name}: errors {study.errors[name]} orders {study.orders[name]}")
    for t, k in vacuum_exponent_track(sink.snapshots):
        print(f"t={t:.3f} exponent {k:.4f}")


if __name__ == "__main__":
    main()

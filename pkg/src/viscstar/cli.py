"""Command-line entry point.

Subcommands: lane-emden, run, convergence, mms, sweep.  Exit codes are 0 on
success, 2 for invalid input (config, choice, locked output) and 3 when the
numerics abort.  Relative output directories live under $VISCSTAR_OUTPUT_ROOT
(default ./runs).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import (
    ConfigError,
    NoFiniteMassSolution,
    NormalizationError,
    UnknownChoice,
    ValidationError,
    ViscStarError,
)
from .outputs import (
    DirectorySink,
    OutputDirectory,
    OutputLocked,
    RunManifest,
    config_echo,
    config_from_dict,
    dump_json,
    emit_lane_emden,
    emit_summary,
    parse_config,
    resolve_output_dir,
    validate_for_run,
    write_csv,
)
from .polytrope import stationary_exponents, stationary_star

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

log = logging.getLogger("viscstar")


def _out_dir(args, default: str) -> Path:
    return resolve_output_dir(args.out or default)


def cmd_lane_emden(args) -> int:
    try:
        profile = stationary_star(args.gamma, args.A, step=args.step)
    except (ValueError, NoFiniteMassSolution, NormalizationError) as exc:
        raise ValidationError(str(exc)) from exc
    try:
        exps = stationary_exponents(profile, window=args.window)
    except ViscStarError as exc:
        log.warning("exponent fit skipped: %s", exc)
        exps = None
    with OutputDirectory(_out_dir(args, f"lane-emden-gamma{args.gamma:g}")) as out:
        emit_lane_emden(out.path, profile, exps, n_rows=args.rows)
        print(f"xi1={float(profile.xi1)!r} R={float(profile.radius)!r} "
              f"rho_c={float(profile.central_density)!r}")
        if exps is not None:
            print(f"exponents: eulerian={exps[0]:.6g} lagrangian={exps[1]:.6g}")
        print(f"wrote {out.path}")
    return EXIT_OK


def execute_run(config, out_path: Path, audit: bool = False) -> dict:
    """Validate, run and write every output file for one configuration."""
    from .stepper import run
    state = validate_for_run(config)
    manifest = RunManifest(config=config_echo(config))
    with OutputDirectory(out_path) as out:
        dump_json(out.path / "config.json", config_echo(config))
        sink = DirectorySink(out.path, audit=audit)
        result = run(config, state=state, sink=sink, audit=audit)
        summary = result.summary()
        emit_summary(out.path / "summary.json", summary)
        manifest.finish(result.abort_reason)
        dump_json(out.path / "manifest.json", manifest.to_dict())
    return summary


def cmd_run(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(args, Path(args.config).stem)
    summary = execute_run(config, out, audit=args.audit)
    print(f"{summary['status']}: {summary['n_steps']} steps, t={summary['t_final']}"
          f" -> {out}")
    if summary["status"] != "ok":
        print(f"abort: {summary['abort_reason']}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _write_study(out_path: Path, study, name: str):
    rows = study.rows()
    cols = ["N"] + list(study.errors)
    write_csv(out_path / f"{name}.csv", cols, rows)
    dump_json(out_path / f"{name}.json", study.to_dict())


def cmd_convergence(args) -> int:
    from .validation import convergence_driver
    config = parse_config(args.config)
    if args.levels < 3:
        raise ConfigError("--levels must be >= 3")
    base = args.base_n or config.n_cells
    resolutions = [base * 2**k for k in range(args.levels)]
    validate_for_run(replace(config, n_cells=base))
    study = convergence_driver(config, resolutions, oracle=args.oracle)
    with OutputDirectory(_out_dir(args, f"{Path(args.config).stem}-convergence")) as out:
        _write_study(out.path, study, "convergence")
    for name, orders in study.orders.items():
        print(f"{name}: errors={study.errors[name]} orders={orders}")
    if any(a is not None for a in study.extra.get("aborts", [])):
        return EXIT_ABORT
    return EXIT_OK


def cmd_mms(args) -> int:
    from .validation import MMS_CHOICES, mms_study
    if args.choice not in MMS_CHOICES:
        raise UnknownChoice(f"unknown choice {args.choice!r}; choose from {', '.join(MMS_CHOICES)}")
    resolutions = [args.base_n * 2**k for k in range(args.levels)]
    study = mms_study(args.choice, resolutions)
    with OutputDirectory(_out_dir(args, f"mms-{args.choice}")) as out:
        _write_study(out.path, study, "mms")
    print(f"{args.choice}: errors={study.errors['u_sup']} orders={study.orders['u_sup']}")
    return EXIT_OK


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects key=v1,v2,...; got {text!r}")
    key, vals = text.split("=", 1)
    out = []
    for v in vals.split(","):
        try:
            out.append(json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    return key.strip(), out


def _sweep_leg(payload):
    data, out_path, audit = payload
    try:
        config = config_from_dict(data)
        summary = execute_run(config, Path(out_path), audit=audit)
        return {"dir": out_path, "status": summary["status"],
                "abort_reason": summary["abort_reason"]}
    except ConfigError as exc:
        return {"dir": out_path, "status": "invalid", "abort_reason": str(exc)}
    except ViscStarError as exc:
        return {"dir": out_path, "status": "aborted", "abort_reason": str(exc)}


def cmd_sweep(args) -> int:
    base = parse_config(args.config).to_dict()
    overrides = [_parse_override(s) for s in args.set]
    keys = [k for k, _ in overrides]
    unknown = [k for k in keys if k not in base]
    if unknown:
        raise ConfigError(f"unknown sweep field {unknown[0]!r}")
    root = _out_dir(args, f"{Path(args.config).stem}-sweep")
    legs = []
    for i, combo in enumerate(itertools.product(*[v for _, v in overrides])):
        data = dict(base)
        data.update(dict(zip(keys, combo)))
        config_from_dict(data)  # reject invalid legs before starting any
        legs.append((data, str(root / f"leg_{i:03d}"), args.audit))
    root.mkdir(parents=True, exist_ok=True)
    if args.workers > 1 and len(legs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_leg, legs))
    else:
        results = [_sweep_leg(leg) for leg in legs]
    for (data, _, _), res in zip(legs, results):
        res["overrides"] = {k: data[k] for k in keys}
    dump_json(root / "sweep.json", {"legs": results})
    for res in results:
        print(f"{res['dir']}: {res['status']} {res['overrides']}")
    if any(r["status"] == "invalid" for r in results):
        return EXIT_INVALID
    return EXIT_ABORT if any(r["status"] != "ok" for r in results) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viscstar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    le = sub.add_parser("lane-emden", help="solve and normalise a stationary star")
    le.add_argument("--gamma", type=float, default=5.0 / 3.0)
    le.add_argument("--A", type=float, default=1.0)
    le.add_argument("--step", type=float, default=1e-3)
    le.add_argument("--window", type=float, default=0.05)
    le.add_argument("--rows", type=int, default=None, help="subsample the CSV to this many rows")
    le.add_argument("--out")
    le.set_defaults(func=cmd_lane_emden)

    r = sub.add_parser("run", help="integrate one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--audit", action="store_true", help="write the full energy ledger per output")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="grid-refinement study")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("--base-n", type=int, default=None)
    c.add_argument("--oracle", choices=["stationary", "free_expansion"], default="stationary")
    c.add_argument("--out")
    c.set_defaults(func=cmd_convergence)

    m = sub.add_parser("mms", help="manufactured-solution study of the momentum solver")
    m.add_argument("--choice", required=True)
    m.add_argument("--levels", type=int, default=3)
    m.add_argument("--base-n", type=int, default=100)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mms)

    s = sub.add_parser("sweep", help="cartesian product of config overrides")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=V1,V2")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--audit", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownChoice, OutputLocked) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ViscStarError as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())

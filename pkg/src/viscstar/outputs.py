"""Configuration parsing and bit-stable output files.

Floats are written as Python's shortest round-trip repr, so re-reading a
file gives back the exact doubles.  CSV columns follow fixed lists; JSON
files carry ``schema_version`` and sorted keys.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import platform
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .errors import (
    AnchorsViolateCondr,
    IntegrationFailure,
    NoFiniteMassSolution,
    NormalizationError,
    ParseError,
    ValidationError,
    ViscStarError,
)
from .lagrangian import LagrangianState, divergence, eulerian_mass
from .polytrope import GAMMA_CRIT, support_class
from .stepper import ALL_COLUMNS, SimulationConfig, initial_state

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "VISCSTAR_OUTPUT_ROOT"
SNAPSHOT_COLUMNS = ["x", "rho", "u", "r", "div"]
LANE_EMDEN_COLUMNS = ["xi", "theta", "r", "rho", "x_mass"]


class OutputLocked(ViscStarError):
    """Another process holds the output directory."""


# ---------------------------------------------------------------- number formatting

def fmt(value) -> str:
    """Shortest round-trip text for a number; ints stay ints."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dump_json(path, payload: dict):
    data = dict(payload)
    data.setdefault("schema_version", SCHEMA_VERSION)
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c, math.nan) for c in columns]
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


# ---------------------------------------------------------------- emitters

def emit_series(path, rows):
    write_csv(path, ALL_COLUMNS, rows)


def snapshot_rows(state: LagrangianState):
    """Row i carries node i (x, u, r) and cell i (rho, div); the last row has no cell."""
    div = divergence(state.dx, state.rho_cells, state.r_nodes, state.u_nodes)
    n = state.n_cells
    rho = np.append(state.rho_cells, math.nan)
    dv = np.append(div, math.nan)
    return [[state.x_nodes[i], rho[i], state.u_nodes[i], state.r_nodes[i], dv[i]]
            for i in range(n + 1)]


def emit_snapshot(directory, index: int, state: LagrangianState):
    directory = Path(directory)
    stem = f"snap_{index:04d}"
    write_csv(directory / f"{stem}.csv", SNAPSHOT_COLUMNS, snapshot_rows(state))
    dump_json(directory / f"{stem}.json", {
        "index": index, "t": state.t, "R": state.R, "n_cells": state.n_cells,
        "mass_residual": abs(eulerian_mass(state) - 1.0),
    })
    return directory / f"{stem}.csv"


def load_snapshot(path) -> LagrangianState:
    header, data = read_csv(path)
    if header != SNAPSHOT_COLUMNS:
        raise ParseError(f"{path}: unexpected columns {header}")
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    return LagrangianState(x_nodes=data[:, 0].copy(), rho_cells=data[:-1, 1].copy(),
                           u_nodes=data[:, 2].copy(), r_nodes=data[:, 3].copy(),
                           t=float(meta["t"]))


def emit_summary(path, summary: dict):
    dump_json(path, summary)


def emit_lane_emden(directory, profile, exponents=None, n_rows: int | None = None):
    """lane_emden.csv on the profile's own xi grid plus lane_emden.json."""
    directory = Path(directory)
    n = profile.index
    th = np.clip(profile.theta, 0.0, None)
    rho = profile.central_density * th**n
    xm = profile.x_mass / profile.total_mass()
    idx = np.arange(profile.xi.size)
    if n_rows is not None and n_rows < idx.size:
        idx = np.unique(np.linspace(0, idx.size - 1, n_rows).round().astype(int))
    rows = [[profile.xi[i], profile.theta[i], profile.r[i], rho[i], xm[i]] for i in idx]
    write_csv(directory / "lane_emden.csv", LANE_EMDEN_COLUMNS, rows)
    meta = {"gamma": profile.gamma, "A": profile.config.A, "n": n, "xi1": profile.xi1,
            "R": profile.radius, "rho_c": profile.central_density,
            "support_class": profile.support_class, "step": profile.step,
            "total_mass": profile.total_mass()}
    if exponents is not None:
        meta["exponents"] = {"eulerian": exponents[0], "lagrangian": exponents[1],
                             "eulerian_expected": 1.0 / (profile.gamma - 1.0),
                             "lagrangian_expected": 1.0 / profile.gamma}
    dump_json(directory / "lane_emden.json", meta)


# ---------------------------------------------------------------- manifest and locking

@dataclass
class RunManifest:
    config: dict
    code_version: str = __version__
    platform: str = field(default_factory=lambda: (
        f"{platform.platform()}; python {sys.version.split()[0]}; numpy {np.__version__}"))
    start_time: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    end_time: str | None = None
    abort_reason: str | None = None

    def finish(self, abort_reason: str | None = None):
        self.end_time = datetime.now(timezone.utc).isoformat()
        self.abort_reason = abort_reason

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def resolve_output_dir(name: str | os.PathLike) -> Path:
    """Absolute paths are kept; relative names go under the output root."""
    p = Path(name)
    return p if p.is_absolute() else output_root() / p


class OutputDirectory:
    """Creates the run directory and holds its lockfile for the lifetime of the run."""

    LOCK_NAME = ".viscstar.lock"

    def __init__(self, path):
        self.path = Path(path)
        self._lock = None

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path / self.LOCK_NAME))
        try:
            self._lock.acquire(timeout=0)
        except Timeout as exc:
            raise OutputLocked(f"output directory {self.path} is in use by another run") from exc
        return self

    def __exit__(self, *exc):
        self._lock.release()
        return False


class DirectorySink:
    """Stepper sink writing snapshots and audit records as they arrive."""

    def __init__(self, directory, audit: bool = False):
        self.directory = Path(directory)
        self.rows = []
        self.series_path = self.directory / "series.csv"
        emit_series(self.series_path, [])
        self.audit_path = self.directory / "audit.jsonl" if audit else None
        if self.audit_path is not None:
            self.audit_path.write_text("")

    def series(self, row):
        self.rows.append(row)
        # appended and flushed per row so an aborted run leaves a complete file
        with open(self.series_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [fmt(row.get(c, math.nan)) for c in ALL_COLUMNS])

    def snapshot(self, index, state):
        emit_snapshot(self.directory, index, state)

    def audit(self, record):
        if self.audit_path is not None:
            with open(self.audit_path, "a") as fh:
                fh.write(json.dumps(_jsonable(record), sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------- config parsing

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SimulationConfig)}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _coerce(name, value, text, path):
    typ = str(_FIELD_TYPES[name])
    where = f"{path}:{_line_of(text, name) or '?'}: field {name!r}"
    if "bool" in typ:
        if not isinstance(value, bool):
            raise ParseError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ParseError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if typ.startswith("str"):
        if not isinstance(value, str):
            raise ParseError(f"{where}: expected a string, got {value!r}")
        return value
    if value is None and "None" in typ:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def config_from_dict(data: dict, text: str = "", path="<dict>") -> SimulationConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        line = _line_of(text, unknown[0])
        raise ParseError(f"{path}:{line or '?'}: unknown field {unknown[0]!r}")
    kw = {k: _coerce(k, v, text, path) for k, v in data.items()}
    try:
        return SimulationConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def parse_config(path) -> SimulationConfig:
    """Read a JSON config; defaults fill missing fields."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}:1: config must be a JSON object")
    return config_from_dict(data, text, path)


def validate_for_run(config: SimulationConfig):
    """Checks that need the initial data: finite-mass equilibrium and cutoff separations."""
    from .energy import build_cutoffs
    if config.initial == "lane_emden":
        cls = support_class(config.gamma)
        if cls != "compact":
            raise ValidationError(
                f"gamma={config.gamma:g} <= 6/5 ({GAMMA_CRIT:g}): no stationary solutions "
                "with finite total mass and compact support to start from")
    try:
        state = initial_state(config)
        build_cutoffs(state, config.x0, config.x1, config.x2, config.d)
    except AnchorsViolateCondr as exc:
        raise ValidationError(f"{exc} (cutoff separation constraint)") from exc
    except (NoFiniteMassSolution, NormalizationError, IntegrationFailure) as exc:
        raise ValidationError(str(exc)) from exc
    return state


def config_echo(config: SimulationConfig) -> dict:
    return config.to_dict()

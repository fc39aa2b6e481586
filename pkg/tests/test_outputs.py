import json
import math
from pathlib import Path

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from viscstar.errors import ParseError, ValidationError
from viscstar.lagrangian import uniform_ball
from viscstar.outputs import (
    OUTPUT_ROOT_ENV,
    OutputDirectory,
    OutputLocked,
    config_from_dict,
    dump_json,
    emit_snapshot,
    fmt,
    load_snapshot,
    parse_config,
    read_csv,
    resolve_output_dir,
    validate_for_run,
    write_csv,
)
from viscstar.stepper import SimulationConfig

GOLDEN = Path(__file__).parent / "golden"


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(v):
    assert float(fmt(v)) == v


def test_fmt_special_values():
    assert fmt(np.int64(3)) == "3"
    assert fmt(True) == "1"
    assert fmt(math.nan) == "nan" and fmt(-math.inf) == "-inf"
    assert fmt(np.float64(0.1)) == "0.1"


def test_series_golden(tmp_path):
    write_csv(tmp_path / "s.csv", ["t", "E", "picard_iters", "ok"], [
        {"t": 0.0, "E": 1.0 / 3.0, "picard_iters": 0, "ok": True},
        {"t": 1e-4, "E": math.nan, "picard_iters": 3, "ok": False},
        [0.30000000000000004, math.inf, np.int64(2), np.bool_(True)]])
    assert (tmp_path / "s.csv").read_bytes() == (GOLDEN / "series_small.csv").read_bytes()


def test_summary_golden(tmp_path):
    dump_json(tmp_path / "s.json", {
        "status": "ok", "E0": 0.1, "max_E_ratio": np.float64(1.0000000000000002),
        "abort_reason": None, "bad": math.nan, "n_steps": np.int64(7),
        "cutoffs": {"x1": 0.25, "unit_clause_ok": np.bool_(False)}})
    assert (tmp_path / "s.json").read_bytes() == (GOLDEN / "summary_small.json").read_bytes()


def _golden_state():
    s = uniform_ball(16, rho0=3.0)
    return s.with_fields(u_nodes=0.1 * s.r_nodes, t=0.5)


def test_snapshot_golden_and_reload(tmp_path):
    s = _golden_state()
    path = emit_snapshot(tmp_path, 3, s)
    assert path.read_bytes() == (GOLDEN / "snap_0003.csv").read_bytes()
    assert path.with_suffix(".json").read_bytes() == (GOLDEN / "snap_0003.json").read_bytes()
    back = load_snapshot(path)
    np.testing.assert_array_equal(back.rho_cells, s.rho_cells)
    np.testing.assert_array_equal(back.u_nodes, s.u_nodes)
    np.testing.assert_array_equal(back.r_nodes, s.r_nodes)
    assert back.t == 0.5


def test_read_csv_shape():
    header, data = read_csv(GOLDEN / "series_small.csv")
    assert header == ["t", "E", "picard_iters", "ok"] and data.shape == (3, 4)
    assert math.isnan(data[1, 1])


def test_parse_config_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "gamma": 1.5,\n  "n_cells": "many"\n}\n')
    with pytest.raises(ParseError, match=r"c.json:3: field 'n_cells'"):
        parse_config(p)
    p.write_text('{\n  "gamma": 1.5,\n  "colour": 1\n}\n')
    with pytest.raises(ParseError, match=r":3: unknown field 'colour'"):
        parse_config(p)
    p.write_text('{"gamma": 1.5,,}')
    with pytest.raises(ParseError, match=r"c.json:1:"):
        parse_config(p)


def test_config_defaults_and_values(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"gamma": 1.9, "n_cells": 32, "gravity_on": False, "x0": None}))
    cfg = parse_config(p)
    assert cfg.gamma == 1.9 and cfg.n_cells == 32 and not cfg.gravity_on
    assert cfg.mu == SimulationConfig().mu
    with pytest.raises(ValidationError):
        config_from_dict({"dt": -1.0})


def test_validate_for_run_rejects_subcritical_gamma():
    with pytest.raises(ValidationError, match="finite total mass"):
        validate_for_run(SimulationConfig(gamma=1.1))


def test_validate_for_run_rejects_bad_anchors():
    cfg = SimulationConfig(n_cells=40, x0=0.01, x1=0.3, x2=0.6, d=0.2)
    with pytest.raises(ValidationError, match="cutoff separation"):
        validate_for_run(cfg)


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_output_dir("a") == tmp_path / "a"
    assert resolve_output_dir(tmp_path / "b") == tmp_path / "b"


def test_output_directory_lock(tmp_path):
    with OutputDirectory(tmp_path / "run"):
        with pytest.raises(OutputLocked):
            with OutputDirectory(tmp_path / "run"):
                pass
    with OutputDirectory(tmp_path / "run"):
        pass


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")),
                         ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    validate_for_run(parse_config(path))

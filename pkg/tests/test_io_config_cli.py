import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nnflowctl.cli import main
from nnflowctl.config import DEFAULTS, ConfigError, load_config, parse_config
from nnflowctl.grid import Grid, StaggeredField
from nnflowctl.io import (
    export_field,
    export_velocity,
    import_csv,
    import_velocity,
    write_vtk_cells,
)

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "configs" / "golden.json"
FIXTURE = Path(__file__).parent / "fixtures" / "golden_echo.json"


# -- serialization --------------------------------------------------------------

def test_csv_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7)) * 10.0 ** rng.integers(-300, 300, (5, 7))
    a[0, 0], a[1, 1] = 0.1, -0.0
    export_field(a, "csv", tmp_path / "a.csv")
    b = import_csv(tmp_path / "a.csv")
    assert b.tobytes() == a.tobytes()


def test_velocity_round_trip(tmp_path):
    g = Grid.unit_square(6)
    rng = np.random.default_rng(1)
    y = StaggeredField(rng.standard_normal(g.u_shape), rng.standard_normal(g.v_shape))
    export_velocity(y, g, "csv", tmp_path / "y")
    z = import_velocity(tmp_path / "y", g)
    assert z.u.tobytes() == y.u.tobytes() and z.v.tobytes() == y.v.tobytes()
    with pytest.raises(ValueError):
        import_velocity(tmp_path / "y", Grid.unit_square(8))


def test_zero_field_csv_layout(tmp_path):
    g = Grid.unit_square(4)
    export_velocity(StaggeredField.zeros(g), g, "csv", tmp_path / "z")
    with open(tmp_path / "z_u.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "j", "value"]
    assert len(rows) - 1 == (g.nx + 1) * g.ny
    assert all(float(r[2]) == 0.0 for r in rows[1:])
    assert [r[:2] for r in rows[1:3]] == [["0", "0"], ["0", "1"]]


def test_vtk_structured_points(tmp_path):
    g = Grid.unit_square(4)
    export_field(np.arange(12.0).reshape(3, 4), "vtk", tmp_path / "s.vtk", spacing=0.5)
    lines = (tmp_path / "s.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET STRUCTURED_POINTS" in lines and "DIMENSIONS 3 4 1" in lines
    assert "POINT_DATA 12" in lines
    # x index runs fastest
    data = lines[lines.index("LOOKUP_TABLE default") + 1:]
    assert [float(x) for x in data[:3]] == [0.0, 4.0, 8.0]
    write_vtk_cells(tmp_path / "v.vtk", np.ones((4, 4, 2)), g, name="vel")
    text = (tmp_path / "v.vtk").read_text()
    assert "VECTORS vel double" in text and text.count("\n1 1 0\n") >= 1


def test_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        export_field(np.zeros(3), "csv", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        export_field(np.zeros((2, 2)), "hdf5", tmp_path / "x.h5")
    (tmp_path / "bad.csv").write_text("a,b,c\n")
    with pytest.raises(ValueError):
        import_csv(tmp_path / "bad.csv")
    (tmp_path / "hole.csv").write_text("i,j,value\n0,0,1\n1,1,2\n")
    with pytest.raises(ValueError):
        import_csv(tmp_path / "hole.csv")
    with pytest.raises(OSError):
        export_field(np.zeros((2, 2)), "csv", tmp_path / "missing" / "x.csv")


# -- configuration --------------------------------------------------------------

def test_minimal_config_fills_defaults():
    cfg = load_config({"grid": {"nx": 16, "ny": 16}, "exponent": {"value": 1.7}})
    assert cfg["grid"]["nx"] == 16
    assert cfg["exponent"]["value"] == 1.7
    assert cfg["solver"] == DEFAULTS["solver"]
    echo = json.loads(cfg.echo())
    assert set(echo) == set(DEFAULTS)


@pytest.mark.parametrize("bad", [{"exponent": {"value": 0.9}},
                                 {"exponent": {"kind": "expression", "expression": "2",
                                               "alpha0": 0.9}},
                                 {"verify": {"alpha_bounds": [0.9, 2.0]}}])
def test_exponent_lower_bound_gate(bad):
    with pytest.raises(ConfigError, match="exponent lower bound"):
        load_config(bad)


@pytest.mark.parametrize("bad,key", [({"grid": {"nx": 16, "nz": 3}}, "grid"),
                                     ({"solver": {"picard_tol": -1.0}}, "solver.picard_tol"),
                                     ({"grid": {"nx": 16, "ny": 8}}, "grid"),
                                     ({"verify": {"mms_grids": [8, 16, 24]}}, "mms_grids"),
                                     ({"solver": {"method": "bfgs"}}, "solver.method"),
                                     ({"bogus": 1}, "<root>")])
def test_schema_errors_name_the_key(bad, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(bad)


def test_referenced_files_must_exist(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config({"force": {"preset": None, "file": "nowhere"}}, tmp_path)
    with pytest.raises(ConfigError, match="does not exist"):
        load_config({"exponent": {"kind": "grid", "file": "alpha.csv"}}, tmp_path)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.json")
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(tmp_path / "broken.json")


def test_golden_echo_is_byte_identical():
    assert parse_config(GOLDEN).echo() + "\n" == FIXTURE.read_text()


# -- command line -------------------------------------------------------------

def write_cfg(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return p


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "nnflowctl", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


def test_golden_run_log_echoes_config(tmp_path):
    # the golden output dir is relative to the config file: ../out/golden
    (tmp_path / "work").mkdir()
    shutil.copy(GOLDEN, tmp_path / "work" / "golden.json")
    assert main(["tensor-check", "--config", str(tmp_path / "work" / "golden.json"),
                 "--threads", "1"]) == 0
    log = (tmp_path / "out" / "golden" / "run.log").read_text()
    assert log.count(FIXTURE.read_text().rstrip("\n")) == 1


def test_cli_verify_tensor_golden(tmp_path):
    shutil.copy(GOLDEN, tmp_path / "golden.json")
    r = run_cli("verify", "tensor", "--config", tmp_path / "golden.json", "--out",
                tmp_path / "o", "--threads", "1")
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "o" / "tensor_report.json").read_text())
    assert rep["campaign"]["passed"] and rep["negative_controls_all_fail"]
    for c in rep["campaign"]["checks"].values():
        assert c["worst_margin"] >= -1e-12


def test_cli_solve_zero_force(tmp_path):
    cfg = write_cfg(tmp_path, {"grid": {"nx": 8, "ny": 8}, "force": {"preset": "zero"}})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert rep["y_l2_norm"] == 0.0
    assert rep["diagnostics"]["converged"]
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"velocity_u.csv", "velocity_v.csv", "velocity.vtk", "pressure.csv",
            "pressure.vtk", "run.log"} <= names


def test_cli_optimize_trace_monotone(tmp_path):
    cfg = write_cfg(tmp_path, {"grid": {"nx": 8, "ny": 8},
                               "exponent": {"value": 1.8},
                               "control": {"reg_nu": 1e-5, "max_iter": 8,
                                           "gradient_checks": 2},
                               "output": {"formats": ["csv"]}})
    r = run_cli("optimize", "--config", cfg, "--out", tmp_path / "o")
    assert r.returncode == 0, r.stderr
    with open(tmp_path / "o" / "trace.csv") as fh:
        J = [float(row["J"]) for row in csv.DictReader(fh)]
    assert len(J) >= 2 and all(b <= a for a, b in zip(J, J[1:]))
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["J_monotone"] and summary["bounded_sequence"]
    assert summary["gradient_check_max_rel_error"] <= 1e-4


def test_cli_verify_constants_and_mms(tmp_path):
    cfg = write_cfg(tmp_path, {"grid": {"nx": 16, "ny": 16},
                               "verify": {"mms_case": "newtonian", "mms_grids": [8, 16, 32]}})
    out = tmp_path / "o"
    assert main(["verify", "constants", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "constants_report.json").read_text())
    assert 0.0 < rep["C2_hat"] <= 1.0 and rep["C1_hat"] > 0.0
    assert main(["verify", "mms", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "mms_report.json").read_text())
    assert rep["monotone_decrease"] and rep["energy_estimate_holds"]
    assert (out / "convergence.csv").read_text().startswith("n,h,error_L2")


def test_cli_errors_are_json_on_stderr(tmp_path):
    cfg = write_cfg(tmp_path, {"exponent": {"value": 0.9}})
    r = run_cli("solve", "--config", cfg, "--out", tmp_path / "o")
    assert r.returncode == 2
    err = json.loads(r.stderr)
    assert err["error"] == "ConfigError" and "exponent lower bound" in err["message"]
    r = run_cli("solve", "--config", tmp_path / "nope.json")
    assert r.returncode == 2 and json.loads(r.stderr)["error"] == "FileNotFoundError"
    cfg = write_cfg(tmp_path, {"force": {"preset": "tornado"}, "output": {"dir": "o"}})
    r = run_cli("solve", "--config", cfg)
    assert r.returncode == 2 and "tornado" in json.loads(r.stderr)["message"]


def test_cli_seed_reproducibility(tmp_path):
    cfg = write_cfg(tmp_path, {"verify": {"samples": 400}})
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["verify", "tensor", "--config", str(cfg), "--out", str(out),
                     "--seed", "5", "--threads", "1"]) == 0
        outs.append((out / "tensor_report.json").read_bytes())
    assert outs[0] == outs[1]

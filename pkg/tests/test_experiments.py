import json
import math
import subprocess
import sys

import numpy as np
import pytest

from plapx.cli import main as cli_main
from plapx.experiments import (DEFAULT_IDENTITY_EXPRS, ConfigError,
                               ExperimentConfig, run_convergence,
                               run_domain_sweep, run_eps_sweep,
                               run_identity_check, run_p1_sweep, run_solve,
                               thread_count, write_csv, write_sidecar)
from plapx.geometry import load_mesh
from plapx.solver import EpsRecord

BASE = {
    "domain.vertices": "0,0; 1,0; 1,1; 0,1",
    "domain.corner_radius": "0",
    "p.expr": "2",
    "f.expr": "1",
    "g.expr": "0",
    "q.expr": "4",
    "eps.start": "0.5",
    "eps.stop": "0.5",
    "eps.factor": "0.31622776601683794",
    "mesh.h": "0.3",
    "mesh.refinements": "0",
    "newton.tol": "1e-10",
    "newton.max_iter": "30",
    "s.exponent": "0.5",
    "seed": "0",
}


def config_text(out_path, **overrides):
    entries = dict(BASE)
    entries["output.path"] = str(out_path)
    for k, v in overrides.items():
        if v is None:
            entries.pop(k, None)
        else:
            entries[k] = v
    return "\n".join(f"{k} = {v}" for k, v in entries.items()) + "\n"


def make_config(tmp_path, name="out.csv", **overrides):
    return ExperimentConfig.from_text(
        config_text(tmp_path / name, **overrides))


# --- config parsing -------------------------------------------------------------


def test_config_minimal_roundtrip(tmp_path):
    cfg = make_config(tmp_path)
    assert cfg.domain.area == pytest.approx(1.0)
    assert cfg.p.p1 == cfg.p.p2 == 2.0
    assert cfg.eps_start == 0.5
    assert cfg.refinements == 0
    assert cfg.seed == 0
    assert cfg.output_path.endswith("out.csv")
    assert cfg.u_exact is None and cfg.p1_list == [] and cfg.radius_list == []


def test_config_comments_and_blank_lines(tmp_path):
    text = ("# leading comment\n\n"
            + config_text(tmp_path / "o.csv")
            + "   # trailing comment line\n")
    text = text.replace("mesh.h = 0.3", "mesh.h = 0.3  # inline note")
    cfg = ExperimentConfig.from_text(text)
    assert cfg.mesh_h == 0.3


def test_config_duplicate_key_cites_line(tmp_path):
    text = config_text(tmp_path / "o.csv") + "mesh.h = 0.2\n"
    lineno = len(text.splitlines())
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text(text)
    assert f"line {lineno}" in str(err.value)
    assert "duplicate key 'mesh.h'" in str(err.value)


def test_config_unknown_key(tmp_path):
    text = config_text(tmp_path / "o.csv") + "solver.mode = fast\n"
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text(text)
    assert "unknown key 'solver.mode'" in str(err.value)


def test_config_missing_keys_listed():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("mesh.h = 0.3\n")
    msg = str(err.value)
    assert "missing required keys" in msg
    assert "p.expr" in msg and "output.path" in msg


def test_config_malformed_line():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("just words\n")
    assert "line 1" in str(err.value)


def test_config_bad_number(tmp_path):
    with pytest.raises(ConfigError) as err:
        make_config(tmp_path, **{"mesh.h": "tiny"})
    assert "'mesh.h'" in str(err.value)
    with pytest.raises(ConfigError) as err:
        make_config(tmp_path, **{"mesh.refinements": "1.5"})
    assert "'mesh.refinements'" in str(err.value)


def test_config_bad_expression_cites_key(tmp_path):
    with pytest.raises(ConfigError) as err:
        make_config(tmp_path, **{"p.expr": "2 +"})
    assert "'p.expr'" in str(err.value)


def test_config_bad_vertices(tmp_path):
    with pytest.raises(ConfigError):
        make_config(tmp_path, **{"domain.vertices": "0,0; 1,0"})
    with pytest.raises(ConfigError):
        make_config(tmp_path, **{"domain.vertices": "0,0; 1; 1,1"})
    with pytest.raises(ConfigError):
        make_config(tmp_path, **{"domain.corner_radius": "-0.1"})


def test_config_optional_lists(tmp_path):
    cfg = make_config(tmp_path, **{"p1.list": "1.5, 1.25, 1.1",
                                   "radius.list": "0.4, 0.2",
                                   "identity.exprs":
                                       "1 - x^2 - y^2; (1 - x^2 - y^2)*exp(x)"})
    assert cfg.p1_list == [1.5, 1.25, 1.1]
    assert cfg.radius_list == [0.4, 0.2]
    assert len(cfg.identity_exprs) == 2
    with pytest.raises(ConfigError):
        make_config(tmp_path, **{"identity.exprs": "1 +"})


def test_config_spec_errors_become_config_errors(tmp_path):
    cfg = make_config(tmp_path, **{"eps.start": "1e-6", "eps.stop": "0.5"})
    with pytest.raises(ConfigError):
        cfg.problem_spec()


def test_working_mesh_applies_refinements(tmp_path):
    cfg = make_config(tmp_path, **{"mesh.refinements": "1"})
    base = cfg.base_mesh()
    fine = cfg.working_mesh()
    assert fine.n_triangles == 4 * base.n_triangles


# --- csv / sidecar emission ------------------------------------------------------


def test_csv_cell_formats(tmp_path):
    path = tmp_path / "cells.csv"
    write_csv(path, ("a", "b", "c", "d", "e"),
              [[0.1, 1e-06, True, 7, 'say "hi", ok']])
    content = path.read_bytes().decode()
    assert content.splitlines()[0] == "a,b,c,d,e"
    assert content.splitlines()[1] == '0.1,1e-06,1,7,"say ""hi"", ok"'
    assert content.endswith("\n")
    # repr round-trip: parsing the float cells recovers the exact doubles
    assert float(content.splitlines()[1].split(",")[0]) == 0.1


def test_sidecar_sorted_and_valid(tmp_path):
    path = tmp_path / "x.json"
    write_sidecar(path, {"zeta": 1, "alpha": [1.5, None], "mid": {"b": 2}})
    raw = path.read_text()
    assert raw.index('"alpha"') < raw.index('"mid"') < raw.index('"zeta"')
    assert raw.endswith("\n")
    assert json.loads(raw) == {"zeta": 1, "alpha": [1.5, None],
                               "mid": {"b": 2}}


# --- runners ---------------------------------------------------------------------


def test_run_solve_single_row(tmp_path):
    cfg = make_config(tmp_path)
    result = run_solve(cfg)
    assert result.command == "solve"
    assert result.columns == EpsRecord.COLUMNS
    assert len(result.rows) == 1
    assert not result.failed
    assert result.csv_path == str(tmp_path / "out.csv")
    assert result.sidecar_path == str(tmp_path / "out.csv") + ".json"
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == ",".join(EpsRecord.COLUMNS)
    assert len(lines) == 2
    side = json.loads((tmp_path / "out.csv.json").read_text())
    assert side["command"] == "solve"
    assert side["config"]["mesh.h"] == "0.3"
    assert side["version"]
    assert side["failures"] == []
    assert side["ellipticity_audit"]["satisfied"] is True
    assert side["mesh"]["n_points"] > 0


def test_run_solve_byte_identical_reruns(tmp_path):
    a = run_solve(make_config(tmp_path, name="a.csv"))
    b = run_solve(make_config(tmp_path, name="b.csv"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ja = json.loads((tmp_path / "a.csv.json").read_text())
    jb = json.loads((tmp_path / "b.csv.json").read_text())
    ja["config"].pop("output.path"), jb["config"].pop("output.path")
    assert ja == jb


def test_run_eps_sweep_rows(tmp_path):
    cfg = make_config(tmp_path, **{"eps.start": "1", "eps.stop": "0.01",
                                   "p.expr": "1.8"})
    result = run_eps_sweep(cfg)
    spec = cfg.problem_spec()
    assert len(result.rows) == len(spec.eps_schedule())
    eps_col = [row[0] for row in result.rows]
    assert eps_col == sorted(eps_col, reverse=True)
    assert eps_col[-1] == 0.01
    assert not result.failed


def test_run_eps_sweep_records_failure(tmp_path):
    cfg = make_config(tmp_path, **{"newton.tol": "1e-30"})
    result = run_eps_sweep(cfg)
    assert result.failed
    fail = result.payload["failures"][0]
    assert fail["eps"] == 0.5
    assert "no convergence" in fail["reason"]
    # the failed record still lands in the CSV, flagged unconverged
    assert len(result.rows) == 1


def test_run_convergence_requires_exact(tmp_path):
    with pytest.raises(ConfigError) as err:
        run_convergence(make_config(tmp_path))
    assert "u.exact.expr" in str(err.value)
    with pytest.raises(ConfigError):
        run_convergence(make_config(
            tmp_path, **{"u.exact.expr": "x*y", "mesh.refinements": "1"}))


def test_run_convergence_orders(tmp_path):
    # harmonic exact solution x*y for the p = 2 problem
    cfg = make_config(tmp_path, **{"u.exact.expr": "x*y", "f.expr": "0",
                                   "g.expr": "x*y", "mesh.refinements": "3",
                                   "mesh.h": "0.4"})
    result = run_convergence(cfg)
    assert len(result.rows) == 3
    level, h, l2, h1, l2o, h1o = result.rows[0]
    assert level == 0 and math.isnan(l2o) and math.isnan(h1o)
    hs = [row[1] for row in result.rows]
    assert hs[1] == pytest.approx(hs[0] / 2) and hs[2] == pytest.approx(hs[1] / 2)
    # last refinement step shows the expected orders
    assert result.rows[-1][4] > 1.5   # l2 order about 2
    assert result.rows[-1][5] > 0.8   # h1 order about 1
    errs = [row[2] for row in result.rows]
    assert errs[0] > errs[1] > errs[2]


def test_run_p1_sweep(tmp_path):
    cfg = make_config(tmp_path, **{"p1.list": "1.8, 1.5",
                                   "eps.start": "0.1", "eps.stop": "0.1"})
    result = run_p1_sweep(cfg)
    assert len(result.rows) == 2
    assert [row[0] for row in result.rows] == [1.8, 1.5]
    assert result.columns[0] == "p1"
    fit = result.payload["scaling_dq"]
    assert set(fit) >= {"slope", "intercept", "bound", "within_bound",
                        "degenerate"}
    assert not fit["degenerate"]
    assert result.payload["scaling_recovery"]["bound"] == 1.5


def test_run_p1_sweep_degenerate_fit(tmp_path):
    cfg = make_config(tmp_path, **{"p1.list": "1.8, 1.8",
                                   "eps.start": "0.1", "eps.stop": "0.1"})
    result = run_p1_sweep(cfg)
    fit = result.payload["scaling_dq"]
    assert fit["degenerate"]
    assert fit["slope"] == 0.0
    assert "no spread" in fit["warning"]


def test_run_p1_sweep_validation(tmp_path):
    with pytest.raises(ConfigError):
        run_p1_sweep(make_config(tmp_path))
    with pytest.raises(ConfigError):
        run_p1_sweep(make_config(tmp_path, **{"p1.list": "1.5, 0.9"}))


def test_run_domain_sweep(tmp_path):
    cfg = make_config(tmp_path, **{"radius.list": "0.3, 0.15",
                                   "mesh.h": "0.25",
                                   "eps.start": "0.5", "eps.stop": "0.5"})
    result = run_domain_sweep(cfg)
    assert len(result.rows) == 2
    r0, r1 = result.rows
    assert r0[0] == 0.3 and r1[0] == 0.15
    # rounding removes (4 - pi) r^2 of area from a unit square
    assert r0[2] == pytest.approx((4 - math.pi) * 0.09, rel=0.05)
    assert r1[2] == pytest.approx((4 - math.pi) * 0.0225, rel=0.05)
    assert math.isnan(r0[5])
    assert r1[5] > 0.0
    assert "window" in result.payload


def test_run_domain_sweep_validation(tmp_path):
    with pytest.raises(ConfigError):
        run_domain_sweep(make_config(tmp_path))
    with pytest.raises(ConfigError):
        run_domain_sweep(make_config(tmp_path, **{"radius.list": "0.1, 0.2"}))
    with pytest.raises(ConfigError):
        run_domain_sweep(make_config(tmp_path, **{"radius.list": "0.2, 0"}))


def test_run_identity_check_default_trio(tmp_path):
    result = run_identity_check(make_config(tmp_path))
    assert len(result.rows) == 3
    assert [row[0] for row in result.rows] == list(DEFAULT_IDENTITY_EXPRS)
    for row in result.rows:
        assert row[3] <= 1e-8
    assert not result.failed


def test_run_identity_check_records_bad_expression(tmp_path):
    cfg = make_config(tmp_path,
                      **{"identity.exprs": "1 - x^2 - y^2; x"})
    result = run_identity_check(cfg)
    assert len(result.rows) == 1
    assert result.failed
    fail = result.payload["failures"][0]
    assert fail["expr"] == "x"
    assert "PreconditionError" in fail["reason"]


# --- threading -------------------------------------------------------------------


def test_thread_count_env(monkeypatch):
    monkeypatch.delenv("PLAPX_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("PLAPX_THREADS", "4")
    assert thread_count() == 4
    monkeypatch.setenv("PLAPX_THREADS", "0")
    with pytest.raises(ConfigError):
        thread_count()
    monkeypatch.setenv("PLAPX_THREADS", "lots")
    with pytest.raises(ConfigError):
        thread_count()


def test_threaded_run_matches_single_thread(tmp_path, monkeypatch):
    kw = {"p1.list": "1.8, 1.6, 1.4", "eps.start": "0.1", "eps.stop": "0.1"}
    monkeypatch.delenv("PLAPX_THREADS", raising=False)
    run_p1_sweep(make_config(tmp_path, name="single.csv", **kw))
    monkeypatch.setenv("PLAPX_THREADS", "3")
    run_p1_sweep(make_config(tmp_path, name="pool.csv", **kw))
    assert ((tmp_path / "single.csv").read_bytes()
            == (tmp_path / "pool.csv").read_bytes())


# --- command line ----------------------------------------------------------------


def write_config(tmp_path, name="cfg.txt", **overrides):
    path = tmp_path / name
    path.write_text(config_text(tmp_path / "cli_out.csv", **overrides),
                    encoding="utf-8")
    return path


def test_cli_solve_success(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli_main(["solve", str(path)]) == 0
    out = capsys.readouterr().out
    assert "wrote" in out and "(1 rows)" in out and ".json" in out
    assert (tmp_path / "cli_out.csv").exists()
    assert (tmp_path / "cli_out.csv.json").exists()


def test_cli_missing_config(tmp_path, capsys):
    assert cli_main(["solve", str(tmp_path / "nope.txt")]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_rejects_bad_threads_env(tmp_path, capsys, monkeypatch):
    # even commands that never reach the thread pool must flag a
    # malformed PLAPX_THREADS
    path = write_config(tmp_path)
    monkeypatch.setenv("PLAPX_THREADS", "lots")
    assert cli_main(["solve", str(path)]) == 1
    assert "PLAPX_THREADS" in capsys.readouterr().err


def test_cli_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("what is this\n", encoding="utf-8")
    assert cli_main(["sweep-eps", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_cli_validate_clean(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli_main(["validate", str(path)]) == 0
    assert "ok:" in capsys.readouterr().out


def test_cli_validate_warnings_and_strict(tmp_path, capsys):
    path = write_config(tmp_path, **{"p.expr": "2.5"})
    assert cli_main(["validate", str(path)]) == 0
    assert "warning:" in capsys.readouterr().out
    assert cli_main(["validate", "--strict", str(path)]) == 2


def test_cli_strict_propagates_runner_warnings(tmp_path, capsys):
    path = write_config(tmp_path, **{"p.expr": "2.5"})
    assert cli_main(["solve", "--strict", str(path)]) == 2
    err = capsys.readouterr().err
    assert "warning:" in err


def test_cli_solver_failure_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, **{"newton.tol": "1e-30"})
    assert cli_main(["sweep-eps", str(path)]) == 1
    assert "failure:" in capsys.readouterr().err


def test_cli_mesh_out(tmp_path, capsys):
    path = write_config(tmp_path)
    mesh_path = tmp_path / "grid.mesh"
    assert cli_main(["solve", str(path), "--mesh-out", str(mesh_path)]) == 0
    saved = load_mesh(mesh_path)
    want = ExperimentConfig.load(path).working_mesh()
    np.testing.assert_array_equal(saved.points, want.points)
    np.testing.assert_array_equal(saved.triangles, want.triangles)


def test_cli_identity_subcommand(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli_main(["check-identity", str(path)]) == 0
    assert "(3 rows)" in capsys.readouterr().out


def test_cli_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli_main(["--version"])
    assert exc.value.code == 0
    assert "plapx" in capsys.readouterr().out


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli_main([])
    assert exc.value.code == 2


def test_console_script_runs(tmp_path):
    path = write_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "plapx.cli", "validate", str(path)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "ok:" in proc.stdout

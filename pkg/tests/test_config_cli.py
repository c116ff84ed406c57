import csv
import json

import jsonschema
import numpy as np
import pytest

import pint_stokes.driver as driver
from pint_stokes.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from pint_stokes.config import RunConfig, load_config, parse_config_file
from pint_stokes.errors import ConfigurationError
from pint_stokes.linalg import load_block_vector, read_matrix_market
from pint_stokes.report import REPORT_SCHEMA, SCALING_SCHEMA, TABLE_COLUMNS, SolverReport

SMALL = ["--level", "2", "--n-t", "5", "--T", "1.0", "--beta", "1e-2", "--nu", "1.0"]


# ---------------------------------------------------------------------------
# configuration

def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.flexible and cfg.krylov_config().restart == 10
    assert RunConfig(preconditioner="linear").krylov_config().restart == 30


def test_key_value_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n[solve]\nlevel = 2\nn-t = 9   # trailing comment\n"
                    "beta = 1e-4\nconjugate_symmetry = no\nrestart = none\nrun_name = \"x\"\n")
    values = parse_config_file(path)
    assert values == {"level": 2, "n_t": 9, "beta": 1e-4, "conjugate_symmetry": False,
                      "restart": None, "run_name": "x"}


@pytest.mark.parametrize("text", ["bogus_key = 1\n", "level 3\n", "level = three\n",
                                  "conjugate_symmetry = maybe\n"])
def test_bad_config_file(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        parse_config_file(path)


def test_precedence_file_env_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("workers = 2\nlevel = 2\n")
    assert load_config(path, environ={}).workers == 2
    assert load_config(path, environ={"PINT_WORKERS": "3"}).workers == 3
    assert load_config(path, {"workers": 4, "level": None},
                       environ={"PINT_WORKERS": "3"}).workers == 4
    assert load_config(path, {"level": None}, environ={}).level == 2


@pytest.mark.parametrize("changes", [{"beta": -1.0}, {"n_t": 2}, {"level": 0},
                                     {"coarsest_level": 4, "level": 3},
                                     {"problem": "navier"},
                                     {"problem": "oseen_cavity", "preconditioner": "nonlinear"},
                                     {"workers": 0}, {"tol": 0.0}])
def test_invalid_configs(changes):
    with pytest.raises(ConfigurationError):
        RunConfig(**changes)


# ---------------------------------------------------------------------------
# command line

def test_negative_beta_exits_before_assembly(monkeypatch, tmp_path, capsys):
    def boom(*a, **k):
        raise AssertionError("assembly must not start")

    monkeypatch.setattr(driver, "assemble_hierarchy", boom)
    code = main(["solve", "--beta", "-1", "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "beta" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_solve_writes_outputs(tmp_path, capsys):
    code = main(["solve", *SMALL, "--output-dir", str(tmp_path), "--run-name", "demo",
                 "--dump-solution", "--export-matrices"])
    assert code == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["converged"] is True

    data = json.loads((tmp_path / "demo_report.json").read_text())
    jsonschema.validate(data, REPORT_SCHEMA)
    rep = SolverReport.from_json(tmp_path / "demo_report.json")
    assert rep.dofs == 2 * 4 * (98 + 24)

    rows = list(csv.DictReader(open(tmp_path / "results.csv")))
    assert list(rows[0]) == TABLE_COLUMNS
    assert int(rows[0]["#DOFs"]) == rep.dofs and int(rows[0]["outer"]) == rep.outer_iterations

    hist = (tmp_path / "demo_history.csv").read_text().splitlines()
    assert hist[0] == "iteration,residual" and len(hist) == rep.outer_iterations + 2

    x = load_block_vector(tmp_path / "demo_solution.bin")
    assert x.size == rep.dofs
    assert read_matrix_market(tmp_path / "demo_M.mtx").shape == (98, 98)
    assert (tmp_path / "demo_A.mtx").exists()


def test_results_csv_accumulates_rows(tmp_path):
    for name in ("a", "b"):
        assert main(["solve", *SMALL, "--output-dir", str(tmp_path), "--run-name", name]) == 0
    rows = list(csv.reader(open(tmp_path / "results.csv")))
    assert rows[0] == TABLE_COLUMNS and len(rows) == 3


def test_non_convergence_exit_code_with_report(tmp_path, capsys):
    code = main(["solve", *SMALL, "--max-iters", "1", "--tol", "1e-12",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_NOT_CONVERGED
    assert "did not converge" in capsys.readouterr().err
    data = json.loads((tmp_path / "run_report.json").read_text())
    assert data["converged"] is False and data["outer_iterations"] == 1


def test_worker_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("PINT_WORKERS", "2")
    assert main(["solve", *SMALL, "--output-dir", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "run_report.json").read_text())["workers"] == 2


def test_config_file_on_command_line(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("level = 2\nn_t = 5\nT = 1.0\nbeta = 1e-2\nnu = 1.0\nrun_name = fromfile\n")
    assert main(["solve", "--config", str(cfg), "--output-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "fromfile_report.json").exists()


def test_eigs_command(tmp_path):
    code = main(["eigs", "--level", "1", "--n-t", "5", "--T", "1.0", "--beta", "1e-2",
                 "--nu", "1.0", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    counts = json.loads((tmp_path / "run_counts.json").read_text())
    assert counts["all_hold"] is True
    header = (tmp_path / "run_spectra.csv").read_text().splitlines()[0]
    assert header.startswith("index,PC_A_re,PC_A_im")


def test_eigs_size_guard(capsys):
    assert main(["eigs", "--level", "3", "--n-t", "10"]) == EXIT_CONFIG
    assert "exceeds" in capsys.readouterr().err


def test_scaling_command(tmp_path, capsys):
    code = main(["scaling", *SMALL, "--worker-list", "1", "2", "--oversubscribe",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "run_scaling_strong.json").read_text())
    jsonschema.validate(data, SCALING_SCHEMA)
    assert data["workers"] == [1, 2]


def test_scaling_refuses_oversubscription_by_default():
    with pytest.raises(ConfigurationError):
        driver.cmd_scaling(RunConfig(level=1, n_t=5), [10_000])


def test_convergence_command(tmp_path, capsys):
    code = main(["convergence", "--levels", "1", "2", "--n-t0", "4",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "run_convergence.csv").read_text().splitlines()
    assert lines[0] == "level,n_t,dofs,velocity_error,outer" and len(lines) == 3
    errors = [float(line.split(",")[3]) for line in lines[1:]]
    assert np.all(np.diff(errors) < 0)


def test_module_entry_point_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    assert "solve" in capsys.readouterr().out

import csv

import numpy as np
import pytest

from qma import cli
from qma.torus import GridSpec, PeriodicField, read_field, write_field


def run(tmp_path, command, text, name="run.cfg"):
    cfgp = tmp_path / name
    cfgp.write_text(text)
    out = tmp_path / f"out_{command}_{name}"
    return cli.main([command, "--config", str(cfgp), "--out", str(out)]), out


def test_solve_manufactured(tmp_path, capsys):
    code, out = run(tmp_path, "solve", "n = 1\npoints_per_axis = 8\nmanufactured_amplitude = 0.05\n")
    assert code == cli.EXIT_OK
    for name in ("solution.qmaf", "solution_sup_zero.qmaf", "continuity.csv", "summary.txt",
                 "manufactured_phi.qmaf", "manufactured_f.qmaf"):
        assert (out / name).exists()
    summary = (out / "summary.txt").read_text()
    assert "converged = true" in summary
    err = float(summary.split("recovery_error = ")[1].split()[0])
    assert err < 1e-10
    with open(out / "continuity.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == cli.CSV_COLUMNS
    assert float(rows[-1]["t"]) == 1.0
    phi = read_field(out / "solution.qmaf")
    assert abs(phi.values.mean()) < 1e-14
    assert read_field(out / "solution_sup_zero.qmaf").values.max() == 0.0
    assert "converged = true" in capsys.readouterr().out


def test_solve_from_file(tmp_path):
    g = GridSpec(1, 8)
    f = PeriodicField.from_function(g, lambda x: 0.1 * np.cos(2 * np.pi * x[0]) + 0 * x[1])
    write_field(tmp_path / "f.qmaf", f)
    code, out = run(tmp_path, "solve", "n = 1\npoints_per_axis = 8\nf_file = f.qmaf\n")
    assert code == cli.EXIT_OK
    assert "rhs_rescaled = true" in (out / "summary.txt").read_text()


def test_solve_file_grid_mismatch(tmp_path, capsys):
    write_field(tmp_path / "f.qmaf", PeriodicField.constant(GridSpec(1, 4), 0.0))
    code, _ = run(tmp_path, "solve", "n = 1\npoints_per_axis = 8\nf_file = f.qmaf\n")
    assert code == cli.EXIT_CONFIG
    assert "config asks for" in capsys.readouterr().err


def test_nonconvergence_exit_code(tmp_path):
    text = ("n = 1\npoints_per_axis = 8\nf_term = cos 1,1,0,0 0.3\n"
            "newton_tol = 1e-300\nmax_newton = 2\nt_step_min = 0.25\n")
    code, out = run(tmp_path, "solve", text)
    assert code == cli.EXIT_NONCONVERGED
    assert "converged = false" in (out / "summary.txt").read_text()
    assert not (out / "solution.qmaf").exists()


def test_volume(tmp_path):
    code, out = run(tmp_path, "volume", "n = 1\npoints_per_axis = 8\nsigma_term = cos 1,0,0,0 0.1\n")
    assert code == cli.EXIT_OK
    dev = float((out / "summary.txt").read_text().split("density_max_deviation = ")[1].split()[0])
    assert dev < 1e-4
    assert (out / "achieved_density.qmaf").exists()


def test_volume_rejects_bad_density(tmp_path, capsys):
    g = GridSpec(1, 4)
    write_field(tmp_path / "s.qmaf", PeriodicField.constant(g, 2.0))
    code, _ = run(tmp_path, "volume", "n = 1\npoints_per_axis = 4\nsigma_file = s.qmaf\n")
    assert code == cli.EXIT_CONFIG and "mean 1" in capsys.readouterr().err
    code, _ = run(tmp_path, "volume", "n = 1\npoints_per_axis = 4\nsigma_form = linear\n"
                  "sigma_term = cos 1,0,0,0 2.0\n", name="neg.cfg")
    assert code == cli.EXIT_CONFIG


def test_verify_pass_and_fault(tmp_path, capsys):
    base = "n = 1\npoints_per_axis = 4\ntrials = 1\ndet_trials = 5\ncalculus_trials = 5\nroute_cases = 1\n"
    code, out = run(tmp_path, "verify", base)
    assert code == cli.EXIT_OK
    with open(out / "verification.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["passed"] == "1" for r in rows)
    capsys.readouterr()
    code, _ = run(tmp_path, "verify", base + "fault_injection = pf_sign_flip\n", name="fault.cfg")
    assert code == cli.EXIT_VERIFY
    err = capsys.readouterr().err
    assert "pfaffian_normalization" in err and "mean Pf" in err


@pytest.mark.parametrize("argv", [[], ["solve"], ["explode", "--config", "x"]])
def test_usage_errors(argv):
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_bad_config_and_missing_file(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "bogus = 1\n")
    assert code == cli.EXIT_CONFIG and "unknown key" in capsys.readouterr().err
    assert cli.main(["solve", "--config", str(tmp_path / "none.cfg")]) == cli.EXIT_CONFIG


def test_corrupt_field_file(tmp_path, capsys):
    (tmp_path / "f.qmaf").write_bytes(b"junk")
    code, _ = run(tmp_path, "solve", "n = 1\npoints_per_axis = 4\nf_file = f.qmaf\n")
    assert code == cli.EXIT_CONFIG and "QMAF" in capsys.readouterr().err

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cdf_forge.cli import main, worker_count
from cdf_forge.core import ConfigurationError


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    return main(list(argv) + ["--out", str(out)]), out


# ---------------------------------------------------------------- verify

def test_verify_porous(tmp_path):
    code, out = run(tmp_path, "verify", "--model", "porous_media")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["samples"] == 1000


def test_verify_generic_expected_failure(tmp_path, capsys):
    code, out = run(tmp_path, "verify", "--model", "generic1d")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    sym = [c for c in report["checks"] if c["name"] == "symmetrizer"][0]
    assert not sym["passed"] and sym["worst_violation"] >= 0.1
    assert "reproduced" in capsys.readouterr().out


def test_verify_bad_samples(tmp_path):
    assert run(tmp_path, "verify", "--model", "telegraph", "--samples", "0")[0] == 2


def test_unknown_model_and_param(tmp_path):
    assert run(tmp_path, "verify", "--model", "nope")[0] == 2
    assert run(tmp_path, "verify", "--model", "pme", "--q", "3")[0] == 2
    assert run(tmp_path, "verify", "--model", "pme", "--param", "m")[0] == 2
    assert main(["frobnicate"]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "CDF_FORGE_THREADS" in capsys.readouterr().out
    assert main(["converge", "--help"]) == 0
    assert "0.1,0.05,0.025,0.0125" in capsys.readouterr().out


# ---------------------------------------------------------------- derive

@pytest.mark.parametrize("m", ["0", "1", "2"])
def test_derive_pme_column(tmp_path, m):
    code, out = run(tmp_path, "derive", "--model", "pme", "--m", m, "--points", "0.5,1,1.5,2")
    assert code == 0
    rows = read_csv(out / "tensors.csv")
    rho = np.array([float(r["u0"]) for r in rows])
    B = np.array([float(r["B_00"]) for r in rows])
    assert np.allclose(B, rho ** float(m), rtol=1e-6)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["gradient_identity"]["passed"] and summary["onsager_symmetry"]["passed"]
    assert summary["strong_dissipativeness"] and min(summary["c0"]) > 0


def test_derive_pme_param_flag(tmp_path):
    code, out = run(tmp_path, "derive", "--model", "pme", "--param", "m=2", "--points", "2")
    assert code == 0
    assert float(read_csv(out / "tensors.csv")[0]["B_00"]) == pytest.approx(4.0)


def test_derive_telegraph(tmp_path):
    code, out = run(tmp_path, "derive", "--model", "telegraph", "--param", "a=1.5")
    assert code == 0
    rows = read_csv(out / "tensors.csv")
    assert len(rows) == 8
    for r in rows:
        assert float(r["B_00"]) == pytest.approx(2.25)
        assert float(r["Btilde_00"]) == pytest.approx(2.25)


def test_derive_fluid_vector_points(tmp_path):
    code, out = run(tmp_path, "derive", "--model", "fluid1d", "--points", "1,0,2;1.2,0.1,2.5")
    assert code == 0
    rows = read_csv(out / "tensors.csv")
    assert len(rows) == 2
    assert sum(k.startswith("B_") for k in rows[0]) == 9
    assert sum(k.startswith("Btilde_") for k in rows[0]) == 9
    assert run(tmp_path, "derive", "--model", "fluid1d", "--points", "1,0")[0] == 2


def test_derive_generic_exit_2(tmp_path, capsys):
    assert run(tmp_path, "derive", "--model", "generic1d")[0] == 2
    assert "Maxwell iteration requires CDF structure" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate

def _summary_numbers(text):
    fields = dict(tok.split("=") for tok in text.split() if "=" in tok)
    return float(fields["entropy_change"]), float(fields["mass_drift"])


@pytest.mark.parametrize("solver", ["relaxation", "equilibrium", "parabolic"])
def test_simulate_constant_state(tmp_path, capsys, solver):
    code, out = run(tmp_path, "simulate", "--model", "damped_euler", "--solver", solver,
                    "--initial", "constant", "--cells", "20", "--t-end", "0.2")
    assert code == 0
    ds, drift = _summary_numbers(capsys.readouterr().out.strip().splitlines()[-1])
    assert ds == 0.0 and drift == 0.0
    snap = read_csv(out / "snapshot.csv")
    assert len(snap) == 20 and list(snap[0])[0] == "x"


def test_simulate_telegraph_entropy(tmp_path):
    code, out = run(tmp_path, "simulate", "--model", "telegraph", "--eps", "0.1",
                    "--cells", "100", "--t-end", "0.5")
    assert code == 0
    rows = read_csv(out / "diagnostics.csv")
    s = np.array([float(r["total_entropy"]) for r in rows])
    t = np.array([float(r["t"]) for r in rows])
    drops = -np.diff(s) / np.diff(t)
    assert np.all(drops <= 10 * (1.0 / 100))
    assert list(rows[0])[:3] == ["t", "total_entropy", "min_sigma"]


def test_simulate_errors(tmp_path):
    assert run(tmp_path, "simulate", "--solver", "bogus")[0] == 2
    assert run(tmp_path, "simulate", "--eps", "0.1,0.05")[0] == 2
    assert run(tmp_path, "simulate", "--cells", "2")[0] == 2
    assert run(tmp_path, "simulate", "--model", "generic1d")[0] == 2
    assert run(tmp_path, "simulate", "--cfl", "2")[0] == 2


def test_simulate_abort_exit_1(tmp_path, capsys):
    # a strong shock on a coarse grid for the explicit parabolic solver with huge eps
    code, out = run(tmp_path, "simulate", "--model", "fluid1d", "--solver", "parabolic",
                    "--initial", "riemann", "--bc", "copy-out", "--cells", "8",
                    "--eps", "1e20", "--t-end", "1")
    assert code == 1
    assert "diagnostics" in capsys.readouterr().err


def test_reruns_are_identical(tmp_path):
    args = ["simulate", "--model", "damped_euler", "--cells", "40", "--t-end", "0.2"]
    run(tmp_path, *args, name="a")
    run(tmp_path, *args, name="b")
    for fname in ("snapshot.csv", "diagnostics.csv", "config.ini"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    assert (tmp_path / "a" / "run.log").exists()


def test_config_file_reproduces_run(tmp_path):
    run(tmp_path, "derive", "--model", "pme", "--m", "1.5", "--samples", "4", name="a")
    ini = tmp_path / "a" / "config.ini"
    text = ini.read_text()
    assert "[params]" in text and "m = 1.5" in text
    assert main(["derive", "--config", str(ini), "--out", str(tmp_path / "b")]) == 0
    for fname in ("tensors.csv", "summary.json", "config.ini"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nwidth = 3\n")
    assert main(["verify", "--config", str(bad)]) == 2
    assert main(["verify", "--config", str(tmp_path / "missing.ini")]) == 2
    bad.write_text("[run]\nsamples = many\n")
    assert main(["verify", "--config", str(bad)]) == 2


def test_command_line_overrides_config(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nmodel = pme\npoints = 2\n\n[params]\nm = 1\n")
    code, out = run(tmp_path, "derive", "--config", str(ini), "--m", "2")
    assert code == 0
    assert float(read_csv(out / "tensors.csv")[0]["B_00"]) == pytest.approx(4.0)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CDF_FORGE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CDF_FORGE_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("CDF_FORGE_THREADS", "lots")
    with pytest.raises(ConfigurationError):
        worker_count()


# ---------------------------------------------------------------- converge

def test_converge_two_eps_exit_2(tmp_path):
    assert run(tmp_path, "converge", "--eps", "0.1,0.05")[0] == 2
    assert run(tmp_path, "converge", "--rate-window-eq", "1")[0] == 2


def test_converge_small_run(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CDF_FORGE_THREADS", "2")
    code, out = run(tmp_path, "converge", "--model", "telegraph", "--cells", "100",
                    "--eps", "0.1,0.05,0.025", "--t-end", "0.5", "--no-refine-check")
    assert code == 0
    assert capsys.readouterr().out.strip().endswith("PASS")
    rows = read_csv(out / "rates.csv")
    assert [float(r["eps"]) for r in rows] == [0.1, 0.05, 0.025]


def test_converge_fail_window(tmp_path, capsys):
    code, _ = run(tmp_path, "converge", "--model", "telegraph", "--cells", "60",
                  "--eps", "0.1,0.05,0.025", "--t-end", "0.3", "--no-refine-check",
                  "--rate-window-eq", "3,4")
    assert code == 1
    assert capsys.readouterr().out.strip().endswith("FAIL")


def test_converge_inconclusive_exit_3(tmp_path, capsys):
    # 8 cells resolve nothing, so the coarse rerun differs a lot
    code, _ = run(tmp_path, "converge", "--model", "telegraph", "--cells", "8",
                  "--eps", "0.1,0.05,0.025", "--t-end", "0.5")
    assert code == 3
    assert "INCONCLUSIVE" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cdf_forge.cli", "verify", "--model", "telegraph",
                           "--samples", "50", "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr

from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from ttpdf.cli import main

INI = """
[experiment]
name = smoke
target = rosenbrock
seed = 5
repetitions = 1

[target]
dim = 2

[cross]
n = default
delta = 0.003
rho = 32
max_sweeps = 30

[sampling]
methods = TT-MH
n_samples = 16384
"""


def test_run_rosenbrock_smoke(tmp_path, capsys):
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(INI)
    assert main(["run", str(cfg), "--output", str(tmp_path / "out")]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "out")
    with open(tmp_path / "out" / "summary.csv") as fh:
        rows = {r["qoi"]: r for r in csv.DictReader(fh)}
    assert float(rows["theta_1"]["tau"]) <= 1.5
    assert main(["plot-data", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "plot_data.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(INI.replace("delta = 0.003", "delta = zero"))
    assert main(["run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("ttpdf: error:") and "cross.delta" in err


def test_missing_study_dir_exit_code(tmp_path, capsys):
    assert main(["plot-data", str(tmp_path)]) == 2


def test_interrupt_exit_code(tmp_path, monkeypatch):
    import ttpdf.cli as cli

    def boom(cfg):
        raise KeyboardInterrupt

    cfg = tmp_path / "smoke.ini"
    cfg.write_text(INI)
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert main(["run", str(cfg)]) == 130


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["preset", "nope"])
    assert exc.value.code == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "ttpdf.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "plot-data" in out.stdout

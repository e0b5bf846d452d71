"""End-to-end tests of the command-line interface."""

import os

import pytest

from splitkoop.cli import main
from splitkoop.koopman import load_model

CONFIG = """\
[system]
name = duffing
dt = 0.03

[dictionary]
degree = 2
delays = 2

[d1]
n_traj = 4
steps = 12

[d2]
n = 96

[fit]
alpha = auto
kh_row_mask =

[evaluation]
n_test_traj = 2
steps = 8

[sweep]
d1_grid = 16, 48
d2_grid = 96
methods = l,pi
seeds = 0
"""


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "study.ini"
    path.write_text(CONFIG)
    return str(path)


def test_generate_writes_datasets(tmp_path, config_path, capsys):
    out = str(tmp_path / "out")
    assert main(["generate", "--config", config_path, "--out-dir", out]) == 0
    assert os.path.exists(os.path.join(out, "d1.seed0.npz"))
    assert os.path.exists(os.path.join(out, "d2.seed0.npz"))
    assert "48 trajectory records" in capsys.readouterr().out


def test_fit_evaluate_pipeline(tmp_path, config_path, capsys):
    out = str(tmp_path / "out")
    assert main(["fit", "--config", config_path, "--out-dir", out]) == 0
    for tag in ("l", "pi"):
        model = load_model(os.path.join(out, f"model.{tag}.bin"))
        assert model.method == tag
    capsys.readouterr()
    assert main(["evaluate", "--config", config_path, "--out-dir", out]) == 0
    text = capsys.readouterr().out
    assert "median shape error" in text


def test_evaluate_without_model_errors(tmp_path, config_path, capsys):
    out = str(tmp_path / "empty")
    assert main(["evaluate", "--config", config_path, "--out-dir", out]) == 1
    assert "run `splitkoop fit`" in capsys.readouterr().err


def test_method_flag_restricts_methods(tmp_path, config_path):
    out = str(tmp_path / "out")
    assert main(["fit", "--config", config_path, "--out-dir", out,
                 "--method", "l"]) == 0
    assert os.path.exists(os.path.join(out, "model.l.bin"))
    assert not os.path.exists(os.path.join(out, "model.pi.bin"))


def test_sweep_and_report(tmp_path, config_path, capsys):
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config_path, "--out-dir", out]) == 0
    assert os.path.exists(os.path.join(out, "report.csv"))
    assert os.path.exists(os.path.join(out, "report.json"))
    capsys.readouterr()
    assert main(["report", "--out-dir", out]) == 0
    text = capsys.readouterr().out
    assert "shape med" in text
    assert os.path.exists(os.path.join(out, "report_shape.svg"))


def test_bad_subcommand_exits(config_path):
    with pytest.raises(SystemExit):
        main(["frobnicate"])

import subprocess
import sys

import pytest

from semloam.cli import main
from semloam.pipeline import EXIT_DATA, EXIT_OK


@pytest.fixture(scope="module")
def pole_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "pole"
    assert main(["synth", str(out), "--scene", "line", "--scans", "3", "--side", "20", "--seed", "1"]) == EXIT_OK
    return out


def test_synth_writes_sequence(pole_data):
    assert len(list((pole_data / "velodyne").glob("*.bin"))) == 3
    assert (pole_data / "scene.json").exists()


def test_synth_from_spec_file(tmp_path, pole_data):
    assert main(["synth", str(tmp_path / "again"), "--spec", str(pole_data / "scene.json"), "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "again" / "poses.txt").read_bytes() == (pole_data / "poses.txt").read_bytes()


def test_run_and_eval(tmp_path, pole_data, capsys):
    out = tmp_path / "out"
    code = main(["run", str(pole_data), "-o", str(out), "--no-loop", "--eval", str(pole_data / "poses.txt")])
    assert code == EXIT_OK
    assert "ATE RMSE" in (out / "eval.txt").read_text()
    assert main(["eval", str(out / "trajectory.txt"), str(pole_data / "poses.txt")]) == EXIT_OK
    assert "trajectory.txt" in capsys.readouterr().out


def test_run_with_config_file(tmp_path, pole_data):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(f"run.dataset = {str(pole_data)!r}\nrun.loop_closure = False\n")
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "o"), "--max-scans", "2", "--seed", "3"]) == EXIT_OK
    assert "loop.rng_seed = 3" in (tmp_path / "o" / "config.txt").read_text()


def test_data_errors_exit_one(tmp_path, caplog):
    assert main(["run", str(tmp_path / "missing"), "-o", str(tmp_path / "o")]) == EXIT_DATA
    assert "velodyne" in caplog.text
    bad = tmp_path / "bad.txt"
    bad.write_text("loop.zeta = 5\n")
    assert main(["config", "-c", str(bad)]) == EXIT_DATA
    assert main(["eval", str(bad), str(bad)]) == EXIT_DATA


def test_config_prints_defaults(capsys):
    assert main(["config"]) == EXIT_OK
    assert "loop.zeta = 0.95" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "semloam", "config"], capture_output=True, text=True)
    assert proc.returncode == 0 and "icp.n_ne = 5" in proc.stdout

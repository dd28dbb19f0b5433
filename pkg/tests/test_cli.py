import logging

import numpy as np
import orjson
import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

from app import app
from tests.conftest import SMALL_CAMERA
from src.formats import read_pgm, write_depth, write_pgm

runner = CliRunner()
COMMANDS = ["simulate", "evaluate", "geodesy", "bev", "policy-trace", "plot", "predictor-serve", "tune"]


@pytest.fixture(autouse=True)
def isolated_logging(tmp_path, monkeypatch):
    """Keep log files out of the repository and drop handlers bound to the runner's streams."""
    monkeypatch.chdir(tmp_path)
    yield
    logging.getLogger().handlers.clear()


@pytest.fixture
def simulated(empty_world, write_config, tmp_path):
    config = write_config(empty_world, tick_limit=16)
    result = runner.invoke(app, ["simulate", str(config), "--out", str(tmp_path / "cli_runs")])
    assert result.exit_code == 0, result.output
    return orjson.loads(result.stdout)


@pytest.mark.parametrize("command", COMMANDS)
def test_every_command_has_help(command):
    result = runner.invoke(app, [command, "--help"])
    assert result.exit_code == 0
    assert "Usage" in result.output


def test_unknown_flag_is_a_usage_error():
    result = runner.invoke(app, ["geodesy", "34.7,137.41", "34.7,137.41", "--no-such-flag"])
    assert result.exit_code == 2


def test_simulate_prints_one_result_per_run(empty_world, write_config, tmp_path):
    config = write_config(empty_world, tick_limit=8)
    result = runner.invoke(app, ["simulate", str(config), "--runs", "2", "--seed", "10",
                                 "--noise-gnss-m", "0.3", "--out", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    runs = orjson.loads(result.stdout)
    assert [r["ticks"] for r in runs] == [8, 8]
    assert [r["run_dir"].rsplit("/", 1)[-1] for r in runs] == ["seed_10", "seed_11"]
    saved = orjson.loads((tmp_path / "out" / "seed_10" / "config.json").read_bytes())
    assert saved["noise"]["gnss_sigma_m"] == 0.3


def test_simulate_with_invalid_config_exits_with_config_code(empty_world, write_config):
    result = runner.invoke(app, ["simulate", str(write_config(empty_world, tick_limit=-1))])
    assert result.exit_code == 2
    assert "Configuration errors" in result.output


def test_simulate_runtime_failure_exits_with_run_code(empty_world, write_config):
    config = write_config(empty_world, predictor="external-stream", external_command=["/nonexistent/predictor"])
    result = runner.invoke(app, ["simulate", str(config)])
    assert result.exit_code == 3


def test_evaluate_writes_report_and_csv(simulated, tmp_path):
    record = simulated[0]["run_dir"] + "/record.jsonl"
    result = runner.invoke(app, ["evaluate", record, "--out", str(tmp_path / "report")])
    assert result.exit_code == 0, result.output
    report = orjson.loads(result.stdout)
    assert report["summary"]["interventions"]["mean"] == 0.0
    assert (tmp_path / "report" / "report.json").is_file()
    scores = pd.read_csv(tmp_path / "report" / "scores.csv")
    assert scores["record"].tolist()[-2:] == ["mean", "std"]


def test_evaluate_missing_record_is_a_config_error(tmp_path):
    result = runner.invoke(app, ["evaluate", str(tmp_path / "missing.jsonl")])
    assert result.exit_code == 2


def test_evaluate_needs_a_record():
    assert runner.invoke(app, ["evaluate"]).exit_code == 2


def test_geodesy_prints_vehicle_frame_point():
    result = runner.invoke(app, ["geodesy", "34.7,137.41", "34.7001,137.41"])
    assert result.exit_code == 0, result.output
    point = orjson.loads(result.stdout)
    assert point["x_m"] == pytest.approx(0.0, abs=1e-9)
    assert point["y_m"] == pytest.approx(40_008_000 / 360 * 1e-4, rel=1e-6)


def test_geodesy_with_bearing_and_bad_input():
    result = runner.invoke(app, ["geodesy", "34.7,137.41", "34.7001,137.41", "--bearing", "90"])
    assert orjson.loads(result.stdout)["x_m"] < -11.0
    assert runner.invoke(app, ["geodesy", "34.7", "34.7001,137.41"]).exit_code == 2
    assert runner.invoke(app, ["geodesy", "95.0,137.41", "34.7001,137.41"]).exit_code == 2


def test_bev_projects_raster_files(tmp_path):
    depth = np.full((SMALL_CAMERA["height"], SMALL_CAMERA["width"]), np.inf)
    depth[48, 64] = 4.0
    seg = np.zeros(depth.shape, dtype=np.uint8)
    seg[48, 64] = 1
    write_depth(tmp_path / "d.dpf", depth)
    write_pgm(tmp_path / "s.pgm", seg)
    (tmp_path / "camera.yaml").write_text(yaml.safe_dump({**SMALL_CAMERA, "cam_height_m": 1.0}), encoding="utf-8")
    out = tmp_path / "grid.pgm"
    result = runner.invoke(app, ["bev", str(tmp_path / "d.dpf"), str(tmp_path / "s.pgm"), str(tmp_path / "camera.yaml"),
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    grid = read_pgm(out)
    assert grid.shape == (128, 256)
    assert np.count_nonzero(grid) == 1


def test_bev_rejects_bad_intrinsics(tmp_path):
    write_depth(tmp_path / "d.dpf", np.ones((4, 4)))
    write_pgm(tmp_path / "s.pgm", np.zeros((4, 4), dtype=np.uint8))
    (tmp_path / "camera.yaml").write_text("fx: -1\n", encoding="utf-8")
    result = runner.invoke(app, ["bev", str(tmp_path / "d.dpf"), str(tmp_path / "s.pgm"), str(tmp_path / "camera.yaml")])
    assert result.exit_code == 2


def test_policy_trace_prints_fused_controls(tmp_path):
    path = tmp_path / "agents.csv"
    pd.DataFrame({"mlp_steering": [0.5], "mlp_throttle": [0.5], "pid_steering": [0.3], "pid_throttle": [0.05]}).to_csv(path, index=False)
    result = runner.invoke(app, ["policy-trace", str(path), "--alphas", "1,3,1"])
    assert result.exit_code == 0, result.output
    header, row = result.stdout.strip().splitlines()
    assert header.endswith("fused_steering,fused_throttle")
    assert row.endswith("0.5,0.5")


def test_policy_trace_rejects_bad_alphas(tmp_path):
    path = tmp_path / "agents.csv"
    pd.DataFrame({"mlp_steering": [0.5], "mlp_throttle": [0.5], "pid_steering": [0.3], "pid_throttle": [0.05]}).to_csv(path, index=False)
    assert runner.invoke(app, ["policy-trace", str(path), "--alphas", "1,1"]).exit_code == 2
    assert runner.invoke(app, ["policy-trace", str(path), "--alphas", "0,1,1"]).exit_code == 2


def test_plot_writes_svg_and_csv(simulated, tmp_path):
    record = simulated[0]["run_dir"] + "/record.jsonl"
    result = runner.invoke(app, ["plot", record, "--out", str(tmp_path / "plots")])
    assert result.exit_code == 0, result.output
    paths = orjson.loads(result.stdout)
    assert paths["svg"].endswith("record_trajectory.svg")
    assert (tmp_path / "plots" / "record_ticks.csv").is_file()


def test_predictor_serve_answers_each_line():
    request = {
        "tick": 0, "bev_b64": "", "bev_shape": [0, 0], "cell_m": 0.1875,
        "rp1": [0.0, 12.0], "rp2": [0.0, 24.0], "omega_l": 0.0, "omega_r": 0.0, "wheel_radius_m": 0.15,
    }
    stdin = orjson.dumps(request) + b"\n" + b"garbage\n"
    result = runner.invoke(app, ["predictor-serve"], input=stdin)
    assert result.exit_code == 0
    first, second = (orjson.loads(line) for line in result.stdout.strip().splitlines())
    np.testing.assert_allclose(first["deltas"], [[0.0, 1.25], [0.0, 1.25], [0.0, 1.25]], atol=1e-12)
    assert "error" in second


def test_tune_prints_ranked_table(empty_world, write_config):
    result = runner.invoke(app, ["tune", str(write_config(empty_world, tick_limit=8)), "--kp", "-0.8", "--kd", "0,-0.2"])
    assert result.exit_code == 0, result.output
    lines = result.stdout.strip().splitlines()
    assert lines[0].startswith("kp,kd")
    assert len(lines) == 3

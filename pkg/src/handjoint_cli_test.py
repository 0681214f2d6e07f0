import json

import pytest
from click.testing import CliRunner

from src.handjoint.metrics import GroundTruthJoint
from src.handjoint_cli import cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def simulated(runner, tmp_path):
    observations = tmp_path / "obs.jsonl"
    truth = tmp_path / "gt.json"
    result = runner.invoke(
        cli,
        ["simulate", "--noise", "0", "--seed", "3", "--output", str(observations), "--gt-output", str(truth)],
    )
    assert result.exit_code == 0, result.output
    return observations, truth


def test_simulate_is_reproducible(runner, tmp_path, simulated):
    observations, truth = simulated
    again = tmp_path / "again.jsonl"
    result = runner.invoke(
        cli,
        ["simulate", "--noise", "0", "--seed", "3", "--output", str(again), "--gt-output", str(tmp_path / "gt2.json")],
    )
    assert result.exit_code == 0
    assert again.read_bytes() == observations.read_bytes()


def test_simulate_prismatic_ground_truth(runner, tmp_path):
    truth = tmp_path / "gt.json"
    result = runner.invoke(
        cli,
        [
            "simulate", "--joint", "prismatic", "--q-max", "0.3",
            "--output", str(tmp_path / "obs.jsonl"), "--gt-output", str(truth),
        ],
    )
    assert result.exit_code == 0
    gt = GroundTruthJoint.model_validate_json(truth.read_text())
    assert gt.type.value == "prismatic"
    assert sum(c * c for c in gt.axis_direction) == pytest.approx(1.0)
    assert gt.grasp_point is not None


@pytest.mark.parametrize("args", [["--q-max=-1"], ["--outlier-rate", "2"], ["--rate", "0"], ["--mover", "30"]])
def test_simulate_rejects_invalid_parameters(runner, tmp_path, args):
    result = runner.invoke(
        cli,
        ["simulate", *args, "--output", str(tmp_path / "o.jsonl"), "--gt-output", str(tmp_path / "g.json")],
    )
    assert result.exit_code == 2


def test_estimate_noiseless_revolute(runner, tmp_path, simulated):
    observations, truth = simulated
    report_path = tmp_path / "report.json"
    result = runner.invoke(
        cli,
        ["estimate", "--input", str(observations), "--ground-truth", str(truth), "--output", str(report_path)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert report["joint_type"] == "revolute"
    assert report["tangent_error"] < 1.0
    assert report["type_mismatch"] is False
    assert report["frames_per_second"] is None
    assert len(report["beliefs"]) == report["frames"]


def test_estimate_reports_are_reproducible(runner, tmp_path, simulated):
    observations, _ = simulated
    outputs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        result = runner.invoke(cli, ["estimate", "--input", str(observations), "--output", str(path)])
        assert result.exit_code == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]


def test_estimate_live_streams_beliefs(runner, tmp_path, simulated):
    observations, _ = simulated
    beliefs_path = tmp_path / "beliefs.jsonl"
    text = observations.read_text()
    result = runner.invoke(cli, ["estimate", "--live", "--beliefs", str(beliefs_path)], input=text)
    assert result.exit_code == 0, result.output
    frames = len(text.splitlines())
    belief_lines = beliefs_path.read_text().splitlines()
    assert len(belief_lines) == frames
    stdout_lines = result.stdout.splitlines()
    assert stdout_lines[:frames] == belief_lines
    assert json.loads("\n".join(stdout_lines[frames:]))["beliefs"] is None


def test_estimate_timing(runner, tmp_path, simulated):
    observations, _ = simulated
    result = runner.invoke(cli, ["estimate", "--input", str(observations), "--timing"])
    assert result.exit_code == 0
    assert json.loads(result.stdout)["frames_per_second"] > 0


def test_estimate_keeps_up_with_thirty_seconds_of_frames(runner, tmp_path):
    observations = tmp_path / "long.jsonl"
    result = runner.invoke(
        cli,
        [
            "simulate", "--duration", "30", "--seed", "5",
            "--output", str(observations), "--gt-output", str(tmp_path / "gt.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, ["estimate", "--input", str(observations), "--timing"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["frames"] == 901
    assert report["frames"] / report["frames_per_second"] < 1.0


def test_estimate_empty_input(runner, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    result = runner.invoke(cli, ["estimate", "--input", str(empty)])
    assert result.exit_code == 2
    assert "no frames" in result.stderr


def test_estimate_malformed_record(runner, tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"t": 0.0, "landmarks": []}\n{"t": 0.1, "landmarks": [{"id": 99, "pos": [0, 0, 0]}]}\n')
    result = runner.invoke(cli, ["estimate", "--input", str(path)])
    assert result.exit_code == 2
    assert "line 2" in result.stderr


def test_estimate_needs_one_source(runner):
    assert runner.invoke(cli, ["estimate"]).exit_code == 2


def test_estimate_without_body_is_not_converged(runner, tmp_path):
    path = tmp_path / "short.jsonl"
    path.write_text('{"t": 0.0, "landmarks": [{"id": 5, "pos": [0, 0, 0.5]}]}\n')
    result = runner.invoke(cli, ["estimate", "--input", str(path)])
    assert result.exit_code == 3
    assert json.loads(result.stdout)["joint_type"] == "rigid"


def test_estimate_bad_config(runner, tmp_path, simulated):
    observations, _ = simulated
    config = tmp_path / "config.toml"
    config.write_text("vis_thresh = -1.0\n")
    result = runner.invoke(cli, ["estimate", "--input", str(observations), "--config", str(config)])
    assert result.exit_code == 4
    assert "vis_thresh" in result.stderr


def write_truth(path, **fields):
    path.write_text(GroundTruthJoint(**fields).model_dump_json())
    return str(path)


def test_eval_identical_files(runner, tmp_path, simulated):
    _, truth = simulated
    result = runner.invoke(cli, ["eval", "--estimate", str(truth), "--ground-truth", str(truth)])
    assert result.exit_code == 0
    assert result.stdout.strip() == "0.0"


def test_eval_perpendicular_prismatic(runner, tmp_path):
    a = write_truth(tmp_path / "a.json", type="prismatic", axis_direction=(1, 0, 0), q_max=0.3, grasp_point=(0, 0, 0.5))
    b = write_truth(tmp_path / "b.json", type="prismatic", axis_direction=(0, 1, 0), q_max=0.3, grasp_point=(0, 0, 0.5))
    result = runner.invoke(cli, ["eval", "--estimate", a, "--ground-truth", b])
    assert result.stdout.strip() == "90.0"


def test_eval_flags_type_mismatch(runner, tmp_path):
    estimate = write_truth(tmp_path / "a.json", type="prismatic", axis_direction=(0, 1, 0), q_max=0.3)
    truth = write_truth(
        tmp_path / "b.json",
        type="revolute",
        axis_direction=(0, 0, 1),
        axis_point=(0, 0, 0),
        q_max=1e-6,
        grasp_point=(1, 0, 0),
    )
    result = runner.invoke(cli, ["eval", "--estimate", estimate, "--ground-truth", truth])
    assert result.exit_code == 0
    assert result.stdout.strip() == "0.0"
    assert "Warning" in result.stderr


def test_eval_report_input(runner, tmp_path, simulated):
    observations, truth = simulated
    report_path = tmp_path / "report.json"
    runner.invoke(
        cli,
        ["estimate", "--input", str(observations), "--ground-truth", str(truth), "--output", str(report_path)],
    )
    result = runner.invoke(cli, ["eval", "--estimate", str(report_path), "--ground-truth", str(truth)])
    assert result.exit_code == 0
    expected = json.loads(report_path.read_text())["tangent_error"]
    assert float(result.stdout) == pytest.approx(expected, abs=0.05)


def test_bench_writes_csv(runner, tmp_path):
    suite = tmp_path / "suite.yaml"
    suite.write_text(
        "methods: [single_point, rigid_hand]\n"
        "scenarios:\n"
        "  - {name: door, duration: 2.0, noise: 0.0}\n"
    )
    csv_path = tmp_path / "bench.csv"
    result = runner.invoke(cli, ["bench", "--suite", str(suite), "--output-csv", str(csv_path)])
    assert result.exit_code == 0, result.output
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "scenario,method,joint_type,tangent_error,error"
    assert len(lines) == 3
    assert "single_point: mean" in result.stderr


def test_bench_invalid_suite(runner, tmp_path):
    suite = tmp_path / "suite.yaml"
    suite.write_text("scenarios: []\n")
    assert runner.invoke(cli, ["bench", "--suite", str(suite)]).exit_code == 2

import json

import pytest
from click.testing import CliRunner

from app.cli import cli
from services.vessel import VesselParams


@pytest.fixture
def runner():
    return CliRunner()


def _run(runner, *args):
    return runner.invoke(cli, [str(arg) for arg in args], catch_exceptions=False)


def test_optimize_writes_allocation(runner, tmp_path):
    result = _run(runner, "optimize", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    allocation = json.loads((tmp_path / "allocation.json").read_text())
    assert sum(allocation["fractions"]) == pytest.approx(1.0)
    assert "of the total experiment time" in result.output


def test_schedule_from_allocation_file(runner, tmp_path):
    path = tmp_path / "allocation.json"
    path.write_text(json.dumps({"fractions": [0.2, 0.5, 0.3], "total_N": 600, "objective_value": 1.0}))
    result = _run(runner, "schedule", "--allocation", path, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    schedule = json.loads((tmp_path / "schedule.json").read_text())
    assert len(schedule["segments"]) == 3
    assert abs(schedule["total_samples"] - 600) <= max(s["segment_length"] for s in schedule["segments"])


def test_validate_estimate_file(runner, tmp_path):
    path = tmp_path / "estimate.json"
    path.write_text(json.dumps({"theta_hat": VesselParams.reference().as_array().tolist()}))
    result = _run(runner, "validate", "--estimate", path, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "validation.json").read_text())["norm"] == 0.0


def test_estimate_without_theta(runner, tmp_path):
    path = tmp_path / "estimate.json"
    path.write_text("{}")
    result = _run(runner, "validate", "--estimate", path, "--out", tmp_path)
    assert result.exit_code == 9


def test_missing_config_exits_with_config_code(runner, tmp_path):
    result = _run(runner, "summaries", "--config", tmp_path / "missing.json", "--out", tmp_path)
    assert result.exit_code == 2
    assert "error [config]" in result.output


def test_malformed_repetitions(runner, tmp_path):
    result = _run(runner, "plan", "--repetitions", "one,two", "--out", tmp_path)
    assert result.exit_code == 7


def test_zero_mean_study(runner, tmp_path):
    result = _run(runner, "zero-mean", "--draws", 50, "--length", 20, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    document = json.loads((tmp_path / "zero_mean.json").read_text())
    assert document["var_complete"] < document["var_batchwise"]


def test_zero_mean_rejects_odd_length(runner, tmp_path):
    assert _run(runner, "zero-mean", "--length", 7, "--out", tmp_path).exit_code == 2


def test_simulate_primitive(runner, tmp_path):
    result = _run(runner, "simulate", "--primitive", 1, "--clean", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    assert (tmp_path / "simulate.csv").read_text().startswith("k,")


def test_unknown_primitive(runner, tmp_path):
    assert _run(runner, "simulate", "--primitive", 99, "--out", tmp_path).exit_code == 2


def test_montecarlo_needs_a_positive_run_count(runner, tmp_path):
    result = _run(runner, "montecarlo", "--runs", 0, "--out", tmp_path)
    assert result.exit_code == 2
    assert not (tmp_path / "montecarlo.csv").exists()


def test_montecarlo_failure_has_its_own_code(runner, tmp_path):
    envelopes = {"envelopes": [{"id": 1, "label": "too fast", "motion": "steady", "u": 5.0}]}
    (tmp_path / "unreachable.json").write_text(json.dumps(envelopes))
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps({"library": {"envelopes": "unreachable.json"}}))
    result = _run(runner, "montecarlo", "--config", config, "--runs", 1, "--out", tmp_path)
    assert result.exit_code == 10
    assert "error [montecarlo]" in result.output


def test_unknown_design_mode_exits_with_config_code(runner, tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps({"design": {"mode": "foo"}}))
    result = _run(runner, "optimize", "--config", config, "--out", tmp_path)
    assert result.exit_code == 2
    assert "error [config]" in result.output

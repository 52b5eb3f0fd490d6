from __future__ import annotations

import json
from pathlib import Path

import pytest

from run_benchmark import load_scenarios
from utils.benchmark import AcceptanceResults, AcceptanceRunner, AcceptanceScenario
from utils.config_io import validate

BENCHMARKS = Path(__file__).resolve().parent.parent / "benchmarks"


@pytest.mark.parametrize("path", sorted(BENCHMARKS.glob("*.json")), ids=lambda p: p.stem)
def test_scenarios_load_and_validate(path):
    scenario = AcceptanceScenario.from_json(str(path))
    assert scenario.name == path.stem
    validate(scenario.run_config(), check_output=False)


def test_load_scenarios_filters_by_name():
    scenarios = load_scenarios(str(BENCHMARKS), only=["sphere_sd"])
    assert [s.name for s in scenarios] == ["sphere_sd"]
    assert load_scenarios("no/such/dir") == []


def test_results_round_trip(tmp_path):
    results = AcceptanceResults(scenario_name="s", timestamp="2026-01-01T00:00:00", stop_reason="Completed",
                                final_time=0.1, steps=12, wall_seconds=0.5,
                                checks={"drift_vol": {"value": 1e-5, "limit": 1e-3, "passed": True}})
    path = tmp_path / "results.json"
    results.save(str(path))
    assert json.loads(path.read_text())["passed"] is True
    loaded = AcceptanceResults.load(str(path))
    assert loaded == results


def test_quick_scenario(tmp_path):
    scenario = AcceptanceScenario(
        name="quick",
        description="short unconstrained run",
        run={"mesh": {"kind": "icosphere", "level": 2},
             "scheme": {"dt_init": 1e-5, "dt_max": 1e-4, "t_end": 1e-3},
             "monitor": {"snapshot_times": [5e-4]}},
        max_drift={"vol": 1e-3},
        max_radial_deviation=1e-2,
        scale=2.0,
        scale_tolerance=1e-6,
    )
    runner = AcceptanceRunner(output_dir=str(tmp_path))
    results = runner.run_scenario(scenario)
    assert results.stop_reason == "Completed"
    assert results.passed, results.checks
    assert set(results.checks) == {"stop_reason", "drift_vol", "radial_deviation", "scaling"}
    assert (tmp_path / "quick" / "monitor.csv").exists()
    runner.generate_report(str(tmp_path / "report.json"))
    assert json.loads((tmp_path / "report.json").read_text())["total_scenarios"] == 1


@pytest.mark.slow
def test_sphere_scenario_passes(tmp_path):
    scenario = AcceptanceScenario.from_json(str(BENCHMARKS / "sphere_sd.json"))
    results = AcceptanceRunner(output_dir=str(tmp_path)).run_scenario(scenario)
    assert results.passed, results.checks

from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from utils.errors import TrajectoryError
from utils.integrator import initial_state
from utils.metrics import CSV_COLUMNS, MonitorCollector, MonitorRecord, Trajectory, drift_stats
from utils.primitives import icosphere
from utils.protocol import SchemeSpec


def _collector():
    collector = MonitorCollector()
    for i, vol in enumerate([1.0, 1.0005, 0.9995, 1.0002]):
        collector.record(MonitorRecord(t=0.1 * i, dt=0.1, vol=vol, area=5.0 - 0.1 * i, h=math.nan))
    collector.records[-1].stopFlag = "Completed"
    return collector


def test_csv_header_and_precision(tmp_path):
    collector = _collector()
    path = tmp_path / "monitor.csv"
    collector.export_to_csv(str(path))
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_COLUMNS
    assert rows[0] == ["t", "dt", "vol", "area", "intH", "intAbsH", "intK", "intA2", "willmore",
                       "intGradH2", "h", "minEdge", "stopFlag"]
    assert rows[2][CSV_COLUMNS.index("vol")] == "%.17g" % 1.0005
    assert rows[-1][-1] == "Completed"


def test_csv_round_trip_is_exact(tmp_path):
    collector = _collector()
    path = tmp_path / "monitor.csv"
    collector.export_to_csv(str(path))
    loaded = Trajectory.load(path)
    np.testing.assert_array_equal(loaded.series("vol"), collector.series("vol"))
    np.testing.assert_array_equal(loaded.series("t"), collector.series("t"))
    assert loaded.stop_reason == "Completed"
    assert math.isnan(loaded.records[0].h)


def test_json_export_maps_nan_to_null(tmp_path):
    collector = _collector()
    collector.record_snapshot(3, 0.3, "snap.obj")
    collector.record_event(0.2, "DenominatorVanishing", "MeanH")
    path = tmp_path / "monitor.json"
    collector.export_to_json(str(path), extra={"config": {"name": "x"}})
    data = json.loads(path.read_text())
    assert data["records"][0]["h"] is None
    assert data["config"] == {"name": "x"}
    assert data["events"][0]["kind"] == "DenominatorVanishing"
    loaded = Trajectory.load(tmp_path)
    assert math.isnan(loaded.records[0].h)
    assert loaded.snapshots[0]["step"] == 3


def test_drift_stats():
    stats = drift_stats("vol", np.array([2.0, 2.002, 1.999, 2.001]))
    assert stats.max_relative_drift == pytest.approx(1e-3)
    assert stats.max_rise == pytest.approx(0.002)
    assert stats.max_drop == pytest.approx(0.003)
    assert not stats.non_increasing(1e-4)
    assert stats.non_increasing(1e-3)
    assert drift_stats("vol", np.array([])).max_relative_drift == 0.0


def test_monotone_series():
    stats = drift_stats("area", np.array([5.0, 4.9, 4.8, 4.8]))
    assert stats.non_increasing(0.0)
    assert not stats.non_decreasing(0.0)


def test_record_from_state():
    mesh = icosphere(2)
    state = initial_state(mesh, SchemeSpec(dt_init=1e-5))
    record = MonitorRecord.from_state(state, h=0.0)
    assert record.dt == 1e-5
    assert record.intK == pytest.approx(4 * math.pi)
    assert record.minEdge == pytest.approx(mesh.min_edge())
    assert math.isnan(record.neckRadius)
    assert len(record.to_row()) == len(CSV_COLUMNS)


def test_summary_contains_drift():
    summary = _collector().get_summary()
    assert summary["samples"] == 4
    assert summary["drift"]["vol"]["max_relative_drift"] == pytest.approx(5e-4)


def test_missing_trajectory(tmp_path):
    with pytest.raises(TrajectoryError):
        Trajectory.load(tmp_path / "nowhere")


def test_bad_header(tmp_path):
    path = tmp_path / "monitor.csv"
    path.write_text("time,volume\n0,1\n")
    with pytest.raises(TrajectoryError):
        Trajectory.load(path)


def test_short_row(tmp_path):
    path = tmp_path / "monitor.csv"
    path.write_text(",".join(CSV_COLUMNS) + "\n0,1,2\n")
    with pytest.raises(TrajectoryError):
        Trajectory.load(path)


def test_corrupt_json(tmp_path):
    path = tmp_path / "monitor.json"
    path.write_text("{not json")
    with pytest.raises(TrajectoryError):
        Trajectory.load(path)

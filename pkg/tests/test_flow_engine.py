from __future__ import annotations

import json

import numpy as np
import pytest

from flow_engine import FlowSimulator, run_flow
from utils.errors import DenominatorVanishing, UnboundedTimeFunction
from utils.metrics import CSV_COLUMNS, Trajectory
from utils.primitives import dumbbell, icosphere, perturbed_icosphere
from utils.protocol import ConstraintSpec, MonitorSpec, RunConfig, SchemeSpec, StopReason


def _simulator(mesh, output_dir=None, constraint=None, monitor=None, **scheme):
    settings = dict(dt_init=1e-5, dt_max=1e-4, t_end=1e-3)
    settings.update(scheme)
    cfg = RunConfig(scheme=SchemeSpec(**settings), constraint=constraint or ConstraintSpec(),
                    monitor=monitor or MonitorSpec())
    sim = FlowSimulator(cfg, output_dir=output_dir)
    sim.save_initial_state(mesh)
    sim.reset()
    return sim


def test_sphere_run_completes_and_conserves_volume():
    sim = _simulator(icosphere(2))
    result = sim.run()
    assert result.stop_reason == StopReason.COMPLETED
    assert result.final_state.t == pytest.approx(1e-3, abs=1e-12)
    assert sim.metrics.drift("vol").max_relative_drift <= 1e-3
    assert result.records[-1].stopFlag == "Completed"
    assert result.records[0].t == 0.0


def test_dt_grows_to_dt_max_on_sphere():
    sim = _simulator(icosphere(2), dt_init=1e-6, dt_max=1e-4, t_end=3e-3)
    sim.run()
    assert max(r.dt for r in sim.metrics.records) == pytest.approx(1e-4)


def test_sample_interval_and_snapshot_times():
    monitor = MonitorSpec(sample_interval=2.5e-4, snapshot_times=[5e-4])
    sim = _simulator(icosphere(2), monitor=monitor)
    result = sim.run()
    times = [r.t for r in result.records]
    np.testing.assert_allclose(times, [0.0, 2.5e-4, 5e-4, 7.5e-4, 1e-3], atol=1e-14)
    assert len(sim.snapshot_meshes) == 1
    assert sim.snapshot_meshes[0][0] == pytest.approx(5e-4, abs=1e-14)


def test_step_limit():
    sim = _simulator(icosphere(2), max_steps=3)
    result = sim.run()
    assert result.stop_reason == StopReason.STEP_LIMIT
    assert result.final_state.step_index == 3


def test_denominator_failure_stops_run():
    sim = _simulator(icosphere(2), constraint=ConstraintSpec(kind="MeanH", denom_eps=1e6))
    result = sim.run()
    assert result.stop_reason == StopReason.CONSTRAINT_UNDEFINED
    assert sim.metrics.events[0]["kind"] == "DenominatorVanishing"
    assert result.final_state.step_index == 0


def test_denominator_failure_can_raise():
    sim = _simulator(icosphere(2), constraint=ConstraintSpec(kind="MeanH", denom_eps=1e6),
                     on_denominator_failure="raise")
    with pytest.raises(DenominatorVanishing):
        sim.run()


def test_unbounded_time_function_rejected_at_reset():
    cfg = RunConfig(scheme=SchemeSpec(t_end=1.0, dt_max=1e-3),
                    constraint=ConstraintSpec(kind="TimeFunction", expression="1/(t - 0.5)"))
    sim = FlowSimulator(cfg)
    sim.save_initial_state(icosphere(1))
    with pytest.raises(UnboundedTimeFunction):
        sim.reset()


def test_time_function_drives_volume():
    # h = 1 adds |M| per unit time on top of the unconstrained flow
    driven = _simulator(icosphere(2), constraint=ConstraintSpec(kind="TimeFunction", expression="1 + 0*t"))
    result = driven.run()
    free = _simulator(icosphere(2))
    free.run()
    gained = driven.metrics.series("vol")[-1] - free.metrics.series("vol")[-1]
    area = driven.metrics.series("area")
    assert gained == pytest.approx(area[0] * 1e-3, rel=2e-2)
    assert result.records[-1].h == pytest.approx(1.0)


def test_mean_h_keeps_area():
    mesh = perturbed_icosphere(2, 1.0, 0.05, np.random.default_rng(0))
    held = _simulator(mesh, constraint=ConstraintSpec(kind="MeanH"), dt_max=2e-5, t_end=2e-4)
    held.run()
    free = _simulator(mesh, dt_max=2e-5, t_end=2e-4)
    free.run()
    assert held.metrics.drift("area").max_relative_drift <= 1e-3
    assert held.metrics.drift("area").max_relative_drift < free.metrics.drift("area").max_relative_drift


def test_abs_mean_h_holds_area_and_grows_volume():
    mesh = perturbed_icosphere(2, 1.0, 0.05, np.random.default_rng(0))
    held = _simulator(mesh, constraint=ConstraintSpec(kind="AbsMeanH"), dt_max=2e-5, t_end=2e-4)
    held.run()
    free = _simulator(mesh, dt_max=2e-5, t_end=2e-4)
    free.run()
    assert held.metrics.drift("area").max_relative_drift <= 1e-3
    assert held.metrics.series("vol")[-1] > free.metrics.series("vol")[-1]


def test_gauss_mixed_keeps_total_mean_curvature():
    mesh = perturbed_icosphere(2, 1.0, 0.05, np.random.default_rng(0))
    held = _simulator(mesh, constraint=ConstraintSpec(kind="GaussMixed"), dt_max=2e-5, t_end=2e-4)
    held.run()
    free = _simulator(mesh, dt_max=2e-5, t_end=2e-4)
    free.run()
    assert held.metrics.drift("intH").max_relative_drift <= 1e-3
    assert held.metrics.drift("intH").max_relative_drift < free.metrics.drift("intH").max_relative_drift


def test_outputs(tmp_path):
    sim = _simulator(icosphere(2), output_dir=str(tmp_path), monitor=MonitorSpec(snapshot_every=10))
    sim.run()
    sim.write_outputs()
    header = (tmp_path / "monitor.csv").read_text().splitlines()[0]
    assert header.split(",") == CSV_COLUMNS
    data = json.loads((tmp_path / "monitor.json").read_text())
    assert data["config"]["scheme"]["kind"] == "SemiImplicit"
    assert (tmp_path / "final.obj").exists()
    snapshots = sorted(tmp_path.glob("snapshot_*.obj"))
    assert snapshots and snapshots[0].name == "snapshot_000010.obj"
    loaded = Trajectory.load(tmp_path)
    assert len(loaded.records) == len(sim.metrics.records)


def test_runs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        mesh = perturbed_icosphere(2, 1.0, 0.05, np.random.default_rng(9))
        run_flow(mesh, SchemeSpec(dt_init=1e-5, dt_max=1e-4, t_end=5e-4), ConstraintSpec(kind="AbsMeanH"),
                 output_dir=str(tmp_path / name))
    assert (tmp_path / "a" / "monitor.csv").read_bytes() == (tmp_path / "b" / "monitor.csv").read_bytes()


def test_json_export_is_reproducible(tmp_path):
    exports = []
    for _ in range(2):
        mesh = perturbed_icosphere(2, 1.0, 0.05, np.random.default_rng(9))
        run_flow(mesh, SchemeSpec(dt_init=1e-5, dt_max=1e-4, t_end=5e-4), ConstraintSpec(kind="MeanH"),
                 MonitorSpec(snapshot_times=[2e-4]), output_dir=str(tmp_path / "run"))
        exports.append((tmp_path / "run" / "monitor.json").read_bytes())
    assert exports[0] == exports[1]


def test_reset_restores_initial_mesh():
    mesh = icosphere(2)
    sim = _simulator(mesh)
    sim.run()
    state = sim.reset()
    assert state.t == 0.0
    np.testing.assert_array_equal(state.mesh.vertices, mesh.vertices)
    assert sim.metrics.records == []


def test_log_is_bounded():
    sim = _simulator(icosphere(1))
    for i in range(150):
        sim.log("test", f"entry {i}")
    assert len(sim.logs) == 100
    assert sim.logs[-1][2] == "entry 149"


@pytest.mark.slow
def test_sphere_surface_diffusion_acceptance():
    sim = _simulator(icosphere(4), dt_init=1e-4, dt_max=1e-3, t_end=0.05)
    result = sim.run()
    assert result.stop_reason == StopReason.COMPLETED
    assert sim.metrics.drift("vol").max_relative_drift <= 1e-3
    assert sim.metrics.drift("area").non_increasing(1e-8)
    radii = np.linalg.norm(result.final_state.mesh.vertices, axis=1)
    assert np.abs(radii - 1.0).max() <= 1e-3


@pytest.mark.slow
def test_dumbbell_pinches():
    sim = _simulator(dumbbell(1.0, 0.12, 1.2, 96), dt_init=1e-7, dt_max=1e-4, t_end=0.5)
    result = sim.run()
    assert result.stop_reason == StopReason.NECK_COLLAPSE
    assert result.final_state.t < 0.5
    necks = [r.neckRadius for r in result.records[-20:]]
    assert all(b <= a + 1e-12 for a, b in zip(necks, necks[1:]))

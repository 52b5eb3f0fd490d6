from __future__ import annotations
from typing import Dict, List, Any, Optional
from dataclasses import dataclass, field, asdict
import json
import os
import time
from datetime import datetime

import numpy as np

from utils.config_io import config_from_dict
from utils.protocol import RunConfig


@dataclass
class AcceptanceScenario:
    """An acceptance run: a RunConfig plus the criteria its trajectory must meet"""
    name: str
    description: str
    # RunConfig sections, as in a JSON config file
    run: Dict[str, Any] = field(default_factory=dict)

    # Criteria; absent keys are not checked
    expected_stop: List[str] = field(default_factory=lambda: ["Completed"])
    max_drift: Dict[str, float] = field(default_factory=dict)        # column -> relative bound
    non_increasing: Dict[str, float] = field(default_factory=dict)   # column -> per-step relative slack
    non_decreasing: Dict[str, float] = field(default_factory=dict)
    max_radial_deviation: Optional[float] = None                     # fraction of the initial radius

    # Neck cross-check against the profile solver on the same generating curve
    oracle_nodes: int = 0
    neck_tolerance: float = 0.05
    neck_min_edges: float = 4.0

    # Lifespan fit over the run's snapshots
    lifespan_min_r2: Optional[float] = None
    epsilon0: Optional[float] = None

    # Rerun with x -> s x, t -> s^4 t and compare
    scale: Optional[float] = None
    scale_tolerance: float = 1e-6

    @classmethod
    def from_json(cls, filepath: str) -> 'AcceptanceScenario':
        """Load scenario from JSON file"""
        with open(filepath, 'r') as f:
            data = json.load(f)
        return cls(**data)

    def to_json(self, filepath: str):
        """Save scenario to JSON file"""
        with open(filepath, 'w') as f:
            json.dump(asdict(self), f, indent=2)

    def run_config(self) -> RunConfig:
        return config_from_dict(self.run)


@dataclass
class AcceptanceResults:
    """Results from an acceptance run"""
    scenario_name: str
    timestamp: str
    stop_reason: str
    final_time: float
    steps: int
    wall_seconds: float
    checks: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c['passed'] for c in self.checks.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scenario_name': self.scenario_name,
            'timestamp': self.timestamp,
            'stop_reason': self.stop_reason,
            'final_time': self.final_time,
            'steps': self.steps,
            'wall_seconds': self.wall_seconds,
            'passed': self.passed,
            'checks': self.checks,
            'summary': self.summary,
        }

    def save(self, filepath: str):
        """Save results to JSON file"""
        with open(filepath, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, default=float)

    @classmethod
    def load(cls, filepath: str) -> 'AcceptanceResults':
        """Load results from JSON file"""
        with open(filepath, 'r') as f:
            data = json.load(f)
        data.pop('passed', None)
        return cls(**data)


def _check(value: float, limit: float, passed: bool) -> Dict[str, Any]:
    return {'value': float(value), 'limit': float(limit), 'passed': bool(passed)}


class AcceptanceRunner:
    """Run acceptance scenarios and keep their results"""

    def __init__(self, output_dir: str = "benchmark_results"):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)
        self.results: List[AcceptanceResults] = []

    def run_scenario(self, scenario: AcceptanceScenario) -> AcceptanceResults:
        from flow_engine import FlowSimulator
        from utils.primitives import generate_primitive

        print(f"\n=== Running {scenario.name} ===")
        cfg = scenario.run_config()
        run_dir = os.path.join(self.output_dir, scenario.name)
        mesh = generate_primitive(cfg.mesh)

        started = time.perf_counter()
        sim = FlowSimulator(cfg, output_dir=run_dir)
        sim.save_initial_state(mesh)
        sim.reset()
        result = sim.run()
        sim.write_outputs()
        wall = time.perf_counter() - started

        checks = self._evaluate(scenario, cfg, sim, result)
        results = AcceptanceResults(
            scenario_name=scenario.name,
            timestamp=datetime.now().isoformat(),
            stop_reason=result.stop_reason.value,
            final_time=result.final_state.t,
            steps=result.final_state.step_index,
            wall_seconds=wall,
            checks=checks,
            summary=sim.metrics.get_summary(),
        )
        self.results.append(results)
        filename = f"{scenario.name}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
        results.save(os.path.join(self.output_dir, filename))
        return results

    def _evaluate(self, scenario: AcceptanceScenario, cfg: RunConfig, sim, result) -> Dict[str, Dict[str, Any]]:
        checks: Dict[str, Dict[str, Any]] = {}
        checks['stop_reason'] = {'value': result.stop_reason.value, 'limit': scenario.expected_stop,
                                 'passed': result.stop_reason.value in scenario.expected_stop}
        for column, bound in scenario.max_drift.items():
            stats = sim.metrics.drift(column)
            checks[f'drift_{column}'] = _check(stats.max_relative_drift, bound, stats.max_relative_drift <= bound)
        for column, slack in scenario.non_increasing.items():
            stats = sim.metrics.drift(column)
            checks[f'non_increasing_{column}'] = _check(stats.max_rise, slack, stats.non_increasing(slack))
        for column, slack in scenario.non_decreasing.items():
            stats = sim.metrics.drift(column)
            checks[f'non_decreasing_{column}'] = _check(stats.max_drop, slack, stats.non_decreasing(slack))
        if scenario.max_radial_deviation is not None:
            deviation = self._radial_deviation(sim)
            checks['radial_deviation'] = _check(deviation, scenario.max_radial_deviation,
                                                deviation <= scenario.max_radial_deviation)
        if scenario.oracle_nodes:
            checks['neck_vs_oracle'] = self._neck_cross_check(scenario, cfg, sim)
        if scenario.lifespan_min_r2 is not None:
            checks['lifespan_fit'] = self._lifespan_check(scenario, sim)
        if scenario.scale:
            checks['scaling'] = self._scaling_check(scenario, cfg, sim)
        return checks

    def _radial_deviation(self, sim) -> float:
        """max | |x| - R0 | / R0 over the snapshots and the final state."""
        r0 = float(np.linalg.norm(sim.initial_mesh.vertices, axis=1).mean())
        meshes = [m for _, m in sim.snapshot_meshes] + [sim.state.mesh]
        return max(float(np.abs(np.linalg.norm(m.vertices, axis=1) - r0).max()) / r0 for m in meshes)

    def _neck_cross_check(self, scenario: AcceptanceScenario, cfg: RunConfig, sim) -> Dict[str, Any]:
        from utils.axisym import ProfileSpec, axisym_run, make_profile
        spec = ProfileSpec(kind="dumbbell", bulb_radius=cfg.mesh.bulb_radius, neck_radius=cfg.mesh.neck_radius,
                           neck_length=cfg.mesh.neck_length, nodes=scenario.oracle_nodes)
        oracle = axisym_run(make_profile(spec), cfg.scheme, cfg.constraint)
        series = np.array([(t, n) for t, n in oracle.neck_series if np.isfinite(n)]).reshape(-1, 2)
        t_o, n_o = series[:, 0], series[:, 1]
        edge = sim.reference_edge
        worst = 0.0
        compared = 0
        for record in sim.metrics.records:
            neck = record.neckRadius
            if not np.isfinite(neck) or neck < scenario.neck_min_edges * edge or not len(t_o) or record.t > t_o[-1]:
                continue
            reference = float(np.interp(record.t, t_o, n_o))
            worst = max(worst, abs(neck - reference) / reference)
            compared += 1
        check = _check(worst, scenario.neck_tolerance, compared > 0 and worst <= scenario.neck_tolerance)
        check.update(compared=compared, oracle_stop=oracle.stop_reason.value, oracle_pinch_time=oracle.pinch_time())
        return check

    def _lifespan_check(self, scenario: AcceptanceScenario, sim) -> Dict[str, Any]:
        from utils.diagnostics import analyze_snapshots
        snapshots = list(sim.snapshot_meshes) + [(sim.state.t, sim.state.mesh)]
        report = analyze_snapshots(snapshots, scenario.epsilon0, rho_list=[], checkers=())
        fit = report['lifespan_fit']
        r2 = fit.get('r_squared') or 0.0
        c = fit.get('c') or 0.0
        final = report.get('final_concentration', {})
        check = _check(r2, scenario.lifespan_min_r2,
                       c > 0 and r2 >= scenario.lifespan_min_r2 and final.get('reaches_epsilon0', False))
        check.update(c=c, t_est=fit.get('t_est'), final_concentration=final)
        return check

    def _scaling_check(self, scenario: AcceptanceScenario, cfg: RunConfig, sim) -> Dict[str, Any]:
        from dataclasses import replace
        from flow_engine import FlowSimulator
        s = scenario.scale
        t4 = s ** 4
        scheme = replace(cfg.scheme, dt_init=cfg.scheme.dt_init * t4, dt_min=cfg.scheme.dt_min * t4,
                         dt_max=cfg.scheme.dt_max * t4, t_end=cfg.scheme.t_end * t4)
        monitor = replace(cfg.monitor, sample_interval=cfg.monitor.sample_interval * t4,
                          snapshot_times=[t * t4 for t in cfg.monitor.snapshot_times])
        constraint = cfg.constraint
        if constraint.denom_eps is not None:
            constraint = replace(constraint, denom_eps=constraint.denom_eps / s)
        scaled_cfg = replace(cfg, scheme=scheme, monitor=monitor, constraint=constraint)
        scaled = FlowSimulator(scaled_cfg)
        scaled.save_initial_state(sim.initial_mesh.transformed(scale=s))
        scaled.reset()
        scaled.run()
        base = sim.state.mesh.vertices
        diff = np.abs(scaled.state.mesh.vertices / s - base).max() / np.abs(base).max()
        eta_base = sim.metrics.records[-1].intA2
        eta_scaled = scaled.metrics.records[-1].intA2
        check = _check(diff, scenario.scale_tolerance, diff <= scenario.scale_tolerance)
        check.update(intA2_ratio=eta_scaled / eta_base if eta_base else float('nan'),
                     steps_base=sim.state.step_index, steps_scaled=scaled.state.step_index)
        return check

    def generate_report(self, filepath: str):
        """Write a combined report for all results"""
        report = {
            'generated_at': datetime.now().isoformat(),
            'total_scenarios': len(self.results),
            'passed': sum(r.passed for r in self.results),
            'results': [r.to_dict() for r in self.results]
        }

        with open(filepath, 'w') as f:
            json.dump(report, f, indent=2, default=float)

        print(f"\nReport saved to: {filepath}")

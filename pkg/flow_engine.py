from __future__ import annotations
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, List, Dict, Optional

from utils.errors import ConfigInvalid, ConstraintError, DenominatorVanishing, SolverFailure, StepBelowDtMin
from utils.integrator import (SHRINK_ABOVE, adapt_dt, check_stop, initial_state, resolve_denom_eps,
                              step as integrator_step, tangential_smooth)
from utils.mesh import TriMesh, write_obj
from utils.metrics import MonitorCollector, MonitorRecord
from utils.operators import geometry_cache
from utils.protocol import (config, ConstraintSpec, ConstraintValue, Event, FlowState, MonitorSpec,
                            RunConfig, SchemeSpec, StopReason)

logger = logging.getLogger("csdflow.engine")


class ConstraintLoader:
    """Auto-discover and validate constraint plugins from the constraints/ folder"""

    @staticmethod
    def discover_constraints():
        """Scan the constraints folder and return {kind: {"instance": ..., "error": ...}}"""
        import os
        import importlib.util
        import inspect

        constraints = {}
        plugin_dir = os.path.join(os.path.dirname(__file__), 'constraints')

        if not os.path.exists(plugin_dir):
            return constraints

        for filename in sorted(os.listdir(plugin_dir)):
            if filename.endswith('.py') and not filename.startswith('__'):
                module_name = f"csdflow_constraint_{filename[:-3]}"
                filepath = os.path.join(plugin_dir, filename)

                try:
                    spec = importlib.util.spec_from_file_location(module_name, filepath)
                    if spec is None or spec.loader is None:
                        constraints[filename] = {"error": "Failed to load module spec"}
                        continue
                    module = importlib.util.module_from_spec(spec)
                    spec.loader.exec_module(module)

                    plugin_class = None
                    for name, obj in inspect.getmembers(module, inspect.isclass):
                        if obj.__module__ == module.__name__ and hasattr(obj, 'evaluate'):
                            plugin_class = obj
                            break

                    if plugin_class is None:
                        constraints[filename] = {"error": f"No class with evaluate() in {filename}"}
                        continue

                    if not callable(getattr(plugin_class, 'evaluate')):
                        constraints[filename] = {"error": "evaluate must be a callable method"}
                        continue

                    kind = getattr(plugin_class, 'kind', None)
                    if not kind:
                        constraints[filename] = {"error": f"{plugin_class.__name__} has no kind"}
                        continue

                    constraints[kind] = {"instance": plugin_class(), "error": None}

                except Exception as e:
                    constraints[filename] = {"error": f"Failed to load: {str(e)}"}

        return constraints


class ConstraintController:
    def __init__(self, simulator=None):
        self.constraints = {}
        self.validation_errors = {}
        self.active_kind = None
        self.simulator = simulator

    @classmethod
    def discovered(cls, simulator=None) -> 'ConstraintController':
        controller = cls(simulator)
        for kind, entry in ConstraintLoader.discover_constraints().items():
            if entry["error"] is None:
                controller.register_constraint(kind, entry["instance"])
            else:
                controller.validation_errors[kind] = entry["error"]
                logger.warning("constraint plugin %s rejected: %s", kind, entry["error"])
        return controller

    def register_constraint(self, kind, instance):
        self.constraints[kind] = instance

    def set_active(self, kind):
        if kind not in self.constraints:
            raise ConfigInvalid(f"no constraint plugin for kind '{kind}'"
                                + (f" ({self.validation_errors[kind]})" if kind in self.validation_errors else ""))
        self.active_kind = kind

    def prepare(self, spec: ConstraintSpec, t_end: float):
        """One-off checks before a run, e.g. TimeFunction boundedness."""
        self.set_active(spec.kind)
        plugin = self.constraints[spec.kind]
        if hasattr(plugin, 'prepare'):
            plugin.prepare(spec, t_end)

    def compute_h(self, state: FlowState, spec: ConstraintSpec) -> ConstraintValue:
        plugin = self.constraints.get(spec.kind)
        if plugin is None:
            self.set_active(spec.kind)
        if spec.denom_eps is None:
            spec = replace(spec, denom_eps=resolve_denom_eps(state.mesh, None))
        return self.constraints[spec.kind].evaluate(state, spec, state.t)


_controller: Optional[ConstraintController] = None


def compute_h(state: FlowState, spec: ConstraintSpec) -> ConstraintValue:
    """Evaluate h for the state with the discovered constraint plugins."""
    global _controller
    if _controller is None:
        _controller = ConstraintController.discovered()
    return _controller.compute_h(state, spec)


@dataclass
class FlowResult:
    records: List[MonitorRecord]
    snapshots: List[Dict[str, Any]]
    stop_reason: StopReason
    final_state: FlowState
    logs: List[tuple] = field(default_factory=list)


class FlowSimulator:
    def __init__(self, run_config: Optional[RunConfig] = None, output_dir: Optional[str] = None):
        self.config = run_config or config
        self.output_dir = Path(output_dir) if output_dir else None
        self.t = 0.0
        self.events = []
        self.state: Optional[FlowState] = None
        self.running = False
        self.constraint_controller = ConstraintController.discovered(self)

        self.logs = []
        self.metrics = MonitorCollector()
        self.snapshot_meshes: List[tuple] = []

        self.initial_mesh: Optional[TriMesh] = None
        self.reference_edge = 0.0
        self.stop_reason: Optional[StopReason] = None
        self.current_h: Optional[ConstraintValue] = None
        self._constraint: Optional[ConstraintSpec] = None
        self._nominal_dt = 0.0
        self._h_step = -1
        self._h_reason: Optional[StopReason] = None
        self.rejected_steps = 0

    @property
    def scheme(self) -> SchemeSpec:
        return self.config.scheme

    @property
    def monitor(self) -> MonitorSpec:
        return self.config.monitor

    def schedule(self, delay: float, callback: Callable, *args, **kwargs):
        event_time = self.t + delay
        event = Event(timestamp=event_time, priority=1,
                      callback=callback, args=args, kwargs=kwargs)
        heapq.heappush(self.events, event)

    def log(self, source: str, message: str):
        self.logs.append((self.t, source, message))
        if len(self.logs) > 100:
            self.logs.pop(0)
        logger.info("[t=%.6g] %s: %s", self.t, source, message)

    def save_initial_state(self, mesh: TriMesh):
        """Keep the initial mesh for reset."""
        self.initial_mesh = mesh

    def reset(self) -> FlowState:
        """Reset the flow to the initial mesh"""
        if self.initial_mesh is None:
            raise ConfigInvalid("no initial mesh loaded")
        self.t = 0.0
        self.events.clear()
        self.logs.clear()
        self.metrics.reset()
        self.snapshot_meshes.clear()
        self.stop_reason = None
        self.rejected_steps = 0
        self._h_step = -1
        self.current_h = None

        self.state = initial_state(self.initial_mesh, self.scheme)
        self.reference_edge = self.initial_mesh.mean_edge()
        self._nominal_dt = self.scheme.dt_init
        spec = self.config.constraint
        self._constraint = replace(spec, denom_eps=resolve_denom_eps(self.initial_mesh, spec.denom_eps))
        self.constraint_controller.prepare(self._constraint, self.scheme.t_end)

        if self.monitor.sample_interval > 0:
            self.schedule(0.0, self._sample_event, 0.0)
        for t_snap in sorted(set(self.monitor.snapshot_times)):
            if t_snap <= self.scheme.t_end:
                self.schedule(t_snap, self._snapshot)
        return self.state

    # --- events ---------------------------------------------------------------

    def _sample_event(self, timestamp: float):
        self._record()
        nxt = timestamp + self.monitor.sample_interval
        if nxt <= self.scheme.t_end:
            self.schedule(nxt - self.t, self._sample_event, nxt)

    def _snapshot(self):
        state = self.state
        self.snapshot_meshes.append((state.t, state.mesh))
        path = ""
        if self.output_dir is not None:
            path = str(write_obj(state.mesh, self.output_dir / f"snapshot_{state.step_index:06d}.obj"))
        self.metrics.record_snapshot(state.step_index, state.t, path)
        self.log("monitor", f"snapshot at step {state.step_index}")

    def _record(self, stop_flag: str = "Running"):
        h = self.current_h.h if self.current_h is not None else math.nan
        last = self.metrics.records[-1] if self.metrics.records else None
        record = MonitorRecord.from_state(self.state, h=h, stop_flag=stop_flag)
        if last is not None and last.t == record.t and last.dt == record.dt:
            self.metrics.records[-1] = record
        else:
            self.metrics.record(record)

    def _fire_due_events(self):
        # Events within dtMin of the current time are due
        horizon = self.t + self.scheme.dt_min
        while self.events and self.events[0].timestamp <= horizon:
            event = heapq.heappop(self.events)
            event.callback(*event.args, **event.kwargs)

    # --- stepping -------------------------------------------------------------

    def _evaluate_h(self) -> Optional[StopReason]:
        if self._h_step == self.state.step_index:
            return self._h_reason
        self._h_step = self.state.step_index
        self._h_reason = self._compute_h()
        return self._h_reason

    def _compute_h(self) -> Optional[StopReason]:
        try:
            self.current_h = self.constraint_controller.compute_h(self.state, self._constraint)
        except DenominatorVanishing as e:
            self.current_h = None
            self.metrics.record_event(self.t, "DenominatorVanishing", str(e))
            self.log("constraint", str(e))
            if self.scheme.on_denominator_failure == "raise":
                raise
            return StopReason.CONSTRAINT_UNDEFINED
        except ConstraintError as e:
            self.current_h = None
            self.metrics.record_event(self.t, type(e).__name__, str(e))
            self.log("constraint", str(e))
            return StopReason.CONSTRAINT_UNDEFINED
        return None

    def _step_size(self) -> float:
        dt = adapt_dt(replace(self.state, dt=self._nominal_dt), self.scheme)
        self._nominal_dt = dt
        limit = self.scheme.t_end - self.t
        if self.events:
            limit = min(limit, self.events[0].timestamp - self.t)
        return min(dt, limit) if limit >= self.scheme.dt_min else dt

    def _advance(self):
        """One accepted step. SemiImplicit steps moving too far are retried at half dt."""
        min_edge = self.state.mesh.min_edge()
        dt = self._step_size()
        while True:
            new_state = integrator_step(self.state, self.scheme, self.current_h, dt=dt)
            if (self.scheme.kind == "SemiImplicit" and self.scheme.adaptive
                    and new_state.last_displacement > SHRINK_ABOVE * min_edge):
                dt = dt / 2
                self._nominal_dt = dt
                self.rejected_steps += 1
                if dt < self.scheme.dt_min:
                    raise StepBelowDtMin(f"dt {dt:.3e} below dtMin after rejection")
                continue
            break
        if self.scheme.smooth_strength > 0:
            mesh = tangential_smooth(new_state.mesh, self.scheme.smooth_strength, new_state.cache.normals)
            new_state = replace(new_state, mesh=mesh, cache=geometry_cache(mesh))
        self.state = new_state
        self.t = new_state.t

    def _stop_condition(self) -> Optional[StopReason]:
        if self.t >= self.scheme.t_end - self.scheme.dt_min:
            return StopReason.COMPLETED
        if self.state.step_index >= self.scheme.max_steps:
            return StopReason.STEP_LIMIT
        return check_stop(self.state, self.scheme, self.reference_edge)

    def step(self, delta_time: float) -> Optional[StopReason]:
        """Run the flow for `delta_time`, or until a stop criterion fires."""
        target_time = min(self.t + delta_time, self.scheme.t_end)
        every = self.monitor.snapshot_every
        while True:
            reason = self._stop_condition() if self.t < target_time - self.scheme.dt_min else None
            h_reason = self._evaluate_h()
            reason = reason or h_reason
            self._fire_due_events()
            if reason is not None:
                self.stop_reason = reason
                return reason
            if self.t >= target_time - self.scheme.dt_min:
                return None
            try:
                self._advance()
            except SolverFailure as e:
                self.metrics.record_event(self.t, type(e).__name__, str(e))
                self.log("integrator", f"{type(e).__name__}: {e}")
                self.stop_reason = StopReason.SOLVER_FAILURE
                return self.stop_reason
            if self.monitor.sample_interval == 0:
                self._evaluate_h()
                self._record()
            if every and self.state.step_index % every == 0:
                self._snapshot()

    def run(self) -> FlowResult:
        if self.state is None:
            self.reset()
        self.running = True
        self.log("engine", f"start {self.config.constraint.kind} flow, {self.scheme.kind}, "
                           f"tEnd={self.scheme.t_end:g}")
        if self.monitor.sample_interval == 0 and not self.metrics.records:
            self._evaluate_h()
            self._record()
        reason = None
        while reason is None:
            reason = self.step(self.scheme.t_end - self.t)
            if reason is None and self.t >= self.scheme.t_end - self.scheme.dt_min:
                reason = StopReason.COMPLETED
        self.stop_reason = reason
        self.running = False
        self.metrics.stop_reason = reason.value
        self._record(stop_flag=reason.value)
        self.log("engine", f"stopped: {reason.value} at step {self.state.step_index}")
        return FlowResult(records=list(self.metrics.records), snapshots=list(self.metrics.snapshots),
                          stop_reason=reason, final_state=self.state, logs=list(self.logs))

    def write_outputs(self) -> Optional[Path]:
        if self.output_dir is None:
            return None
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.metrics.export_to_csv(str(self.output_dir / "monitor.csv"))
        self.metrics.export_to_json(str(self.output_dir / "monitor.json"), extra={
            'config': self.config.to_dict(),
            'rejected_steps': self.rejected_steps,
        })
        write_obj(self.state.mesh, self.output_dir / "final.obj")
        return self.output_dir


def run_flow(mesh: TriMesh, scheme: SchemeSpec, constraint: ConstraintSpec,
             monitor: Optional[MonitorSpec] = None, output_dir: Optional[str] = None) -> FlowResult:
    run_config = RunConfig(scheme=scheme, constraint=constraint, monitor=monitor or MonitorSpec())
    sim = FlowSimulator(run_config, output_dir=output_dir)
    sim.save_initial_state(mesh)
    sim.reset()
    result = sim.run()
    sim.write_outputs()
    return result

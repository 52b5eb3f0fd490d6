from __future__ import annotations
from typing import Dict, List, Optional, Any
from dataclasses import dataclass, field, asdict, fields
import json
import csv
import math
from pathlib import Path

import numpy as np

from utils.errors import TrajectoryError
from utils.mesh import neck_radius
from utils.operators import integrals, rate_report

# Column order of the monitor CSV
CSV_COLUMNS = ["t", "dt", "vol", "area", "intH", "intAbsH", "intK", "intA2", "willmore",
               "intGradH2", "h", "minEdge", "stopFlag"]


@dataclass
class MonitorRecord:
    """One time sample of the tracked integrals"""
    t: float = 0.0
    dt: float = 0.0
    vol: float = 0.0
    area: float = 0.0
    intH: float = 0.0
    intAbsH: float = 0.0
    intK: float = 0.0
    intA2: float = 0.0
    willmore: float = 0.0
    intGradH2: float = 0.0
    h: float = 0.0
    minEdge: float = 0.0
    stopFlag: str = "Running"
    # JSON-only extras
    dVol: float = 0.0
    dArea: float = 0.0
    dIntH: float = 0.0
    neckRadius: float = float('nan')
    maxA: float = 0.0

    @classmethod
    def from_state(cls, state, h: Optional[float] = None, stop_flag: str = "Running",
                   track_neck: bool = True) -> 'MonitorRecord':
        if h is None:
            h = state.last_h.h if state.last_h is not None else 0.0
        values = integrals(state.mesh, state.cache)
        rates = rate_report(state.cache, h)
        return cls(
            t=state.t,
            dt=state.dt,
            h=h,
            minEdge=state.mesh.min_edge(),
            stopFlag=stop_flag,
            neckRadius=neck_radius(state.mesh) if track_neck else float('nan'),
            maxA=float(np.sqrt(state.cache.A_norm_sq.max())),
            **values,
            **rates,
        )

    def to_row(self) -> List[str]:
        return [v if isinstance(v, str) else "%.17g" % v
                for v in (getattr(self, c) for c in CSV_COLUMNS)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        # JSON has no NaN
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in data.items()}


@dataclass
class DriftStats:
    """Summary of one monitored column over a trajectory"""
    column: str
    initial: float = 0.0
    final: float = 0.0
    min: float = 0.0
    max: float = 0.0
    # max |x(t) - x(0)| / |x(0)|
    max_relative_drift: float = 0.0
    # largest single-step increase and decrease
    max_rise: float = 0.0
    max_drop: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)

    def non_increasing(self, rel_slack: float) -> bool:
        return self.max_rise <= rel_slack * max(abs(self.max), abs(self.min))

    def non_decreasing(self, rel_slack: float) -> bool:
        return self.max_drop <= rel_slack * max(abs(self.max), abs(self.min))


class MonitorCollector:
    """Collect monitor rows and snapshot paths for one run"""

    def __init__(self):
        self.records: List[MonitorRecord] = []
        self.snapshots: List[Dict[str, Any]] = []
        self.stop_reason: Optional[str] = None
        self.events: List[Dict[str, Any]] = []

    def reset(self):
        self.records.clear()
        self.snapshots.clear()
        self.events.clear()
        self.stop_reason = None

    def record(self, record: MonitorRecord):
        self.records.append(record)

    def record_snapshot(self, step_index: int, t: float, path: str):
        self.snapshots.append({'step': step_index, 't': t, 'path': path})

    def record_event(self, t: float, kind: str, detail: str):
        self.events.append({'t': t, 'kind': kind, 'detail': detail})

    def series(self, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.records], dtype=float)

    def drift(self, column: str) -> DriftStats:
        return drift_stats(column, self.series(column))

    def get_summary(self) -> Dict[str, Any]:
        summary = {
            'samples': len(self.records),
            'stop_reason': self.stop_reason,
            'final_time': self.records[-1].t if self.records else 0.0,
            'snapshots': len(self.snapshots),
        }
        if self.records:
            summary['drift'] = {c: self.drift(c).to_dict() for c in ("vol", "area", "intH", "intK")}
        return summary

    def export_to_csv(self, filepath: str):
        with open(filepath, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for record in self.records:
                writer.writerow(record.to_row())

    def export_to_json(self, filepath: str, extra: Optional[Dict[str, Any]] = None):
        data = {
            'summary': self.get_summary(),
            'records': [r.to_dict() for r in self.records],
            'snapshots': self.snapshots,
            'events': self.events,
        }
        if extra:
            data.update(extra)
        with open(filepath, 'w') as f:
            json.dump(data, f, indent=2)


def drift_stats(column: str, values: np.ndarray) -> DriftStats:
    if len(values) == 0:
        return DriftStats(column=column)
    steps = np.diff(values)
    scale = abs(values[0]) if values[0] != 0 else 1.0
    return DriftStats(
        column=column,
        initial=float(values[0]),
        final=float(values[-1]),
        min=float(values.min()),
        max=float(values.max()),
        max_relative_drift=float(np.abs(values - values[0]).max() / scale),
        max_rise=float(max(steps.max(), 0.0)) if len(steps) else 0.0,
        max_drop=float(max(-steps.min(), 0.0)) if len(steps) else 0.0,
    )


@dataclass
class Trajectory:
    """A monitor series read back from disk"""
    records: List[MonitorRecord] = field(default_factory=list)
    snapshots: List[Dict[str, Any]] = field(default_factory=list)
    source: str = ""

    @property
    def stop_reason(self) -> Optional[str]:
        return self.records[-1].stopFlag if self.records else None

    def series(self, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.records], dtype=float)

    @classmethod
    def load(cls, filepath) -> 'Trajectory':
        """Read a monitor CSV or JSON export. Snapshots are looked up next to a CSV."""
        path = Path(filepath)
        if path.is_dir():
            path = path / "monitor.json" if (path / "monitor.json").exists() else path / "monitor.csv"
        if not path.exists():
            raise TrajectoryError(f"trajectory {path} not found")
        if path.suffix == ".json":
            return cls._load_json(path)
        return cls._load_csv(path)

    @classmethod
    def _load_csv(cls, path: Path) -> 'Trajectory':
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        if not rows or rows[0] != CSV_COLUMNS:
            raise TrajectoryError(f"{path}: unexpected header {rows[0] if rows else []}")
        records = []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(CSV_COLUMNS):
                raise TrajectoryError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                values = {c: float(v) for c, v in zip(CSV_COLUMNS[:-1], row[:-1])}
            except ValueError as e:
                raise TrajectoryError(f"{path}:{lineno}: {e}")
            records.append(MonitorRecord(stopFlag=row[-1], **values))
        snapshots = sorted(
            ({'step': int(p.stem.split("_")[-1]), 't': float('nan'), 'path': str(p)}
             for p in path.parent.glob("snapshot_*.obj")),
            key=lambda s: s['step'])
        return cls(records=records, snapshots=snapshots, source=str(path))

    @classmethod
    def _load_json(cls, path: Path) -> 'Trajectory':
        try:
            with open(path) as f:
                data = json.load(f)
            known = {f.name for f in fields(MonitorRecord)}
            records = [MonitorRecord(**{k: (float('nan') if v is None else v)
                                        for k, v in r.items() if k in known})
                       for r in data['records']]
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise TrajectoryError(f"{path}: {e}")
        return cls(records=records, snapshots=data.get('snapshots', []), source=str(path))

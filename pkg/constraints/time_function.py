import csv
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import sympy as sp

from utils.errors import ConfigInvalid, UnboundedTimeFunction
from utils.protocol import ConstraintValue

logger = logging.getLogger("csdflow.constraints.time_function")

# Boundedness probe resolution on [0, tEnd]
BOUND_SAMPLES = 1025


def parse_expression(expression: str) -> Callable[[np.ndarray], np.ndarray]:
    t = sp.Symbol("t", real=True)
    try:
        expr = sp.sympify(expression, locals={"t": t})
    except (sp.SympifyError, SyntaxError, TypeError) as e:
        raise ConfigInvalid(f"cannot parse time function '{expression}': {e}")
    extra = expr.free_symbols - {t}
    if extra:
        raise ConfigInvalid(f"time function '{expression}' has unknown symbols {sorted(map(str, extra))}")
    fn = sp.lambdify(t, expr, modules="numpy")
    return lambda ts: np.broadcast_to(np.asarray(fn(np.asarray(ts, dtype=float)), dtype=float),
                                      np.shape(ts)).astype(float)


def read_samples(path) -> np.ndarray:
    """Two-column (t, h) CSV; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as f:
        for record in csv.reader(f):
            if not record or not "".join(record).strip():
                continue
            try:
                rows.append([float(record[0]), float(record[1])])
            except (ValueError, IndexError):
                if rows:
                    raise ConfigInvalid(f"{path}: bad row {record}")
    if len(rows) < 2:
        raise ConfigInvalid(f"{path}: need at least two (t, h) rows")
    return np.array(rows)


def interpolant(samples) -> Callable[[np.ndarray], np.ndarray]:
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
        raise ConfigInvalid("time function samples must be (t, h) pairs, at least two")
    order = np.argsort(data[:, 0], kind="stable")
    ts, hs = data[order, 0], data[order, 1]
    if np.any(np.diff(ts) <= 0):
        raise ConfigInvalid("time function sample times must be distinct")
    # Constant extrapolation beyond the table
    return lambda t: np.interp(t, ts, hs)


def build_time_function(spec) -> Callable[[np.ndarray], np.ndarray]:
    if spec.expression:
        return parse_expression(spec.expression)
    if spec.csv_path:
        if not Path(spec.csv_path).exists():
            raise ConfigInvalid(f"time function table {spec.csv_path} not found")
        return interpolant(read_samples(spec.csv_path))
    return interpolant(spec.samples)


def check_bounded(fn, t_end: float, limit: float) -> float:
    """Max |h| over BOUND_SAMPLES uniform times on [0, t_end]."""
    ts = np.linspace(0.0, t_end, BOUND_SAMPLES)
    with np.errstate(all="ignore"):
        values = fn(ts)
    bad = ~np.isfinite(values) | (np.abs(values) > limit)
    if bad.any():
        raise UnboundedTimeFunction(
            f"time function exceeds {limit:g} or is non-finite at t={ts[np.argmax(bad)]:.6g} on [0, {t_end:g}]")
    return float(np.abs(values).max())


class TimeFunctionConstraint:
    """h given as a function of time alone."""
    kind = "TimeFunction"

    def __init__(self):
        self._fn: Optional[Callable] = None
        self._source = None

    def prepare(self, spec, t_end: float) -> float:
        self._fn = build_time_function(spec)
        self._source = (spec.expression, spec.csv_path, id(spec.samples))
        bound = check_bounded(self._fn, t_end, spec.bound_limit)
        logger.info("time function bounded by %.6g on [0, %g]", bound, t_end)
        return bound

    def evaluate(self, state, spec, t):
        if self._fn is None or self._source != (spec.expression, spec.csv_path, id(spec.samples)):
            self._fn = build_time_function(spec)
            self._source = (spec.expression, spec.csv_path, id(spec.samples))
        h = float(self._fn(np.array([t]))[0])
        if not np.isfinite(h):
            raise UnboundedTimeFunction(f"time function is non-finite at t={t:.6g}")
        return ConstraintValue(kind=self.kind, h=h, numerator=h, denominator=1.0)

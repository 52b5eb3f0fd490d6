"""
Reference solver for the flow on surfaces of revolution about the z-axis.

The generating curve runs from the south pole to the north pole on a
uniform arclength grid, nodes 0..N with r = 0 at both ends. Curvatures use
circumscribed circles through neighbouring nodes (exact on circles), with
mirrored ghost nodes across the axis at the poles. The Laplace-Beltrami
operator (1/r)(r u_s)_s is discretized with finite volumes, and each step
solves (W + dt L W^-1 L) w = dt W V for the normal displacement w, like the
mesh integrator does.

Node masses W are the lumped hat-function weights of r ds, so 2 pi sum W is
the trapezoid area the monitors report and every surface integral uses one
quadrature. For MeanH, AbsMeanH and GaussMixed the run solves for the h that
makes each step meet the constraint's law on those monitored integrals.
"""
from __future__ import annotations
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import splu

from utils.errors import (ConfigInvalid, ConstraintError, DenominatorVanishing, LinearSolveFailure,
                          MeshFormatError, NanDetected, PinchDetected, SolverFailure, StepBelowDtMin)
from utils.integrator import SHRINK_ABOVE, controlled_dt, explicit_dt
from utils.mesh import TriMesh
from utils.metrics import MonitorCollector, MonitorRecord
from utils.primitives import dumbbell_profile, ellipsoid_profile, revolve_profile, sphere_profile
from utils.protocol import ConstraintSpec, ConstraintValue, MonitorSpec, SchemeSpec, StopReason

logger = logging.getLogger("csdflow.axisym")

REPARAM_TOL = 1e-8
REPARAM_PASSES = 10
# Relative residual of the enforced integral after each step
LAW_TOL = 1e-13
LAW_BRACKET_TRIES = 8


@dataclass
class ProfileSpec:
    # "sphere" | "ellipsoid" | "dumbbell" | "csv"
    kind: str = "sphere"
    radius: float = 1.0
    # Spheroid: equatorial radius a, polar half-axis c
    a: float = 1.0
    c: float = 1.2
    bulb_radius: float = 1.0
    neck_radius: float = 0.2
    neck_length: float = 1.0
    nodes: int = 256
    csv_path: Optional[str] = None

    def validate(self) -> List[str]:
        problems = []
        if self.kind not in ("sphere", "ellipsoid", "dumbbell", "csv"):
            problems.append(f"unknown profile kind '{self.kind}'")
        if self.nodes < 8:
            problems.append("nodes must be >= 8")
        if self.kind == "sphere" and not self.radius > 0:
            problems.append("radius must be > 0")
        if self.kind == "ellipsoid" and not (self.a > 0 and self.c > 0):
            problems.append("spheroid axes must be > 0")
        if self.kind == "dumbbell":
            if not 0 < self.neck_radius < self.bulb_radius:
                problems.append("require 0 < neck_radius < bulb_radius")
            if not self.neck_length > 0:
                problems.append("neck_length must be > 0")
        if self.kind == "csv" and not (self.csv_path and Path(self.csv_path).exists()):
            problems.append(f"profile table {self.csv_path} not found")
        return problems


@dataclass
class Profile:
    r: np.ndarray
    z: np.ndarray

    @property
    def nodes(self) -> int:
        """Segment count N; there are N + 1 nodes."""
        return len(self.r) - 1

    def chords(self) -> np.ndarray:
        return np.hypot(np.diff(self.r), np.diff(self.z))

    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.chords())])

    def length(self) -> float:
        return float(self.chords().sum())

    def chord_defect(self) -> float:
        ch = self.chords()
        return float((ch.max() - ch.min()) / ch.mean())

    def bbox_diagonal(self) -> float:
        return float(math.hypot(2 * self.r.max(), np.ptp(self.z)))

    def neck_radius(self) -> float:
        """Smallest interior local minimum of r, NaN if r has none."""
        r = self.r
        i = np.arange(1, len(r) - 1)
        local = (r[i] < r[i - 1]) & (r[i] <= r[i + 1])
        return float(r[i][local].min()) if local.any() else float('nan')

    def to_mesh(self, n_theta: int, r_floor: float = 0.0) -> TriMesh:
        """Triangulated surface of revolution with matched generating curve."""
        return revolve_profile(self.arclength(), self.r, self.z, n_theta, r_floor=r_floor)


def reparameterize(r: np.ndarray, z: np.ndarray, nodes: int, tol: float = REPARAM_TOL,
                   max_passes: int = REPARAM_PASSES) -> Profile:
    """Resample to `nodes` equal chords by monotone cubic interpolation on the chord parameter."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    for _ in range(max_passes):
        sigma = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(r), np.diff(z)))])
        target = np.linspace(0.0, sigma[-1], nodes + 1)
        r = PchipInterpolator(sigma, r)(target)
        z = PchipInterpolator(sigma, z)(target)
        r[0] = r[-1] = 0.0
        profile = Profile(r, z)
        if profile.chord_defect() <= tol:
            break
    return profile


def make_profile(spec: ProfileSpec) -> Profile:
    problems = spec.validate()
    if problems:
        raise ConfigInvalid(problems)
    if spec.kind == "sphere":
        _, r, z = sphere_profile(spec.radius)
    elif spec.kind == "ellipsoid":
        _, r, z = ellipsoid_profile(spec.a, spec.c)
    elif spec.kind == "dumbbell":
        _, r, z = dumbbell_profile(spec.bulb_radius, spec.neck_radius, spec.neck_length)
    else:
        loaded = read_profile(spec.csv_path)
        r, z = loaded.r, loaded.z
    return reparameterize(r, z, spec.nodes)


def exact_sphere_profile(radius: float, nodes: int) -> Profile:
    """Nodes at equal polar-angle steps on the circle of the given radius."""
    phi = np.linspace(0.0, np.pi, nodes + 1)
    r = radius * np.sin(phi)
    r[0] = r[-1] = 0.0
    return Profile(r, -radius * np.cos(phi))


# --- Geometry -----------------------------------------------------------------

@dataclass
class ProfileGeometry:
    """Per-node curvatures and the finite-volume operators.

    Integrals over the surface are 2 pi sum W f. `angle_defect` is the
    per-node share of int K, so the mesh constraint plugins read this
    object the same way they read a GeometryCache.
    """
    tangents: np.ndarray
    normals: np.ndarray           # outward, (t_z, -t_r)
    kappa_profile: np.ndarray
    kappa_azimuthal: np.ndarray
    H: np.ndarray
    K: np.ndarray
    masses: np.ndarray            # lumped hat weights of r ds, pole weights > 0
    stiffness: csr_matrix         # L, tridiagonal
    laplacian_H: np.ndarray
    angle_defect: np.ndarray
    A_norm_sq: np.ndarray

    def integrate(self, values: np.ndarray) -> float:
        return float(2 * np.pi * np.dot(self.masses, values))

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return -(self.stiffness @ u) / self.masses

    def dirichlet_energy(self, u: np.ndarray) -> float:
        return float(2 * np.pi * np.dot(u, self.stiffness @ u))


def profile_geometry(profile: Profile) -> ProfileGeometry:
    r, z = profile.r, profile.z
    x = np.stack([r, z], axis=1)
    # Mirror images across the axis stand in for the neighbours beyond each pole
    ext = np.vstack([[-r[1], z[1]], x, [-r[-2], z[-2]]])
    a = ext[1:-1] - ext[:-2]
    b = ext[2:] - ext[1:-1]
    c = ext[2:] - ext[:-2]
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    kappa_p = 2 * cross / (la * lb * lc)

    t = a * (lb / la)[:, None] + b * (la / lb)[:, None]
    t /= np.linalg.norm(t, axis=1)[:, None]
    nu = np.stack([t[:, 1], -t[:, 0]], axis=1)

    kappa_a = np.empty_like(kappa_p)
    kappa_a[1:-1] = nu[1:-1, 0] / r[1:-1]
    # Umbilic at the poles
    kappa_a[0], kappa_a[-1] = kappa_p[0], kappa_p[-1]
    H = kappa_p + kappa_a
    K = kappa_p * kappa_a

    chords = lb[:-1]
    r_half = 0.5 * (r[:-1] + r[1:])
    conductance = r_half / chords
    W = np.zeros_like(r)
    W[:-1] += chords * (2 * r[:-1] + r[1:]) / 6
    W[1:] += chords * (r[:-1] + 2 * r[1:]) / 6
    main = np.concatenate([conductance, [0.0]]) + np.concatenate([[0.0], conductance])
    L = diags([-conductance, main, -conductance], [-1, 0, 1], format="csr")

    return ProfileGeometry(
        tangents=t,
        normals=nu,
        kappa_profile=kappa_p,
        kappa_azimuthal=kappa_a,
        H=H,
        K=K,
        masses=W,
        stiffness=L,
        laplacian_H=-(L @ H) / W,
        angle_defect=2 * np.pi * W * K,
        A_norm_sq=kappa_p ** 2 + kappa_a ** 2,
    )


def profile_area(profile: Profile) -> float:
    """2 pi int r ds by the trapezoid rule, the area of the polygon's surface of revolution."""
    return float(2 * np.pi * trapezoid(profile.r, profile.arclength()))


def total_mean_curvature(profile: Profile) -> float:
    g = profile_geometry(profile)
    return g.integrate(g.H)


def profile_integrals(profile: Profile, geometry: ProfileGeometry) -> Dict[str, float]:
    """Vol by trapezoid quadrature of pi r^2 z_s; the rest with the node masses, whose sum is the trapezoid area."""
    s = profile.arclength()
    g = geometry
    return {
        "vol": float(np.pi * trapezoid(profile.r ** 2 * g.tangents[:, 1], s)),
        "area": profile_area(profile),
        "intH": g.integrate(g.H),
        "intAbsH": g.integrate(np.abs(g.H)),
        "intK": float(g.angle_defect.sum()),
        "intA2": g.integrate(g.A_norm_sq),
        "willmore": g.integrate(g.H ** 2),
        "intGradH2": g.dirichlet_energy(g.H),
    }


@dataclass
class _OracleState:
    cache: ProfileGeometry
    t: float
    mesh: Any = None


def resolve_profile_denom_eps(profile: Profile, denom_eps: Optional[float]) -> float:
    if denom_eps is not None:
        return float(denom_eps)
    return 1e-8 * profile_area(profile) / profile.bbox_diagonal()


def profile_h(profile: Profile, geometry: ProfileGeometry, spec: ConstraintSpec, t: float = 0.0,
              controller=None) -> ConstraintValue:
    """h for the profile through the same constraint plugins as the mesh flow."""
    from flow_engine import compute_h
    spec = replace(spec, denom_eps=resolve_profile_denom_eps(profile, spec.denom_eps))
    state = _OracleState(cache=geometry, t=t)
    if controller is not None:
        return controller.compute_h(state, spec)
    return compute_h(state, spec)


def axisym_step(profile: Profile, dt: float, h: float, scheme_kind: str = "SemiImplicit",
                geometry: Optional[ProfileGeometry] = None, pinch_tol: float = 0.0,
                t: float = 0.0) -> Tuple[Profile, float]:
    """Advance the profile by dt under normal speed Delta_s H + h; returns the new profile and max |w|."""
    g = geometry or profile_geometry(profile)
    base, unit = _displacements(g, dt, scheme_kind)
    w = base + h * unit
    return _move(profile, g, w, dt, pinch_tol, t), float(np.abs(w).max())


def _displacements(g: ProfileGeometry, dt: float, scheme_kind: str) -> Tuple[np.ndarray, np.ndarray]:
    """(w0, w1) with displacement w0 + h w1 for constant h."""
    if scheme_kind == "ExplicitEuler":
        return dt * g.laplacian_H, np.full_like(g.masses, dt)
    system = diags(g.masses) + dt * (g.stiffness @ diags(1.0 / g.masses) @ g.stiffness)
    try:
        lu = splu(system.tocsc())
    except RuntimeError as e:
        raise LinearSolveFailure(f"profile factorization failed: {e}")
    base = lu.solve(dt * g.masses * g.laplacian_H)
    unit = lu.solve(dt * g.masses)
    if not (np.all(np.isfinite(base)) and np.all(np.isfinite(unit))):
        raise NanDetected("non-finite profile displacement")
    return base, unit


# Integral each law acts on, and its per-unit-h slope for w1 = dt
_LAWS = {
    "MeanH": (profile_area, lambda g, dt: dt * g.integrate(g.H)),
    "AbsMeanH": (profile_area, lambda g, dt: dt * g.integrate(g.H)),
    "GaussMixed": (total_mean_curvature, lambda g, dt: 2.0 * dt * float(g.angle_defect.sum())),
}


def enforce_law(profile: Profile, geometry: ProfileGeometry, kind: str, h: float, dt: float,
                scheme_kind: str = "SemiImplicit", pinch_tol: float = 0.0,
                t: float = 0.0) -> Tuple[float, Profile, float]:
    """Solve for the h that makes one step obey the constraint's law on the monitored integrals.

    MeanH holds the trapezoid area, GaussMixed holds int H, and AbsMeanH
    moves the area by exactly dt (h int H - int |grad H|^2), which is never
    positive. The step is affine in h, so the root is bracketed from one
    secant estimate around the plugin's h. Other kinds step with h as given.

    Returns (h, new profile, max |w|).
    """
    g = geometry
    base, unit = _displacements(g, dt, scheme_kind)
    if kind not in _LAWS:
        w = base + h * unit
        return h, _move(profile, g, w, dt, pinch_tol, t), float(np.abs(w).max())

    measure, slope_of = _LAWS[kind]
    target = measure(profile)
    if kind == "AbsMeanH":
        target += dt * (h * g.integrate(g.H) - g.dirichlet_energy(g.H))
    slope = slope_of(g, dt)
    scale = max(abs(target), 1e-300)

    def residual(x: float) -> float:
        return measure(_move(profile, g, base + x * unit, dt, pinch_tol, t)) - target

    f0 = residual(h)
    solved = h
    if abs(f0) > LAW_TOL * scale and abs(slope) > 0:
        step = -f0 / slope
        lo, hi = h, h + 2 * step
        f_hi = residual(hi)
        for _ in range(LAW_BRACKET_TRIES):
            if np.sign(f_hi) != np.sign(f0):
                break
            hi = h + 2 * (hi - h)
            f_hi = residual(hi)
        if np.sign(f_hi) != np.sign(f0):
            xtol = max(LAW_TOL * scale / abs(slope), 1e-15 * max(abs(h), 1.0))
            try:
                solved = brentq(residual, min(lo, hi), max(lo, hi), xtol=xtol)
            except RuntimeError as e:
                logger.debug("%s law solve failed at t=%.6g: %s", kind, t, e)
        else:
            logger.debug("%s law not bracketed at t=%.6g, stepping with the plugin h", kind, t)
    w = base + solved * unit
    return solved, _move(profile, g, w, dt, pinch_tol, t), float(np.abs(w).max())


def _move(profile: Profile, g: ProfileGeometry, w: np.ndarray, dt: float, pinch_tol: float,
          t: float) -> Profile:
    if not np.all(np.isfinite(w)):
        raise NanDetected(f"non-finite profile displacement at t={t:.6g}")
    r = profile.r + w * g.normals[:, 0]
    z = profile.z + w * g.normals[:, 1]
    r[0] = r[-1] = 0.0
    interior = r[1:-1]
    if interior.min() <= 0:
        raise PinchDetected(float(interior.min()), t + dt)
    moved = reparameterize(r, z, profile.nodes)
    neck = moved.neck_radius()
    if neck < pinch_tol:
        raise PinchDetected(neck, t + dt)
    return moved


def profile_record(profile: Profile, geometry: ProfileGeometry, t: float, dt: float, h: float,
                   stop_flag: str = "Running") -> MonitorRecord:
    values = profile_integrals(profile, geometry)
    V = geometry.laplacian_H + (0.0 if math.isnan(h) else h)
    return MonitorRecord(
        t=t, dt=dt, h=h, minEdge=float(profile.chords().min()), stopFlag=stop_flag,
        dVol=geometry.integrate(V),
        dArea=geometry.integrate(geometry.H * V),
        dIntH=2.0 * geometry.integrate(geometry.K * V),
        neckRadius=profile.neck_radius(),
        maxA=float(np.sqrt(geometry.A_norm_sq.max())),
        **values,
    )


@dataclass
class AxisymResult:
    records: List[MonitorRecord]
    stop_reason: StopReason
    final_profile: Profile
    snapshots: List[Tuple[float, Profile]] = field(default_factory=list)
    neck_series: List[Tuple[float, float]] = field(default_factory=list)
    events: List[Dict[str, Any]] = field(default_factory=list)

    def pinch_time(self) -> float:
        if self.stop_reason != StopReason.NECK_COLLAPSE:
            return float('nan')
        return self.records[-1].t


def axisym_run(profile: Union[Profile, ProfileSpec], scheme: SchemeSpec, constraint: ConstraintSpec,
               monitor: Optional[MonitorSpec] = None, collector: Optional[MonitorCollector] = None
               ) -> AxisymResult:
    """Evolve a profile until tEnd or a stop; emits the mesh engine's monitor rows."""
    from flow_engine import ConstraintController

    if isinstance(profile, ProfileSpec):
        profile = make_profile(profile)
    monitor = monitor or MonitorSpec()
    collector = collector or MonitorCollector()
    controller = ConstraintController.discovered()
    constraint = replace(constraint, denom_eps=resolve_profile_denom_eps(profile, constraint.denom_eps))
    controller.prepare(constraint, scheme.t_end)

    pinch_tol = scheme.min_edge_frac * profile.length() / profile.nodes
    t, dt, last_disp, steps = 0.0, scheme.dt_init, None, 0
    next_sample = 0.0
    snapshot_times = sorted(x for x in set(monitor.snapshot_times) if x <= scheme.t_end)
    snapshots: List[Tuple[float, Profile]] = []
    neck_series: List[Tuple[float, float]] = []
    geometry = profile_geometry(profile)
    h_value: Optional[ConstraintValue] = None
    reason: Optional[StopReason] = None

    # h is the plugin value at the sampled state; steps apply the enforce_law multiplier
    def record(stop_flag: str = "Running"):
        h = h_value.h if h_value is not None else float('nan')
        collector.record(profile_record(profile, geometry, t, dt, h, stop_flag))

    while True:
        try:
            h_value = profile_h(profile, geometry, constraint, t, controller)
        except DenominatorVanishing as e:
            h_value = None
            collector.record_event(t, "DenominatorVanishing", str(e))
            if scheme.on_denominator_failure == "raise":
                raise
            reason = StopReason.CONSTRAINT_UNDEFINED
        except ConstraintError as e:
            h_value = None
            collector.record_event(t, type(e).__name__, str(e))
            reason = StopReason.CONSTRAINT_UNDEFINED

        neck_series.append((t, profile.neck_radius()))
        if monitor.sample_interval == 0 or t >= next_sample - scheme.dt_min:
            record()
            if monitor.sample_interval > 0:
                while next_sample <= t + scheme.dt_min:
                    next_sample += monitor.sample_interval
        while snapshot_times and snapshot_times[0] <= t + scheme.dt_min:
            snapshots.append((t, profile))
            snapshot_times.pop(0)

        if reason is None:
            if t >= scheme.t_end - scheme.dt_min:
                reason = StopReason.COMPLETED
            elif steps >= scheme.max_steps:
                reason = StopReason.STEP_LIMIT
        if reason is not None:
            break

        ds = float(profile.chords().min())
        try:
            if scheme.adaptive and scheme.kind == "ExplicitEuler":
                dt = explicit_dt(ds, scheme)
            elif scheme.adaptive:
                dt = controlled_dt(dt, last_disp, ds, scheme.dt_min, scheme.dt_max)
            limit = scheme.t_end - t
            if monitor.sample_interval > 0:
                limit = min(limit, next_sample - t)
            if snapshot_times:
                limit = min(limit, snapshot_times[0] - t)
            dt_step = min(dt, limit) if limit >= scheme.dt_min else dt
            while True:
                _, moved, disp = enforce_law(profile, geometry, constraint.kind, h_value.h, dt_step,
                                             scheme.kind, pinch_tol, t)
                if scheme.adaptive and scheme.kind == "SemiImplicit" and disp > SHRINK_ABOVE * ds:
                    dt_step = dt = dt_step / 2
                    if dt < scheme.dt_min:
                        raise StepBelowDtMin(f"profile dt {dt:.3e} below dtMin")
                    continue
                break
        except PinchDetected as e:
            collector.record_event(e.t, "PinchDetected", str(e))
            logger.info("oracle pinch: %s", e)
            reason = StopReason.NECK_COLLAPSE
            break
        except SolverFailure as e:
            collector.record_event(t, type(e).__name__, str(e))
            logger.warning("oracle stopped: %s", e)
            reason = StopReason.SOLVER_FAILURE
            break
        profile, last_disp = moved, disp
        geometry = profile_geometry(profile)
        t += dt_step
        steps += 1

    last = collector.records[-1] if collector.records else None
    if last is not None and last.t == t:
        collector.records[-1] = replace(last, stopFlag=reason.value)
    else:
        record(reason.value)
    collector.stop_reason = reason.value
    logger.info("oracle run stopped: %s at t=%.6g after %d steps", reason.value, t, steps)
    return AxisymResult(records=list(collector.records), stop_reason=reason, final_profile=profile,
                        snapshots=snapshots, neck_series=neck_series, events=list(collector.events))


# --- Profile I/O --------------------------------------------------------------

def write_profile(profile: Profile, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["r", "z"])
        for r, z in zip(profile.r, profile.z):
            writer.writerow(["%.17g" % r, "%.17g" % z])
    return path


def read_profile(path: Union[str, Path]) -> Profile:
    """Two-column (r, z) CSV ordered from the south pole; an optional header row."""
    rows = []
    with open(path, newline="") as f:
        for lineno, record in enumerate(csv.reader(f), start=1):
            if not record:
                continue
            try:
                rows.append((float(record[0]), float(record[1])))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise MeshFormatError(f"{path}:{lineno}: bad profile row {record}")
    if len(rows) < 4:
        raise MeshFormatError(f"{path}: need at least 4 profile nodes")
    data = np.array(rows)
    r, z = data[:, 0].copy(), data[:, 1].copy()
    if abs(r[0]) > 1e-12 or abs(r[-1]) > 1e-12 or np.any(r[1:-1] <= 0):
        raise MeshFormatError(f"{path}: r must vanish at both ends and be positive between")
    r[0] = r[-1] = 0.0
    return Profile(r, z)

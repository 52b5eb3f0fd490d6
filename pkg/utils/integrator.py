"""
Time stepping for dt f = (Delta H + h) nu.

ExplicitEuler moves vertices along the normal by dt (Delta H + h).
SemiImplicit solves (M + dt L M^-1 L) dx = dt M (Delta H + h) nu with the
stiffness L and masses M frozen at the old state, so the fourth-order part
acts implicitly on the increment.
"""
from __future__ import annotations
import logging
from dataclasses import replace
from typing import Optional

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from utils.errors import DegenerateFace, LinearSolveFailure, NanDetected, StepBelowDtMin
from utils.mesh import TriMesh, surface_area
from utils.operators import geometry_cache
from utils.protocol import ConstraintValue, FlowState, SchemeSpec, StopReason

logger = logging.getLogger("csdflow.integrator")

# Displacement controller thresholds, as fractions of the min edge
SHRINK_ABOVE = 0.2
GROW_BELOW = 0.02
GROW_FACTOR = 1.25


def resolve_denom_eps(mesh: TriMesh, denom_eps: Optional[float]) -> float:
    if denom_eps is not None:
        return float(denom_eps)
    return 1e-8 * surface_area(mesh) / mesh.bbox_diagonal()


def initial_state(mesh: TriMesh, scheme: SchemeSpec) -> FlowState:
    return FlowState(mesh=mesh, cache=geometry_cache(mesh), t=0.0, step_index=0, dt=scheme.dt_init)


def explicit_dt(min_edge: float, scheme: SchemeSpec) -> float:
    """safety * h^4 / k4, clamped to dtMax."""
    raw = scheme.safety * min_edge ** 4 / scheme.k4
    if raw < scheme.dt_min:
        raise StepBelowDtMin(f"explicit limit {raw:.3e} below dtMin {scheme.dt_min:.3e} (min edge {min_edge:.3e})")
    return min(raw, scheme.dt_max)


def controlled_dt(dt: float, displacement: Optional[float], length: float,
                  dt_min: float, dt_max: float) -> float:
    """Displacement-based control shared by the mesh flow and the profile oracle."""
    if displacement is not None:
        if displacement > SHRINK_ABOVE * length:
            dt = dt / 2
        elif displacement < GROW_BELOW * length:
            dt = dt * GROW_FACTOR
    dt = min(dt, dt_max)
    if dt < dt_min:
        raise StepBelowDtMin(f"dt {dt:.3e} below dtMin {dt_min:.3e}")
    return dt


def adapt_dt(state: FlowState, scheme: SchemeSpec) -> float:
    if not scheme.adaptive:
        return min(max(state.dt or scheme.dt_init, scheme.dt_min), scheme.dt_max)
    min_edge = state.mesh.min_edge()
    if scheme.kind == "ExplicitEuler":
        return explicit_dt(min_edge, scheme)
    return controlled_dt(state.dt or scheme.dt_init, state.last_displacement, min_edge,
                         scheme.dt_min, scheme.dt_max)


def normal_speed(state: FlowState, h: float) -> np.ndarray:
    return state.cache.laplacian_H + h


def _semi_implicit_increment(state: FlowState, speed: np.ndarray, dt: float) -> np.ndarray:
    cache = state.cache
    M = diags(cache.masses)
    L = cache.stiffness
    system = (M + dt * (L @ diags(1.0 / cache.masses) @ L)).tocsc()
    rhs = dt * (cache.masses * speed)[:, None] * cache.normals
    try:
        lu = splu(system)
        delta = lu.solve(rhs)
    except RuntimeError as e:
        raise LinearSolveFailure(f"factorization failed at step {state.step_index}: {e}")
    return delta


def step(state: FlowState, scheme: SchemeSpec, constraint, dt: Optional[float] = None) -> FlowState:
    """Advance one step. `constraint` is a ConstraintValue at the old state or a ConstraintSpec."""
    dt = state.dt if dt is None else dt
    if not dt >= scheme.dt_min:
        raise StepBelowDtMin(f"dt {dt:.3e} below dtMin {scheme.dt_min:.3e}")
    if isinstance(constraint, ConstraintValue):
        value = constraint
    else:
        from flow_engine import compute_h
        value = compute_h(state, constraint)

    speed = normal_speed(state, value.h)
    if scheme.kind == "ExplicitEuler":
        delta = dt * speed[:, None] * state.cache.normals
    else:
        delta = _semi_implicit_increment(state, speed, dt)
    if not np.all(np.isfinite(delta)):
        raise NanDetected(f"non-finite positions after step {state.step_index} (dt {dt:.3e})")

    mesh = state.mesh.with_vertices(state.mesh.vertices + delta)
    with np.errstate(all="ignore"):
        try:
            cache = geometry_cache(mesh)
        except DegenerateFace as e:
            raise NanDetected(f"geometry degenerated after step {state.step_index}: {e}")
    if not (np.all(np.isfinite(cache.H)) and np.all(np.isfinite(cache.laplacian_H))):
        raise NanDetected(f"non-finite curvature after step {state.step_index}")

    displacement = float(np.sqrt(np.einsum("ij,ij->i", delta, delta)).max())
    return replace(state, mesh=mesh, cache=cache, t=state.t + dt, step_index=state.step_index + 1,
                   dt=dt, last_h=value, last_displacement=displacement)


def tangential_smooth(mesh: TriMesh, strength: float, normals: Optional[np.ndarray] = None) -> TriMesh:
    """Relax vertices toward the area-weighted one-ring centroid, within the tangent plane."""
    if strength <= 0:
        return mesh
    faces = mesh.faces
    areas = mesh.face_areas()
    centroids = mesh.vertices[faces].mean(axis=1) * areas[:, None]
    n = mesh.n_vertices
    weight = np.bincount(faces.ravel(), np.repeat(areas, 3), minlength=n)
    target = np.stack([np.bincount(faces.ravel(), np.repeat(centroids[:, k], 3), minlength=n)
                       for k in range(3)], axis=1) / weight[:, None]
    if normals is None:
        normals = geometry_cache(mesh).normals
    d = target - mesh.vertices
    d -= np.einsum("ij,ij->i", d, normals)[:, None] * normals
    return mesh.with_vertices(mesh.vertices + strength * d)


def check_stop(state: FlowState, scheme: SchemeSpec, reference_edge: float) -> Optional[StopReason]:
    """Geometric stop criteria; reference_edge is the initial mean edge."""
    min_edge = state.mesh.min_edge()
    if min_edge < scheme.min_edge_frac * reference_edge:
        logger.info("neck collapse at t=%.6g: min edge %.3e", state.t, min_edge)
        return StopReason.NECK_COLLAPSE
    curvature = float(np.sqrt(state.cache.A_norm_sq.max())) * reference_edge
    if curvature > scheme.max_curvature:
        logger.info("curvature blow-up at t=%.6g: max|A| * h0 = %.3g", state.t, curvature)
        return StopReason.CURVATURE_BLOWUP
    return None

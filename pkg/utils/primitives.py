from __future__ import annotations
import logging
from typing import Dict, List, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from utils.errors import ConfigInvalid, DegenerateFace, ResolutionTooLow
from utils.mesh import TriMesh, build_mesh
from utils.protocol import PrimitiveSpec

logger = logging.getLogger("csdflow.primitives")


def generate_primitive(spec: PrimitiveSpec) -> TriMesh:
    problems = spec.validate()
    if problems:
        raise ConfigInvalid(problems)
    kind = spec.kind.lower()
    if kind == "icosphere":
        mesh = icosphere(spec.level, spec.radius)
    elif kind == "ellipsoid":
        mesh = ellipsoid(spec.a, spec.b, spec.c, spec.level)
    elif kind == "torus":
        mesh = torus(spec.R, spec.r, spec.resolution)
    elif kind == "dumbbell":
        mesh = dumbbell(spec.bulb_radius, spec.neck_radius, spec.neck_length, spec.resolution)
    else:
        mesh = perturbed_icosphere(spec.level, spec.radius, spec.amplitude,
                                   np.random.default_rng(spec.seed))
    logger.debug("generated %s: V=%d F=%d chi=%d", spec.kind, mesh.n_vertices,
                 mesh.n_faces, mesh.euler_characteristic())
    return mesh


def _validated(vertices, faces) -> TriMesh:
    try:
        return build_mesh(vertices, faces)
    except DegenerateFace as e:
        raise ResolutionTooLow(str(e)) from e


# --- Icosahedral family -----------------------------------------------------

def _icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(vertices: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four, midpoints shared along edges."""
    pairs = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    m = faces.shape[0]
    n = vertices.shape[0]
    a = n + inverse[:m]
    b = n + inverse[m:2 * m]
    c = n + inverse[2 * m:]
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate([
        np.stack([v0, a, c], axis=1),
        np.stack([v1, b, a], axis=1),
        np.stack([v2, c, b], axis=1),
        np.stack([a, b, c], axis=1),
    ])
    return np.vstack([vertices, mids]), new_faces


def _unit_icosphere(level: int) -> Tuple[np.ndarray, np.ndarray]:
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return v, f


def icosphere(level: int, radius: float = 1.0) -> TriMesh:
    v, f = _unit_icosphere(level)
    return _validated(radius * v, f)


def ellipsoid(a: float, b: float, c: float, level: int) -> TriMesh:
    v, f = _unit_icosphere(level)
    return _validated(v * np.array([a, b, c]), f)


def perturbed_icosphere(level: int, radius: float, amplitude: float,
                        rng: np.random.Generator) -> TriMesh:
    """Icosphere with a smooth random radial bump field of max relative size `amplitude`."""
    v, f = _unit_icosphere(level)
    x, y, z = v.T
    basis = np.stack([x, y, z, x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1,
                      x * (x * x - 3 * y * y), z * (5 * z * z - 3)], axis=1)
    field = basis @ rng.standard_normal(basis.shape[1])
    peak = np.abs(field).max()
    if peak > 0:
        field *= amplitude / peak
    return _validated(radius * v * (1.0 + field)[:, None], f)


# --- Torus --------------------------------------------------------------------

def torus(R: float, r: float, resolution: int) -> TriMesh:
    n_u = int(resolution)
    n_v = max(int(resolution) // 2, 3)
    if n_u < 3:
        raise ResolutionTooLow(f"torus resolution {resolution} < 3")
    u = 2 * np.pi * np.arange(n_u) / n_u
    v = 2 * np.pi * np.arange(n_v) / n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    rho = R + r * np.cos(vv)
    verts = np.stack([rho * np.cos(uu), rho * np.sin(uu), r * np.sin(vv)], axis=-1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    p00 = (i * n_v + j).ravel()
    p10 = (((i + 1) % n_u) * n_v + j).ravel()
    p01 = (i * n_v + (j + 1) % n_v).ravel()
    p11 = (((i + 1) % n_u) * n_v + (j + 1) % n_v).ravel()
    # (d/du x d/dv) points outward
    faces = np.concatenate([np.stack([p00, p10, p11], axis=1), np.stack([p00, p11, p01], axis=1)])
    return _validated(verts, faces)


# --- Surfaces of revolution ---------------------------------------------------

def dumbbell_profile(bulb_radius: float, neck_radius: float, neck_length: float,
                     samples: int = 4001) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generating curve (s, r, z) from the south pole to the north pole.

    Hemispherical caps of radius `bulb_radius` centred at z = +-neck_length/2,
    joined through a cosine neck with r = neck_radius at z = 0. C1 at the joints.
    """
    half = neck_length / 2.0
    # Caps parameterized by polar angle so dr/dz stays bounded near the poles
    theta = np.linspace(0.0, np.pi / 2, samples // 4)
    south_z = -(half + bulb_radius * np.cos(theta))
    south_r = bulb_radius * np.sin(theta)
    z = np.linspace(-half, half, samples)[1:-1]
    r = neck_radius + (bulb_radius - neck_radius) * 0.5 * (1.0 - np.cos(np.pi * np.abs(z) / half))
    zs = np.concatenate([south_z, z, -south_z[::-1]])
    rs = np.concatenate([south_r, r, south_r[::-1]])
    rs[0] = rs[-1] = 0.0
    s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(rs), np.diff(zs)))])
    return s, rs, zs


def ellipsoid_profile(a: float, c: float, samples: int = 4001) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generating curve of the spheroid r^2/a^2 + z^2/c^2 = 1."""
    phi = np.linspace(0.0, np.pi, samples)
    r = a * np.sin(phi)
    z = -c * np.cos(phi)
    r[0] = r[-1] = 0.0
    s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(r), np.diff(z)))])
    return s, r, z


def sphere_profile(radius: float, samples: int = 4001) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return ellipsoid_profile(radius, radius, samples)


def revolve_profile(s: np.ndarray, r: np.ndarray, z: np.ndarray, n_theta: int,
                    r_floor: float = 0.0) -> TriMesh:
    """Mesh the surface swept by (r(s), z(s)) about the z-axis.

    Ring spacing follows the local circumference so triangles stay close to
    equilateral: ds ~ 2 pi max(r, r_floor) / n_theta. Rings near the poles get
    fewer vertices. `r` must vanish at both ends.
    """
    if n_theta < 3:
        raise ResolutionTooLow(f"angular resolution {n_theta} < 3")
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if r_floor <= 0:
        interior = r[1:-1]
        r_floor = max(float(interior.min()), 1e-3 * float(interior.max()))
    density = n_theta / (2 * np.pi * np.maximum(r, r_floor))
    phi = cumulative_trapezoid(density, s, initial=0.0)
    n_seg = max(int(round(phi[-1])), 2)
    ring_s = np.interp(np.linspace(0.0, phi[-1], n_seg + 1), phi, s)
    ring_r = np.interp(ring_s, s, r)
    ring_z = np.interp(ring_s, s, z)
    ring_r[0] = ring_r[-1] = 0.0

    spacing = 2 * np.pi * np.maximum(ring_r, r_floor) / n_theta
    counts = np.maximum(np.rint(2 * np.pi * ring_r / spacing).astype(int), 3)
    counts[0] = counts[-1] = 1

    verts: List[np.ndarray] = []
    starts = []
    offset = 0
    for k in range(n_seg + 1):
        starts.append(offset)
        if counts[k] == 1:
            verts.append(np.array([[0.0, 0.0, ring_z[k]]]))
        else:
            # Stagger alternate rings by half a spacing
            th = 2 * np.pi * (np.arange(counts[k]) + 0.5 * (k % 2)) / counts[k]
            verts.append(np.stack([ring_r[k] * np.cos(th), ring_r[k] * np.sin(th),
                                   np.full(counts[k], ring_z[k])], axis=1))
        offset += counts[k]

    faces = []
    for k in range(n_seg):
        faces.extend(_zip_rings(starts[k], counts[k], k % 2, starts[k + 1], counts[k + 1], (k + 1) % 2))
    return _validated(np.vstack(verts), np.array(faces, dtype=np.int64))


def _zip_rings(a0: int, na: int, sa: int, b0: int, nb: int, sb: int) -> List[List[int]]:
    """Triangulate the band between ring A (lower s) and ring B with outward winding."""
    if na == 1:
        return [[a0, b0 + (j + 1) % nb, b0 + j] for j in range(nb)]
    if nb == 1:
        return [[a0 + i, a0 + (i + 1) % na, b0] for i in range(na)]
    angle_a = lambda i: (i + 0.5 * sa) / na
    angle_b = lambda j: (j + 0.5 * sb) / nb
    # Start both walks at the vertex closest to angle zero
    i = j = 0
    tris = []
    while i < na or j < nb:
        advance_a = j >= nb or (i < na and angle_a(i + 1) <= angle_b(j + 1))
        if advance_a:
            tris.append([a0 + i % na, a0 + (i + 1) % na, b0 + j % nb])
            i += 1
        else:
            tris.append([a0 + i % na, b0 + (j + 1) % nb, b0 + j % nb])
            j += 1
    return tris


def dumbbell(bulb_radius: float, neck_radius: float, neck_length: float, resolution: int) -> TriMesh:
    s, r, z = dumbbell_profile(bulb_radius, neck_radius, neck_length)
    return revolve_profile(s, r, z, resolution, r_floor=neck_radius)


def primitive_catalogue(perturbed: int = 100, level: int = 2, amplitude: float = 0.1,
                        seed: int = 0) -> Dict[str, TriMesh]:
    """Named test surfaces for the inequality checkers, plus `perturbed` random icospheres."""
    surfaces = {
        "icosphere": icosphere(3, 1.0),
        "ellipsoid": ellipsoid(1.0, 1.0, 1.6, 3),
        "oblate": ellipsoid(1.2, 1.2, 0.6, 3),
        "dumbbell": dumbbell(1.0, 0.2, 1.0, 64),
        "torus": torus(2.0, 1.0, 48),
    }
    rng = np.random.default_rng(seed)
    for i in range(perturbed):
        surfaces[f"perturbed_{i:03d}"] = perturbed_icosphere(level, 1.0, amplitude, rng)
    return surfaces

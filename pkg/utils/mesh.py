from __future__ import annotations
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import trimesh
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist

from utils.errors import (DegenerateFace, IndexOutOfRange, InconsistentOrientation,
                          MeshError, MeshFormatError, NonManifoldEdge)

logger = logging.getLogger("csdflow.mesh")

# Faces below this fraction of the squared bounding-box diagonal are degenerate
AREA_EPS_REL = 1e-12


class TriMesh:
    """Closed oriented triangle mesh with edge adjacency.

    Arrays are read-only; a moved mesh is a new TriMesh sharing the
    connectivity (see `with_vertices`).
    """

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, edges: np.ndarray,
                 edge_faces: np.ndarray, face_edges: np.ndarray):
        self.vertices = _frozen(np.asarray(vertices, dtype=float))
        self.faces = _frozen(np.asarray(faces, dtype=np.int64))
        self.edges = _frozen(edges)
        self.edge_faces = _frozen(edge_faces)
        self.face_edges = _frozen(face_edges)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def genus(self) -> int:
        return (2 - self.euler_characteristic()) // 2

    def with_vertices(self, vertices: np.ndarray) -> 'TriMesh':
        """Same connectivity, new positions. No geometric validation."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise MeshError(f"expected vertex array of shape {self.vertices.shape}, got {vertices.shape}")
        return TriMesh(vertices, self.faces, self.edges, self.edge_faces, self.face_edges)

    def transformed(self, scale: float = 1.0, rotation: Optional[np.ndarray] = None,
                    translation: Optional[np.ndarray] = None) -> 'TriMesh':
        x = self.vertices * scale
        if rotation is not None:
            x = x @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            x = x + np.asarray(translation, dtype=float)
        return self.with_vertices(x)

    def flipped(self) -> 'TriMesh':
        return build_mesh(self.vertices, self.faces[:, ::-1])

    def oriented_outward(self) -> 'TriMesh':
        if enclosed_volume(self) < 0:
            logger.info("mesh is inward oriented, flipping faces")
            return self.flipped()
        return self

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def min_edge(self) -> float:
        return float(self.edge_lengths().min())

    def mean_edge(self) -> float:
        return float(self.edge_lengths().mean())

    def face_cross(self) -> np.ndarray:
        """Unnormalized face normals, |cross| = 2 * area."""
        p = self.vertices[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_qualities(self) -> np.ndarray:
        """2 r_in / r_circ per face: 1 for equilateral, 0 for degenerate."""
        p = self.vertices[self.faces]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)

    def vertex_neighbors(self) -> Tuple[np.ndarray, np.ndarray]:
        """CSR style (indptr, indices) one-ring vertex adjacency."""
        i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((j, i))
        i, j = i[order], j[order]
        indptr = np.searchsorted(i, np.arange(self.n_vertices + 1))
        return indptr, j

    def summary(self) -> Dict[str, float]:
        return {
            "V": self.n_vertices,
            "E": self.n_edges,
            "F": self.n_faces,
            "chi": self.euler_characteristic(),
            "area": surface_area(self),
            "volume": enclosed_volume(self),
        }


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def build_mesh(vertices, faces, check_area: bool = True) -> TriMesh:
    """Validate a closed oriented triangle mesh and build its edge adjacency.

    Raises NonManifoldEdge when an edge is not shared by exactly two faces,
    InconsistentOrientation when windings disagree, DegenerateFace for faces
    below 1e-12 * diag^2 area.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
    if faces.ndim != 2 or faces.shape[1] != 3 or faces.shape[0] == 0:
        raise MeshError(f"faces must have shape (m, 3), got {faces.shape}")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("vertex coordinates must be finite")
    faces = faces.astype(np.int64)
    n = vertices.shape[0]
    if faces.min() < 0 or faces.max() >= n:
        raise IndexOutOfRange(f"face indices must lie in [0, {n})")
    if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])):
        raise DegenerateFace("face with repeated vertex index")

    m = faces.shape[0]
    # Half-edges (a -> b) in face order: edge k of face f is opposite corner k
    heads = faces[:, [1, 2, 0]].ravel()
    tails = faces[:, [2, 0, 1]].ravel()
    directed = np.stack([heads, tails], axis=1)
    undirected = np.sort(directed, axis=1)
    edges, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    bad = np.flatnonzero(counts != 2)
    if bad.size:
        e = edges[bad[0]]
        raise NonManifoldEdge(
            f"{bad.size} edge(s) not shared by exactly two faces, e.g. ({e[0]}, {e[1]}) with {counts[bad[0]]}")
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(directed_counts != 1):
        raise InconsistentOrientation("adjacent faces traverse a shared edge in the same direction")

    used = np.zeros(n, dtype=bool)
    used[faces.ravel()] = True
    if not used.all():
        raise MeshError(f"{int((~used).sum())} vertex/vertices not referenced by any face")

    half_face = np.repeat(np.arange(m), 3)
    order = np.argsort(inverse, kind="stable")
    edge_faces = half_face[order].reshape(-1, 2)
    face_edges = inverse.reshape(m, 3)

    mesh = TriMesh(vertices, faces, edges, edge_faces, face_edges)
    if mesh.euler_characteristic() % 2:
        raise InconsistentOrientation(f"odd Euler characteristic {mesh.euler_characteristic()}")
    if check_area:
        area_eps = AREA_EPS_REL * mesh.bbox_diagonal() ** 2
        areas = mesh.face_areas()
        if areas.min() < area_eps:
            raise DegenerateFace(
                f"{int((areas < area_eps).sum())} face(s) with area below {area_eps:.3e}")
    return mesh


def enclosed_volume(mesh: TriMesh) -> float:
    p = mesh.vertices[mesh.faces]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


def surface_area(mesh: TriMesh) -> float:
    return float(mesh.face_areas().sum())


def extrinsic_diameter(mesh: TriMesh, chunk: int = 2048) -> float:
    """Diameter of the vertex set, exact for the hull of the vertices."""
    points = mesh.vertices
    try:
        points = points[ConvexHull(points).vertices]
    except QhullError:
        pass
    best = 0.0
    for start in range(0, len(points), chunk):
        best = max(best, float(cdist(points[start:start + chunk], points).max()))
    return best


def diameter_with_tolerance(mesh: TriMesh) -> Tuple[float, float]:
    """Vertex-set diameter and the O(max edge) gap to sup over the surface."""
    return extrinsic_diameter(mesh), float(mesh.edge_lengths().max())


def neck_radius(mesh: TriMesh, bins: int = 64) -> float:
    """Narrowest ring radius between the two widest z-slices, NaN without a neck.

    Assumes a surface of revolution about the z-axis.
    """
    z = mesh.vertices[:, 2]
    r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
    edges = np.linspace(z.min(), z.max(), bins + 1)
    which = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, bins - 1)
    widest = np.full(bins, -np.inf)
    np.maximum.at(widest, which, r)
    filled = np.flatnonzero(np.isfinite(widest))
    if filled.size < 3:
        return float("nan")
    profile = widest[filled]
    half = filled.size // 2
    left = int(np.argmax(profile[:half]))
    right = half + int(np.argmax(profile[half:]))
    if right - left < 2:
        return float("nan")
    # vertices sit on rings, so the narrowest ring is the smallest vertex radius between the bulges
    between = (which > filled[left]) & (which < filled[right])
    neck = float(r[between].min())
    if neck >= min(profile[left], profile[right]) * (1 - 1e-9):
        return float("nan")
    return neck


# --- I/O -------------------------------------------------------------------

# extension -> trimesh file_type; anything else is read as OBJ
_MESH_TYPES = {".obj": "obj", ".ply": "ply"}


def _export(mesh: TriMesh, path: Union[str, Path], file_type: str, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False)
    out.export(path, file_type=file_type, **kwargs)
    return path


def write_obj(mesh: TriMesh, path: Union[str, Path]) -> Path:
    return _export(mesh, path, "obj", digits=17, include_normals=False)


def write_ply_binary(mesh: TriMesh, path: Union[str, Path]) -> Path:
    """Binary PLY, used for interchange."""
    return _export(mesh, path, "ply", encoding="binary")


def load_mesh(path: Union[str, Path], validate: bool = True) -> TriMesh:
    """Read an OBJ or PLY file (ASCII or binary, polygons triangulated) into a validated TriMesh.

    Vertex order is kept as written. Unreadable or empty files raise MeshFormatError;
    topology problems raise the MeshError subclasses of `build_mesh`.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshFormatError(f"{path}: no such file")
    file_type = _MESH_TYPES.get(path.suffix.lower(), "obj")
    try:
        loaded = trimesh.load_mesh(path, file_type=file_type, process=False, maintain_order=True)
    except Exception as e:  # the trimesh parsers raise assorted types on malformed input
        raise MeshFormatError(f"{path}: {e}") from e
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.vertices) == 0 or len(loaded.faces) == 0:
        raise MeshFormatError(f"{path}: no vertices or faces")
    logger.debug("loaded %s: V=%d F=%d", path, len(loaded.vertices), len(loaded.faces))
    return build_mesh(np.asarray(loaded.vertices, dtype=float), np.asarray(loaded.faces, dtype=np.int64),
                      check_area=validate)

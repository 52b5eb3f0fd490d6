"""
Discrete differential operators on closed triangle meshes.

Conventions: outward vertex normals, mean curvature H = -(Delta f) . nu so a
sphere of radius R has H = 2/R. The stiffness matrix L is positive
semi-definite and Delta u = -M^{-1} L u with M the mixed-Voronoi masses.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, spdiags

from utils.errors import DegenerateFace
from utils.mesh import TriMesh, enclosed_volume, surface_area

logger = logging.getLogger("csdflow.operators")


@dataclass
class GeometryCache:
    faces: np.ndarray
    stiffness: csr_matrix          # L, symmetric positive semi-definite
    masses: np.ndarray             # mixed-Voronoi vertex areas
    corner_areas: np.ndarray       # (F, 3) share of each face owned by each corner
    face_areas: np.ndarray
    face_normals: np.ndarray       # unit
    gradient: csr_matrix           # (3F, V): stacked per-face gradients of a P1 field
    normals: np.ndarray            # unit outward vertex normals
    mean_curvature_vector: np.ndarray  # Delta f, equals -H nu
    H: np.ndarray
    A: np.ndarray                  # (V, 3, 3) shape operator on the tangent plane
    A_norm_sq: np.ndarray
    K: np.ndarray
    angle_defect: np.ndarray
    laplacian_H: np.ndarray
    grad_H_sq: np.ndarray
    zero_normal: np.ndarray        # flagged vertices: degenerate umbrella
    rank_deficient: np.ndarray     # flagged vertices: shape fit fell back to neighbours

    def integrate(self, values: np.ndarray) -> float:
        """Mass-weighted vertex sum, fixed summation order."""
        return float(np.dot(self.masses, values))

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lu = self.stiffness @ u
        return -(lu / self.masses[:, None] if lu.ndim == 2 else lu / self.masses)

    def face_gradients(self, u: np.ndarray) -> np.ndarray:
        return (self.gradient @ np.asarray(u, dtype=float)).reshape(-1, 3)

    def grad_norm_sq(self, u: np.ndarray) -> np.ndarray:
        """Per-vertex |grad u|^2 from per-face gradients, corner-area averaged.

        The mass-weighted sum equals u . L . u.
        """
        g = self.face_gradients(u)
        return _to_vertices(self.faces, self.corner_areas, np.einsum("ij,ij->i", g, g), self.masses)

    def dirichlet_energy(self, u: np.ndarray) -> float:
        g = self.face_gradients(u)
        return float(np.dot(self.face_areas, np.einsum("ij,ij->i", g, g)))


def _corners(mesh: TriMesh):
    p = mesh.vertices[mesh.faces]                      # (F, 3 corners, 3)
    # Edge opposite corner k runs from corner k+1 to corner k+2
    opposite = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
    to_next = np.roll(p, -1, axis=1) - p
    to_prev = np.roll(p, -2, axis=1) - p
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    double_area = np.linalg.norm(cross, axis=1)
    dots = np.einsum("fkj,fkj->fk", to_next, to_prev)
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = dots / double_area[:, None]
    angles = np.arctan2(double_area[:, None], dots)
    return p, opposite, cross, double_area, cot, angles


def _mixed_corner_areas(opposite: np.ndarray, double_area: np.ndarray, cot: np.ndarray,
                        angles: np.ndarray) -> np.ndarray:
    area = 0.5 * double_area
    sq = np.einsum("fkj,fkj->fk", opposite, opposite)
    # Voronoi share of corner k: edges k-(k+1) and k-(k+2) are opposite corners k+2 and k+1
    voronoi = (np.roll(sq, -2, axis=1) * np.roll(cot, -2, axis=1)
               + np.roll(sq, -1, axis=1) * np.roll(cot, -1, axis=1)) / 8.0
    obtuse = angles > np.pi / 2
    any_obtuse = obtuse.any(axis=1)
    corner = np.where(any_obtuse[:, None], np.where(obtuse, area[:, None] / 2, area[:, None] / 4), voronoi)
    return corner


def _to_vertices(faces: np.ndarray, corner_weights: np.ndarray, face_values: np.ndarray,
                 masses: np.ndarray) -> np.ndarray:
    spread = (corner_weights * face_values[:, None]).ravel()
    return np.bincount(faces.ravel(), spread, minlength=len(masses)) / masses


def cotan_laplacian(mesh: TriMesh) -> Tuple[csr_matrix, np.ndarray]:
    """Stiffness L (w_ij = (cot a + cot b) / 2) and mixed-Voronoi masses."""
    _, opposite, _, double_area, cot, angles = _corners(mesh)
    if not np.all(np.isfinite(cot)):
        raise DegenerateFace("non-finite cotangent weight")
    n = mesh.n_vertices
    faces = mesh.faces
    ii = np.roll(faces, -1, axis=1).ravel()
    jj = np.roll(faces, -2, axis=1).ravel()
    w = 0.5 * cot.ravel()
    lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
    W = coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()
    # Both triangles of each edge contribute; symmetric by construction
    W = W + W.T
    L = spdiags(np.asarray(W.sum(axis=0)).ravel(), 0, n, n) - W
    corner = _mixed_corner_areas(opposite, double_area, cot, angles)
    masses = np.bincount(faces.ravel(), corner.ravel(), minlength=n)
    return L.tocsr(), masses


def _gradient_operator(mesh: TriMesh, opposite: np.ndarray, cross: np.ndarray,
                       double_area: np.ndarray) -> csr_matrix:
    unit = cross / double_area[:, None]
    # grad phi_k = (n x e_k) / (2 A) with e_k the edge opposite corner k
    g = np.cross(unit[:, None, :], opposite) / double_area[:, None, None]   # (F, 3 corners, 3 comps)
    m = mesh.n_faces
    rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.faces[:, :, None], (m, 3, 3))
    return coo_matrix((g.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * m, mesh.n_vertices)).tocsr()


def vertex_normals(mesh: TriMesh, cross: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted outward normals and the zero-normal flags."""
    if cross is None:
        cross = mesh.face_cross()
    n = mesh.n_vertices
    acc = np.zeros((n, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norm = np.linalg.norm(acc, axis=1)
    scale = np.linalg.norm(cross, axis=1).max()
    zero = norm <= 1e-14 * scale
    normals = np.divide(acc, norm[:, None], out=np.zeros_like(acc), where=~zero[:, None])
    return normals, zero


def mean_curvature(mesh: TriMesh, L: Optional[csr_matrix] = None,
                   masses: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-vertex (H, nu) with H = -(Delta f) . nu."""
    if L is None or masses is None:
        L, masses = cotan_laplacian(mesh)
    normals, zero = vertex_normals(mesh)
    lap_f = -(L @ mesh.vertices) / masses[:, None]
    if zero.any():
        logger.debug("%d vertex/vertices with zero normal, using curvature-vector direction", int(zero.sum()))
        hn = np.linalg.norm(lap_f[zero], axis=1)
        fallback = np.divide(-lap_f[zero], hn[:, None], out=np.zeros_like(lap_f[zero]), where=hn[:, None] > 0)
        normals[zero] = fallback
    H = -np.einsum("ij,ij->i", lap_f, normals)
    return H, normals


def gauss_curvature(mesh: TriMesh, masses: Optional[np.ndarray] = None) -> np.ndarray:
    """Angle defect over mixed-Voronoi mass."""
    if masses is None:
        _, masses = cotan_laplacian(mesh)
    return angle_defects(mesh) / masses


def angle_defects(mesh: TriMesh) -> np.ndarray:
    _, _, _, _, _, angles = _corners(mesh)
    return 2 * np.pi - np.bincount(mesh.faces.ravel(), angles.ravel(), minlength=mesh.n_vertices)


def shape_operator(mesh: TriMesh, normals: Optional[np.ndarray] = None, H: Optional[np.ndarray] = None,
                   match_trace: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-vertex shape operator A (3x3, acting on the tangent plane), |A|^2 and fallback flags.

    Per face, a symmetric 2x2 form S is fitted by least squares to
    d(nu)(e) = S e along the three edges, then averaged to vertices with
    corner-area weights and projected on the vertex tangent plane. With
    match_trace the tangential trace is shifted to H so that |A|^2 >= H^2 / 2
    holds exactly; the shift equals the fit error.
    """
    _, opposite, cross, double_area, cot, angles = _corners(mesh)
    if normals is None or H is None:
        H, normals = mean_curvature(mesh)
    n = mesh.n_vertices
    m = mesh.n_faces
    unit = cross / double_area[:, None]
    u = opposite[:, 2] / np.linalg.norm(opposite[:, 2], axis=1)[:, None]
    v = np.cross(unit, u)
    nf = normals[mesh.faces]
    dn = np.roll(nf, -2, axis=1) - np.roll(nf, -1, axis=1)      # along the edge opposite each corner
    eu = np.einsum("fkj,fj->fk", opposite, u)
    ev = np.einsum("fkj,fj->fk", opposite, v)
    du = np.einsum("fkj,fj->fk", dn, u)
    dv = np.einsum("fkj,fj->fk", dn, v)

    # Normal equations for (a, b, c) with S = [[a, b], [b, c]]
    N = np.zeros((m, 3, 3))
    rhs = np.zeros((m, 3))
    N[:, 0, 0] = (eu * eu).sum(1)
    N[:, 0, 1] = N[:, 1, 0] = (eu * ev).sum(1)
    N[:, 1, 1] = (ev * ev + eu * eu).sum(1)
    N[:, 1, 2] = N[:, 2, 1] = (eu * ev).sum(1)
    N[:, 2, 2] = (ev * ev).sum(1)
    rhs[:, 0] = (eu * du).sum(1)
    rhs[:, 1] = (ev * du + eu * dv).sum(1)
    rhs[:, 2] = (ev * dv).sum(1)
    scale = (eu * eu + ev * ev).sum(1)
    det = np.linalg.det(N)
    ok = np.isfinite(det) & (np.abs(det) > 1e-10 * scale ** 3)
    coef = np.zeros((m, 3))
    if ok.any():
        coef[ok] = np.linalg.solve(N[ok], rhs[ok][..., None])[..., 0]
    a, b, c = coef.T
    S = (a[:, None, None] * np.einsum("fi,fj->fij", u, u)
         + b[:, None, None] * (np.einsum("fi,fj->fij", u, v) + np.einsum("fi,fj->fij", v, u))
         + c[:, None, None] * np.einsum("fi,fj->fij", v, v))

    corner = _mixed_corner_areas(opposite, double_area, cot, angles) * ok[:, None]
    weight = np.bincount(mesh.faces.ravel(), corner.ravel(), minlength=n)
    A = np.zeros((n, 3, 3))
    for k in range(3):
        np.add.at(A, mesh.faces[:, k], corner[:, k, None, None] * S)
    has_fit = weight > 0
    A[has_fit] /= weight[has_fit, None, None]

    bad_face = ~ok
    rank_deficient = np.zeros(n, dtype=bool)
    if bad_face.any():
        rank_deficient[np.unique(mesh.faces[bad_face])] = True
        logger.debug("%d face(s) with rank-deficient shape fit", int(bad_face.sum()))

    P = np.eye(3)[None] - np.einsum("ni,nj->nij", normals, normals)
    A = P @ A @ P
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    if match_trace:
        trace = np.einsum("nii->n", A)
        A += 0.5 * (H - trace)[:, None, None] * P
    A_norm_sq = np.einsum("nij,nij->n", A, A)
    return A, A_norm_sq, rank_deficient


def laplacian_of_H(mesh: TriMesh, cache: GeometryCache) -> np.ndarray:
    return cache.laplacian(cache.H)


def grad_H_norm_sq(mesh: TriMesh, cache: GeometryCache) -> np.ndarray:
    return cache.grad_norm_sq(cache.H)


def geometry_cache(mesh: TriMesh) -> GeometryCache:
    """All per-vertex geometry the flow and the diagnostics read."""
    _, opposite, cross, double_area, cot, angles = _corners(mesh)
    L, masses = cotan_laplacian(mesh)
    corner = _mixed_corner_areas(opposite, double_area, cot, angles)
    H, normals = mean_curvature(mesh, L, masses)
    zero = vertex_normals(mesh, cross)[1]
    A, A_norm_sq, rank_deficient = shape_operator(mesh, normals, H)
    defect = 2 * np.pi - np.bincount(mesh.faces.ravel(), angles.ravel(), minlength=mesh.n_vertices)
    cache = GeometryCache(
        faces=mesh.faces,
        stiffness=L,
        masses=masses,
        corner_areas=corner,
        face_areas=0.5 * double_area,
        face_normals=cross / double_area[:, None],
        gradient=_gradient_operator(mesh, opposite, cross, double_area),
        normals=normals,
        mean_curvature_vector=-H[:, None] * normals,
        H=H,
        A=A,
        A_norm_sq=A_norm_sq,
        K=defect / masses,
        angle_defect=defect,
        laplacian_H=np.zeros_like(H),
        grad_H_sq=np.zeros_like(H),
        zero_normal=zero,
        rank_deficient=rank_deficient,
    )
    cache.laplacian_H = laplacian_of_H(mesh, cache)
    cache.grad_H_sq = grad_H_norm_sq(mesh, cache)
    return cache


def integrals(mesh: TriMesh, cache: GeometryCache) -> Dict[str, float]:
    """The tracked surface integrals of one time sample."""
    return {
        "vol": enclosed_volume(mesh),
        "area": surface_area(mesh),
        "intH": cache.integrate(cache.H),
        "intAbsH": cache.integrate(np.abs(cache.H)),
        "intK": float(cache.angle_defect.sum()),
        "intA2": cache.integrate(cache.A_norm_sq),
        "willmore": cache.integrate(cache.H ** 2),
        "intGradH2": cache.dirichlet_energy(cache.H),
    }


def rate_report(cache: GeometryCache, h: float) -> Dict[str, float]:
    """First-variation rates under normal speed V = Delta H + h."""
    V = cache.laplacian_H + h
    return {
        "dVol": cache.integrate(V),
        "dArea": cache.integrate(cache.H * V),
        "dIntH": 2.0 * cache.integrate(cache.K * V),
    }

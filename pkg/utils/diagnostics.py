"""
Lifespan and inequality diagnostics on surface meshes.

Curvature concentration over balls, the largest radius below a
concentration threshold and its fit in time, and numerical checks of the
diameter, Sobolev, interpolation and covering inequalities. Every check
returns a report; none of them raises on a violated inequality.
"""
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.stats import linregress

from utils.config_io import resolve_threads
from utils.errors import CutoffTooNarrow, InsufficientSamples, RhoOutOfRange, ThresholdAboveTotal
from utils.mesh import TriMesh, enclosed_volume, extrinsic_diameter, surface_area
from utils.operators import GeometryCache, geometry_cache

logger = logging.getLogger("csdflow.diagnostics")

# Diameter bound constant for surfaces in R^3
TOPPING_CONSTANT = 32.0 / math.pi
# 4^3 / sqrt(omega_2), omega_2 = pi
MICHAEL_SIMON_CONSTANT = 64.0 / math.sqrt(math.pi)
# Covering bound base for n = 2: 32 sqrt(3) / (2 pi rho)
COVERING_BASE = 32.0 * math.sqrt(3.0) / (2.0 * math.pi)
BABYINT_SLACK = 0.10
MIN_CUTOFF_VERTICES = 50


def _center_chunks(centers: np.ndarray, chunk: int) -> List[np.ndarray]:
    return [centers[i:i + chunk] for i in range(0, len(centers), chunk)]


def default_centers(mesh: TriMesh, grid: int = 16) -> np.ndarray:
    """Vertex positions plus a grid^3 lattice over the bounding box."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    axes = [np.linspace(lo[k], hi[k], grid) for k in range(3)]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return np.vstack([mesh.vertices, lattice])


def _resolve_centers(mesh: TriMesh, centers, grid: int) -> np.ndarray:
    if centers is None:
        return default_centers(mesh, grid)
    if isinstance(centers, str):
        if centers == "surface":
            return np.array(mesh.vertices)
        if centers == "grid":
            return default_centers(mesh, grid)
        raise ValueError(f"unknown center set '{centers}'")
    return np.atleast_2d(np.asarray(centers, dtype=float))


@dataclass
class ConcentrationReport:
    rho: float
    p: float
    centers: np.ndarray
    values: np.ndarray
    eta: float
    argmax: np.ndarray
    total: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rho': self.rho,
            'p': self.p,
            'eta': self.eta,
            'argmax': self.argmax.tolist(),
            'total': self.total,
            'centers': len(self.centers),
        }


def concentration(mesh: TriMesh, cache: GeometryCache, rho: float, p: float = 2.0,
                  centers=None, grid: int = 16, threads: Optional[int] = None,
                  chunk: int = 512) -> ConcentrationReport:
    """sum_{|f_i - x| < rho} m_i |A_i|^p for every center x, with the sup and its argmax."""
    if not rho > 0:
        raise RhoOutOfRange(f"rho must be > 0, got {rho}")
    centers = _resolve_centers(mesh, centers, grid)
    weights = cache.masses * cache.A_norm_sq ** (p / 2.0)
    vertices = mesh.vertices

    def ball_sums(block: np.ndarray) -> np.ndarray:
        inside = cdist(block, vertices) < rho
        return inside.astype(float) @ weights

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        values = np.concatenate(list(pool.map(ball_sums, _center_chunks(centers, chunk))))
    best = int(np.argmax(values))
    return ConcentrationReport(rho=float(rho), p=float(p), centers=centers, values=values,
                               eta=float(values[best]), argmax=centers[best].copy(),
                               total=float(weights.sum()))


@dataclass
class RadiusEstimate:
    rho: float
    eta: float
    epsilon0: float
    total: float
    # "" | "ThresholdAboveTotal"
    flag: str = ""
    iterations: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def lifespan_radius(mesh: TriMesh, cache: GeometryCache, epsilon0: float, p: float = 2.0,
                    centers="surface", tol: float = 1e-3, strict: bool = False,
                    threads: Optional[int] = None) -> RadiusEstimate:
    """Largest rho in (0, d_ext] whose concentration stays at or below epsilon0.

    Centers default to the vertex set. With `strict`, a threshold at or
    above the total raises ThresholdAboveTotal instead of returning d_ext
    flagged.
    """
    if not epsilon0 > 0:
        raise ValueError("epsilon0 must be > 0")
    d_ext = extrinsic_diameter(mesh)
    total = float(np.dot(cache.masses, cache.A_norm_sq ** (p / 2.0)))
    if epsilon0 >= total:
        if strict:
            raise ThresholdAboveTotal(epsilon0, total, rho=d_ext)
        logger.info("epsilon0 %.6g >= total %.6g, rho* = d_ext", epsilon0, total)
        return RadiusEstimate(rho=d_ext, eta=total, epsilon0=epsilon0, total=total,
                              flag="ThresholdAboveTotal")
    centers = _resolve_centers(mesh, centers, 16)
    eta = lambda rho: concentration(mesh, cache, rho, p, centers, threads=threads).eta

    lo, hi = 0.0, d_ext
    eta_lo = 0.0
    eta_hi = eta(hi)
    if eta_hi <= epsilon0:
        return RadiusEstimate(rho=hi, eta=eta_hi, epsilon0=epsilon0, total=total)
    iterations = 0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        value = eta(mid)
        if value <= epsilon0:
            lo, eta_lo = mid, value
        else:
            hi = mid
        iterations += 1
    return RadiusEstimate(rho=lo, eta=eta_lo, epsilon0=epsilon0, total=total, iterations=iterations)


@dataclass
class LifespanEstimate:
    epsilon0: float
    times: List[float]
    radii: List[float]
    c: float
    t_est: float
    r_squared: float
    residuals: List[float]
    # rho*(0)^4 / c
    lower_bound: float
    window_start: float
    # "" | "NoConcentration"
    flag: str = ""

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in data.items()}


def lifespan_fit(times: Sequence[float], radii: Sequence[float], epsilon0: float = float('nan'),
                 window: float = 0.3, min_points: int = 8) -> LifespanEstimate:
    """Least-squares fit of rho*(t)^4 = c (T - t) over the final `window` of the run."""
    t = np.asarray(times, dtype=float)
    rho = np.asarray(radii, dtype=float)
    if len(t) < min_points:
        raise InsufficientSamples(f"need at least {min_points} samples, got {len(t)}")
    order = np.argsort(t, kind="stable")
    t, rho = t[order], rho[order]
    start = t[0] + (1.0 - window) * (t[-1] - t[0])
    use = t >= start
    if use.sum() < min_points:
        use = np.zeros_like(use)
        use[-min_points:] = True
    tw, y = t[use], rho[use] ** 4
    span = tw[-1] - tw[0]
    if span <= 0:
        raise InsufficientSamples("fit window has no time extent")

    scale = float(np.abs(y).max()) or 1.0
    if np.ptp(y) <= 1e-12 * scale:
        slope, intercept, r_squared = 0.0, float(y.mean()), 0.0
    else:
        fit = linregress(tw, y)
        slope, intercept, r_squared = float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
    c = -slope
    residuals = (y - (intercept + slope * tw)).tolist()
    if c <= 1e-9 * scale / span:
        logger.info("lifespan fit: no concentration (c = %.3g)", c)
        return LifespanEstimate(epsilon0=epsilon0, times=t.tolist(), radii=rho.tolist(), c=c,
                                t_est=float('inf'), r_squared=r_squared, residuals=residuals,
                                lower_bound=float('inf'), window_start=float(tw[0]), flag="NoConcentration")
    return LifespanEstimate(epsilon0=epsilon0, times=t.tolist(), radii=rho.tolist(), c=c,
                            t_est=intercept / c, r_squared=r_squared, residuals=residuals,
                            lower_bound=float(rho[0] ** 4 / c), window_start=float(tw[0]))


def lifespan_series(snapshots: Sequence[Tuple[float, TriMesh]], epsilon0: float, p: float = 2.0,
                    threads: Optional[int] = None) -> Tuple[List[float], List[RadiusEstimate]]:
    """rho*(t) over snapshot meshes, one worker per snapshot."""
    def one(item):
        t, mesh = item
        return lifespan_radius(mesh, geometry_cache(mesh), epsilon0, p, threads=1)

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        estimates = list(pool.map(one, snapshots))
    return [float(t) for t, _ in snapshots], estimates


# --- Inequality checkers ------------------------------------------------------

@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _report(name: str, lhs: float, rhs: float, slack: float = 0.0, **detail) -> InequalityReport:
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 0 else float('inf'))
    return InequalityReport(name=name, lhs=float(lhs), rhs=float(rhs), ratio=float(ratio),
                            holds=bool(ratio <= 1.0 + slack), detail=detail)


def check_topping(mesh: TriMesh, cache: GeometryCache) -> InequalityReport:
    """d_ext <= (32 / pi) int |H|."""
    d_ext, gap = extrinsic_diameter(mesh), float(mesh.edge_lengths().max())
    int_abs_h = cache.integrate(np.abs(cache.H))
    return _report("topping", d_ext, TOPPING_CONSTANT * int_abs_h,
                   int_abs_H=int_abs_h, diameter_gap=gap)


def default_test_fields(mesh: TriMesh, cache: GeometryCache) -> Dict[str, np.ndarray]:
    x = mesh.vertices
    return {"one": np.ones(mesh.n_vertices), "H": cache.H, "x": x[:, 0], "y": x[:, 1], "z": x[:, 2]}


def check_michael_simon(mesh: TriMesh, cache: GeometryCache,
                        u: Union[None, np.ndarray, Dict[str, np.ndarray]] = None) -> List[InequalityReport]:
    """(int u^2)^(1/2) <= 64 / sqrt(pi) * int (|grad u| + |u| |H|), per test field."""
    if u is None:
        fields = default_test_fields(mesh, cache)
    elif isinstance(u, dict):
        fields = u
    else:
        fields = {"u": np.asarray(u, dtype=float)}
    reports = []
    for name, values in fields.items():
        g = cache.face_gradients(values)
        grad_term = float(np.dot(cache.face_areas, np.linalg.norm(g, axis=1)))
        mean_term = cache.integrate(np.abs(values) * np.abs(cache.H))
        lhs = math.sqrt(cache.integrate(values ** 2))
        reports.append(_report(f"michael_simon[{name}]", lhs, MICHAEL_SIMON_CONSTANT * (grad_term + mean_term),
                               gradient_term=grad_term, mean_curvature_term=mean_term))
    return reports


@dataclass
class CutoffSpec:
    center: np.ndarray
    rho: float

    @property
    def c_gamma1(self) -> float:
        # max slope of the quintic smoothstep is 15/8 over a transition of width rho
        return 15.0 / (8.0 * self.rho)

    @property
    def c_gamma2(self) -> float:
        return (10.0 / math.sqrt(3.0)) / self.rho ** 2

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """1 on B_rho, 0 outside B_2rho, quintic smoothstep between."""
        d = np.linalg.norm(np.atleast_2d(points) - np.asarray(self.center)[None], axis=1)
        s = np.clip((2.0 * self.rho - d) / self.rho, 0.0, 1.0)
        return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def _covariant_grad_A_sq(mesh: TriMesh, cache: GeometryCache) -> np.ndarray:
    """Per-face |nabla A|^2 surrogate: ambient face gradient of A, tangentially projected."""
    n, m = mesh.n_vertices, mesh.n_faces
    dA = (cache.gradient @ cache.A.reshape(n, 9)).reshape(m, 3, 3, 3)   # [f, k, i, j] = d_k A_ij
    P = np.eye(3)[None] - np.einsum("fi,fj->fij", cache.face_normals, cache.face_normals)
    projected = np.einsum("fak,fbi,fcj,fkij->fabc", P, P, P, dA)
    return np.einsum("fabc,fabc->f", projected, projected)


def _second_A_sq(mesh: TriMesh, cache: GeometryCache) -> np.ndarray:
    """Per-vertex |nabla_(2) A|^2 surrogate: componentwise Laplacian of A, projected."""
    n = mesh.n_vertices
    lap = cache.laplacian(cache.A.reshape(n, 9)).reshape(n, 3, 3)
    P = np.eye(3)[None] - np.einsum("ni,nj->nij", cache.normals, cache.normals)
    projected = P @ lap @ P
    return np.einsum("nij,nij->n", projected, projected)


def check_interpolation_babyint(mesh: TriMesh, cache: GeometryCache, cutoff: CutoffSpec,
                                beta: float = 1.0, theta: float = 1.0, s: float = 4.0,
                                slack: float = BABYINT_SLACK) -> InequalityReport:
    """(1-beta) int |grad A|^2 g^(s-2) <= theta int |grad2 A|^2 g^s
    + (beta + theta ((s-2) c_g1)^2) / (4 beta theta) int |A|^2 g^(s-4), with surrogate derivatives."""
    if not (beta > 0 and theta > 0):
        raise ValueError("beta and theta must be > 0")
    if s < 4:
        raise ValueError("s must be >= 4")
    gamma = cutoff.evaluate(mesh.vertices)
    support = int((gamma > 0).sum())
    if support < MIN_CUTOFF_VERTICES:
        raise CutoffTooNarrow(f"{support} vertices inside the cutoff support, need {MIN_CUTOFF_VERTICES}")
    gamma_face = gamma[mesh.faces].mean(axis=1)
    grad_term = float(np.dot(cache.face_areas * gamma_face ** (s - 2), _covariant_grad_A_sq(mesh, cache)))
    second_term = cache.integrate(_second_A_sq(mesh, cache) * gamma ** s)
    low_term = cache.integrate(cache.A_norm_sq * gamma ** (s - 4))
    coefficient = (beta + theta * ((s - 2) * cutoff.c_gamma1) ** 2) / (4 * beta * theta)
    lhs = (1 - beta) * grad_term
    rhs = theta * second_term + coefficient * low_term
    return _report("babyint", lhs, rhs, slack=slack, surrogate=True, support=support,
                   grad_A_term=grad_term, second_A_term=second_term, A_term=low_term,
                   c_gamma1=cutoff.c_gamma1, c_gamma2=cutoff.c_gamma2, beta=beta, theta=theta, s=s)


@dataclass
class CoveringReport:
    rho: float
    count: int
    log10_bound: float
    bound: float
    holds: bool
    max_ball_A4: float
    centers: List[List[float]] = field(default_factory=list)
    # "" | "AboveRange": rho beyond d_ext sqrt(3) / 2, one ball suffices
    flag: str = ""

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('centers')
        data['bound'] = None if not math.isfinite(self.bound) else self.bound
        return data


def greedy_cover(points: np.ndarray, rho: float, start: int = 0) -> np.ndarray:
    """Farthest-point cover: indices of centers whose rho-balls contain every point."""
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    while dist.max() >= rho:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen)


def covering_count(mesh: TriMesh, cache: GeometryCache, rho: float,
                   threads: Optional[int] = None) -> CoveringReport:
    """Greedy ball-cover count against (32 sqrt3 / (2 pi rho))^12 |M|^9 (max int_B |A|^4)^3."""
    if not rho > 0:
        raise RhoOutOfRange(f"rho must be > 0, got {rho}")
    d_ext = extrinsic_diameter(mesh)
    area = surface_area(mesh)
    ball = concentration(mesh, cache, rho, p=4.0, centers="surface", threads=threads)
    max_a4 = ball.eta
    log_bound = (12 * math.log10(COVERING_BASE / rho) + 9 * math.log10(area)
                 + (3 * math.log10(max_a4) if max_a4 > 0 else -math.inf))
    bound = 10.0 ** log_bound if log_bound < 300 else math.inf

    if rho >= d_ext * math.sqrt(3.0) / 2:
        centers = mesh.vertices[:1]
        flag = "AboveRange"
    else:
        centers = mesh.vertices[greedy_cover(mesh.vertices, rho)]
        flag = ""
        gaps, _ = cKDTree(centers).query(mesh.vertices)
        if gaps.max() >= rho:
            logger.warning("greedy cover leaves a vertex %.3g from every center (rho %.3g)", gaps.max(), rho)
    count = len(centers)
    return CoveringReport(rho=float(rho), count=count, log10_bound=float(log_bound), bound=bound,
                          holds=bool(math.log10(count) <= log_bound), max_ball_A4=max_a4,
                          centers=centers.tolist(), flag=flag)


@dataclass
class BuragoZalgallerReport:
    """Both sides of int |H| >= c |M|^2 and the isoperimetric link, for n = 2."""
    int_abs_H: float
    area: float
    area_squared: float
    # largest c the inequality allows on this surface
    implied_c: float
    # int |H| / |M|^(1/2), invariant under scaling
    scale_normalized: float
    area_over_int_abs_H_sq: float
    volume: float
    isoperimetric_lhs: float      # 36 pi Vol^2
    isoperimetric_rhs: float      # |M|^3
    isoperimetric_holds: bool
    # scaling exponents of int |H| and |M|^2 under f -> s f
    exponent_int_abs_H: int = 1
    exponent_area_squared: int = 4

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def lower_bound_abs_meanH_denominator(state_or_mesh, cache: Optional[GeometryCache] = None
                                      ) -> BuragoZalgallerReport:
    if cache is None:
        mesh, cache = state_or_mesh.mesh, state_or_mesh.cache
    else:
        mesh = state_or_mesh
    int_abs_h = cache.integrate(np.abs(cache.H))
    area = surface_area(mesh)
    volume = enclosed_volume(mesh)
    iso_lhs, iso_rhs = 36 * math.pi * volume ** 2, area ** 3
    return BuragoZalgallerReport(
        int_abs_H=int_abs_h,
        area=area,
        area_squared=area ** 2,
        implied_c=int_abs_h / area ** 2,
        scale_normalized=int_abs_h / math.sqrt(area),
        area_over_int_abs_H_sq=area / int_abs_h ** 2 if int_abs_h > 0 else math.inf,
        volume=volume,
        isoperimetric_lhs=iso_lhs,
        isoperimetric_rhs=iso_rhs,
        isoperimetric_holds=bool(iso_lhs <= iso_rhs * (1 + 1e-12)),
    )


# --- Suites -------------------------------------------------------------------

CHECKERS = ("topping", "michael_simon", "babyint", "covering")


def check_surface(mesh: TriMesh, checkers: Sequence[str] = CHECKERS,
                  cache: Optional[GeometryCache] = None, rho: Optional[float] = None) -> Dict[str, Any]:
    """Run the selected inequality checkers on one surface."""
    cache = cache or geometry_cache(mesh)
    reports: List[InequalityReport] = []
    out: Dict[str, Any] = {}
    if "topping" in checkers:
        reports.append(check_topping(mesh, cache))
    if "michael_simon" in checkers:
        reports.extend(check_michael_simon(mesh, cache))
    if "babyint" in checkers:
        # centered where |A|^2 concentrates, transition over a quarter diameter
        width = 0.25 * extrinsic_diameter(mesh) if rho is None else rho
        center = mesh.vertices[int(np.argmax(cache.A_norm_sq))]
        try:
            reports.append(check_interpolation_babyint(mesh, cache, CutoffSpec(center, width)))
        except CutoffTooNarrow as e:
            out["babyint_error"] = str(e)
    if "covering" in checkers:
        width = 0.5 * extrinsic_diameter(mesh) if rho is None else rho
        cover = covering_count(mesh, cache, width, threads=1)
        out["covering"] = cover.to_dict()
        reports.append(InequalityReport("covering", float(cover.count), cover.bound,
                                        cover.count / cover.bound if cover.bound > 0 else float('inf'),
                                        cover.holds, detail={'log10_bound': cover.log10_bound}))
    out["reports"] = [r.to_dict() for r in reports]
    out["all_hold"] = all(r.holds for r in reports)
    out["burago_zalgaller"] = lower_bound_abs_meanH_denominator(mesh, cache).to_dict()
    return out


def inequality_suite(surfaces: Dict[str, TriMesh], checkers: Sequence[str] = CHECKERS,
                     threads: Optional[int] = None) -> Dict[str, Any]:
    """Checkers over a named surface catalogue, one worker per surface."""
    names = list(surfaces)
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        results = list(pool.map(lambda name: check_surface(surfaces[name], checkers), names))
    per_surface = dict(zip(names, results))
    failures = [name for name, r in per_surface.items() if not r["all_hold"]]
    worst = {}
    for r in results:
        for rep in r["reports"]:
            key = rep["name"].split("[")[0]
            worst[key] = max(worst.get(key, 0.0), rep["ratio"])
    return {'surfaces': per_surface, 'failures': failures, 'worst_ratio': worst, 'all_hold': not failures}


def analyze_snapshots(snapshots: Sequence[Tuple[float, TriMesh]], epsilon0: Optional[float],
                      rho_list: Sequence[float], p: float = 2.0, grid: int = 16,
                      checkers: Sequence[str] = CHECKERS, threads: Optional[int] = None) -> Dict[str, Any]:
    """Concentration per snapshot, lifespan series and fit, checkers on the last snapshot."""
    if not snapshots:
        raise InsufficientSamples("trajectory has no snapshots")
    first_cache = geometry_cache(snapshots[0][1])
    if epsilon0 is None:
        epsilon0 = 0.5 * float(np.dot(first_cache.masses, first_cache.A_norm_sq ** (p / 2.0)))

    def per_snapshot(item):
        t, mesh = item
        cache = geometry_cache(mesh)
        rows = [concentration(mesh, cache, rho, p, grid=grid, threads=1).to_dict() for rho in rho_list]
        return {'t': t, 'concentration': rows}

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        concentration_rows = list(pool.map(per_snapshot, snapshots))

    times, estimates = lifespan_series(snapshots, epsilon0, p, threads=threads)
    report: Dict[str, Any] = {
        'epsilon0': epsilon0,
        'concentration': concentration_rows,
        'lifespan_radius': [dict(e.to_dict(), t=t) for t, e in zip(times, estimates)],
    }
    try:
        fit = lifespan_fit(times, [e.rho for e in estimates], epsilon0)
        report['lifespan_fit'] = fit.to_dict()
        final_mesh = snapshots[-1][1]
        final_cache = geometry_cache(final_mesh)
        # just past rho*, where the threshold is crossed
        rho_final = max(estimates[-1].rho, 1e-12) * (1 + 2e-3)
        final_eta = concentration(final_mesh, final_cache, rho_final, p, centers="surface", threads=threads).eta
        report["final_concentration"] = {"rho": rho_final, "eta": final_eta,
                                         "reaches_epsilon0": bool(final_eta >= epsilon0)}
    except InsufficientSamples as e:
        report['lifespan_fit'] = {'flag': 'InsufficientSamples', 'detail': str(e)}
    report['inequalities'] = check_surface(snapshots[-1][1], checkers)
    return report

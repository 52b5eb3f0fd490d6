"""
Closed-form sphere and torus charts, and the identity checker that
verifies the Gauss equation and Simons' identity on them with
fourth-order finite differences in the chart.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from utils.errors import StepTooSmall

logger = logging.getLogger("csdflow.analytic")

EPS = np.finfo(float).eps


@dataclass
class AnalyticSurface:
    # "sphere" | "torus"
    kind: str = "sphere"
    R: float = 1.0
    r: float = 1.0

    @classmethod
    def sphere(cls, R: float = 1.0) -> 'AnalyticSurface':
        return cls("sphere", R=R)

    @classmethod
    def torus(cls, R: float = 2.0, r: float = 1.0) -> 'AnalyticSurface':
        return cls("torus", R=R, r=r)

    def scale(self) -> float:
        return self.R + (self.r if self.kind == "torus" else 0.0)

    def position(self, x: np.ndarray) -> np.ndarray:
        u, v = x
        if self.kind == "sphere":
            # u polar angle, v azimuth
            return self.R * np.array([np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.cos(u)])
        rho = self.R + self.r * np.cos(v)
        return np.array([rho * np.cos(u), rho * np.sin(u), self.r * np.sin(v)])

    def normal(self, x: np.ndarray) -> np.ndarray:
        u, v = x
        if self.kind == "sphere":
            return np.array([np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.cos(u)])
        return np.array([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)])

    def metric(self, x: np.ndarray) -> np.ndarray:
        u, v = x
        if self.kind == "sphere":
            return np.diag([self.R ** 2, (self.R * np.sin(u)) ** 2])
        return np.diag([(self.R + self.r * np.cos(v)) ** 2, self.r ** 2])

    def second_form(self, x: np.ndarray) -> np.ndarray:
        """A_ij with d_i d_j f = -A_ij nu + tangential terms."""
        u, v = x
        if self.kind == "sphere":
            return self.metric(x) / self.R
        return np.diag([(self.R + self.r * np.cos(v)) * np.cos(v), self.r])

    def mean_curvature(self, x: np.ndarray) -> float:
        u, v = x
        if self.kind == "sphere":
            return 2.0 / self.R
        return 1.0 / self.r + np.cos(v) / (self.R + self.r * np.cos(v))

    def gauss_curvature(self, x: np.ndarray) -> float:
        u, v = x
        if self.kind == "sphere":
            return 1.0 / self.R ** 2
        return np.cos(v) / (self.r * (self.R + self.r * np.cos(v)))

    def laplacian_H(self, x: np.ndarray) -> float:
        u, v = x
        if self.kind == "sphere":
            return 0.0
        R, r = self.R, self.r
        return -R * (R * np.cos(v) + r) / (r ** 2 * (R + r * np.cos(v)) ** 3)

    def A_norm_sq(self, x: np.ndarray) -> float:
        ginv = np.linalg.inv(self.metric(x))
        A = self.second_form(x)
        return float(np.einsum("ik,jl,ij,kl->", ginv, ginv, A, A))

    def principal_curvatures(self, x: np.ndarray) -> np.ndarray:
        ginv = np.linalg.inv(self.metric(x))
        return np.sort(np.linalg.eigvals(ginv @ self.second_form(x)).real)

    def sample_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "sphere":
            # Stay clear of the chart's coordinate singularities at the poles
            return np.stack([rng.uniform(0.2, np.pi - 0.2, count), rng.uniform(0, 2 * np.pi, count)], axis=1)
        return rng.uniform(0, 2 * np.pi, (count, 2))


# --- Finite differences --------------------------------------------------------

def _d(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, axis: int, h: float) -> np.ndarray:
    e = np.zeros(2)
    e[axis] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def _d2(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    if i == j:
        e = np.zeros(2)
        e[i] = h
        return (-fn(x + 2 * e) + 16 * fn(x + e) - 30 * fn(x) + 16 * fn(x - e) - fn(x - 2 * e)) / (12 * h * h)
    return _d(lambda y: _d(fn, y, j, h), x, i, h)


def _gradient(fn, x, h):
    return np.stack([_d(fn, x, 0, h), _d(fn, x, 1, h)])


def _christoffel(surface: AnalyticSurface, x: np.ndarray, h: float) -> np.ndarray:
    """Gamma[k, i, j] from finite differences of the closed-form metric."""
    ginv = np.linalg.inv(surface.metric(x))
    dg = _gradient(surface.metric, x, h)            # dg[l, i, j] = d_l g_ij
    lowered = 0.5 * (np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg)
    # lowered[l, i, j] = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    return np.einsum("kl,lij->kij", ginv, lowered)


def _nabla_A(surface: AnalyticSurface, x: np.ndarray, h: float) -> np.ndarray:
    """(nabla A)[k, i, j] = nabla_k A_ij."""
    A = surface.second_form(x)
    G = _christoffel(surface, x, h)
    dA = _gradient(surface.second_form, x, h)
    return dA - np.einsum("lki,lj->kij", G, A) - np.einsum("lkj,il->kij", G, A)


def _rough_laplacian_A(surface: AnalyticSurface, x: np.ndarray, h: float) -> np.ndarray:
    ginv = np.linalg.inv(surface.metric(x))
    G = _christoffel(surface, x, h)
    T = _nabla_A(surface, x, h)
    dT = _gradient(lambda y: _nabla_A(surface, y, h), x, h)   # dT[l, k, i, j]
    nn = (dT
          - np.einsum("mlk,mij->lkij", G, T)
          - np.einsum("mli,kmj->lkij", G, T)
          - np.einsum("mlj,kim->lkij", G, T))
    return np.einsum("lk,lkij->ij", ginv, nn)


def _hessian_H(surface: AnalyticSurface, x: np.ndarray, h: float) -> np.ndarray:
    H = lambda y: np.atleast_1d(surface.mean_curvature(y))
    G = _christoffel(surface, x, h)
    dH = np.array([_d(H, x, k, h)[0] for k in range(2)])
    hess = np.array([[_d2(H, x, i, j, h)[0] for j in range(2)] for i in range(2)])
    return hess - np.einsum("kij,k->ij", G, dH)


def _tensor_norm(T: np.ndarray, ginv: np.ndarray) -> float:
    return float(np.sqrt(abs(np.einsum("ik,jl,ij,kl->", ginv, ginv, T, T))))


def _fd_second_form(surface: AnalyticSurface, x: np.ndarray, h: float):
    """Metric and A_ij from finite differences of the position map."""
    df = _gradient(surface.position, x, h)          # df[i] = d_i f
    g = df @ df.T
    nu = surface.normal(x)
    A = -np.array([[_d2(surface.position, x, i, j, h) @ nu for j in range(2)] for i in range(2)])
    return g, A


def gauss_residual(surface: AnalyticSurface, x: np.ndarray, h: float, extrapolate: bool = True) -> float:
    g, A = _fd_second_form(surface, x, h)
    if extrapolate:
        # Richardson step halving cancels the h^4 term of both stencils
        g2, A2h = _fd_second_form(surface, x, h / 2)
        g, A = (16 * g2 - g) / 15, (16 * A2h - A) / 15
    ginv = np.linalg.inv(g)
    H = np.einsum("ij,ij->", ginv, A)
    A2 = np.einsum("ik,jl,ij,kl->", ginv, ginv, A, A)
    return float(abs(2 * surface.gauss_curvature(x) - (H * H - A2)))


def simons_residual(surface: AnalyticSurface, x: np.ndarray, h: float) -> float:
    """|Delta A - nabla^2 H - (H A.A - |A|^2 A)|."""
    g = surface.metric(x)
    ginv = np.linalg.inv(g)
    A = surface.second_form(x)
    H = surface.mean_curvature(x)
    A2 = surface.A_norm_sq(x)
    AA = A @ ginv @ A
    residual = _rough_laplacian_A(surface, x, h) - _hessian_H(surface, x, h) - (H * AA - A2 * A)
    return _tensor_norm(residual, ginv)


@dataclass
class IdentityReport:
    surface: str
    samples: int
    gauss_max: float
    simons_max: float
    # |r(h) - r(h/2)| maxima, the step-halving error estimate
    gauss_richardson: float
    simons_richardson: float
    step: float
    points: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'surface': self.surface,
            'samples': self.samples,
            'gauss_max': self.gauss_max,
            'simons_max': self.simons_max,
            'gauss_richardson': self.gauss_richardson,
            'simons_richardson': self.simons_richardson,
            'step': self.step,
        }

    def to_text(self) -> str:
        return (f"{self.surface}: {self.samples} samples, step {self.step:.3g}\n"
                f"  Gauss residual  max {self.gauss_max:.3e}  (halving diff {self.gauss_richardson:.3e})\n"
                f"  Simons residual max {self.simons_max:.3e}  (halving diff {self.simons_richardson:.3e})\n")


def identity_checks(surface: AnalyticSurface, samples, step: float = 1e-2,
                    seed: int = 0, max_roundoff: float = 1e-6) -> IdentityReport:
    """Evaluate the Gauss-equation and Simons residuals at chart points.

    `samples` is either a point count (random chart points) or an array of
    (u, v) points. Raises StepTooSmall when the nested differences would be
    dominated by cancellation.
    """
    # Nested second differences: roundoff grows like eps / h^2 in chart units
    roundoff = EPS / step ** 2
    if roundoff > max_roundoff:
        raise StepTooSmall(f"step {step:g} gives roundoff estimate {roundoff:.2e} > {max_roundoff:.1e}")
    if np.isscalar(samples):
        points = surface.sample_points(int(samples), np.random.default_rng(seed))
    else:
        points = np.atleast_2d(np.asarray(samples, dtype=float))

    gauss = np.array([gauss_residual(surface, x, step, extrapolate=False) for x in points])
    gauss_half = np.array([gauss_residual(surface, x, step) for x in points])
    simons = np.array([simons_residual(surface, x, step) for x in points])
    simons_half = np.array([simons_residual(surface, x, step / 2) for x in points])
    report = IdentityReport(
        surface=f"{surface.kind}(R={surface.R:g}" + (f", r={surface.r:g})" if surface.kind == "torus" else ")"),
        samples=len(points),
        gauss_max=float(gauss_half.max()),
        simons_max=float(simons_half.max()),
        gauss_richardson=float(np.abs(gauss - gauss_half).max()),
        simons_richardson=float(np.abs(simons - simons_half).max()),
        step=step / 2,
        points=points.tolist(),
    )
    logger.info("identity checks on %s: gauss %.2e simons %.2e", report.surface,
                report.gauss_max, report.simons_max)
    return report

from __future__ import annotations

import numpy as np
import pytest

from utils.analytic import AnalyticSurface, gauss_residual, identity_checks
from utils.errors import StepTooSmall


@pytest.mark.parametrize("surface, gauss_tol, simons_tol", [
    (AnalyticSurface.sphere(1.0), 1e-8, 1e-4),
    (AnalyticSurface.sphere(2.5), 1e-8, 1e-4),
    (AnalyticSurface.torus(2.0, 1.0), 1e-8, 1e-4),
    (AnalyticSurface.torus(3.0, 0.5), 1e-7, 1e-3),
])
def test_identities_hold(surface, gauss_tol, simons_tol):
    report = identity_checks(surface, 12, step=1e-2, seed=1)
    assert report.gauss_max <= gauss_tol
    assert report.simons_max <= simons_tol
    assert report.samples == 12


def test_torus_closed_forms():
    torus = AnalyticSurface.torus(2.0, 1.0)
    outer = np.array([0.3, 0.0])
    assert torus.mean_curvature(outer) == pytest.approx(4.0 / 3.0)
    assert torus.gauss_curvature(outer) == pytest.approx(1.0 / 3.0)
    np.testing.assert_allclose(torus.principal_curvatures(outer), [1.0 / 3.0, 1.0])
    inner = np.array([0.3, np.pi])
    assert torus.gauss_curvature(inner) == pytest.approx(-1.0)
    # H^2 - |A|^2 = 2K pointwise
    for x in (outer, inner, np.array([1.0, 2.0])):
        H = torus.mean_curvature(x)
        assert H ** 2 - torus.A_norm_sq(x) == pytest.approx(2 * torus.gauss_curvature(x))


def test_sphere_has_constant_curvature():
    sphere = AnalyticSurface.sphere(2.0)
    x = np.array([1.0, 0.4])
    assert sphere.mean_curvature(x) == 1.0
    assert sphere.A_norm_sq(x) == pytest.approx(0.5)
    assert sphere.laplacian_H(x) == 0.0


def test_explicit_points_are_used():
    points = np.array([[0.5, 0.5], [1.0, 2.0]])
    report = identity_checks(AnalyticSurface.torus(), points)
    assert report.samples == 2
    assert report.points == points.tolist()


def test_gauss_residual_is_small_without_extrapolation():
    torus = AnalyticSurface.torus()
    assert gauss_residual(torus, np.array([0.7, 1.1]), 1e-2, extrapolate=False) < 1e-6


def test_step_too_small():
    with pytest.raises(StepTooSmall):
        identity_checks(AnalyticSurface.sphere(), 4, step=1e-6)

from __future__ import annotations

import math

import numpy as np
import pytest

from utils.mesh import surface_area
from utils.operators import (cotan_laplacian, gauss_curvature, geometry_cache, grad_H_norm_sq, integrals,
                             laplacian_of_H, mean_curvature,
                             rate_report, shape_operator)
from utils.primitives import icosphere

from conftest import gridded_box


def test_stiffness_is_symmetric_psd(sphere4_cache):
    L = sphere4_cache.stiffness
    assert abs(L - L.T).max() < 1e-12
    np.testing.assert_allclose(L @ np.ones(L.shape[0]), 0.0, atol=1e-10)
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.standard_normal(L.shape[0])
        assert u @ (L @ u) >= -1e-10


def test_masses_sum_to_area(sphere4, sphere4_cache):
    assert sphere4_cache.masses.sum() == pytest.approx(surface_area(sphere4), rel=1e-12)
    assert np.all(sphere4_cache.masses > 0)


def test_sphere_curvatures(sphere4_cache):
    c = sphere4_cache
    np.testing.assert_allclose(c.H, 2.0, rtol=1e-2)
    np.testing.assert_allclose(c.A_norm_sq, 2.0, rtol=3e-2)
    np.testing.assert_allclose(c.K, 1.0, rtol=2e-2)
    assert not c.zero_normal.any()


def test_sphere_normals_point_outward(sphere4, sphere4_cache):
    radial = sphere4.vertices / np.linalg.norm(sphere4.vertices, axis=1)[:, None]
    assert np.einsum("ij,ij->i", radial, sphere4_cache.normals).min() > 0.999


def test_laplacian_of_height_on_sphere(sphere4, sphere4_cache):
    z = sphere4.vertices[:, 2]
    lap = sphere4_cache.laplacian(z)
    assert np.abs(lap + 2 * z).max() <= 2e-2 * np.abs(2 * z).max()


def test_integral_of_laplacian_vanishes(sphere4_cache):
    c = sphere4_cache
    assert abs(c.integrate(c.laplacian_H)) <= 1e-10 * c.integrate(np.abs(c.laplacian_H)) + 1e-12


def test_gradient_energy_matches_stiffness(sphere4, sphere4_cache):
    u = sphere4.vertices[:, 0] ** 2 - sphere4.vertices[:, 1]
    energy = sphere4_cache.dirichlet_energy(u)
    assert energy == pytest.approx(u @ (sphere4_cache.stiffness @ u), rel=1e-10)
    assert sphere4_cache.integrate(sphere4_cache.grad_norm_sq(u)) == pytest.approx(energy, rel=1e-10)


def test_shape_operator_trace_and_bound(sphere4_cache):
    c = sphere4_cache
    trace = np.einsum("nii->n", c.A)
    np.testing.assert_allclose(trace, c.H, atol=1e-12)
    assert np.all(c.A_norm_sq >= 0.5 * c.H ** 2 - 1e-12)
    # A is tangential
    np.testing.assert_allclose(np.einsum("nij,nj->ni", c.A, c.normals), 0.0, atol=1e-10)


@pytest.mark.parametrize("fixture, tolerance", [("sphere4", 2e-2), ("torus64", 5e-2)])
def test_shape_fit_trace_tracks_mean_curvature(request, fixture, tolerance):
    mesh = request.getfixturevalue(fixture)
    cache = request.getfixturevalue(fixture + "_cache")
    A, _, flags = shape_operator(mesh, cache.normals, cache.H, match_trace=False)
    trace = np.einsum("nii->n", A)[~flags]
    H = cache.H[~flags]
    assert np.abs(trace - H).max() <= tolerance * np.abs(H).max()


def test_mean_curvature_converges_on_spheres():
    errors = []
    for level in (2, 3, 4, 5):
        cache = geometry_cache(icosphere(level, 1.0))
        errors.append(math.sqrt(cache.integrate((cache.H - 2.0) ** 2) / cache.masses.sum()))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert min(orders) >= 1.5
    assert errors[-1] <= 1e-5


@pytest.mark.parametrize("fixture", ["sphere4", "torus64"])
def test_pointwise_gauss_equation(request, fixture):
    # 2K = H^2 - |A|^2 at every well-fitted vertex
    cache = request.getfixturevalue(fixture + "_cache")
    keep = ~(cache.rank_deficient | cache.zero_normal)
    residual = 2 * cache.K - (cache.H ** 2 - cache.A_norm_sq)
    assert np.abs(residual[keep]).max() <= 5e-2 * np.abs(2 * cache.K[keep]).max()


def test_green_identity(torus64_cache):
    c = torus64_cache
    rng = np.random.default_rng(3)
    u, v = rng.standard_normal((2, len(c.masses)))
    left = c.integrate(v * c.laplacian(u))
    right = c.integrate(u * c.laplacian(v))
    cross = 0.25 * (c.dirichlet_energy(u + v) - c.dirichlet_energy(u - v))
    assert left == pytest.approx(right, rel=1e-10)
    assert -left == pytest.approx(cross, rel=1e-9)


def test_torus_outer_equator(torus64, torus64_cache):
    # outer equator sits at v = 0: vertex indices i * n_v
    n_v = 32
    outer = np.arange(0, torus64.n_vertices, n_v)
    np.testing.assert_allclose(np.hypot(*torus64.vertices[outer, :2].T), 3.0, rtol=1e-12)
    np.testing.assert_allclose(torus64_cache.H[outer], 1.0 + 1.0 / 3.0, rtol=3e-2)
    for n in outer[::8]:
        eig = np.sort(np.linalg.eigvalsh(torus64_cache.A[n]))
        # the normal direction carries the zero eigenvalue
        assert eig[0] == pytest.approx(0.0, abs=1e-8)
        assert eig[1] == pytest.approx(1.0 / 3.0, rel=5e-2)
        assert eig[2] == pytest.approx(1.0, rel=5e-2)


def test_torus_total_gauss_curvature(torus64_cache):
    assert torus64_cache.angle_defect.sum() == pytest.approx(0.0, abs=1e-9)


def test_flat_patch_has_no_curvature():
    n = 8
    box = gridded_box(n)
    cache = geometry_cache(box)
    x = box.vertices
    lo, hi = 2.0 / n - 1e-9, 1.0 - 2.0 / n + 1e-9
    # face interiors at least two rings from every box edge
    interior = np.zeros(box.n_vertices, dtype=bool)
    for axis in range(3):
        on_face = (np.abs(x[:, axis]) < 1e-12) | (np.abs(x[:, axis] - 1.0) < 1e-12)
        others = [k for k in range(3) if k != axis]
        inside = np.all((x[:, others] >= lo) & (x[:, others] <= hi), axis=1)
        interior |= on_face & inside
    assert interior.sum() > 0
    np.testing.assert_allclose(cache.H[interior], 0.0, atol=1e-9)
    np.testing.assert_allclose(cache.A_norm_sq[interior], 0.0, atol=1e-9)
    np.testing.assert_allclose(cache.K[interior], 0.0, atol=1e-9)


def test_curvature_scaling(sphere4):
    s = 3.0
    H, _ = mean_curvature(sphere4)
    H_scaled, _ = mean_curvature(sphere4.transformed(scale=s))
    np.testing.assert_allclose(H_scaled, H / s, rtol=1e-10)
    K = gauss_curvature(sphere4)
    np.testing.assert_allclose(gauss_curvature(sphere4.transformed(scale=s)), K / s ** 2, rtol=1e-10)


def test_scale_invariant_integrals(sphere4, sphere4_cache):
    scaled = sphere4.transformed(scale=0.25)
    base = integrals(sphere4, sphere4_cache)
    other = integrals(scaled, geometry_cache(scaled))
    for key in ("intA2", "willmore", "intK"):
        assert other[key] == pytest.approx(base[key], rel=1e-10)
    assert other["intH"] == pytest.approx(0.25 * base["intH"], rel=1e-10)


def test_sphere_integrals(sphere4, sphere4_cache):
    values = integrals(sphere4, sphere4_cache)
    assert values["intK"] == pytest.approx(4 * math.pi, rel=1e-12)
    assert values["willmore"] == pytest.approx(16 * math.pi, rel=2e-2)
    assert values["intA2"] == pytest.approx(8 * math.pi, rel=3e-2)


def test_rate_report_consistency(sphere4_cache):
    c = sphere4_cache
    rates = rate_report(c, 0.0)
    # int Delta H vanishes on a closed surface
    assert abs(rates["dVol"]) < 1e-9
    assert rates["dArea"] == pytest.approx(-c.dirichlet_energy(c.H), rel=1e-8, abs=1e-12)


def test_shape_operator_standalone_matches_cache():
    mesh = icosphere(2)
    cache = geometry_cache(mesh)
    A, A_sq, flags = shape_operator(mesh)
    np.testing.assert_allclose(A, cache.A, atol=1e-13)
    np.testing.assert_allclose(A_sq, cache.A_norm_sq, atol=1e-13)
    assert not flags.any()
    L, masses = cotan_laplacian(mesh)
    np.testing.assert_allclose(masses, cache.masses)


def test_curvature_derivatives_of_uniform_sphere():
    mesh = icosphere(0)
    cache = geometry_cache(mesh)
    scale = np.abs(cache.H).max()
    assert np.abs(laplacian_of_H(mesh, cache)).max() <= 1e-10 * scale
    assert np.abs(grad_H_norm_sq(mesh, cache)).max() <= 1e-20 * scale ** 2


def test_curvature_derivatives_match_cache():
    mesh = icosphere(2)
    cache = geometry_cache(mesh)
    np.testing.assert_allclose(laplacian_of_H(mesh, cache), cache.laplacian_H, atol=1e-12)
    grad = grad_H_norm_sq(mesh, cache)
    np.testing.assert_allclose(grad, cache.grad_H_sq, atol=1e-12)
    assert cache.integrate(grad) == pytest.approx(cache.dirichlet_energy(cache.H), rel=1e-9)

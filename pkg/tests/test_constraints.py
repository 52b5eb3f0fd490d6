from __future__ import annotations

import numpy as np
import pytest

from flow_engine import ConstraintController, ConstraintLoader, compute_h
from utils.axisym import exact_sphere_profile, profile_geometry, profile_h
from utils.errors import ConfigInvalid, DenominatorVanishing, UnboundedTimeFunction
from utils.integrator import initial_state
from utils.primitives import icosphere, perturbed_icosphere
from utils.protocol import CONSTRAINT_KINDS, ConstraintSpec, SchemeSpec

INTEGRAL_KINDS = ("Zero", "MeanH", "AbsMeanH", "GaussMixed")


def _state(mesh):
    return initial_state(mesh, SchemeSpec())


def test_all_kinds_are_discovered():
    discovered = ConstraintLoader.discover_constraints()
    assert set(CONSTRAINT_KINDS) <= set(discovered)
    assert all(discovered[k]["error"] is None for k in CONSTRAINT_KINDS)


def test_unknown_kind_is_rejected():
    controller = ConstraintController.discovered()
    with pytest.raises(ConfigInvalid):
        controller.set_active("Willmore")


@pytest.mark.parametrize("kind", INTEGRAL_KINDS)
@pytest.mark.parametrize("radius", [0.5, 1.0, 4.0])
def test_h_vanishes_on_uniform_sphere(kind, radius):
    # every icosahedron vertex is equivalent, so the discrete H is uniform
    state = _state(icosphere(0, radius))
    value = compute_h(state, ConstraintSpec(kind=kind))
    assert abs(value.h) <= 1e-6


@pytest.mark.parametrize("kind", INTEGRAL_KINDS)
@pytest.mark.parametrize("radius", [0.5, 2.0])
def test_h_vanishes_on_exact_sphere_profile(kind, radius):
    profile = exact_sphere_profile(radius, 256)
    value = profile_h(profile, profile_geometry(profile), ConstraintSpec(kind=kind))
    assert abs(value.h) <= 1e-6


def test_mean_h_rate_keeps_area():
    state = _state(perturbed_icosphere(3, 1.0, 0.1, np.random.default_rng(2)))
    c = state.cache
    h = compute_h(state, ConstraintSpec(kind="MeanH")).h
    # d/dt Area = int H (Delta H + h)
    d_area = c.integrate(c.H * (c.laplacian_H + h))
    assert abs(d_area) <= 1e-10 * c.dirichlet_energy(c.H)


def test_gauss_mixed_rate_keeps_int_h():
    state = _state(perturbed_icosphere(3, 1.0, 0.1, np.random.default_rng(4)))
    c = state.cache
    h = compute_h(state, ConstraintSpec(kind="GaussMixed")).h
    d_int_h = float(np.dot(c.angle_defect, c.laplacian_H + h))
    assert abs(d_int_h) <= 1e-10 * float(np.abs(c.angle_defect * c.laplacian_H).sum())


def test_abs_mean_h_signs():
    state = _state(perturbed_icosphere(3, 1.0, 0.1, np.random.default_rng(5)))
    c = state.cache
    value = compute_h(state, ConstraintSpec(kind="AbsMeanH"))
    assert value.h >= 0
    # volume rate is h |M|; area rate is h int H - int |grad H|^2 and int H <= int |H|
    assert c.integrate(c.laplacian_H + value.h) >= -1e-10
    assert c.integrate(c.H * (c.laplacian_H + value.h)) <= 1e-10


def test_quotient_carries_numerator_and_denominator():
    state = _state(perturbed_icosphere(2, 1.0, 0.1, np.random.default_rng(1)))
    value = compute_h(state, ConstraintSpec(kind="MeanH"))
    assert value.h == pytest.approx(value.numerator / value.denominator)
    assert value.units == "1/length^3"


def test_h_scales_like_inverse_cube():
    mesh = perturbed_icosphere(2, 1.0, 0.1, np.random.default_rng(6))
    s = 2.0
    for kind in ("MeanH", "AbsMeanH", "GaussMixed"):
        base = compute_h(_state(mesh), ConstraintSpec(kind=kind)).h
        scaled = compute_h(_state(mesh.transformed(scale=s)), ConstraintSpec(kind=kind)).h
        assert scaled == pytest.approx(base / s ** 3, rel=1e-9)


def test_denominator_vanishing_mean_h():
    state = _state(icosphere(2))
    with pytest.raises(DenominatorVanishing) as info:
        compute_h(state, ConstraintSpec(kind="MeanH", denom_eps=1e6))
    assert info.value.kind == "MeanH"


def test_gauss_mixed_undefined_on_torus(torus64):
    # int K vanishes for genus one
    with pytest.raises(DenominatorVanishing):
        compute_h(_state(torus64), ConstraintSpec(kind="GaussMixed"))


def test_time_function_expression():
    state = _state(icosphere(1))
    state.t = 1.0
    value = compute_h(state, ConstraintSpec(kind="TimeFunction", expression="1/(1+t)"))
    assert value.h == pytest.approx(0.5)


def test_time_function_samples_interpolate():
    controller = ConstraintController.discovered()
    spec = ConstraintSpec(kind="TimeFunction", samples=[[0.0, 0.0], [1.0, 2.0]])
    controller.prepare(spec, 1.0)
    state = _state(icosphere(1))
    state.t = 0.25
    assert controller.compute_h(state, spec).h == pytest.approx(0.5)
    state.t = 3.0
    assert controller.compute_h(state, spec).h == pytest.approx(2.0)


def test_time_function_csv(tmp_path):
    table = tmp_path / "h.csv"
    table.write_text("t,h\n0,1\n2,5\n")
    controller = ConstraintController.discovered()
    spec = ConstraintSpec(kind="TimeFunction", csv_path=str(table))
    controller.prepare(spec, 2.0)
    state = _state(icosphere(1))
    state.t = 1.0
    assert controller.compute_h(state, spec).h == pytest.approx(3.0)


def test_time_function_unknown_symbol():
    controller = ConstraintController.discovered()
    with pytest.raises(ConfigInvalid):
        controller.prepare(ConstraintSpec(kind="TimeFunction", expression="t + s"), 1.0)


def test_time_function_unbounded():
    controller = ConstraintController.discovered()
    with pytest.raises(UnboundedTimeFunction):
        controller.prepare(ConstraintSpec(kind="TimeFunction", expression="1/(t - 0.5)"), 1.0)


def test_spec_validation():
    assert ConstraintSpec(kind="TimeFunction").validate()
    assert ConstraintSpec(kind="Bogus").validate()
    assert ConstraintSpec(kind="MeanH", denom_eps=-1.0).validate()
    assert not ConstraintSpec(kind="MeanH").validate()

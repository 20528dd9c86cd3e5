import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers.Exceptions import PreconditionError
from helpers.GeometryHelper import (
    ChartMetric,
    curvature_residuals,
    flat_metric,
    hyperbolic_cylinder,
    hyperbolic_waist_3d,
    orthonormal_complement,
    orthonormalize,
    polar_plane,
    unit_sphere_equatorial,
    unit_sphere_polar,
)

radius = st.floats(min_value=-1.0, max_value=1.0)
angle = st.floats(min_value=0.0, max_value=2 * np.pi)


@settings(max_examples=25, deadline=None)
@given(radius, angle)
def test_gauss_curvature_of_builtin_surfaces(r, theta):
    point = np.array([r, theta])
    assert abs(flat_metric(2).riemann(point).gauss_curvature) < 1e-12
    assert unit_sphere_equatorial().riemann(point).gauss_curvature == pytest.approx(1.0, abs=1e-9)
    assert hyperbolic_cylinder().riemann(point).gauss_curvature == pytest.approx(-1.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(radius, angle)
def test_christoffel_symbols_of_warped_products(r, theta):
    gamma = hyperbolic_cylinder().christoffel(np.array([r, theta]))
    assert gamma[0, 1, 1] == pytest.approx(-np.cosh(r) * np.sinh(r), abs=1e-12)
    assert gamma[1, 0, 1] == pytest.approx(np.tanh(r), abs=1e-12)
    assert gamma[1, 1, 0] == pytest.approx(np.tanh(r), abs=1e-12)
    np.testing.assert_allclose(flat_metric(2).christoffel(np.array([r, theta])), 0.0, atol=1e-14)


def test_christoffel_symbols_of_the_polar_plane():
    gamma = polar_plane().christoffel(np.array([2.0, 1.0]))
    assert gamma[0, 1, 1] == pytest.approx(-2.0)
    assert gamma[1, 0, 1] == pytest.approx(0.5)
    assert gamma[0, 0, 0] == pytest.approx(0.0)


def test_polar_charts_have_the_expected_curvature():
    points = np.array([[0.5, 0.1], [1.0, 2.0], [2.5, 4.0]])
    np.testing.assert_allclose(unit_sphere_polar().riemann(points).gauss_curvature, 1.0, atol=1e-9)
    np.testing.assert_allclose(polar_plane().riemann(points).gauss_curvature, 0.0, atol=1e-9)


def test_central_difference_metric_matches_analytic_curvature(rng):
    analytic = hyperbolic_cylinder()
    numeric = ChartMetric(2, analytic.coeff, analytic.periods, name="numeric cylinder")
    assert not numeric.analytic
    points = np.stack([rng.uniform(-0.8, 0.8, 20), rng.uniform(0, 2 * np.pi, 20)], axis=-1)
    np.testing.assert_allclose(numeric.riemann(points).gauss_curvature, -1.0, atol=1e-4)


def test_levi_civita_connection_is_metric_compatible(rng):
    analytic = hyperbolic_cylinder()
    numeric = ChartMetric(2, analytic.coeff, analytic.periods, name="numeric cylinder")
    for _ in range(10):
        point = np.array([rng.uniform(-0.8, 0.8), rng.uniform(0, 2 * np.pi)])
        assert analytic.metric_compatibility(point) < 1e-12
        assert numeric.metric_compatibility(point) < 1e-6
    assert hyperbolic_waist_3d().metric_compatibility(rng.uniform(-0.5, 0.5, (10, 3))) < 1e-10


def test_curvature_symmetries_in_three_dimensions(rng):
    metric = hyperbolic_waist_3d()
    points = rng.uniform(-0.5, 0.5, (30, 3))
    curvature = metric.riemann(points)
    assert max(curvature.residuals.values()) < 1e-10
    assert curvature.R.shape == (30, 3, 3, 3, 3)


def test_waist_normal_planes_have_curvature_minus_one():
    metric = hyperbolic_waist_3d()
    x = np.array([0.3, 0.0, 0.0])
    tangent = np.array([1.0, 0.0, 0.0])
    for normal in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])):
        assert metric.sectional_curvature(x, tangent, normal) == pytest.approx(-1.0, abs=1e-10)


def test_sectional_curvature_is_scale_invariant_in_the_plane():
    metric = unit_sphere_equatorial()
    x = np.array([0.2, 1.0])
    u = np.array([1.0, 0.5])
    v = np.array([-0.3, 2.0])
    first = metric.sectional_curvature(x, u, v)
    second = metric.sectional_curvature(x, 3 * u + v, -2 * v)
    assert first == pytest.approx(second, rel=1e-10)


def test_scaled_metric_divides_curvature():
    metric = unit_sphere_equatorial().scaled(2.0)
    assert metric.riemann(np.array([0.1, 0.2])).gauss_curvature == pytest.approx(0.25, abs=1e-9)


def test_broken_symmetries_are_reported():
    R = np.zeros((2, 2, 2, 2))
    R[0, 1, 0, 1] = 1.0
    residuals = curvature_residuals(R)
    assert residuals["antisymmetry_ab"] == pytest.approx(1.0)
    assert residuals["pair_symmetry"] == 0.0


def test_geodesic_on_the_sphere_follows_a_great_circle():
    metric = unit_sphere_equatorial()
    path = metric.geodesic(np.array([0.0, 0.0]), np.array([0.0, 1.0]), T=np.pi)
    np.testing.assert_allclose(path.points[-1], [0.0, np.pi], atol=1e-8)
    assert not path.left_chart
    speeds = metric.norm(path.points, path.velocities)
    np.testing.assert_allclose(speeds, 1.0, atol=1e-8)


def test_geodesic_leaving_the_chart_is_flagged():
    metric = unit_sphere_equatorial()
    path = metric.geodesic(np.array([0.0, 0.0]), np.array([1.0, 0.0]), T=3.0)
    assert path.left_chart


def test_zero_velocity_is_rejected():
    with pytest.raises(PreconditionError):
        flat_metric(2).geodesic(np.zeros(2), np.zeros(2))


def test_parallel_transport_preserves_inner_products():
    metric = hyperbolic_cylinder()
    path = metric.geodesic(np.array([0.0, 0.0]), np.array([0.6, 0.8]), T=1.0)
    frame = np.array([[1.0, 0.0], [0.0, 1.0]])
    transported = metric.parallel_transport(path, frame)
    g = metric.metric(path.points)
    gram = np.einsum("kab,kia,kjb->kij", g, transported, transported)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-8)


def test_wrap_reduces_periodic_differences():
    metric = flat_metric(2, periods=(2 * np.pi, None))
    wrapped = metric.wrap(np.array([2 * np.pi - 0.1, 5.0]))
    np.testing.assert_allclose(wrapped, [-0.1, 5.0])


def test_inside_respects_chart_bounds():
    metric = unit_sphere_equatorial()
    inside = metric.inside(np.array([[0.0, 1.0], [1.6, 0.0], [np.nan, 0.0]]))
    assert inside.tolist() == [True, False, False]


def test_orthonormal_complement_of_a_tangent(rng):
    g = np.diag([4.0, 1.0, 9.0])
    rows, norms = orthonormalize(g, np.array([[1.0, 1.0, 0.0]]))
    assert norms[0] == pytest.approx(np.sqrt(5.0))
    frame = orthonormal_complement(g, rows, 2)
    np.testing.assert_allclose(frame @ g @ frame.T, np.eye(3), atol=1e-12)

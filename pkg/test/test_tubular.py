import numpy as np
import pytest

from helpers.Exceptions import ConfigError, OutsideTubeError, PreconditionError, RankError
from helpers.GeometryHelper import flat_metric, hyperbolic_cylinder, unit_sphere_equatorial
from helpers.TubularHelper import MinimalReference, TubularChart, plane_angles


def waist_reference(metric=None) -> MinimalReference:
    metric = metric or hyperbolic_cylinder()
    return MinimalReference(
        metric,
        lambda s: np.stack([np.zeros_like(s), s], axis=-1),
        2 * np.pi,
        name="waist",
    )


def test_reference_frame_is_orthonormal_and_periodic():
    ref = waist_reference()
    s = ref.nodes(16)
    frame = ref.frame(s)
    g = ref.ambient.metric(ref.point(s))
    gram = np.einsum("kab,kia,kjb->kij", g, frame, frame)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-10)
    np.testing.assert_allclose(ref.frame(np.array(ref.length)), ref.frame(np.array(0.0)), atol=1e-8)
    assert ref.sup_mean_curvature < 1e-8
    np.testing.assert_allclose(ref.connection, 0.0, atol=1e-10)


def test_reference_rejects_non_unit_speed():
    with pytest.raises(PreconditionError):
        MinimalReference(
            hyperbolic_cylinder(), lambda s: np.stack([np.zeros_like(s), 2 * s], axis=-1), np.pi
        )


def test_reference_rejects_open_curves():
    with pytest.raises(PreconditionError):
        MinimalReference(flat_metric(2), lambda s: np.stack([s, np.zeros_like(s)], axis=-1), 1.0)


def test_circle_in_the_flat_plane_is_not_minimal():
    ref = MinimalReference(
        flat_metric(2), lambda s: np.stack([np.cos(s), np.sin(s)], axis=-1), 2 * np.pi, name="circle"
    )
    assert ref.sup_mean_curvature == pytest.approx(1.0, abs=1e-6)


def test_normal_frame_of_a_curved_reference_stays_radial():
    ref = MinimalReference(
        flat_metric(2), lambda s: np.stack([np.cos(s), np.sin(s)], axis=-1), 2 * np.pi, name="circle"
    )
    s = ref.nodes(12)
    radial = np.stack([np.cos(s), np.sin(s)], axis=-1)
    np.testing.assert_allclose(np.abs(np.sum(ref.frame(s)[:, 1] * radial, axis=-1)), 1.0, atol=1e-8)
    np.testing.assert_allclose(ref.holonomy, np.eye(1), atol=1e-8)
    assert ref.dimension == 1


def test_fermi_coordinates_match_the_chart_on_warped_products(waist_chart):
    x = np.array([0.0, 1.0, 4.0])
    y = np.array([[0.1], [-0.2], [0.3]])
    q, _, inside = waist_chart.fermi_point(x, y)
    assert np.all(inside)
    np.testing.assert_allclose(np.abs(q[:, 0]), np.abs(y[:, 0]), atol=1e-10)
    np.testing.assert_allclose(q[:, 1], x, atol=1e-10)


def test_foot_point_round_trip(waist_chart):
    assert waist_chart.round_trip_error(0.4) < 1e-8


def test_psi_is_squared_distance(waist_chart):
    q = np.array([[0.3, 1.0], [-0.25, 5.0]])
    np.testing.assert_allclose(waist_chart.psi(q), [0.09, 0.0625], atol=1e-9)


def test_points_outside_the_tube(waist_chart):
    q = np.array([[0.8, 1.0]])
    with pytest.raises(OutsideTubeError):
        waist_chart.foot_point(q)
    foot = waist_chart.foot_point(q, strict=False)
    assert not foot.inside[0]


def test_psi_gradient_is_radial(waist_chart):
    gradient = waist_chart.psi_gradient(np.array([0.2, 1.5]))
    np.testing.assert_allclose(gradient, [0.4, 0.0], atol=1e-6)


def test_horizontal_plane_has_no_angle(waist_chart):
    angles = waist_chart.principal_angles(np.array([0.2, 0.0]), np.array([[0.0, 1.0]]))
    assert angles.star_omega == pytest.approx(1.0, abs=1e-9)
    assert angles.fs == pytest.approx(0.0, abs=1e-6)


def test_tilted_line_angle_and_bounds(waist_chart):
    q = np.array([0.1, 0.5])
    g = waist_chart.metric.metric(q)
    direction = np.array([1.0, 1.0 / np.cosh(0.1)])
    angles = waist_chart.principal_angles(q, direction[None, :])
    assert angles.star_omega == pytest.approx(np.cos(np.pi / 4), abs=1e-6)
    fs2 = angles.fs**2
    assert 0.5 * fs2 - 1e-12 <= 1 - angles.star_omega <= fs2 + 1e-12
    assert np.einsum("ab,a,b->", g, direction, direction) == pytest.approx(2.0)


def test_principal_angles_take_one_vector_in_codimension_two(log, scenarios):
    chart = scenarios["hyperbolic-3d-waist"].chart(log)
    q = np.array([0.4, 0.1, -0.1])
    angles = chart.principal_angles(q, np.array([[1.0, 0.0, 0.0]]))
    assert angles.star_omega == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(PreconditionError):
        chart.principal_angles(q, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


def test_dependent_plane_vectors_are_rejected():
    with pytest.raises(RankError):
        plane_angles(np.eye(3), np.eye(3), np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), 2)


def test_fermi_metric_on_the_waist(waist_chart):
    z = np.array([[0.5, 0.2], [2.0, -0.3]])
    fermi_metric, pairing, _ = waist_chart.fermi_data(z)
    np.testing.assert_allclose(fermi_metric[:, 0, 0], np.cosh(z[:, 1]) ** 2, atol=1e-6)
    np.testing.assert_allclose(fermi_metric[:, 1, 1], 1.0, atol=1e-6)
    np.testing.assert_allclose(fermi_metric[:, 0, 1], 0.0, atol=1e-6)
    np.testing.assert_allclose(pairing[:, 0, 0], np.cosh(z[:, 1]), atol=1e-6)


def test_expansions_decay_at_second_order(waist_chart):
    report = waist_chart.expansion_check(x0=1.0)
    assert report.passed
    assert set(report.slopes) == {
        "metric",
        "coordinate_frame",
        "second_fundamental_form",
        "tangent_rotation",
        "normal_rotation",
    }


def test_tangent_circles_have_closed_form_hessian(waist_chart):
    r = np.array([0.1, 0.2, 0.3])
    coefficients = np.broadcast_to(np.array([[1.0, 0.0]]), (3, 1, 2)).copy()
    traces, valid = waist_chart.hessian_trace(np.array([0.0, 1.0, 2.0]), r[:, None], coefficients)
    assert np.all(valid)
    np.testing.assert_allclose(traces, 2 * r * np.tanh(r), atol=1e-4)


def test_hessian_probe_on_the_waist(waist_chart):
    report = waist_chart.hessian_psi_probe(256, seed=1, radius=0.3)
    assert report.evaluated > 0
    assert report.violations == 0
    assert report.min_ratio >= 0.5


def test_probe_radius_cannot_exceed_the_tube(waist_chart):
    with pytest.raises(PreconditionError):
        waist_chart.hessian_psi_probe(8, radius=1.0)


def test_tube_radius_must_be_positive(log):
    with pytest.raises(ConfigError):
        TubularChart(log, waist_reference(), 0.0)


def test_largest_radius_on_the_sphere(log):
    ref = waist_reference(unit_sphere_equatorial())
    radius = TubularChart.largest_radius(log, ref, [1.2, 0.8, 0.4])
    assert radius in (0.2, 0.4, 0.6)

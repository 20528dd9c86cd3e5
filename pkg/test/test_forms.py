import numpy as np
import pytest

from helpers.Exceptions import GraphicalRegimeError, PreconditionError, ReparametrizeFirstError
from helpers.FormsHelper import (
    DiscreteCurve,
    GraphSurface,
    extended_tensors,
    extrinsic,
    gauss_codazzi_residual,
    periodic_derivative,
    reparametrize,
)
from helpers.GeometryHelper import flat_metric, hyperbolic_cylinder, hyperbolic_waist_3d


def circle(radius: float, nodes: int = 64) -> DiscreteCurve:
    angle = 2 * np.pi * np.arange(nodes) / nodes
    return DiscreteCurve(radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1))


def parallel(r: float, nodes: int = 64, wobble: float = 0.0, frequency: int = 0) -> DiscreteCurve:
    theta = 2 * np.pi * np.arange(nodes) / nodes
    points = np.stack([r + wobble * np.sin(frequency * theta), theta], axis=-1)
    return DiscreteCurve(points, shift=np.array([0.0, 2 * np.pi]))


def test_periodic_derivatives_of_a_sine():
    u = np.arange(64) / 64
    values = np.sin(2 * np.pi * u)
    np.testing.assert_allclose(periodic_derivative(values, 1), 2 * np.pi * np.cos(2 * np.pi * u), atol=1e-3)
    np.testing.assert_allclose(periodic_derivative(values, 2), -((2 * np.pi) ** 2) * values, atol=1e-2)
    with pytest.raises(PreconditionError):
        periodic_derivative(values, 3)


def test_circle_curvature_and_length():
    data = extrinsic(flat_metric(2), circle(2.0))
    assert data.length == pytest.approx(4 * np.pi, rel=1e-5)
    np.testing.assert_allclose(np.sqrt(data.ii_norm2), 0.5, atol=1e-5)
    np.testing.assert_allclose(np.abs(data.h[:, 0]), 0.5, atol=1e-5)


def test_winding_curves_use_the_shift():
    data = extrinsic(hyperbolic_cylinder(), parallel(0.0))
    assert data.length == pytest.approx(2 * np.pi, rel=1e-10)
    np.testing.assert_allclose(data.ii_norm2, 0.0, atol=1e-12)


def test_parallels_have_geodesic_curvature_tanh():
    data = extrinsic(hyperbolic_cylinder(), parallel(0.3))
    np.testing.assert_allclose(np.sqrt(data.ii_norm2), np.tanh(0.3), atol=1e-6)


def test_too_few_nodes_are_rejected():
    with pytest.raises(PreconditionError):
        extrinsic(flat_metric(2), circle(1.0, nodes=8))


def test_uneven_spacing_needs_reparametrization():
    angle = 2 * np.pi * (np.arange(64) / 64) ** 3
    curve = DiscreteCurve(np.stack([np.cos(angle), np.sin(angle)], axis=-1))
    with pytest.raises(ReparametrizeFirstError):
        extrinsic(flat_metric(2), curve)
    uniform = reparametrize(flat_metric(2), curve)
    assert uniform.nodes == 64
    np.testing.assert_allclose(np.linalg.norm(uniform.points, axis=-1), 1.0, atol=1e-3)
    spacing = np.linalg.norm(np.diff(np.vstack([uniform.points, uniform.points[:1]]), axis=0), axis=-1)
    assert np.max(spacing) / np.min(spacing) < 1.05


def test_reparametrization_keeps_the_winding():
    curve = parallel(0.1, wobble=0.05, frequency=3)
    uniform = reparametrize(hyperbolic_cylinder(), curve, nodes=96)
    assert uniform.nodes == 96
    np.testing.assert_allclose(uniform.shift, [0.0, 2 * np.pi])
    assert uniform.points[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_gauss_and_codazzi_hold_for_a_graph_in_flat_space():
    surface = GraphSurface(lambda uv: 0.1 * (uv[..., 0] ** 2 - uv[..., 1] ** 2), name="saddle")
    residuals = gauss_codazzi_residual(flat_metric(3), surface, np.array([0.1, 0.2]))
    assert residuals.gauss < 1e-4
    assert residuals.codazzi < 1e-4
    assert residuals.intrinsic_curvature < 0
    assert residuals.codazzi_trace is None


def test_totally_geodesic_slice_is_minimal():
    surface = GraphSurface(lambda uv: np.zeros(uv.shape[:-1]), name="y2 = 0")
    residuals = gauss_codazzi_residual(hyperbolic_waist_3d(), surface, np.array([0.5, 0.2]))
    assert residuals.mean_curvature < 1e-6
    assert residuals.intrinsic_curvature == pytest.approx(-1.0, abs=1e-3)
    assert residuals.codazzi_trace is not None
    assert residuals.codazzi_trace < 1e-4


def test_surface_checks_need_three_dimensions():
    with pytest.raises(PreconditionError):
        gauss_codazzi_residual(flat_metric(2), GraphSurface(lambda uv: uv[..., 0]), np.zeros(2))


def test_extended_tensors_on_a_parallel(waist_chart):
    tensors = extended_tensors(waist_chart, parallel(0.1))
    np.testing.assert_allclose(tensors.star_omega, 1.0, atol=1e-9)
    np.testing.assert_allclose(tensors.fs, 0.0, atol=1e-6)
    np.testing.assert_allclose(tensors.ii_sigma, 0.0, atol=1e-9)
    np.testing.assert_allclose(tensors.difference_norm2, np.tanh(0.1) ** 2, atol=1e-6)
    np.testing.assert_allclose(np.abs(tensors.foot.y[:, 0]), 0.1, atol=1e-9)


def test_steep_curves_leave_the_graphical_regime(waist_chart):
    with pytest.raises(GraphicalRegimeError):
        extended_tensors(waist_chart, parallel(0.0, nodes=128, wobble=0.3, frequency=8))

from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from helpers.Exceptions import (
    GraphicalRegimeError,
    InternalError,
    PreconditionError,
    ReparametrizeFirstError,
)
from helpers.GeometryHelper import ChartMetric, central_difference, orthonormal_complement, orthonormalize
from helpers.TubularHelper import FootPoint, PrincipalAngles, TubularChart

MIN_NODES = 16
MAX_SPACING_RATIO = 10.0
TANGENT_STEP = 1e-4
NORMAL_STEP = 1e-3


def periodic_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """4th-order periodic differences along axis 0 for the parameter u in [0, 1)"""
    h = 1.0 / len(values)

    def shifted(k: int) -> np.ndarray:
        return np.roll(values, -k, axis=0)

    if order == 1:
        return (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * h)
    if order == 2:
        return (-shifted(2) + 16 * shifted(1) - 30 * values + 16 * shifted(-1) - shifted(-2)) / (12 * h**2)
    raise PreconditionError(f"Unsupported derivative order {order}")


class DiscreteCurve:
    """A closed curve sampled at N nodes in chart coordinates.

    Node k + N is node k translated by `shift`, which is zero for curves that close
    in the chart and a sum of periods for curves winding around periodic coordinates.
    """

    def __init__(self, points: np.ndarray, shift: Optional[np.ndarray] = None, orientation: int = 1) -> None:
        self.points = np.array(points, dtype=float)
        if self.points.ndim != 2:
            raise PreconditionError("Curve points need the shape (nodes, dim)")
        self.shift = np.zeros(self.points.shape[1]) if shift is None else np.array(shift, dtype=float)
        self.orientation = 1 if orientation >= 0 else -1

    def __repr__(self) -> str:
        """Returns the curve summary as string"""
        return f"nodes: {self.nodes}, dim: {self.dim}, shift: {self.shift.tolist()}"

    @property
    def nodes(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def parameter(self) -> np.ndarray:
        return np.arange(self.nodes) / self.nodes

    def detrended(self) -> np.ndarray:
        """Points minus the linear winding, a periodic sequence"""
        return self.points - np.outer(self.parameter(), self.shift)

    def velocity(self) -> np.ndarray:
        return self.orientation * (periodic_derivative(self.detrended(), 1) + self.shift)

    def acceleration(self) -> np.ndarray:
        return periodic_derivative(self.detrended(), 2)

    def moved(self, displacement: np.ndarray) -> "DiscreteCurve":
        return DiscreteCurve(self.points + displacement, self.shift, self.orientation)


class ExtrinsicData:
    """Per-node extrinsic geometry of a discrete curve"""

    def __init__(
        self,
        metric: np.ndarray,
        speed: np.ndarray,
        frame: np.ndarray,
        mean_curvature: np.ndarray,
        h: np.ndarray,
    ) -> None:
        self.metric = metric
        self.speed = speed
        self.frame = frame
        self.mean_curvature = mean_curvature
        self.h = h
        self.weights = speed / len(speed)
        self.ii_norm2 = np.einsum("kab,ka,kb->k", metric, mean_curvature, mean_curvature)

    @property
    def tangent(self) -> np.ndarray:
        return self.frame[:, 0, :]

    @property
    def normals(self) -> np.ndarray:
        return self.frame[:, 1:, :]

    @property
    def induced_metric(self) -> np.ndarray:
        """g(X_u, X_u) per node, the 1x1 induced metric in the curve parameter"""
        return self.speed**2

    @property
    def length(self) -> float:
        return float(np.sum(self.weights))

    def __repr__(self) -> str:
        """Returns the extrinsic summary as string"""
        return f"nodes: {len(self.speed)}, length: {self.length:.12g}, sup|H|: {np.sqrt(np.max(self.ii_norm2)):.6g}"


def curvature_vector(m: ChartMetric, c: DiscreteCurve):
    """Metric, speed |X_u|, unit tangent and mean curvature vector per node"""
    if c.nodes < MIN_NODES:
        raise PreconditionError(f"A discrete curve needs at least {MIN_NODES} nodes, got {c.nodes}")
    x = c.points
    velocity = c.velocity()
    g = m.metric(x)
    speed = np.sqrt(np.einsum("kab,ka,kb->k", g, velocity, velocity))
    ratio = float(np.max(speed) / max(float(np.min(speed)), 1e-300))
    if ratio >= MAX_SPACING_RATIO:
        raise ReparametrizeFirstError(f"Node spacing ratio {ratio:.3g} needs reparametrization first")
    tangent = velocity / speed[:, None]
    acceleration = c.acceleration() + np.einsum("kabc,kb,kc->ka", m.christoffel(x), velocity, velocity)
    along = np.einsum("kab,ka,kb->k", g, acceleration, tangent)
    kappa = (acceleration - along[:, None] * tangent) / (speed**2)[:, None]
    return g, speed, tangent, kappa


def extrinsic(m: ChartMetric, c: DiscreteCurve) -> ExtrinsicData:
    """Tangent, normal frame and second fundamental form (nabla_T T)^perp per node"""
    g, speed, tangent, kappa = curvature_vector(m, c)
    frame = orthonormal_complement(g, tangent[:, None, :], m.dim - 1)
    h = np.einsum("kab,kna,kb->kn", g, frame[:, 1:, :], kappa)
    trace = np.einsum("kn,kna->ka", h, frame[:, 1:, :])
    scale = max(1.0, float(np.max(np.abs(kappa))))
    if np.max(np.abs(trace - kappa)) > 1e-8 * scale:
        raise InternalError("Mean curvature differs from the trace of the second fundamental form")
    return ExtrinsicData(g, speed, frame, kappa, h)


def reparametrize(m: ChartMetric, c: DiscreteCurve, nodes: Optional[int] = None) -> DiscreteCurve:
    """Resamples the curve at uniform arc length with a periodic cubic spline"""
    nodes = c.nodes if nodes is None else nodes
    closed = np.vstack([c.points, c.points[:1] + c.shift])
    chords = np.diff(closed, axis=0)
    middle = closed[:-1] + 0.5 * chords
    lengths = np.sqrt(np.einsum("kab,ka,kb->k", m.metric(middle), chords, chords))
    s = np.concatenate([[0.0], np.cumsum(lengths)])
    total = s[-1]
    trend = np.outer(s / total, c.shift)
    spline = CubicSpline(s, closed - trend, bc_type="periodic", axis=0)
    uniform = np.arange(nodes) * total / nodes
    return DiscreteCurve(spline(uniform) + np.outer(uniform / total, c.shift), c.shift, c.orientation)


class GraphSurface:
    """A surface (u, v, f(u, v)) in a chart of dimension >= 3; f returns the
    remaining dim - 2 coordinates for points of shape (..., 2)"""

    def __init__(self, f: Callable[[np.ndarray], np.ndarray], name: str = "") -> None:
        self.f = f
        self.name = name

    def embed(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        heights = np.asarray(self.f(uv), dtype=float)
        return np.concatenate([uv, heights.reshape(uv.shape[:-1] + (-1,))], axis=-1)


class SurfaceResiduals:
    """Gauss and Codazzi residuals of a surface at one point"""

    def __init__(
        self,
        gauss: float,
        codazzi: float,
        codazzi_trace: Optional[float],
        intrinsic_curvature: float,
        mean_curvature: float,
    ) -> None:
        self.gauss = gauss
        self.codazzi = codazzi
        self.codazzi_trace = codazzi_trace
        self.intrinsic_curvature = intrinsic_curvature
        self.mean_curvature = mean_curvature

    def __repr__(self) -> str:
        """Returns the residuals as string"""
        trace = "n/a" if self.codazzi_trace is None else f"{self.codazzi_trace:.3g}"
        return (
            f"gauss: {self.gauss:.3g}, codazzi: {self.codazzi:.3g}, codazzi trace: {trace}, "
            f"K: {self.intrinsic_curvature:.8g}, |H|: {self.mean_curvature:.3g}"
        )


def surface_forms(m: ChartMetric, surface: GraphSurface, uv: np.ndarray):
    """Tangents X_i, normals N_a, h[i, j, a] and A[i, a, b] = <nabla_{X_i} N_a, N_b>"""
    codimension = m.dim - 2

    def tangents(points: np.ndarray) -> np.ndarray:
        return central_difference(surface.embed, points, TANGENT_STEP, 2)

    def normals(points: np.ndarray) -> np.ndarray:
        X = tangents(points)
        graph = np.zeros(points.shape[:-1] + (codimension, m.dim))
        for a in range(codimension):
            graph[..., a, 2 + a] = 1.0
        rows = np.concatenate([X, graph], axis=-2)
        return orthonormalize(m.metric(surface.embed(points)), rows)[0][..., 2:, :]

    x = surface.embed(uv)
    g = m.metric(x)
    gamma = m.christoffel(x)
    X = tangents(uv)
    XX = central_difference(tangents, uv, NORMAL_STEP, 2)
    N = normals(uv)
    dN = central_difference(normals, uv, NORMAL_STEP, 2)
    covariant = XX + np.einsum("...abc,...ib,...jc->...ija", gamma, X, X)
    h = np.einsum("...ab,...ija,...nb->...ijn", g, covariant, N)
    nabla_N = dN + np.einsum("...abc,...ib,...nc->...ina", gamma, X, N)
    A = np.einsum("...ab,...ina,...pb->...inp", g, nabla_N, N)
    return x, X, N, h, A


def gauss_codazzi_residual(
    m: ChartMetric, surface: GraphSurface, center: np.ndarray, step: float = 1e-2, minimal_tolerance: float = 1e-6
) -> SurfaceResiduals:
    """Gauss and Codazzi residuals of a graph surface at `center`; the traced Codazzi
    identity is reported only where the surface is minimal"""
    if m.dim < 3:
        raise PreconditionError("Surface checks need an ambient chart of dimension at least 3")
    center = np.asarray(center, dtype=float)

    def induced(points: np.ndarray) -> np.ndarray:
        X = central_difference(surface.embed, points, TANGENT_STEP, 2)
        return np.einsum("...ia,...ab,...jb->...ij", X, m.metric(surface.embed(points)), X)

    intrinsic = ChartMetric(2, induced, step=step, name=f"{surface.name} induced")
    curvature = intrinsic.riemann(center)
    g_surface = curvature.metric
    g_inverse = np.linalg.inv(g_surface)
    gamma_surface = intrinsic.christoffel(center)

    x, X, N, h, A = surface_forms(m, surface, center)
    R = m.riemann(x).R
    ambient = np.einsum("abcd,a,b,c,d->", R, X[0], X[1], X[0], X[1])
    gauss = abs(
        curvature.R[0, 1, 0, 1]
        - ambient
        - np.sum(h[0, 0] * h[1, 1] - h[0, 1] * h[0, 1])
    )

    offsets = np.array([2.0, 1.0, -1.0, -2.0]) * step
    weights = np.array([-1.0, 8.0, -8.0, 1.0]) / (12 * step)
    d_h = np.zeros((2,) + h.shape)
    for i in range(2):
        shifted = center + np.outer(offsets, np.eye(2)[i])
        d_h[i] = np.einsum("s,sjkn->jkn", weights, surface_forms(m, surface, shifted)[3])
    nabla_h = (
        d_h
        - np.einsum("lij,lkn->ijkn", gamma_surface, h)
        - np.einsum("lik,jln->ijkn", gamma_surface, h)
        - np.einsum("inp,jkp->ijkn", A, h)
    )
    left = np.einsum("abcd,na,kb,ic,jd->ijkn", R, N, X, X, X)
    right = nabla_h - np.swapaxes(nabla_h, 0, 1)
    codazzi = float(np.max(np.abs(left - right)))

    mean = np.einsum("ij,ijn->n", g_inverse, h)
    trace = None
    if np.linalg.norm(mean) < minimal_tolerance:
        traced_left = np.einsum("ik,ijkn->jn", g_inverse, left)
        traced_right = np.einsum("ik,ijkn->jn", g_inverse, nabla_h)
        trace = float(np.max(np.abs(traced_left - traced_right)))
    return SurfaceResiduals(
        float(gauss),
        codazzi,
        trace,
        float(curvature.R[0, 1, 0, 1] / np.linalg.det(g_surface)),
        float(np.linalg.norm(mean)),
    )


class ExtendedTensors:
    """II^Sigma, S^Sigma and their pairings with II^Gamma at the nodes of a curve.
    Components are taken on the adapted bases of each node's principal angles."""

    def __init__(
        self,
        foot: FootPoint,
        angles: list,
        ii_gamma: np.ndarray,
        ii_sigma: np.ndarray,
        s_sigma: np.ndarray,
        difference_norm2: np.ndarray,
        weights: np.ndarray,
    ) -> None:
        self.foot = foot
        self.angles = angles
        self.ii_gamma = ii_gamma
        self.ii_sigma = ii_sigma
        self.s_sigma = s_sigma
        self.pairing_ii = np.sum(ii_gamma * ii_sigma, axis=-1)
        self.pairing_s = np.sum(ii_gamma * s_sigma, axis=-1)
        self.difference_norm2 = difference_norm2
        self.weights = weights

    @property
    def star_omega(self) -> np.ndarray:
        return np.array([a.star_omega for a in self.angles])

    @property
    def fs(self) -> np.ndarray:
        return np.array([a.fs for a in self.angles])

    def __repr__(self) -> str:
        """Returns the extended tensor summary as string"""
        return (
            f"nodes: {len(self.weights)}, min *Omega: {np.min(self.star_omega):.12g}, "
            f"sup|II - II^Sigma|: {np.sqrt(np.max(self.difference_norm2)):.6g}"
        )


def extended_tensors(tc: TubularChart, c: DiscreteCurve) -> ExtendedTensors:
    data = extrinsic(tc.metric, c)
    foot = tc.foot_point(c.points, frames=True)
    normal = slice(1, None)
    h_p = tc.ref.second_fundamental_form(foot.x)
    R_p = tc.ref.curvature(foot.x)
    s_p = np.einsum("kb,kab->ka", foot.y, R_p[:, normal, 0, normal, 0] + np.einsum("ka,kb->kab", h_p, h_p))
    tangent_frame = np.einsum("kab,ka,kAb->kA", data.metric, data.tangent, foot.frame)
    kappa_frame = np.einsum("kab,ka,kAb->kA", data.metric, data.mean_curvature, foot.frame)
    angles = []
    ii_gamma, ii_sigma, s_sigma = [], [], []
    for k in range(c.nodes):
        node = PrincipalAngles(tangent_frame[k][None, :], foot.frame[k])
        if node.star_omega <= 0.5:
            raise GraphicalRegimeError(
                f"Node {k} has *Omega = {node.star_omega:.6g}, which is not above 1/2"
            )
        angles.append(node)
        t0 = node.tangent[0, 0]
        ii_gamma.append(node.normal @ kappa_frame[k])
        ii_sigma.append(t0**2 * node.normal[:, normal] @ h_p[k])
        s_sigma.append(t0**2 * node.normal[:, normal] @ s_p[k])
    ii_gamma = np.array(ii_gamma)
    ii_sigma = np.array(ii_sigma)
    difference = data.ii_norm2 - 2 * np.sum(ii_gamma * ii_sigma, axis=-1) + np.sum(h_p**2, axis=-1)
    return ExtendedTensors(
        foot, angles, ii_gamma, ii_sigma, np.array(s_sigma), np.maximum(difference, 0.0), data.weights
    )

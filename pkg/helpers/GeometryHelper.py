from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline

from helpers.Exceptions import DegenerateMetricError, DiscretizationError, PreconditionError

MetricFunction = Callable[[np.ndarray], np.ndarray]
Bounds = Optional[Tuple[float, float]]

SYMMETRY_TOLERANCE = 1e-14
ANALYTIC_CURVATURE_TOLERANCE = 1e-6


def central_difference(function: MetricFunction, x: np.ndarray, h: float, dim: int) -> np.ndarray:
    """4th-order central difference of a vectorized function in every chart direction.
    The new derivative axis is inserted right after the batch axes of x."""
    x = np.asarray(x, dtype=float)
    derivatives = []
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = h
        derivatives.append(
            (-function(x + 2 * e) + 8 * function(x + e) - 8 * function(x - e) + function(x - 2 * e))
            / (12 * h)
        )
    return np.stack(derivatives, axis=x.ndim - 1)


class CurvaturePoint:
    """Riemann and Ricci tensors at one or several chart points.
    R[..., A, B, C, D] = <R(e_C, e_D) e_B, e_A>, so R_1212 is positive on spheres."""

    def __init__(
        self,
        point: np.ndarray,
        metric: np.ndarray,
        R: np.ndarray,
        ric: np.ndarray,
        residuals: Dict[str, float],
    ) -> None:
        self.point = point
        self.metric = metric
        self.R = R
        self.ric = ric
        self.residuals = residuals

    @property
    def gauss_curvature(self) -> np.ndarray:
        """Sectional curvature of a surface chart (K = R_1212 / det g)"""
        if self.R.shape[-1] != 2:
            raise PreconditionError("Gauss curvature is only defined for 2-dimensional charts")
        return self.R[..., 0, 1, 0, 1] / np.linalg.det(self.metric)

    @property
    def scalar(self) -> np.ndarray:
        return np.einsum("...ab,...ab->...", np.linalg.inv(self.metric), self.ric)

    def __repr__(self) -> str:
        """Returns the curvature summary as string"""
        worst = max(self.residuals.values()) if self.residuals else 0.0
        return f"point: {self.point.tolist()}, max |R|: {np.max(np.abs(self.R)):.6g}, residual: {worst:.3g}"


class GeodesicPath:
    """Output of the fixed-step geodesic integrator"""

    def __init__(
        self,
        x0: np.ndarray,
        v0: np.ndarray,
        T: float,
        steps: int,
        times: np.ndarray,
        points: np.ndarray,
        velocities: np.ndarray,
        left_chart: bool,
    ) -> None:
        self.x0 = x0
        self.v0 = v0
        self.T = T
        self.steps = steps
        self.times = times
        self.points = points
        self.velocities = velocities
        self.left_chart = left_chart

    def __repr__(self) -> str:
        """Returns the path summary as string"""
        return (
            f"start: {self.points[0].tolist()}, end: {self.points[-1].tolist()}, "
            f"samples: {len(self.times)}, left_chart: {self.left_chart}"
        )


class ChartMetric:
    """A Riemannian metric on one coordinate chart.

    coeff maps points of shape (..., dim) to matrices (..., dim, dim). Optional
    closures deriv and deriv2 return d_c g_ab as [..., c, a, b] and d_e d_c g_ab as
    [..., e, c, a, b]; missing ones fall back to 4th-order central differences.
    """

    def __init__(
        self,
        dim: int,
        coeff: MetricFunction,
        periods: Optional[Sequence[Optional[float]]] = None,
        deriv: Optional[MetricFunction] = None,
        deriv2: Optional[MetricFunction] = None,
        bounds: Optional[Sequence[Bounds]] = None,
        step: float = 1e-4,
        name: str = "",
    ) -> None:
        if dim < 2:
            raise PreconditionError(f"Chart dimension must be at least 2, got {dim}")
        self.dim = dim
        self.coeff = coeff
        self.periods = tuple(periods) if periods is not None else (None,) * dim
        self.bounds = tuple(bounds) if bounds is not None else (None,) * dim
        self.deriv = deriv
        self.deriv2 = deriv2
        self.step = step
        self.name = name
        if len(self.periods) != dim or len(self.bounds) != dim:
            raise PreconditionError("Periods and bounds need one entry per coordinate")

    def __repr__(self) -> str:
        """Returns the chart description as string"""
        mode = "analytic" if self.analytic else f"central-difference(h={self.step:g})"
        return f"name: '{self.name}', dim: {self.dim}, periods: {self.periods}, derivatives: {mode}"

    @property
    def analytic(self) -> bool:
        return self.deriv is not None and self.deriv2 is not None

    @property
    def curvature_tolerance(self) -> float:
        if self.analytic:
            return ANALYTIC_CURVATURE_TOLERANCE
        return max(ANALYTIC_CURVATURE_TOLERANCE, 1e3 * self.step**2)

    def metric(self, x: np.ndarray) -> np.ndarray:
        """Evaluates g_AB and checks symmetry and positive definiteness"""
        g = np.asarray(self.coeff(np.asarray(x, dtype=float)), dtype=float)
        scale = max(1.0, float(np.max(np.abs(g)))) if g.size else 1.0
        asymmetry = float(np.max(np.abs(g - np.swapaxes(g, -1, -2)))) if g.size else 0.0
        if asymmetry > SYMMETRY_TOLERANCE * scale:
            raise DegenerateMetricError(f"Metric is not symmetric (residual {asymmetry:.3g})")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError as e:
            raise DegenerateMetricError(
                f"Metric is not positive definite in chart '{self.name}'"
            ) from e
        return g

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.metric(x))

    def derivative(self, x: np.ndarray) -> np.ndarray:
        """First derivatives [..., c, a, b] = d_c g_ab"""
        if self.deriv is not None:
            return np.asarray(self.deriv(np.asarray(x, dtype=float)), dtype=float)
        return central_difference(self.coeff, x, self.step, self.dim)

    def second_derivative(self, x: np.ndarray) -> np.ndarray:
        """Second derivatives [..., e, c, a, b] = d_e d_c g_ab"""
        if self.deriv2 is not None:
            return np.asarray(self.deriv2(np.asarray(x, dtype=float)), dtype=float)
        return central_difference(self.derivative, x, self.step, self.dim)

    def inner(self, x: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("...ab,...a,...b->...", self.metric(x), u, v)

    def norm(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.sqrt(self.inner(x, u, u))

    def inside(self, x: np.ndarray) -> np.ndarray:
        """True where a point is finite and strictly inside the chart bounds"""
        x = np.asarray(x, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        for c, bound in enumerate(self.bounds):
            if bound is not None:
                ok &= (x[..., c] > bound[0]) & (x[..., c] < bound[1])
        return ok

    def wrap(self, dx: np.ndarray) -> np.ndarray:
        """Reduces coordinate differences along periodic directions to [-period/2, period/2]"""
        dx = np.array(dx, dtype=float)
        for c, period in enumerate(self.periods):
            if period:
                dx[..., c] -= period * np.round(dx[..., c] / period)
        return dx

    def christoffel(self, x: np.ndarray) -> np.ndarray:
        """Levi-Civita symbols [..., a, b, c] = Gamma^a_bc"""
        return np.einsum("...cd,...dab->...cab", self.inverse(x), self.__lowered_christoffel(x))

    def christoffel_derivative(self, x: np.ndarray) -> np.ndarray:
        """Derivatives [..., e, a, b, c] = d_e Gamma^a_bc"""
        g_inv = self.inverse(x)
        dg = self.derivative(x)
        ddg = self.second_derivative(x)
        lowered = self.__lowered_christoffel(x, dg)
        d_lowered = 0.5 * (
            np.einsum("...eabd->...edab", ddg) + np.einsum("...ebad->...edab", ddg) - ddg
        )
        d_inverse = -np.einsum("...cp,...epq,...qd->...ecd", g_inv, dg, g_inv)
        return np.einsum("...ecd,...dab->...ecab", d_inverse, lowered) + np.einsum(
            "...cd,...edab->...ecab", g_inv, d_lowered
        )

    def metric_compatibility(self, x: np.ndarray) -> float:
        """Largest component of the covariant derivative of g (zero for Levi-Civita)"""
        g = self.metric(x)
        gamma = self.christoffel(x)
        nabla_g = (
            self.derivative(x)
            - np.einsum("...eca,...eb->...cab", gamma, g)
            - np.einsum("...ecb,...ae->...cab", gamma, g)
        )
        return float(np.max(np.abs(nabla_g)))

    def riemann(self, x: np.ndarray, tolerance: Optional[float] = None) -> CurvaturePoint:
        """Lowered Riemann tensor and Ricci tensor with symmetry diagnostics"""
        x = np.asarray(x, dtype=float)
        g = self.metric(x)
        gamma = self.christoffel(x)
        d_gamma = self.christoffel_derivative(x)
        raised = (
            np.einsum("...cadb->...abcd", d_gamma)
            - np.einsum("...dacb->...abcd", d_gamma)
            + np.einsum("...ace,...edb->...abcd", gamma, gamma)
            - np.einsum("...ade,...ecb->...abcd", gamma, gamma)
        )
        R = np.einsum("...pa,...abcd->...pbcd", g, raised)
        ric = np.einsum("...ac,...abcd->...bd", np.linalg.inv(g), R)
        residuals = curvature_residuals(R)
        limit = self.curvature_tolerance if tolerance is None else tolerance
        scale = max(1.0, float(np.max(np.abs(R))))
        failed = {name: value for name, value in residuals.items() if value > limit * scale}
        if failed:
            details = ", ".join(f"{name}={value:.3g}" for name, value in failed.items())
            raise DiscretizationError(f"Curvature symmetries violated in chart '{self.name}': {details}")
        return CurvaturePoint(x, g, R, 0.5 * (ric + np.swapaxes(ric, -1, -2)), residuals)

    def sectional_curvature(self, x: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        curvature = self.riemann(x)
        numerator = np.einsum("...abcd,...a,...b,...c,...d->...", curvature.R, u, v, u, v)
        area = self.inner(x, u, u) * self.inner(x, v, v) - self.inner(x, u, v) ** 2
        return numerator / area

    def geodesic(
        self, x0: np.ndarray, v0: np.ndarray, T: float = 1.0, steps: Optional[int] = None
    ) -> GeodesicPath:
        """Integrates the geodesic equation with the classical fixed-step RK4 scheme"""
        x0 = np.asarray(x0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        if not np.all(self.norm(x0, v0) > 0):
            raise PreconditionError("Initial geodesic velocity must be non-zero")
        if steps is None:
            speed = float(np.max(self.norm(x0, v0)))
            steps = max(64, int(np.ceil(200 * abs(T) * speed)))
        x, v, _, inside, trajectory = self.integrate(x0, v0, None, T, steps, record=True)
        points, velocities, _ = trajectory
        times = np.linspace(0.0, T, steps + 1)
        return GeodesicPath(x0, v0, T, steps, times, points, velocities, bool(np.any(~inside)))

    def parallel_transport(
        self, path: Union[GeodesicPath, np.ndarray], V0: np.ndarray, closed: bool = False
    ) -> np.ndarray:
        """Transports V0 (a vector or a stack of vectors) along a path.
        Returns the transported vectors at every sample of the path."""
        V0 = np.asarray(V0, dtype=float)
        frames = V0[None, :] if V0.ndim == 1 else V0
        if isinstance(path, GeodesicPath):
            _, _, _, _, trajectory = self.integrate(
                path.x0, path.v0, frames, path.T, path.steps, record=True
            )
            transported = trajectory[2]
        else:
            transported = self.__transport_sampled(np.asarray(path, dtype=float), frames, closed)
        return transported[:, 0, :] if V0.ndim == 1 else transported

    def integrate(
        self,
        x0: np.ndarray,
        v0: np.ndarray,
        frames: Optional[np.ndarray],
        T: float,
        steps: int,
        record: bool = False,
    ):
        """Batched RK4 for the geodesic equation with optional transported vectors.
        Rows whose stages leave the chart are frozen at their last valid state."""
        x = np.array(x0, dtype=float)
        v = np.array(v0, dtype=float)
        E = None if frames is None else np.broadcast_to(frames, x.shape[:-1] + frames.shape[-2:]).copy()
        inside = self.inside(x)
        dt = T / steps
        history = ([x.copy()], [v.copy()], [None if E is None else E.copy()])
        for _ in range(steps):
            state = (x, v, E)
            k1 = self.__rates(*self.__safe(state, state, inside))
            s2 = self.__advance(state, k1, dt / 2)
            k2 = self.__rates(*self.__safe(s2, state, inside))
            s3 = self.__advance(state, k2, dt / 2)
            k3 = self.__rates(*self.__safe(s3, state, inside))
            s4 = self.__advance(state, k3, dt)
            k4 = self.__rates(*self.__safe(s4, state, inside))
            for stage in (s2, s3, s4):
                inside = inside & self.inside(stage[0])
            new_x = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            new_v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            inside = inside & self.inside(new_x)
            x = np.where(inside[..., None], new_x, x)
            v = np.where(inside[..., None], new_v, v)
            if E is not None:
                new_E = E + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
                E = np.where(inside[..., None, None], new_E, E)
            if record:
                history[0].append(x.copy())
                history[1].append(v.copy())
                history[2].append(None if E is None else E.copy())
        trajectory = None
        if record:
            trajectory = (
                np.stack(history[0]),
                np.stack(history[1]),
                None if E is None else np.stack(history[2]),
            )
        return x, v, E, inside, trajectory

    def scaled(self, factor: float) -> "ChartMetric":
        """The same chart carrying the metric factor**2 * g"""
        square = factor**2
        return ChartMetric(
            self.dim,
            lambda x: square * self.coeff(x),
            self.periods,
            None if self.deriv is None else (lambda x: square * self.deriv(x)),
            None if self.deriv2 is None else (lambda x: square * self.deriv2(x)),
            self.bounds,
            self.step,
            f"{self.name} scaled by {factor:g}",
        )

    def __lowered_christoffel(self, x: np.ndarray, dg: Optional[np.ndarray] = None) -> np.ndarray:
        """[..., d, a, b] = 1/2 (d_a g_bd + d_b g_ad - d_d g_ab)"""
        if dg is None:
            dg = self.derivative(x)
        return 0.5 * (np.einsum("...abd->...dab", dg) + np.einsum("...bad->...dab", dg) - dg)

    def __rates(self, x: np.ndarray, v: np.ndarray, E: Optional[np.ndarray]):
        gamma = self.christoffel(x)
        dv = -np.einsum("...abc,...b,...c->...a", gamma, v, v)
        dE = None if E is None else -np.einsum("...abc,...b,...kc->...ka", gamma, v, E)
        return v, dv, dE

    @staticmethod
    def __advance(state, rates, h: float):
        x, v, E = state
        return (
            x + h * rates[0],
            v + h * rates[1],
            None if E is None else E + h * rates[2],
        )

    def __safe(self, stage, fallback, inside: np.ndarray):
        """Replaces stage points outside the chart by the last valid state"""
        ok = inside & self.inside(stage[0])
        if np.all(ok):
            return stage
        x = np.where(ok[..., None], stage[0], fallback[0])
        v = np.where(ok[..., None], stage[1], fallback[1])
        E = None if stage[2] is None else np.where(ok[..., None, None], stage[2], fallback[2])
        return x, v, E

    def __transport_sampled(self, points: np.ndarray, frames: np.ndarray, closed: bool) -> np.ndarray:
        """RK4 transport along a sampled path, interpolated by a cubic spline"""
        if len(points) < 4:
            raise PreconditionError("A sampled path needs at least 4 points")
        parameter = np.linspace(0.0, 1.0, len(points))
        spline = CubicSpline(parameter, points, axis=0, bc_type="periodic" if closed else "not-a-knot")
        velocity = spline.derivative()
        transported = [frames.copy()]
        E = frames.copy()

        def rate(t: float, vectors: np.ndarray) -> np.ndarray:
            gamma = self.christoffel(spline(t))
            return -np.einsum("abc,b,kc->ka", gamma, velocity(t), vectors)

        for t0, t1 in zip(parameter[:-1], parameter[1:]):
            h = t1 - t0
            k1 = rate(t0, E)
            k2 = rate(t0 + h / 2, E + h / 2 * k1)
            k3 = rate(t0 + h / 2, E + h / 2 * k2)
            k4 = rate(t1, E + h * k3)
            E = E + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            transported.append(E.copy())
        return np.stack(transported)


def curvature_residuals(R: np.ndarray) -> Dict[str, float]:
    """Largest violation of each algebraic curvature symmetry"""
    return {
        "antisymmetry_ab": float(np.max(np.abs(R + np.swapaxes(R, -4, -3)))),
        "antisymmetry_cd": float(np.max(np.abs(R + np.swapaxes(R, -2, -1)))),
        "pair_symmetry": float(np.max(np.abs(R - np.einsum("...cdab->...abcd", R)))),
        "bianchi": float(
            np.max(
                np.abs(R + np.einsum("...acdb->...abcd", R) + np.einsum("...adbc->...abcd", R))
            )
        ),
    }


def orthonormalize(g: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt of vector rows (..., k, d) in the metric g (..., d, d).
    Returns the orthonormal rows and the norms found before each normalization."""
    rows = np.array(rows, dtype=float)
    norms = np.zeros(rows.shape[:-1])
    for k in range(rows.shape[-2]):
        v = rows[..., k, :]
        for j in range(k):
            b = rows[..., j, :]
            v = v - np.einsum("...ab,...a,...b->...", g, v, b)[..., None] * b
        norm = np.sqrt(np.maximum(np.einsum("...ab,...a,...b->...", g, v, v), 0.0))
        norms[..., k] = norm
        rows[..., k, :] = v / np.where(norm > 0, norm, 1.0)[..., None]
    return rows, norms


def orthonormal_complement(g: np.ndarray, rows: np.ndarray, rank: int) -> np.ndarray:
    """Appends `rank` g-orthonormal rows orthogonal to the given orthonormal rows.
    Coordinate directions are tried in order; nearly dependent ones are skipped."""
    rows = np.asarray(rows, dtype=float)
    dim = rows.shape[-1]
    batch = rows.shape[:-2]
    known = rows.shape[-2]
    g = np.broadcast_to(g, batch + (dim, dim)).reshape(-1, dim, dim)
    frame = np.concatenate([rows.reshape(-1, known, dim), np.zeros((g.shape[0], rank, dim))], axis=1)
    count = np.zeros(g.shape[0], dtype=int)
    for threshold in (0.3, 1e-8):
        for c in range(dim):
            v = np.zeros((g.shape[0], dim))
            v[:, c] = 1.0
            length = np.sqrt(g[:, c, c])
            for j in range(known + rank):
                b = frame[:, j, :]
                v = v - np.einsum("kab,ka,kb->k", g, v, b)[:, None] * b
            norm = np.sqrt(np.maximum(np.einsum("kab,ka,kb->k", g, v, v), 0.0))
            take = np.flatnonzero((norm > threshold * length) & (count < rank))
            if take.size == 0:
                continue
            frame[take, known + count[take], :] = v[take] / norm[take, None]
            count[take] += 1
    if np.any(count < rank):
        raise PreconditionError("Could not complete an orthonormal frame")
    return frame.reshape(batch + (known + rank, dim))


def flat_metric(
    dim: int, periods: Optional[Sequence[Optional[float]]] = None, name: str = "flat"
) -> ChartMetric:
    """Euclidean metric, optionally periodic (flat tori and cylinders)"""

    def coeff(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(dim), np.shape(x)[:-1] + (dim, dim)).copy()

    def deriv(x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x)[:-1] + (dim,) * 3)

    def deriv2(x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x)[:-1] + (dim,) * 4)

    return ChartMetric(dim, coeff, periods, deriv, deriv2, name=name)


def warped_product_metric(
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
    ddf: Callable[[np.ndarray], np.ndarray],
    r_bounds: Bounds = None,
    period: Optional[float] = 2 * np.pi,
    name: str = "warped",
) -> ChartMetric:
    """Surface metric dr^2 + f(r)^2 dtheta^2 with analytic derivatives"""

    def coeff(x: np.ndarray) -> np.ndarray:
        r = x[..., 0]
        g = np.zeros(r.shape + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = f(r) ** 2
        return g

    def deriv(x: np.ndarray) -> np.ndarray:
        r = x[..., 0]
        dg = np.zeros(r.shape + (2, 2, 2))
        dg[..., 0, 1, 1] = 2 * f(r) * df(r)
        return dg

    def deriv2(x: np.ndarray) -> np.ndarray:
        r = x[..., 0]
        ddg = np.zeros(r.shape + (2, 2, 2, 2))
        ddg[..., 0, 0, 1, 1] = 2 * (df(r) ** 2 + f(r) * ddf(r))
        return ddg

    return ChartMetric(2, coeff, (None, period), deriv, deriv2, (r_bounds, None), name=name)


def hyperbolic_cylinder() -> ChartMetric:
    return warped_product_metric(np.cosh, np.sinh, np.cosh, name="hyperbolic cylinder")


def unit_sphere_polar() -> ChartMetric:
    """Unit sphere dr^2 + sin^2 r dtheta^2, r measured from a pole"""
    return warped_product_metric(
        np.sin, np.cos, lambda r: -np.sin(r), (0.0, np.pi), name="unit sphere (polar)"
    )


def unit_sphere_equatorial() -> ChartMetric:
    """Unit sphere dr^2 + cos^2 r dtheta^2, equator at r = 0"""
    return warped_product_metric(
        np.cos, lambda r: -np.sin(r), lambda r: -np.cos(r), (-np.pi / 2, np.pi / 2),
        name="unit sphere (equatorial)",
    )


def polar_plane() -> ChartMetric:
    return warped_product_metric(
        lambda r: r, np.ones_like, np.zeros_like, (0.0, np.inf), name="polar plane"
    )


def hyperbolic_waist_3d() -> ChartMetric:
    """cosh^2 y1 cosh^2 y2 dx^2 + dy1^2 + dy2^2 with x periodic, the line y = 0 is a
    geodesic with two normal directions"""

    def coeff(x: np.ndarray) -> np.ndarray:
        g = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()
        g[..., 0, 0] = (np.cosh(x[..., 1]) * np.cosh(x[..., 2])) ** 2
        return g

    def deriv(x: np.ndarray) -> np.ndarray:
        c1, s1 = np.cosh(x[..., 1]), np.sinh(x[..., 1])
        c2, s2 = np.cosh(x[..., 2]), np.sinh(x[..., 2])
        dg = np.zeros(x.shape[:-1] + (3, 3, 3))
        dg[..., 1, 0, 0] = 2 * c1 * s1 * c2**2
        dg[..., 2, 0, 0] = 2 * c1**2 * c2 * s2
        return dg

    def deriv2(x: np.ndarray) -> np.ndarray:
        c1, s1 = np.cosh(x[..., 1]), np.sinh(x[..., 1])
        c2, s2 = np.cosh(x[..., 2]), np.sinh(x[..., 2])
        ddg = np.zeros(x.shape[:-1] + (3, 3, 3, 3))
        ddg[..., 1, 1, 0, 0] = 2 * np.cosh(2 * x[..., 1]) * c2**2
        ddg[..., 2, 2, 0, 0] = 2 * c1**2 * np.cosh(2 * x[..., 2])
        ddg[..., 1, 2, 0, 0] = 4 * c1 * s1 * c2 * s2
        ddg[..., 2, 1, 0, 0] = ddg[..., 1, 2, 0, 0]
        return ddg

    return ChartMetric(3, coeff, (2 * np.pi, None, None), deriv, deriv2, name="hyperbolic 3d waist")

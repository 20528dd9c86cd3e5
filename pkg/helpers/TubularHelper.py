from itertools import product
from logging import Logger
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import logm
from scipy.stats import qmc

from helpers.Exceptions import (
    ConfigError,
    DiscretizationError,
    ExpansionMismatchError,
    OutsideTubeError,
    PreconditionError,
    RankError,
)
from helpers.GeometryHelper import ChartMetric, orthonormal_complement, orthonormalize

CurveFunction = Callable[[np.ndarray], np.ndarray]

DIFFERENCE_STEP = 1e-3
JACOBIAN_STEP = 1e-7
GUESS_NODES = 256
EXPANSION_SLOPE = 1.8
EXACT_RESIDUAL = 1e-9


class MinimalReference:
    """A closed minimal curve Sigma, parametrized by arc length on [0, length).

    frame(s) returns g-orthonormal rows [T, e_1, ..., e_m]. The normal rows are
    parallel along Sigma up to one constant rotation that closes the normal
    holonomy, so the frame is periodic and `connection` (the matrix A with
    nabla_T e_b = sum_c A[c, b] e_c) is constant, and zero on flat normal bundles.
    """

    def __init__(
        self,
        ambient: ChartMetric,
        point: CurveFunction,
        length: float,
        velocity: Optional[CurveFunction] = None,
        acceleration: Optional[CurveFunction] = None,
        name: str = "",
        grid: int = GUESS_NODES,
        speed_tolerance: float = 1e-6,
    ) -> None:
        self.ambient = ambient
        self.length = float(length)
        self.name = name or ambient.name
        self.rank = ambient.dim - 1
        self.dimension = ambient.dim - self.rank
        self.__point = point
        self.__velocity = velocity
        self.__acceleration = acceleration
        if self.length <= 0:
            raise PreconditionError(f"Sigma '{self.name}' needs a positive length")
        s = self.nodes(grid)
        x = self.point(s)
        drift = float(np.max(np.abs(ambient.norm(x, self.velocity(s)) - 1.0)))
        if drift > speed_tolerance:
            raise PreconditionError(
                f"Sigma '{self.name}' is not parametrized by arc length (|speed - 1| up to {drift:.3g})"
            )
        gap = float(np.max(np.abs(ambient.wrap(self.point(np.array(self.length)) - self.point(np.array(0.0))))))
        if gap > 1e-8:
            raise PreconditionError(f"Sigma '{self.name}' does not close up (gap {gap:.3g})")
        self.sup_mean_curvature = float(np.max(ambient.norm(x, self.mean_curvature(s))))
        self.__solution, self.holonomy = self.__transport()
        if np.linalg.det(self.holonomy) < 0:
            raise ConfigError(f"The normal bundle along '{self.name}' is not orientable")
        log_holonomy = np.real(logm(self.holonomy)).reshape(self.rank, self.rank)
        self.connection = -log_holonomy / self.length
        self.__exponents, self.__basis = np.linalg.eig(log_holonomy)
        self.__basis_inverse = np.linalg.inv(self.__basis)

    def __repr__(self) -> str:
        """Returns the reference curve as string"""
        return (
            f"name: '{self.name}', length: {self.length:.6g}, sup|H|: {self.sup_mean_curvature:.3g}, "
            f"flat normal bundle: {bool(np.allclose(self.connection, 0.0))}"
        )

    @property
    def analytic(self) -> bool:
        """True when both curve derivatives are closures and the metric is analytic"""
        return self.__velocity is not None and self.__acceleration is not None and self.ambient.analytic

    def nodes(self, count: int) -> np.ndarray:
        return np.arange(count) * self.length / count

    def point(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self.__point(np.asarray(s, dtype=float)), dtype=float)

    def velocity(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.__velocity is not None:
            return np.asarray(self.__velocity(s), dtype=float)
        h = DIFFERENCE_STEP
        return (
            -self.point(s + 2 * h) + 8 * self.point(s + h) - 8 * self.point(s - h) + self.point(s - 2 * h)
        ) / (12 * h)

    def acceleration(self, s: np.ndarray) -> np.ndarray:
        """Second coordinate derivative of Sigma (not covariant)"""
        s = np.asarray(s, dtype=float)
        if self.__acceleration is not None:
            return np.asarray(self.__acceleration(s), dtype=float)
        h = DIFFERENCE_STEP
        return (
            -self.point(s + 2 * h)
            + 16 * self.point(s + h)
            - 30 * self.point(s)
            + 16 * self.point(s - h)
            - self.point(s - 2 * h)
        ) / (12 * h**2)

    def covariant_acceleration(self, s: np.ndarray) -> np.ndarray:
        x = self.point(s)
        v = self.velocity(s)
        gamma = self.ambient.christoffel(x)
        return self.acceleration(s) + np.einsum("...abc,...b,...c->...a", gamma, v, v)

    def mean_curvature(self, s: np.ndarray) -> np.ndarray:
        """Normal part of the covariant acceleration, the mean curvature vector of Sigma"""
        x = self.point(s)
        v = self.velocity(s)
        g = self.ambient.metric(x)
        acceleration = self.covariant_acceleration(s)
        speed2 = np.einsum("...ab,...a,...b->...", g, v, v)
        along = np.einsum("...ab,...a,...b->...", g, acceleration, v) / speed2
        return (acceleration - along[..., None] * v) / speed2[..., None]

    def frame(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        u = np.mod(s, self.length)
        dim = self.ambient.dim
        transported = self.__solution.sol(u.ravel()).T.reshape(u.shape + (self.rank, dim))
        normals = np.einsum("...ab,...ad->...bd", self.__rotation(u), transported)
        rows = np.concatenate([self.velocity(s)[..., None, :], normals], axis=-2)
        return orthonormalize(self.ambient.metric(self.point(s)), rows)[0]

    def second_fundamental_form(self, s: np.ndarray) -> np.ndarray:
        """Components h_a = <II(T, T), e_a> in the normal rows of the frame"""
        frame = self.frame(s)
        g = self.ambient.metric(self.point(s))
        return np.einsum("...ab,...ka,...b->...k", g, frame[..., 1:, :], self.mean_curvature(s))

    def curvature(self, s: np.ndarray) -> np.ndarray:
        """Ambient Riemann tensor at sigma(s) in the frame [T, e_1, ..., e_m]"""
        frame = self.frame(s)
        R = self.ambient.riemann(self.point(s)).R
        return np.einsum("...abcd,...Aa,...Bb,...Cc,...Dd->...ABCD", R, frame, frame, frame, frame)

    def __rotation(self, u: np.ndarray) -> np.ndarray:
        phase = np.exp(-np.multiply.outer(u / self.length, self.__exponents))
        return np.real(np.einsum("ab,...b,bc->...ac", self.__basis, phase, self.__basis_inverse))

    def __transport(self):
        """Fermi-Walker transport of a normal frame once around Sigma"""
        dim, rank = self.ambient.dim, self.rank
        x0 = self.point(np.array(0.0))
        g0 = self.ambient.metric(x0)
        tangent = self.velocity(np.array(0.0))
        start = orthonormal_complement(g0, tangent[None, :], rank)[1:]

        def rate(s: float, state: np.ndarray) -> np.ndarray:
            E = state.reshape(rank, dim)
            s = np.array(s)
            x = self.point(s)
            v = self.velocity(s)
            gamma = self.ambient.christoffel(x)
            kappa = np.einsum("ab,kb->ka", self.ambient.metric(x), E) @ self.covariant_acceleration(s)
            return (-np.einsum("abc,b,kc->ka", gamma, v, E) - kappa[:, None] * v[None, :]).ravel()

        solution = solve_ivp(
            rate,
            (0.0, self.length),
            start.ravel(),
            method="DOP853",
            rtol=1e-12,
            atol=1e-12,
            dense_output=True,
        )
        if not solution.success:
            raise DiscretizationError(f"Frame transport along '{self.name}' failed: {solution.message}")
        end = solution.y[:, -1].reshape(rank, dim)
        return solution, np.einsum("ab,ia,jb->ij", g0, start, end)


class FootPoint:
    """Fermi coordinates of ambient points: x on Sigma, normal components y"""

    def __init__(self, x: np.ndarray, y: np.ndarray, inside: np.ndarray, frame: Optional[np.ndarray]) -> None:
        self.x = x
        self.y = y
        self.inside = inside
        self.frame = frame

    @property
    def psi(self) -> np.ndarray:
        return np.sum(self.y**2, axis=-1)

    @property
    def coordinates(self) -> np.ndarray:
        return np.concatenate([self.x[..., None], self.y], axis=-1)

    def __repr__(self) -> str:
        """Returns the foot point data as string"""
        return f"x: {np.round(self.x, 10).tolist()}, y: {np.round(self.y, 10).tolist()}, inside: {self.inside.tolist()}"


class PrincipalAngles:
    """Principal angles between an oriented n-plane L and the horizontal space.

    Built from the coefficients of an orthonormal basis of L in the transported
    frame (first n rows horizontal). All bases are stored in frame coordinates:
    `reference` holds the adapted frame of the tangent space, `tangent` the adapted
    basis of L and `normal` the adapted basis of its orthogonal complement.
    """

    def __init__(self, coefficients: np.ndarray, frame: np.ndarray) -> None:
        coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
        n, dim = coefficients.shape
        m = dim - n
        self.frame = frame
        U, sigma, Vt = np.linalg.svd(coefficients[:, :n])
        V = Vt.T
        if np.linalg.det(V) < 0:
            V[:, -1] *= -1
            U[:, -1] *= -1
        cosines = np.clip(sigma, 0.0, 1.0)
        sines = np.sqrt(1.0 - cosines**2)
        self.angles = np.arccos(cosines)
        self.orientation = 1 if np.linalg.det(U) >= 0 else -1
        self.star_omega = self.orientation * float(np.prod(cosines))
        self.fs = float(np.max(sines))

        horizontal = np.zeros((n, dim))
        horizontal[:, :n] = V.T
        rotated = U.T @ coefficients
        vertical: List[Optional[np.ndarray]] = [None] * m
        for j in range(min(n, m)):
            w = rotated[j] - cosines[j] * horizontal[j]
            w[:n] = 0.0
            norm = np.linalg.norm(w)
            if norm > 1e-12:
                vertical[j] = w / norm
        for slot in range(m):
            if vertical[slot] is not None:
                continue
            for k in range(n, dim):
                candidate = np.zeros(dim)
                candidate[k] = 1.0
                for chosen in vertical:
                    if chosen is not None:
                        candidate -= (candidate @ chosen) * chosen
                if np.linalg.norm(candidate) > 0.5:
                    vertical[slot] = candidate / np.linalg.norm(candidate)
                    break
        self.reference = np.vstack([horizontal, np.array(vertical)])

        padded = np.zeros(max(n, m))
        padded[: min(n, m)] = self.angles[: min(n, m)]
        self.tangent = np.array(
            [
                np.cos(padded[j]) * self.reference[j] + np.sin(padded[j]) * self.reference[n + j]
                if j < m
                else self.reference[j]
                for j in range(n)
            ]
        )
        self.normal = np.array(
            [
                -np.sin(padded[k]) * self.reference[k] + np.cos(padded[k]) * self.reference[n + k]
                if k < n
                else self.reference[n + k]
                for k in range(m)
            ]
        )

    def __repr__(self) -> str:
        """Returns the principal angles as string"""
        return f"angles: {np.round(self.angles, 12).tolist()}, *Omega: {self.star_omega:.12g}, fs: {self.fs:.12g}"

    @property
    def rank(self) -> int:
        return len(self.angles)

    def omega(self, rows: np.ndarray) -> float:
        """Evaluates Omega = w^1 ^ ... ^ w^n on n vectors given in frame coordinates"""
        rows = np.atleast_2d(rows)
        return float(np.linalg.det(rows[:, : self.rank]))

    def chart(self, rows: np.ndarray) -> np.ndarray:
        """Chart components of vectors given in frame coordinates"""
        return np.asarray(rows) @ self.frame


def plane_angles(g: np.ndarray, frame: np.ndarray, vectors: np.ndarray, tangent_rank: int) -> PrincipalAngles:
    """Principal angles of the plane spanned by `vectors` (chart components) against
    the first `tangent_rank` rows of the g-orthonormal frame"""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[0] != tangent_rank:
        raise PreconditionError(f"Expected {tangent_rank} plane vectors, got {vectors.shape[0]}")
    gram = np.einsum("ab,ia,jb->ij", g, vectors, vectors)
    scale = max(float(np.max(np.abs(np.diag(gram)))), 1e-300)
    if np.linalg.eigvalsh(gram)[0] <= 1e-12 * scale:
        raise RankError("The plane vectors are linearly dependent")
    basis = orthonormalize(g, vectors)[0]
    return PrincipalAngles(np.einsum("ab,ja,Ab->jA", g, basis, frame), frame)


class ConvexityReport:
    """Result of the Hessian probe: tr_L Hess psi against fs(L)^2 + psi"""

    def __init__(
        self,
        scenario: str,
        radius: float,
        samples: int,
        traces: np.ndarray,
        ratios: np.ndarray,
        valid: np.ndarray,
    ) -> None:
        self.scenario = scenario
        self.radius = radius
        self.samples = samples
        self.traces = traces
        self.ratios = ratios
        self.valid = valid
        self.evaluated = int(np.count_nonzero(valid))
        self.skipped = samples - self.evaluated
        self.min_ratio = float(np.min(ratios[valid])) if self.evaluated else float("nan")
        self.violations = int(np.count_nonzero(ratios[valid] <= 0))

    def __repr__(self) -> str:
        """Returns the convexity report as string"""
        return (
            f"scenario: '{self.scenario}', radius: {self.radius:g}, evaluated: {self.evaluated}, "
            f"skipped: {self.skipped}, min ratio: {self.min_ratio:.6f}, violations: {self.violations}"
        )


class ExpansionReport:
    """Residuals of the Fermi-coordinate expansions per radius, with log-log slopes"""

    def __init__(self, radii: Sequence[float], residuals: Dict[str, List[float]]) -> None:
        self.radii = list(radii)
        self.residuals = residuals
        self.slopes: Dict[str, float] = {}
        for name, values in residuals.items():
            if max(values) < EXACT_RESIDUAL:
                self.slopes[name] = float("inf")
            else:
                floor = np.maximum(values, 1e-300)
                self.slopes[name] = float(np.polyfit(np.log(self.radii), np.log(floor), 1)[0])
        self.worst = min(self.slopes, key=lambda name: self.slopes[name])
        self.passed = self.slopes[self.worst] >= EXPANSION_SLOPE

    def __repr__(self) -> str:
        """Returns the expansion table as string"""
        rows = [f"{name}: slope {self.slopes[name]:.3f}, residuals {values}" for name, values in self.residuals.items()]
        return "\n".join(rows)


class TubularChart:
    """Fermi coordinates (x, y) on the tube of radius eps around a MinimalReference.

    x is arc length on Sigma and y are the components along the normal rows of its
    frame, so q = exp_sigma(x)(y^a e_a). Frames at q are the frame of Sigma parallel
    transported along that normal geodesic.
    """

    def __init__(
        self,
        log: Logger,
        ref: MinimalReference,
        eps: float,
        steps: int = 48,
        max_iterations: int = 50,
        tolerance: float = 1e-10,
        verify: bool = True,
    ) -> None:
        self.log = log
        self.ref = ref
        self.metric = ref.ambient
        self.dim = ref.ambient.dim
        self.rank = ref.rank
        self.eps = float(eps)
        self.steps = steps
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        if self.eps <= 0:
            msg = f"{ref.name}: tube radius must be positive, got {eps}"
            self.log.error(msg)
            raise ConfigError(msg)
        self.__grid_s = ref.nodes(GUESS_NODES)
        self.__grid_points = ref.point(self.__grid_s)
        self.__grid_frames = ref.frame(self.__grid_s)
        self.__grid_metric = self.metric.metric(self.__grid_points)
        if verify:
            error = self.round_trip_error(0.9 * self.eps, nodes=8)
            if not error < 1e-6:
                msg = f"{ref.name}: foot points are not unique in the tube of radius {self.eps:g} (round trip {error:.3g})"
                self.log.error(msg)
                raise ConfigError(msg)
        self.log.info(f"{ref.name}: tubular chart with radius {self.eps:g} ready")

    def __repr__(self) -> str:
        """Returns the chart as string"""
        return f"reference: '{self.ref.name}', eps: {self.eps:g}, rank: {self.rank}, steps: {self.steps}"

    @classmethod
    def largest_radius(
        cls, log: Logger, ref: MinimalReference, candidates: Sequence[float], steps: int = 48
    ) -> float:
        """Half of the largest candidate radius at which foot points round-trip on a test grid"""
        chart = cls(log, ref, 2 * max(candidates), steps=steps, verify=False)
        for radius in sorted(candidates, reverse=True):
            if chart.round_trip_error(radius, nodes=16) < 1e-6:
                log.info(f"{ref.name}: foot points converge up to radius {radius:g}, using {radius / 2:g}")
                return radius / 2
        msg = f"{ref.name}: foot points failed for every candidate radius {list(candidates)}"
        log.error(msg)
        raise ConfigError(msg)

    def round_trip_error(self, radius: float, nodes: int = 16) -> float:
        x = self.ref.nodes(nodes) + 0.37 * self.ref.length / nodes
        directions = np.vstack([np.eye(self.rank), -np.eye(self.rank)])
        X = np.repeat(x, len(directions))
        Y = radius * np.tile(directions, (nodes, 1))
        q, _, inside = self.fermi_point(X, Y)
        if not np.all(inside):
            return float("inf")
        foot = self.foot_point(q, strict=False)
        if not np.all(foot.inside):
            return float("inf")
        dx = np.mod(foot.x - X + self.ref.length / 2, self.ref.length) - self.ref.length / 2
        return float(max(np.max(np.abs(dx)), np.max(np.abs(foot.y - Y))))

    def fermi_point(self, x: np.ndarray, y: np.ndarray, frames: bool = False):
        """Shoots normal geodesics: returns q = F(x, y), the transported frames at q
        (or None) and a mask of rows that stayed in the chart"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        base = self.ref.frame(x)
        start = np.einsum("...a,...ad->...d", y, base[..., 1:, :])
        q, _, E, inside, _ = self.metric.integrate(
            self.ref.point(x), start, base if frames else None, 1.0, self.steps
        )
        return q, E, inside

    def foot_point(
        self,
        q: np.ndarray,
        guess: Optional[np.ndarray] = None,
        strict: bool = True,
        frames: bool = False,
        tolerance: Optional[float] = None,
    ) -> FootPoint:
        """Newton shooting for (x, y) with F(x, y) = q; guess holds (x, y) rows"""
        q = np.asarray(q, dtype=float)
        batch = q.shape[:-1]
        target = q.reshape(-1, self.dim)
        count = target.shape[0]
        if guess is None:
            z = self.__initial_guess(target)
        else:
            z = np.array(np.broadcast_to(guess, batch + (self.dim,)), dtype=float).reshape(-1, self.dim)
        limit = self.tolerance if tolerance is None else tolerance
        active = np.ones(count, dtype=bool)
        converged = np.zeros(count, dtype=bool)
        offsets = np.vstack([np.zeros(self.dim), JACOBIAN_STEP * np.eye(self.dim)])
        for _ in range(self.max_iterations):
            rows = np.flatnonzero(active)
            if rows.size == 0:
                break
            trial = z[rows][None, :, :] + offsets[:, None, :]
            image, _, inside = self.fermi_point(trial[..., 0], trial[..., 1:])
            residual = self.metric.wrap(image[0] - target[rows])
            error = np.max(np.abs(residual), axis=-1)
            ok = np.all(inside, axis=0) & np.isfinite(error)
            done = ok & (error < limit)
            lost = ~done & (~ok | (np.linalg.norm(z[rows, 1:], axis=-1) > 2 * self.eps))
            converged[rows[done]] = True
            active[rows[done | lost]] = False
            pending = ~done & ~lost
            if not np.any(pending):
                continue
            jacobian = self.metric.wrap(image[1:, pending] - image[0][pending][None]) / JACOBIAN_STEP
            matrix = np.transpose(jacobian, (1, 2, 0))
            try:
                step = np.linalg.solve(matrix, -residual[pending][..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.einsum("kca,ka->kc", np.linalg.pinv(matrix), -residual[pending])
            step[:, 0] = np.clip(step[:, 0], -self.ref.length / 8, self.ref.length / 8)
            size = np.linalg.norm(step[:, 1:], axis=-1)
            step[:, 1:] *= np.minimum(1.0, 0.5 * self.eps / np.maximum(size, 1e-300))[:, None]
            z[rows[pending]] += step
        inside = converged & (np.linalg.norm(z[:, 1:], axis=-1) < self.eps)
        if strict and not np.all(inside):
            msg = (
                f"{self.ref.name}: {np.count_nonzero(~inside)} of {count} points are outside "
                f"the tube of radius {self.eps:g}"
            )
            self.log.error(msg)
            raise OutsideTubeError(msg)
        frame = None
        if frames:
            frame = np.full((count, self.dim, self.dim), np.nan)
            if np.any(inside):
                frame[inside] = self.fermi_point(z[inside, 0], z[inside, 1:], frames=True)[1]
            frame = frame.reshape(batch + (self.dim, self.dim))
        z[~inside] = np.nan
        return FootPoint(
            np.mod(z[:, 0], self.ref.length).reshape(batch),
            z[:, 1:].reshape(batch + (self.rank,)),
            inside.reshape(batch),
            frame,
        )

    def psi(self, q: np.ndarray, strict: bool = True) -> np.ndarray:
        return self.foot_point(q, strict=strict).psi

    def psi_gradient(self, q: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Metric gradient of psi at q by 4th-order differences of foot-point solves"""
        q = np.asarray(q, dtype=float)
        foot = self.foot_point(q)
        guess = foot.coordinates
        differential = []
        for c in range(self.dim):
            e = np.zeros(self.dim)
            e[c] = h
            values = [
                self.foot_point(q + k * e, guess=guess, tolerance=1e-13).psi for k in (2, 1, -1, -2)
            ]
            differential.append((-values[0] + 8 * values[1] - 8 * values[2] + values[3]) / (12 * h))
        return np.einsum("...ab,...b->...a", self.metric.inverse(q), np.stack(differential, axis=-1))

    def principal_angles(self, q: np.ndarray, vectors: np.ndarray) -> PrincipalAngles:
        q = np.asarray(q, dtype=float)
        foot = self.foot_point(q[None, :], frames=True)
        return plane_angles(self.metric.metric(q), foot.frame[0], vectors, self.ref.dimension)

    def hessian_trace(
        self, x: np.ndarray, y: np.ndarray, coefficients: np.ndarray, step: float = 1e-3
    ) -> Tuple[np.ndarray, np.ndarray]:
        """tr_L Hess psi at q = F(x, y) for planes L given by orthonormal rows in frame
        coordinates (samples, n, dim); second differences along ambient geodesics"""
        q, E, inside = self.fermi_point(x, y, frames=True)
        vectors = np.einsum("snA,sAa->sna", coefficients, E)
        samples, n = vectors.shape[:2]
        offsets = np.array([2.0, 1.0, -1.0, -2.0]) * step
        base = np.broadcast_to(q[:, None, None, :], (samples, n, 4, self.dim))
        velocity = vectors[:, :, None, :] * offsets[None, None, :, None]
        ends, _, _, stayed, _ = self.metric.integrate(base, velocity, None, 1.0, 4)
        guess = np.broadcast_to(
            np.concatenate([np.asarray(x)[:, None], y], axis=-1)[:, None, None, :], ends.shape
        )
        foot = self.foot_point(ends, guess=guess, strict=False, tolerance=min(self.tolerance, 1e-13))
        psi = foot.psi
        psi0 = np.sum(y**2, axis=-1)[:, None]
        hessian = (-psi[..., 0] + 16 * psi[..., 1] - 30 * psi0 + 16 * psi[..., 2] - psi[..., 3]) / (12 * step**2)
        valid = inside & np.all(stayed & foot.inside, axis=(1, 2))
        return np.where(valid, hessian.sum(axis=1), np.nan), valid

    def hessian_psi_probe(
        self, samples: int, seed: int = 0, radius: Optional[float] = None, step: float = 1e-3
    ) -> ConvexityReport:
        """Samples points of the tube (Sobol) and random lines through them"""
        radius = self.eps if radius is None else float(radius)
        if radius > self.eps:
            msg = f"{self.ref.name}: probe radius {radius:g} exceeds the tube radius {self.eps:g}"
            self.log.error(msg)
            raise PreconditionError(msg)
        sobol = qmc.Sobol(d=3, scramble=True, seed=seed)
        u = sobol.random_base2(int(np.ceil(np.log2(max(samples, 2)))))[:samples]
        rng = np.random.default_rng(seed)
        x = u[:, 0] * self.ref.length
        rho = radius * (0.01 + 0.99 * u[:, 1])
        if self.rank == 1:
            directions = np.where(u[:, 2] < 0.5, 1.0, -1.0)[:, None]
        elif self.rank == 2:
            angle = 2 * np.pi * u[:, 2]
            directions = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        else:
            directions = rng.standard_normal((samples, self.rank))
            directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        y = rho[:, None] * directions
        raw = rng.standard_normal((samples, self.dim, 1))
        coefficients = np.swapaxes(np.linalg.qr(raw)[0], -1, -2)
        traces = np.full(samples, np.nan)
        valid = np.zeros(samples, dtype=bool)
        for start in range(0, samples, 256):
            chunk = slice(start, start + 256)
            traces[chunk], valid[chunk] = self.hessian_trace(x[chunk], y[chunk], coefficients[chunk], step)
        cosines = np.abs(coefficients[:, 0, 0])
        fs2 = 1.0 - np.minimum(cosines, 1.0) ** 2
        ratios = traces / (fs2 + rho**2)
        report = ConvexityReport(self.ref.name, radius, samples, traces, ratios, valid)
        self.log.info(f"{self.ref.name}: hessian probe {report}")
        return report

    def expansion_check(
        self, x0: float = 0.0, radii: Sequence[float] = (0.2, 0.1, 0.05), strict: bool = True
    ) -> ExpansionReport:
        """Compares the exact Fermi metric, coordinate frame and connection forms with
        their expansions around p = sigma(x0) on spheres of the given radii"""
        if not self.metric.analytic:
            raise PreconditionError("Expansion checks need analytic metric derivatives")
        if np.max(np.abs(self.ref.connection)) > 1e-10:
            raise PreconditionError("Expansion checks need a flat normal bundle along Sigma")
        h = DIFFERENCE_STEP
        h_p = self.ref.second_fundamental_form(np.array(x0))
        dh_p = (
            -self.ref.second_fundamental_form(np.array(x0 + 2 * h))
            + 8 * self.ref.second_fundamental_form(np.array(x0 + h))
            - 8 * self.ref.second_fundamental_form(np.array(x0 - h))
            + self.ref.second_fundamental_form(np.array(x0 - 2 * h))
        ) / (12 * h)
        R_p = self.ref.curvature(np.array(x0))
        directions = self.__expansion_directions()
        n = slice(1, None)
        residuals: Dict[str, List[float]] = {
            "metric": [],
            "coordinate_frame": [],
            "second_fundamental_form": [],
            "tangent_rotation": [],
            "normal_rotation": [],
        }
        for rho in radii:
            z = rho * directions
            z[:, 0] += x0
            fermi_metric, pairing, theta = self.fermi_data(z)
            xi = z[:, 0] - x0
            y = z[:, 1:]
            h_x = self.ref.second_fundamental_form(z[:, 0])
            R_x = self.ref.curvature(z[:, 0])

            expected = np.broadcast_to(np.eye(self.dim), fermi_metric.shape).copy()
            expected[:, 0, 0] = (
                1.0
                - 2 * np.einsum("kb,kb->k", y, h_x)
                - np.einsum("km,kn,kmn->k", y, y, R_x[:, 0, n, 0, n] - np.einsum("km,kn->kmn", h_x, h_x))
            )
            residuals["metric"].append(float(np.max(np.abs(fermi_metric - expected))))

            expected = np.broadcast_to(np.eye(self.dim), pairing.shape).copy()
            expected[:, 0, 0] = 1.0 - y @ h_p
            residuals["coordinate_frame"].append(float(np.max(np.abs(pairing - expected))))

            expected = (
                h_p[None, :]
                + xi[:, None] * dh_p[None, :]
                + np.einsum("kb,ab->ka", y, R_p[n, 0, n, 0] + np.outer(h_p, h_p))
            )
            residuals["second_fundamental_form"].append(float(np.max(np.abs(theta[:, 0, n, 0] - expected))))

            expected = 0.5 * np.einsum("ka,ab->kb", y, R_p[0, 0, n, n])
            residuals["tangent_rotation"].append(float(np.max(np.abs(theta[:, 0, 0, n] - expected))))

            worst = np.max(np.abs(theta[:, 0, n, n] - 0.5 * np.einsum("kc,acb->kab", y, R_p[n, 0, n, n])))
            worst = max(worst, np.max(np.abs(theta[:, n, n, 0] - np.einsum("kc,abc->kba", y, R_p[n, n, n, 0]))))
            worst = max(
                worst, np.max(np.abs(theta[:, n, n, n] - 0.5 * np.einsum("kd,abdc->kbac", y, R_p[n, n, n, n])))
            )
            residuals["normal_rotation"].append(float(worst))
        report = ExpansionReport(radii, residuals)
        self.log.info(f"{self.ref.name}: expansion check at x = {x0:g}, worst term '{report.worst}'")
        if strict and not report.passed:
            msg = (
                f"{self.ref.name}: expansion residual '{report.worst}' decays with slope "
                f"{report.slopes[report.worst]:.3f} < {EXPANSION_SLOPE}"
            )
            self.log.error(msg)
            raise ExpansionMismatchError(msg)
        return report

    def __expansion_directions(self) -> np.ndarray:
        axes = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
        diagonals = np.array(list(product((1.0, -1.0), repeat=self.dim))) / np.sqrt(self.dim)
        return np.vstack([axes, diagonals])

    def fermi_data(self, z: np.ndarray):
        """Fermi metric g(d_D, d_E), pairings <d_D, e_A> and connection forms
        theta[A, B, C] = <nabla_{e_C} e_A, e_B> at Fermi points z"""
        count = z.shape[0]
        delta = DIFFERENCE_STEP
        offsets = np.array([2.0, 1.0, -1.0, -2.0]) * delta
        stencil = z[None, None] + offsets[:, None, None, None] * np.eye(self.dim)[None, :, None, :]
        points = np.concatenate([z[None], stencil.reshape(-1, count, self.dim)], axis=0)
        q, E, inside = self.fermi_point(points[..., 0], points[..., 1:], frames=True)
        if not np.all(inside):
            raise PreconditionError("Expansion radius leaves the chart")
        weights = np.array([-1.0, 8.0, -8.0, 1.0]) / (12 * delta)
        q0, E0 = q[0], E[0]
        shifted = self.metric.wrap(q[1:].reshape(4, self.dim, count, self.dim) - q0)
        jacobian = np.einsum("s,sDka->kDa", weights, shifted)
        d_frame = np.einsum("s,sDkAa->kDAa", weights, E[1:].reshape(4, self.dim, count, self.dim, self.dim))
        g = self.metric.metric(q0)
        gamma = self.metric.christoffel(q0)
        nabla = d_frame + np.einsum("kabc,kDb,kAc->kDAa", gamma, jacobian, E0)
        change = E0 @ np.linalg.inv(jacobian)
        along = np.einsum("kCD,kDAa->kACa", change, nabla)
        theta = np.einsum("kACa,kab,kBb->kABC", along, g, E0)
        fermi_metric = np.einsum("kDa,kab,kEb->kDE", jacobian, g, jacobian)
        pairing = np.einsum("kDa,kab,kAb->kDA", jacobian, g, E0)
        return fermi_metric, pairing, theta

    def __initial_guess(self, target: np.ndarray) -> np.ndarray:
        """Nearest Sigma grid node, then its frame components of the offset"""
        guesses = []
        for start in range(0, target.shape[0], 2048):
            chunk = target[start : start + 2048]
            diff = self.metric.wrap(chunk[:, None, :] - self.__grid_points[None])
            distance = np.einsum("kga,gab,kgb->kg", diff, self.__grid_metric, diff)
            nearest = np.argmin(distance, axis=1)
            offset = diff[np.arange(len(chunk)), nearest]
            z = np.einsum(
                "kab,kAb,ka->kA", self.__grid_metric[nearest], self.__grid_frames[nearest], offset
            )
            z[:, 0] += self.__grid_s[nearest]
            guesses.append(z)
        return np.vstack(guesses) if guesses else np.zeros((0, self.dim))

from logging import Logger
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sparse
from numpy.polynomial import chebyshev
from scipy.sparse.linalg import expm_multiply, splu
from scipy.stats import linregress

from helpers.Exceptions import (
    BadUserInput,
    BlowupError,
    DecayFitError,
    FlowTermination,
    LeftGraphicalError,
    LeftTubeError,
    OutsideTubeError,
    PreconditionError,
    ReparametrizeFirstError,
    SolverError,
)
from helpers.FormsHelper import DiscreteCurve, curvature_vector, periodic_derivative, reparametrize
from helpers.GeometryHelper import ChartMetric
from helpers.StabilityHelper import JacobiOperator, StabilityAnalyzer
from helpers.TraceHelper import FlowTrace, combined_column
from helpers.TubularHelper import FootPoint, TubularChart

PARAMETRIC = "parametric"
GRAPHICAL = "graphical"
LINEARIZED = "linearized"
REPRESENTATIONS = (PARAMETRIC, GRAPHICAL, LINEARIZED)
SCHEMES = ("backward", "exponential")
EXPLICIT = "explicit"
SEMI_IMPLICIT = "semi-implicit"
STEPPINGS = (EXPLICIT, SEMI_IMPLICIT)

CONVERGED_PSI = 1e-10
CONVERGED_II = 1e-6
GRAPHICAL_LIMIT = 0.5
SHOT_STEP = 1e-2
SHOT_STEPS = 8
FOOT_TOLERANCE = 1e-13
CHEBYSHEV_NODES = {1: 16, 2: 10}
MIN_REFINEMENT_LEVELS = 3
REFINEMENT_SLOPE = 0.8


class NormalSection:
    """Normal graph y over Sigma: components y[k, a] along the normal frame at x[k]"""

    def __init__(self, x: np.ndarray, y: np.ndarray, length: float) -> None:
        self.x = np.asarray(x, dtype=float)
        self.y = np.array(y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        self.length = float(length)
        if self.y.shape[0] != self.x.shape[0]:
            raise PreconditionError("A normal section needs one value per grid node")

    def __repr__(self) -> str:
        """Returns the section summary as string"""
        return f"nodes: {self.nodes}, rank: {self.rank}, sup|y|: {np.max(np.abs(self.y)):.6g}"

    @property
    def nodes(self) -> int:
        return self.y.shape[0]

    @property
    def rank(self) -> int:
        return self.y.shape[1]

    @property
    def slope(self) -> np.ndarray:
        """dy/dx by periodic 4th-order differences"""
        return periodic_derivative(self.y, 1) / self.length

    def moved(self, y: np.ndarray) -> "NormalSection":
        return NormalSection(self.x, y, self.length)


def damped_velocity(velocity: np.ndarray, speed: np.ndarray, dt: float) -> np.ndarray:
    """Velocity of the stabilized step (I - dt s D2) X_new = X + dt (H - s D2 X), solved mode by
    mode; D2 is the periodic 4th-order second difference and s = max 1 / |X_u|^2"""
    nodes = len(velocity)
    theta = 2 * np.pi * np.arange(nodes // 2 + 1) / nodes
    symbol = (30 - 32 * np.cos(theta) + 2 * np.cos(2 * theta)) * nodes**2 / 12
    sigma = 1.0 / float(np.min(speed)) ** 2
    spectrum = np.fft.rfft(velocity, axis=0) / (1 + dt * sigma * symbol)[:, None]
    return np.fft.irfft(spectrum, n=nodes, axis=0)


class FlowConfig:
    """Settings of one flow run"""

    def __init__(
        self,
        scenario: str,
        representation: str = PARAMETRIC,
        nodes: int = 256,
        dt: Optional[float] = None,
        t_final: float = 25.0,
        amplitude: float = 0.02,
        modes: Sequence[int] = (0, 1, 2),
        monitor_every: float = 0.05,
        fit_window: Tuple[float, float] = (5.0, 15.0),
        cfl: float = 0.2,
        kappa: float = 0.05,
        blowup_threshold: float = 1e3,
        reparam_every: int = 20,
        c6_candidates: Sequence[float] = (1.0, 2.0, 5.0, 10.0),
        scheme: str = "backward",
        gate: bool = True,
        stepping: str = EXPLICIT,
    ) -> None:
        if representation not in REPRESENTATIONS:
            raise BadUserInput(f"Unknown representation '{representation}', use one of {list(REPRESENTATIONS)}")
        if scheme not in SCHEMES:
            raise BadUserInput(f"Unknown linearized scheme '{scheme}', use one of {list(SCHEMES)}")
        if stepping not in STEPPINGS:
            raise BadUserInput(f"Unknown parametric stepping '{stepping}', use one of {list(STEPPINGS)}")
        if nodes < 16:
            raise BadUserInput(f"A flow needs at least 16 nodes, got {nodes}")
        if dt is not None and dt <= 0:
            raise BadUserInput(f"Time step must be positive, got {dt}")
        if t_final <= 0 or monitor_every <= 0 or cfl <= 0:
            raise BadUserInput("Horizon, monitor cadence and CFL number must be positive")
        if not modes:
            raise BadUserInput("The perturbation needs at least one mode")
        self.scenario = scenario
        self.representation = representation
        self.nodes = int(nodes)
        self.dt = dt
        self.t_final = float(t_final)
        self.amplitude = float(amplitude)
        self.modes = [int(k) for k in modes]
        self.monitor_every = float(monitor_every)
        self.fit_window = (float(fit_window[0]), float(fit_window[1]))
        self.cfl = float(cfl)
        self.kappa = float(kappa)
        self.blowup_threshold = float(blowup_threshold)
        self.reparam_every = max(int(reparam_every), 1)
        self.c6_candidates = [float(c) for c in c6_candidates]
        self.scheme = scheme
        self.gate = gate
        self.stepping = stepping

    def __repr__(self) -> str:
        """Returns the flow settings as string"""
        dt = "cfl" if self.dt is None else f"{self.dt:g}"
        return (
            f"scenario: '{self.scenario}', representation: {self.representation}, nodes: {self.nodes}, "
            f"dt: {dt}, t_final: {self.t_final:g}, amplitude: {self.amplitude:g}, modes: {self.modes}"
        )

    def to_record(self) -> Dict:
        return {
            "scenario": self.scenario,
            "representation": self.representation,
            "nodes": self.nodes,
            "dt": self.dt,
            "t_final": self.t_final,
            "amplitude": self.amplitude,
            "modes": self.modes,
            "monitor_every": self.monitor_every,
            "fit_window": list(self.fit_window),
            "cfl": self.cfl,
            "kappa": self.kappa,
            "scheme": self.scheme,
            "stepping": self.stepping,
        }

    def with_representation(self, representation: str) -> "FlowConfig":
        return FlowConfig(
            self.scenario,
            representation=representation,
            nodes=self.nodes,
            dt=self.dt,
            t_final=self.t_final,
            amplitude=self.amplitude,
            modes=self.modes,
            monitor_every=self.monitor_every,
            fit_window=self.fit_window,
            cfl=self.cfl,
            kappa=self.kappa,
            blowup_threshold=self.blowup_threshold,
            reparam_every=self.reparam_every,
            c6_candidates=self.c6_candidates,
            scheme=self.scheme,
            gate=self.gate,
            stepping=self.stepping,
        )


class FermiMetricTable:
    """Exact Fermi metric and tangent pairing <d_D, e_0> at fixed Sigma nodes,
    as Chebyshev series in the normal coordinates on [-eps, eps]^m"""

    def __init__(self, tc: TubularChart, x: np.ndarray, degree: Optional[int] = None) -> None:
        self.tc = tc
        self.eps = tc.eps
        self.rank = tc.rank
        self.dim = tc.dim
        self.count = CHEBYSHEV_NODES.get(self.rank, 8) if degree is None else degree
        self.nodes = np.cos(np.pi * (np.arange(self.count) + 0.5) / self.count)
        grids = np.meshgrid(*([self.nodes] * self.rank), indexing="ij")
        offsets = self.eps * np.stack([grid.ravel() for grid in grids], axis=-1)
        points = len(offsets)
        z = np.zeros((len(x), points, self.dim))
        z[..., 0] = np.asarray(x)[:, None]
        z[..., 1:] = offsets[None]
        flat = z.reshape(-1, self.dim)
        metric, pairing = [], []
        for start in range(0, len(flat), 2048):
            g, p, _ = tc.fermi_data(flat[start : start + 2048])
            metric.append(g)
            pairing.append(p[:, :, 0])
        values = np.concatenate(
            [np.concatenate(metric).reshape(len(flat), -1), np.concatenate(pairing)], axis=-1
        )
        values = values.reshape((len(x),) + (self.count,) * self.rank + (values.shape[-1],))
        inverse = np.linalg.inv(chebyshev.chebvander(self.nodes, self.count - 1))
        for axis in range(1, self.rank + 1):
            values = np.moveaxis(np.tensordot(inverse, values, axes=([1], [axis])), 0, axis)
        self.coefficients = values

    def __repr__(self) -> str:
        """Returns the table size as string"""
        return f"nodes: {self.coefficients.shape[0]}, chebyshev: {self.count}^{self.rank}, eps: {self.eps:g}"

    def evaluate(self, y: np.ndarray):
        """Fermi metric G[k, D, E], its normal derivatives dG[k, a, D, E] and <d_D, e_0>[k, D]"""
        if np.max(np.linalg.norm(y, axis=-1)) > self.eps:
            raise LeftTubeError(f"The section left the tube of radius {self.eps:g}")
        t = np.asarray(y) / self.eps
        values = self.__contract(t, None)
        size = self.dim * self.dim
        G = values[:, :size].reshape(-1, self.dim, self.dim)
        derivative = np.stack(
            [self.__contract(t, a)[:, :size].reshape(-1, self.dim, self.dim) for a in range(self.rank)], axis=1
        )
        return G, derivative / self.eps, values[:, size:]

    def __contract(self, t: np.ndarray, axis: Optional[int]) -> np.ndarray:
        values = self.coefficients
        for a in range(self.rank):
            if a == axis:
                values = chebyshev.chebder(values, axis=1)
            basis = chebyshev.chebvander(t[:, a], values.shape[1] - 1)
            values = np.einsum("kp,kp...->k...", basis, values)
        return values


class DecayFit:
    """Least-squares slope of log(field) against t"""

    def __init__(self, field: str, rate: float, r2: float, stderr: float, window: Tuple[float, float]) -> None:
        self.field = field
        self.rate = rate
        self.r2 = r2
        self.stderr = stderr
        self.window = window

    def __repr__(self) -> str:
        """Returns the fit as string"""
        return (
            f"field: {self.field}, rate: {self.rate:.6f} +- {self.stderr:.2g}, r2: {self.r2:.6f}, "
            f"window: [{self.window[0]:g}, {self.window[1]:g}]"
        )

    def to_record(self) -> Dict:
        return {"rate": self.rate, "r2": self.r2, "stderr": self.stderr, "window": list(self.window)}


def fit_decay(trace: FlowTrace, field: str, window: Tuple[float, float]) -> DecayFit:
    """Exponential decay rate of a positive monitor; the window is cut at the first non-positive value"""
    t = trace.column("t")
    values = trace.column(field)
    inside = (t >= window[0]) & (t <= window[1])
    t, values = t[inside], values[inside]
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        trace.log.warning(f"{trace.scenario}: {field} is not positive at t = {t[bad[0]]:.6g}, shrinking the fit window")
        t, values = t[: bad[0]], values[: bad[0]]
    if len(t) < 3:
        msg = f"{trace.scenario}: not enough positive samples of {field} in [{window[0]:g}, {window[1]:g}]"
        trace.log.error(msg)
        raise DecayFitError(msg)
    result = linregress(t, np.log(values))
    fit = DecayFit(field, -float(result.slope), float(result.rvalue**2), float(result.stderr), (float(t[0]), float(t[-1])))
    trace.rates[field] = fit.to_record()
    trace.log.info(f"{trace.scenario}: decay fit {fit}")
    return fit


class RefinementLevel:
    def __init__(self, nodes: int, dt: float, residual: float) -> None:
        self.nodes = nodes
        self.dt = dt
        self.residual = residual

    def __repr__(self) -> str:
        """Returns the level as string"""
        return f"N: {self.nodes}, dt: {self.dt:.3g}, residual: {self.residual:.6g}"


class RefinementReport:
    """Residual of the *Omega evolution equation across refinement levels"""

    def __init__(self, scenario: str, time: float, levels: List[RefinementLevel]) -> None:
        self.scenario = scenario
        self.time = time
        self.levels = levels
        dts = np.array([level.dt for level in levels])
        residuals = np.maximum([level.residual for level in levels], 1e-300)
        self.slope = float(linregress(np.log(dts), np.log(residuals)).slope)
        self.passed = self.slope >= REFINEMENT_SLOPE

    def __repr__(self) -> str:
        """Returns the refinement table as string"""
        rows = [f"{level}" for level in self.levels]
        rows.append(f"slope: {self.slope:.3f} ({'passed' if self.passed else 'failed'})")
        return "\n".join(rows)


class FlowEngine:
    """Mean curvature flow of closed curves near a minimal reference curve.

    `tc` may be None for scenarios without a reference (a circle in the flat plane);
    the reference monitors are then NaN and only the parametric form is available.
    """

    def __init__(
        self,
        log: Logger,
        metric: ChartMetric,
        tc: Optional[TubularChart] = None,
        margin_tolerance: float = 1e-6,
        minimality_tolerance: float = 1e-8,
    ) -> None:
        self.log = log
        self.metric = metric
        self.tc = tc
        self.margin_tolerance = margin_tolerance
        self.minimality_tolerance = minimality_tolerance
        self.name = tc.ref.name if tc is not None else metric.name
        self.__tables: Dict[int, FermiMetricTable] = {}
        self.__jacobi: Dict[int, JacobiOperator] = {}
        self.__factors: Dict[Tuple[int, float], object] = {}

    def __repr__(self) -> str:
        """Returns the engine as string"""
        return f"scenario: '{self.name}', metric: '{self.metric.name}', tube: {self.tc is not None}"

    def initial_section(self, nodes: int, amplitude: float, modes: Sequence[int]) -> NormalSection:
        """amplitude times the mean of cos(2 pi k x / length) over the modes; a second
        normal component, if any, gets the matching sines"""
        tc = self.__require_tube("an initial section")
        x = tc.ref.nodes(nodes)
        phase = 2 * np.pi * np.multiply.outer(x / tc.ref.length, np.asarray(modes, dtype=float))
        y = np.zeros((nodes, tc.rank))
        y[:, 0] = amplitude * np.mean(np.cos(phase), axis=1)
        if tc.rank > 1:
            y[:, 1] = amplitude * np.mean(np.sin(phase), axis=1)
        return NormalSection(x, y, tc.ref.length)

    def section_curve(self, s: NormalSection) -> DiscreteCurve:
        """The curve x -> F(x, y(x)) in chart coordinates"""
        tc = self.__require_tube("a section curve")
        q, _, inside = tc.fermi_point(s.x, s.y)
        if not np.all(inside):
            raise LeftTubeError(f"{self.name}: the section leaves the chart")
        shift = tc.ref.point(np.array(tc.ref.length)) - tc.ref.point(np.array(0.0))
        return DiscreteCurve(q, shift)

    def step_parametric(
        self, c: DiscreteCurve, dt: float, blowup_threshold: float = 1e3, stepping: str = EXPLICIT
    ) -> DiscreteCurve:
        """One step of d/dt X = H at every node, explicit or with the stiff part damped"""
        _, speed, _, kappa = curvature_vector(self.metric, c)
        norm = np.sqrt(np.einsum("kab,ka,kb->k", self.metric.metric(c.points), kappa, kappa))
        if not np.all(np.isfinite(norm)) or np.max(norm) > blowup_threshold:
            raise BlowupError(f"{self.name}: sup|II| = {np.max(norm):.6g} exceeds {blowup_threshold:g}")
        if stepping == SEMI_IMPLICIT:
            kappa = damped_velocity(kappa, speed, dt)
        return c.moved(dt * kappa)

    def graphical_velocity(self, s: NormalSection):
        """d/dt y of the graph flow and *Omega per node"""
        table = self.__table(s)
        p = s.slope
        G, dG, pairing = table.evaluate(s.y)
        n = slice(1, None)
        along = G[:, n, 0] + np.einsum("kab,kb->ka", G[:, n, n], p)
        L2 = G[:, 0, 0] + 2 * np.einsum("ka,ka->k", G[:, 0, n], p) + np.einsum("ka,kab,kb->k", p, G[:, n, n], p)
        if np.any(L2 <= 0):
            raise LeftGraphicalError(f"{self.name}: the graph tangent degenerates")
        L = np.sqrt(L2)
        momentum = along / L[:, None]
        force = (
            dG[:, :, 0, 0]
            + 2 * np.einsum("kcb,kb->kc", dG[:, :, 0, n], p)
            + np.einsum("ka,kcab,kb->kc", p, dG[:, :, n, n], p)
        ) / (2 * L[:, None])
        normal_metric = G[:, n, n] - np.einsum("ka,kb->kab", along, along) / L2[:, None, None]
        euler_lagrange = periodic_derivative(momentum, 1) / s.length - force
        velocity = np.linalg.solve(normal_metric, euler_lagrange[..., None])[..., 0] / L[:, None]
        star_omega = (pairing[:, 0] + np.einsum("ka,ka->k", p, pairing[:, n])) / L
        return velocity, star_omega

    def step_graphical(self, s: NormalSection, dt: float, blowup_threshold: float = 1e3) -> NormalSection:
        """One explicit step of the graph equation with the exact Fermi metric"""
        velocity, star_omega = self.graphical_velocity(s)
        if np.min(star_omega) <= GRAPHICAL_LIMIT:
            raise LeftGraphicalError(f"{self.name}: min *Omega = {np.min(star_omega):.6g} is not above 1/2")
        if not np.all(np.isfinite(velocity)) or np.max(np.abs(velocity)) > blowup_threshold:
            raise BlowupError(f"{self.name}: graph velocity exceeds {blowup_threshold:g}")
        return s.moved(s.y + dt * velocity)

    def step_linearized(self, s: NormalSection, dt: float, scheme: str = "backward") -> NormalSection:
        """(I + dt J) y_new = y, or y_new = exp(-dt J) y for the exponential scheme"""
        operator = self.jacobi_operator(s.nodes)
        y = s.y.ravel()
        if scheme == "exponential":
            return s.moved(expm_multiply(-dt * operator.matrix.tocsc(), y).reshape(s.y.shape))
        if scheme != "backward":
            raise BadUserInput(f"Unknown linearized scheme '{scheme}'")
        key = (s.nodes, round(float(dt), 12))
        if key not in self.__factors:
            system = (sparse.identity(operator.size, format="csc") + key[1] * operator.matrix).tocsc()
            try:
                self.__factors[key] = splu(system)
            except RuntimeError as e:
                msg = f"{self.name}: linearized step with dt = {dt:g} is singular: {e}"
                self.log.error(msg)
                raise SolverError(msg) from e
        solution = self.__factors[key].solve(y)
        if not np.all(np.isfinite(solution)):
            raise SolverError(f"{self.name}: linearized step produced non-finite values")
        return s.moved(solution.reshape(s.y.shape))

    def jacobi_operator(self, nodes: int) -> JacobiOperator:
        if nodes not in self.__jacobi:
            tc = self.__require_tube("the linearized flow")
            analyzer = StabilityAnalyzer(self.log, tc, self.margin_tolerance, self.minimality_tolerance)
            self.__jacobi[nodes] = analyzer.jacobi_operator(nodes)
        return self.__jacobi[nodes]

    def monitors(
        self,
        t: float,
        c: DiscreteCurve,
        c6_candidates: Sequence[float] = (1.0, 2.0, 5.0, 10.0),
        guess: Optional[np.ndarray] = None,
    ) -> Tuple[Dict[str, float], Optional[FootPoint]]:
        """One trace row; arc-length trapezoid quadrature over the closed curve"""
        return self.__row(t, self.__node_values(c, guess), c6_candidates)

    def __node_values(self, c: DiscreteCurve, guess: Optional[np.ndarray]) -> Dict:
        g, speed, tangent, kappa = curvature_vector(self.metric, c)
        values = {"weights": speed / c.nodes, "kappa2": np.einsum("kab,ka,kb->k", g, kappa, kappa), "foot": None}
        if self.tc is None:
            return values
        foot = self.tc.foot_point(c.points, guess=guess, strict=True, frames=True)
        star_omega = np.einsum("kab,ka,kb->k", g, tangent, foot.frame[:, 0, :])
        h_p = self.tc.ref.second_fundamental_form(foot.x)
        normal_kappa = np.einsum("kab,ka,kAb->kA", g, kappa, foot.frame[:, 1:, :])
        pairing = star_omega**2 * np.einsum("ka,ka->k", h_p, normal_kappa)
        values.update(
            {
                "foot": foot,
                "star_omega": star_omega,
                "psi": foot.psi,
                "difference": np.maximum(values["kappa2"] - 2 * pairing + np.sum(h_p**2, axis=-1), 0.0),
            }
        )
        return values

    @staticmethod
    def __row(t: float, values: Dict, c6_candidates: Sequence[float]) -> Tuple[Dict[str, float], Optional[FootPoint]]:
        weights = values["weights"]
        row = {
            "t": t,
            "volume": float(np.sum(weights)),
            "sup_mean_curvature": float(np.sqrt(np.max(values["kappa2"]))),
        }
        if values["foot"] is None:
            for name in ("psi_max", "min_star_omega", "max_one_minus_star_omega", "sup_ii_difference", "l2_ii_difference"):
                row[name] = float("nan")
            for c6 in c6_candidates:
                row[combined_column(c6)] = float("nan")
            return row, None
        star_omega, psi, difference = values["star_omega"], values["psi"], values["difference"]
        row.update(
            {
                "psi_max": float(np.max(psi)),
                "min_star_omega": float(np.min(star_omega)),
                "max_one_minus_star_omega": float(np.max(1.0 - star_omega)),
                "sup_ii_difference": float(np.sqrt(np.max(difference))),
                "l2_ii_difference": float(np.sum(weights * difference)),
            }
        )
        for c6 in c6_candidates:
            row[combined_column(c6)] = float(np.max(1.0 - star_omega + c6 * psi))
        return row, values["foot"]

    def time_step(self, config: FlowConfig, state: Union[DiscreteCurve, NormalSection]) -> float:
        """CFL bound CFL * (min node spacing)^2, capped by the configured step. The implicit
        linearized step and the semi-implicit parametric step use CFL * spacing; the linearized
        one is divided evenly into the monitor cadence."""
        if config.representation == LINEARIZED:
            step = config.dt if config.dt is not None else config.cfl * (self.tc.ref.length / state.nodes)
            return config.monitor_every / np.ceil(config.monitor_every / step - 1e-9)
        if isinstance(state, NormalSection):
            G, _, _ = self.__table(state).evaluate(state.y)
            p = state.slope
            n = slice(1, None)
            L2 = G[:, 0, 0] + 2 * np.einsum("ka,ka->k", G[:, 0, n], p) + np.einsum("ka,kab,kb->k", p, G[:, n, n], p)
            spacing = float(np.min(np.sqrt(L2))) * state.length / state.nodes
        else:
            velocity = state.velocity()
            speed = np.sqrt(np.einsum("kab,ka,kb->k", self.metric.metric(state.points), velocity, velocity))
            spacing = float(np.min(speed)) / state.nodes
        if config.stepping == SEMI_IMPLICIT and isinstance(state, DiscreteCurve):
            bound = config.cfl * spacing
        else:
            bound = config.cfl * spacing**2
        return bound if config.dt is None else min(config.dt, bound)

    def run(
        self, config: FlowConfig, initial: Optional[Union[DiscreteCurve, NormalSection]] = None
    ) -> FlowTrace:
        """Steps the flow until convergence, the horizon or a termination event"""
        if self.tc is None and config.representation != PARAMETRIC:
            raise PreconditionError(f"{self.name}: the {config.representation} flow needs a reference curve")
        if initial is None:
            initial = self.initial_section(config.nodes, config.amplitude, config.modes)
        section = initial if isinstance(initial, NormalSection) else None
        curve = initial if isinstance(initial, DiscreteCurve) else None
        if config.representation == PARAMETRIC and curve is None:
            curve = self.section_curve(section)
        if config.representation != PARAMETRIC and section is None:
            raise PreconditionError(f"The {config.representation} flow starts from a normal section")

        trace = FlowTrace(self.log, config.scenario, config.representation, config.c6_candidates, 0.0)
        self.log.info(f"{config.scenario}: starting flow {config}")
        t = 0.0
        steps = 0
        next_sample = 0.0
        guess = None
        largest_dt = 0.0
        bound = np.inf
        try:
            while True:
                if t >= next_sample - 1e-12 or t >= config.t_final - 1e-12:
                    if curve is None or config.representation != PARAMETRIC:
                        curve = self.section_curve(section)
                    try:
                        values = self.__node_values(curve, guess)
                    except OutsideTubeError as e:
                        raise LeftTubeError(str(e)) from e
                    row, foot = self.__row(t, values, config.c6_candidates)
                    guess = None if foot is None else foot.coordinates
                    if steps == 0 and config.gate and foot is not None:
                        self.__check_smallness(config, values)
                    trace.append(row)
                    next_sample = config.monitor_every * (np.floor(t / config.monitor_every + 1e-9) + 1)
                    if self.tc is not None and row["psi_max"] < CONVERGED_PSI and row["sup_ii_difference"] < CONVERGED_II:
                        trace.terminate("converged")
                        break
                    if t >= config.t_final - 1e-12:
                        trace.terminate("horizon")
                        break
                if steps % config.reparam_every == 0:
                    bound = self.time_step(config, curve if config.representation == PARAMETRIC else section)
                dt = min(bound, next_sample - t, config.t_final - t)
                largest_dt = max(largest_dt, dt)
                if config.representation == PARAMETRIC:
                    curve = self.__parametric_step(curve, dt, config.blowup_threshold, config.stepping)
                    if (steps + 1) % config.reparam_every == 0:
                        curve = reparametrize(self.metric, curve)
                elif config.representation == GRAPHICAL:
                    section = self.step_graphical(section, dt, config.blowup_threshold)
                else:
                    section = self.step_linearized(section, dt, config.scheme)
                t += dt
                steps += 1
        except FlowTermination as e:
            self.log.warning(f"{config.scenario}: {e}")
            trace.terminate(e.reason)
        trace.dt = largest_dt
        self.log.info(f"{config.scenario}: {steps} steps, {trace}")
        return trace

    def omega_evolution_residual(self, c: DiscreteCurve, dt: float) -> float:
        """sup over the nodes of |d/dt *Omega - (Lap *Omega + *Omega |II|^2 - 2 <II, nabla_T E_0>
        - <T, nabla^2_{T,T} E_0>)| for curves, from two raw parametric steps"""
        tc = self.__require_tube("the *Omega evolution residual")
        previous = c
        current = self.step_parametric(previous, dt, np.inf)
        following = self.step_parametric(current, dt, np.inf)
        before = self.__star_omega(previous)
        after = self.__star_omega(following)
        lhs = (after - before) / (2 * dt)

        g, speed, tangent, kappa = curvature_vector(self.metric, current)
        foot = tc.foot_point(current.points, strict=True, frames=True, tolerance=FOOT_TOLERANCE)
        E = foot.frame
        star_omega = np.einsum("kab,ka,kb->k", g, tangent, E[:, 0, :])
        laplacian = periodic_derivative(periodic_derivative(star_omega, 1) / speed, 1) / speed
        kappa2 = np.einsum("kab,ka,kb->k", g, kappa, kappa)

        offsets = np.array([2.0, 1.0, -1.0, -2.0]) * SHOT_STEP
        count, dim = current.points.shape
        base = np.broadcast_to(current.points[:, None, :], (count, 4, dim))
        velocity = tangent[:, None, :] * offsets[None, :, None]
        frames = np.broadcast_to(E[:, None], (count, 4, dim, dim))
        ends, _, transported, inside, _ = self.metric.integrate(base, velocity, frames, 1.0, SHOT_STEPS)
        if not np.all(inside):
            raise PreconditionError(f"{self.name}: residual shots leave the chart")
        guess = np.broadcast_to(foot.coordinates[:, None, :], (count, 4, dim))
        end_foot = tc.foot_point(ends, guess=guess, strict=True, frames=True, tolerance=FOOT_TOLERANCE)
        components = np.einsum("ksab,ksa,ksjb->ksj", self.metric.metric(ends), end_foot.frame[:, :, 0, :], transported)
        center = np.zeros(dim)
        center[0] = 1.0
        first = (-components[:, 0] + 8 * components[:, 1] - 8 * components[:, 2] + components[:, 3]) / (12 * SHOT_STEP)
        second = (
            -components[:, 0] + 16 * components[:, 1] - 30 * center + 16 * components[:, 2] - components[:, 3]
        ) / (12 * SHOT_STEP**2)
        kappa_frame = np.einsum("kab,ka,kjb->kj", g, kappa, E)
        tangent_frame = np.einsum("kab,ka,kjb->kj", g, tangent, E)
        rhs = (
            laplacian
            + star_omega * kappa2
            - 2 * np.einsum("kj,kj->k", kappa_frame, first)
            - np.einsum("kj,kj->k", tangent_frame, second)
        )
        return float(np.max(np.abs(lhs - rhs)))

    def refinement_study(
        self,
        nodes: int = 32,
        levels: int = 3,
        time: float = 0.1,
        amplitude: float = 0.1,
        modes: Sequence[int] = (1, 2),
        cfl: float = 0.2,
    ) -> RefinementReport:
        """*Omega residual at `time` while N doubles and dt halves per level"""
        if levels < MIN_REFINEMENT_LEVELS:
            msg = f"{self.name}: a refinement study needs at least {MIN_REFINEMENT_LEVELS} levels (inconclusive)"
            self.log.error(msg)
            raise PreconditionError(msg)
        tc = self.__require_tube("a refinement study")
        finest = tc.ref.length / (nodes * 2 ** (levels - 1))
        dt = cfl * finest**2 * 2 ** (levels - 1)
        results = []
        for level in range(levels):
            count = nodes * 2**level
            step = dt / 2**level
            curve = self.section_curve(self.initial_section(count, amplitude, modes))
            t = 0.0
            done = 0
            while t < time - 1e-12:
                h = min(step, time - t)
                curve = self.__parametric_step(curve, h, np.inf)
                done += 1
                if done % 20 == 0:
                    curve = reparametrize(self.metric, curve)
                t += h
            residual = self.omega_evolution_residual(curve, step)
            results.append(RefinementLevel(count, step, residual))
            self.log.info(f"{self.name}: *Omega residual {results[-1]}")
        report = RefinementReport(self.name, time, results)
        self.log.info(f"{self.name}: *Omega refinement slope {report.slope:.3f}")
        return report

    def __parametric_step(
        self, c: DiscreteCurve, dt: float, blowup_threshold: float, stepping: str = EXPLICIT
    ) -> DiscreteCurve:
        try:
            return self.step_parametric(c, dt, blowup_threshold, stepping)
        except ReparametrizeFirstError:
            return self.step_parametric(reparametrize(self.metric, c), dt, blowup_threshold, stepping)

    def __star_omega(self, c: DiscreteCurve) -> np.ndarray:
        g, _, tangent, _ = curvature_vector(self.metric, c)
        foot = self.tc.foot_point(c.points, strict=True, frames=True, tolerance=FOOT_TOLERANCE)
        return np.einsum("kab,ka,kb->k", g, tangent, foot.frame[:, 0, :])

    def __check_smallness(self, config: FlowConfig, values: Dict) -> None:
        combined = float(np.max(1.0 - values["star_omega"] + values["psi"]))
        if not combined < config.kappa:
            msg = (
                f"{config.scenario}: initial data is not small, max(1 - *Omega + psi) = {combined:.6g} "
                f">= kappa = {config.kappa:g}"
            )
            self.log.error(msg)
            raise PreconditionError(msg)

    def __table(self, s: NormalSection) -> FermiMetricTable:
        if s.nodes not in self.__tables:
            tc = self.__require_tube("the graphical flow")
            self.__tables[s.nodes] = FermiMetricTable(tc, s.x)
            self.log.info(f"{self.name}: Fermi metric table {self.__tables[s.nodes]}")
        return self.__tables[s.nodes]

    def __require_tube(self, purpose: str) -> TubularChart:
        if self.tc is None:
            msg = f"{self.name}: {purpose} needs a reference curve with a tube"
            self.log.error(msg)
            raise PreconditionError(msg)
        return self.tc

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from logging import Logger
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from helpers.ConfigHelper import Config
from helpers.Exceptions import StableFlowError
from helpers.FlowHelper import (
    GRAPHICAL,
    LINEARIZED,
    PARAMETRIC,
    SEMI_IMPLICIT,
    FlowEngine,
    NormalSection,
    fit_decay,
)
from helpers.G2Helper import G2Checker
from helpers.GeometryHelper import ChartMetric, flat_metric, hyperbolic_cylinder, unit_sphere_equatorial
from helpers.ScenarioHelper import Scenario, ScenarioCatalog
from helpers.StabilityHelper import StabilityAnalyzer
from helpers.TraceHelper import FlowTrace
from helpers.TubularHelper import TubularChart

LOGGER_NAME = "StableFlow"
CURVATURE_POINTS = 100
SPECTRUM_GRIDS = (64, 128, 256)
LINEARIZATION_AMPLITUDES = (0.04, 0.02, 0.01)
NEGATIVE_CONTROL_HORIZON = 5.0
NEGATIVE_CONTROL_GROWTH = 10.0
DIVERGED = ("blowup", "left-tube", "left-graphical")
AGREEMENT_HORIZON = 0.5
# wall clock seconds per criterion
RUNTIME_BUDGETS = {1: 5.0, 4: 60.0, 8: 10.0}


class CriterionResult:
    """Outcome of one acceptance criterion"""

    def __init__(self, number: int, name: str, passed: bool, details: List[str], seconds: float = 0.0) -> None:
        self.number = number
        self.name = name
        self.passed = passed
        self.details = details
        self.seconds = seconds

    def __repr__(self) -> str:
        """Returns the result as table row with its details"""
        status = "pass" if self.passed else "FAIL"
        lines = [f"{self.number:>2}  {self.name:<36} {status:<5} {self.seconds:8.1f}s"]
        lines += [f"      {detail}" for detail in self.details]
        return "\n".join(lines)


class AcceptanceRunner:
    """Runs the acceptance criteria against the builtin scenarios"""

    def __init__(self, log: Logger, config: Config) -> None:
        self.log = log
        self.config = config
        self.catalog = ScenarioCatalog(log, config.SCENARIO_FOLDER)
        self.criteria: Dict[int, Tuple[str, Callable[[], Tuple[bool, List[str]]]]] = {
            1: ("curvature kernel", self.curvature_kernel),
            2: ("strong stability margin", self.strong_stability),
            3: ("jacobi spectrum", self.jacobi_spectrum),
            4: ("dynamical stability", self.dynamical_stability),
            5: ("monotone monitors", self.monotone_monitors),
            6: ("distance convexity probe", self.convexity_probe),
            7: ("*omega evolution residual", self.omega_residual),
            8: ("g2 identity suite", self.g2_suite),
            9: ("linearized flow", self.linearized_flow),
            10: ("second fundamental form l2 decay", self.l2_decay),
        }
        self.__engines: Dict[str, FlowEngine] = {}
        self.__waist_traces: Dict[str, FlowTrace] = {}

    def __repr__(self) -> str:
        """Returns the runner as string"""
        return f"criteria: {list(self.criteria)}, threads: {self.config.STABLEFLOW_THREADS}"

    def run(self, selection: Optional[Sequence[int]] = None) -> List[CriterionResult]:
        numbers = sorted(selection) if selection else sorted(self.criteria)
        threads = min(self.config.STABLEFLOW_THREADS, len(numbers))
        self.log.info(f"Running acceptance criteria {numbers} with {threads} process(es)")
        if threads <= 1:
            return [self.criterion(number) for number in numbers]
        with ProcessPoolExecutor(max_workers=threads) as executor:
            futures = [executor.submit(run_criterion, self.config, number) for number in numbers]
            return [future.result() for future in futures]

    def criterion(self, number: int) -> CriterionResult:
        name, check = self.criteria[number]
        start = time.perf_counter()
        try:
            passed, details = check()
        except StableFlowError as e:
            self.log.exception(f"Acceptance criterion {number} ({name}) raised")
            passed, details = False, [f"{type(e).__name__}: {e}"]
        seconds = time.perf_counter() - start
        budget = RUNTIME_BUDGETS.get(number)
        if budget is not None and seconds > budget:
            self.log.error(f"Acceptance criterion {number} ({name}) took {seconds:.1f}s, budget {budget:g}s")
            passed = False
            details = details + [f"runtime {seconds:.1f}s exceeds the {budget:g}s budget"]
        result = CriterionResult(number, name, passed, details, seconds)
        self.log.info(f"Acceptance criterion {number} ({name}): {'pass' if passed else 'FAIL'}")
        return result

    def curvature_kernel(self) -> Tuple[bool, List[str]]:
        """Gauss curvature 0, +1, -1 and the curvature symmetries at random chart points"""
        rng = np.random.default_rng(self.config.SEED)
        points = np.stack(
            [rng.uniform(-1.0, 1.0, CURVATURE_POINTS), rng.uniform(0.0, 2 * np.pi, CURVATURE_POINTS)], axis=-1
        )
        cases: List[Tuple[ChartMetric, float]] = [
            (flat_metric(2), 0.0),
            (unit_sphere_equatorial(), 1.0),
            (hyperbolic_cylinder(), -1.0),
        ]
        passed = True
        details = []
        for metric, expected in cases:
            curvature = metric.riemann(points)
            error = float(np.max(np.abs(curvature.gauss_curvature - expected)))
            residual = max(curvature.residuals.values())
            u = rng.standard_normal((CURVATURE_POINTS, 2))
            v = rng.standard_normal((CURVATURE_POINTS, 2))
            sectional = float(np.max(np.abs(metric.sectional_curvature(points, u, v) - expected)))
            ok = error < 1e-6 and residual < 1e-6 and sectional < 1e-6
            passed &= ok
            details.append(
                f"{metric.name}: |K - {expected:g}| = {error:.2e}, sectional {sectional:.2e}, symmetries {residual:.2e}"
            )
        return passed, details

    def strong_stability(self) -> Tuple[bool, List[str]]:
        passed = True
        details = []
        for id in ("hyperbolic-waist", "sphere-equator", "flat-torus-geodesic", "hyperbolic-3d-waist"):
            scenario = self.catalog.get(id)
            report = self.__analyzer(scenario).analyze(eigenvalues=self.config.JACOBI_EIGENVALUES)
            expected = scenario.expected
            ok = abs(report.c0 - expected["c0"].value) <= expected["c0"].tolerance
            ok &= report.classification == expected["classification"].value
            if "matrix" in expected:
                deviation = float(np.max(np.abs(report.matrices - np.asarray(expected["matrix"].value))))
                ok &= deviation <= expected["matrix"].tolerance
                details.append(f"{id}: max |(R - A) - I| = {deviation:.2e}")
            passed &= ok
            details.append(f"{id}: c0 = {report.c0:.6f}, {report.classification}")
        return passed, details

    def jacobi_spectrum(self) -> Tuple[bool, List[str]]:
        """Lowest eigenvalues against k^2 + 1 and their convergence order"""
        scenario = self.catalog.get("hyperbolic-waist")
        oracle = np.asarray(scenario.expected["spectrum"].value)
        analyzer = self.__analyzer(scenario)
        errors = []
        for nodes in SPECTRUM_GRIDS:
            values, _ = analyzer.jacobi_operator(nodes).spectrum(len(oracle))
            errors.append(float(np.max(np.abs(values - oracle))))
        spacing = scenario.reference().length / np.asarray(SPECTRUM_GRIDS, dtype=float)
        slope = float(linregress(np.log(spacing), np.log(errors)).slope)
        passed = errors[-1] <= scenario.expected["spectrum"].tolerance and slope >= 1.8
        details = [f"N = {n}: max error {e:.3e}" for n, e in zip(SPECTRUM_GRIDS, errors)]
        details.append(f"convergence slope {slope:.3f}")
        return passed, details

    def dynamical_stability(self) -> Tuple[bool, List[str]]:
        scenario = self.catalog.get("hyperbolic-waist")
        trace = self.__waist_trace(PARAMETRIC)
        config = scenario.flow_config(self.config)
        fit = fit_decay(trace, "psi_max", config.fit_window)
        expected = scenario.expected["psi_rate"]
        ok_rate = abs(fit.rate - expected.value) <= expected.tolerance

        short = scenario.flow_config(self.config, t_final=AGREEMENT_HORIZON)
        engine = self.__engine(scenario)
        parametric = engine.run(short.with_representation(PARAMETRIC))
        graphical = engine.run(short.with_representation(GRAPHICAL))
        rows = min(len(parametric), len(graphical))
        gap = float(np.max(np.abs(parametric.column("psi_max")[:rows] - graphical.column("psi_max")[:rows])))
        scale = float(np.max(parametric.column("psi_max")))
        h = scenario.reference().length / short.nodes
        ok_agree = gap <= 50 * h**2 * scale and graphical.termination == "horizon"

        passed = trace.termination == "converged" and ok_rate and ok_agree
        details = [
            f"termination: {trace.termination} at t = {trace.column('t')[-1]:.3f}",
            f"psi_max decay {fit}",
            f"parametric vs graphical psi_max gap {gap:.3e} (scale {scale:.3e}, h^2 = {h**2:.3e})",
        ]
        return passed, details

    def monotone_monitors(self) -> Tuple[bool, List[str]]:
        trace = self.__waist_trace(PARAMETRIC)
        volume = trace.volume_non_increasing()
        c6 = trace.smallest_monotone_c6(transient=1.0)
        details = [f"volume non-increasing: {volume}", f"smallest monotone c6: {c6}"]

        scenario = self.catalog.get("sphere-equator")
        engine = self.__engine(scenario)
        diverged = True
        for sign in (1.0, -1.0):
            config = scenario.flow_config(
                self.config, t_final=NEGATIVE_CONTROL_HORIZON, amplitude=sign * scenario.flow["amplitude"]
            )
            control = engine.run(config)
            psi = control.column("psi_max")
            growth = float(np.max(psi) / psi[0])
            escaped = control.termination in DIVERGED or growth >= NEGATIVE_CONTROL_GROWTH
            diverged &= escaped
            details.append(
                f"sphere-equator sign {sign:+g}: {control.termination} at t = {control.column('t')[-1]:.3f}, "
                f"psi_max growth {growth:.3g}"
            )
        return volume and c6 is not None and diverged, details

    def convexity_probe(self) -> Tuple[bool, List[str]]:
        scenario = self.catalog.get("hyperbolic-waist")
        tc = scenario.chart(self.log, self.config)
        report = tc.hessian_psi_probe(
            self.config.PROBE_SAMPLES, self.config.SEED, self.config.PROBE_RADIUS, self.config.PROBE_STEP
        )
        radii = np.array([0.1, 0.2, 0.3])
        x = np.array([0.0, 1.0, 2.0])
        coefficients = np.broadcast_to(np.array([[1.0, 0.0]]), (3, 1, 2)).copy()
        traces, valid = tc.hessian_trace(x, radii[:, None], coefficients, self.config.PROBE_STEP)
        spot = float(np.max(np.abs(traces - 2 * radii * np.tanh(radii)))) if np.all(valid) else float("inf")
        passed = report.evaluated > 0 and report.min_ratio >= 0.5 and report.violations == 0 and spot < 1e-4
        return passed, [f"{report}", f"tangent circles: |tr Hess psi - 2 r tanh r| = {spot:.2e}"]

    def omega_residual(self) -> Tuple[bool, List[str]]:
        report = self.__engine(self.catalog.get("hyperbolic-waist")).refinement_study()
        return report.passed, str(report).splitlines()

    def g2_suite(self) -> Tuple[bool, List[str]]:
        checks = G2Checker(self.log).run(1000, self.config.SEED)
        return all(check.passed for check in checks), [f"{check}" for check in checks]

    def linearized_flow(self) -> Tuple[bool, List[str]]:
        """Eigenmodes decay exactly; the nonlinear gap to the linearized flow is quadratic"""
        scenario = self.catalog.get("hyperbolic-waist")
        engine = self.__engine(scenario)
        nodes = 64
        values, vectors = engine.jacobi_operator(nodes).spectrum(4)
        x = scenario.reference().nodes(nodes)
        worst = 0.0
        for value, vector in zip(values, vectors):
            s = NormalSection(x, vector, scenario.reference().length)
            for _ in range(10):
                s = engine.step_linearized(s, 0.1, "exponential")
            worst = max(worst, float(np.max(np.abs(s.y - np.exp(-value) * vector))))
        details = [f"eigenmode decay error over t = 1: {worst:.2e}"]

        gaps = []
        for amplitude in LINEARIZATION_AMPLITUDES:
            base = scenario.flow_config(self.config, nodes=nodes, t_final=2.0, amplitude=amplitude)
            nonlinear = engine.run(base.with_representation(GRAPHICAL))
            linear = engine.run(base.with_representation(LINEARIZED))
            rows = min(len(nonlinear), len(linear))
            gaps.append(
                float(np.max(np.abs(nonlinear.column("psi_max")[:rows] - linear.column("psi_max")[:rows])))
            )
        slope = float(linregress(np.log(LINEARIZATION_AMPLITUDES), np.log(np.maximum(gaps, 1e-300))).slope)
        details.append("psi_max gaps: " + ", ".join(f"{a:g}: {g:.3e}" for a, g in zip(LINEARIZATION_AMPLITUDES, gaps)))
        details.append(f"gap slope {slope:.3f}")
        return worst < 1e-8 and slope >= 1.7, details

    def l2_decay(self) -> Tuple[bool, List[str]]:
        trace = self.__waist_trace(PARAMETRIC)
        final = float(trace.column("l2_ii_difference")[-1])
        monotone = trace.eventually_monotone("l2_ii_difference")
        return final < 1e-10 and monotone, [f"final L2 difference {final:.3e}", f"eventually monotone: {monotone}"]

    def __analyzer(self, scenario: Scenario) -> StabilityAnalyzer:
        return StabilityAnalyzer(
            self.log,
            scenario.chart(self.log, self.config),
            self.config.MARGIN_TOLERANCE,
            self.config.MINIMALITY_TOLERANCE,
        )

    def __engine(self, scenario: Scenario) -> FlowEngine:
        if scenario.id not in self.__engines:
            tc: Optional[TubularChart] = scenario.chart(self.log, self.config)
            self.__engines[scenario.id] = FlowEngine(
                self.log, scenario.metric, tc, self.config.MARGIN_TOLERANCE, self.config.MINIMALITY_TOLERANCE
            )
        return self.__engines[scenario.id]

    def __waist_trace(self, representation: str) -> FlowTrace:
        """The full waist run, shared by the criteria of one process"""
        if representation not in self.__waist_traces:
            scenario = self.catalog.get("hyperbolic-waist")
            config = scenario.flow_config(self.config, representation=representation, stepping=SEMI_IMPLICIT)
            self.__waist_traces[representation] = self.__engine(scenario).run(config)
        return self.__waist_traces[representation]


def run_criterion(config: Config, number: int) -> CriterionResult:
    """Process pool entry point"""
    log = logging.getLogger(LOGGER_NAME)
    return AcceptanceRunner(log, config).criterion(number)

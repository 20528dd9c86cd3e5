import io
import os
from logging import Logger
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv.parser import parse_stream  # type: ignore

from helpers.ConfigHelper import Config
from helpers.Exceptions import BadUserInput, ScenarioError
from helpers.ExpressionHelper import Expression, parse_expression
from helpers.FlowHelper import FlowConfig
from helpers.FormsHelper import DiscreteCurve
from helpers.GeometryHelper import (
    ChartMetric,
    flat_metric,
    hyperbolic_cylinder,
    hyperbolic_waist_3d,
    unit_sphere_equatorial,
)
from helpers.TubularHelper import MinimalReference, TubularChart

SECTIONS = ("METRIC_", "SIGMA_", "TUBE_", "FLOW_", "EXPECTED_")
FLOW_KEYS = {
    "NODES": ("nodes", int),
    "DT": ("dt", float),
    "T_FINAL": ("t_final", float),
    "AMPLITUDE": ("amplitude", float),
    "MODES": ("modes", lambda text: [int(k) for k in text.split(",")]),
    "MONITOR_EVERY": ("monitor_every", float),
    "FIT_WINDOW": ("fit_window", lambda text: tuple(float(v) for v in text.split(","))),
}


class Expected:
    """An expected value with the note that says where it comes from"""

    def __init__(self, value, provenance: str, tolerance: float = 0.0) -> None:
        self.value = value
        self.provenance = provenance
        self.tolerance = tolerance

    def __repr__(self) -> str:
        """Returns the expectation as string"""
        tolerance = f" +- {self.tolerance:g}" if self.tolerance else ""
        return f"{self.value}{tolerance} ({self.provenance})"


class Scenario:
    """An ambient chart, a closed minimal curve Sigma in it, a tube radius, default
    flow settings and expected values"""

    def __init__(
        self,
        id: str,
        description: str,
        metric: ChartMetric,
        reference: Optional[Callable[[ChartMetric], MinimalReference]],
        tube_radius: Optional[float],
        flow: Optional[Dict] = None,
        expected: Optional[Dict[str, Expected]] = None,
        initial_curve: Optional[Callable[[int], DiscreteCurve]] = None,
    ) -> None:
        self.id = id
        self.description = description
        self.metric = metric
        self.tube_radius = tube_radius
        self.flow = flow or {}
        self.expected = expected or {}
        self.initial_curve = initial_curve
        self.__reference_factory = reference
        self.__reference: Optional[MinimalReference] = None

    def __repr__(self) -> str:
        """Returns the scenario as string"""
        return f"id: '{self.id}', metric: '{self.metric.name}', tube radius: {self.tube_radius}"

    @property
    def has_reference(self) -> bool:
        return self.__reference_factory is not None

    def reference(self) -> MinimalReference:
        if self.__reference_factory is None:
            raise BadUserInput(f"Scenario '{self.id}' has no minimal reference curve")
        if self.__reference is None:
            self.__reference = self.__reference_factory(self.metric)
        return self.__reference

    def chart(self, log: Logger, config: Optional[Config] = None) -> Optional[TubularChart]:
        """Tubular chart around Sigma, or None for scenarios without a reference"""
        if not self.has_reference:
            return None
        if config is None:
            return TubularChart(log, self.reference(), self.tube_radius)
        return TubularChart(
            log,
            self.reference(),
            self.tube_radius,
            steps=config.FERMI_STEPS,
            max_iterations=config.NEWTON_MAX_ITERATIONS,
            tolerance=config.NEWTON_TOLERANCE,
        )

    def flow_config(self, config: Optional[Config] = None, **overrides) -> FlowConfig:
        """Flow settings: scenario defaults, then the tool config, then explicit overrides"""
        settings = dict(self.flow)
        if config is not None:
            settings.update(
                {
                    "cfl": config.CFL,
                    "kappa": config.KAPPA,
                    "blowup_threshold": config.BLOWUP_THRESHOLD,
                    "reparam_every": config.REPARAM_EVERY,
                    "c6_candidates": config.C6_CANDIDATES,
                }
            )
            settings.setdefault("monitor_every", config.MONITOR_EVERY)
        settings.update({key: value for key, value in overrides.items() if value is not None})
        return FlowConfig(self.id, **settings)


def _line_reference(metric: ChartMetric, axis: int, length: float, name: str) -> MinimalReference:
    """Sigma(s) = s along one coordinate axis, all other coordinates zero"""
    dim = metric.dim

    def point(s: np.ndarray) -> np.ndarray:
        x = np.zeros(np.shape(s) + (dim,))
        x[..., axis] = s
        return x

    def velocity(s: np.ndarray) -> np.ndarray:
        v = np.zeros(np.shape(s) + (dim,))
        v[..., axis] = 1.0
        return v

    def acceleration(s: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(s) + (dim,))

    return MinimalReference(metric, point, length, velocity, acceleration, name=name)


def _circle(radius: float) -> Callable[[int], DiscreteCurve]:
    def curve(nodes: int) -> DiscreteCurve:
        angle = 2 * np.pi * np.arange(nodes) / nodes
        return DiscreteCurve(radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1))

    return curve


def builtin_scenarios() -> Dict[str, Scenario]:
    two_pi = 2 * np.pi
    return {
        "flat-plane-circle": Scenario(
            "flat-plane-circle",
            "circle of radius 1 in the flat plane, shrinking with rho^2 = 1 - 2t",
            flat_metric(2, name="flat plane"),
            None,
            None,
            flow={"nodes": 64, "t_final": 0.25, "monitor_every": 0.01},
            expected={"radius": Expected(float(np.sqrt(0.5)), "exact solution rho^2 = rho0^2 - 2t at t = 0.25", 1e-3)},
            initial_curve=_circle(1.0),
        ),
        "hyperbolic-waist": Scenario(
            "hyperbolic-waist",
            "waist r = 0 of the hyperbolic cylinder dr^2 + cosh^2 r dtheta^2",
            hyperbolic_cylinder(),
            lambda m: _line_reference(m, 1, two_pi, "hyperbolic-waist"),
            0.5,
            flow={"nodes": 256, "t_final": 25.0, "amplitude": 0.02, "modes": [0, 1, 2]},
            expected={
                "c0": Expected(1.0, "Gauss curvature -1 along a geodesic, R - A = 1", 1e-3),
                "classification": Expected("strongly-stable", "c0 > 0"),
                "spectrum": Expected([1.0, 2.0, 2.0, 5.0], "Fourier modes k^2 + 1 on a circle of length 2 pi", 1e-2),
                "psi_rate": Expected(2.0, "psi ~ distance^2 decays at twice the lowest eigenvalue", 0.4),
            },
        ),
        "sphere-equator": Scenario(
            "sphere-equator",
            "equator r = 0 of the unit sphere dr^2 + cos^2 r dtheta^2",
            unit_sphere_equatorial(),
            lambda m: _line_reference(m, 1, two_pi, "sphere-equator"),
            0.5,
            flow={"nodes": 128, "t_final": 5.0, "amplitude": 0.02, "modes": [0]},
            expected={
                "c0": Expected(-1.0, "Gauss curvature +1 along a geodesic, R - A = -1", 1e-3),
                "classification": Expected("unstable", "constant normal field has second variation -length"),
                "spectrum": Expected([-1.0, 0.0, 0.0, 3.0], "Fourier modes k^2 - 1 on a circle of length 2 pi", 1e-2),
            },
        ),
        "flat-torus-geodesic": Scenario(
            "flat-torus-geodesic",
            "closed geodesic y = 0 of the flat torus with periods (2 pi, 1)",
            flat_metric(2, periods=(two_pi, 1.0), name="flat torus"),
            lambda m: _line_reference(m, 0, two_pi, "flat-torus-geodesic"),
            0.25,
            flow={"nodes": 128, "t_final": 5.0, "amplitude": 0.02, "modes": [1, 2]},
            expected={
                "c0": Expected(0.0, "flat ambient and a straight line, R - A = 0", 1e-6),
                "classification": Expected("stable-only", "c0 = 0 and the Jacobi operator is -d^2/ds^2"),
                "spectrum": Expected([0.0, 1.0, 1.0, 4.0], "Fourier modes k^2 on a circle of length 2 pi", 1e-2),
            },
        ),
        "hyperbolic-3d-waist": Scenario(
            "hyperbolic-3d-waist",
            "waist y = 0 of cosh^2 y1 cosh^2 y2 dx^2 + dy1^2 + dy2^2, codimension 2",
            hyperbolic_waist_3d(),
            lambda m: _line_reference(m, 0, two_pi, "hyperbolic-3d-waist"),
            0.5,
            flow={"nodes": 64, "t_final": 10.0, "amplitude": 0.02, "modes": [0, 1]},
            expected={
                "c0": Expected(1.0, "both normal sectional curvatures are -1, R - A = identity", 1e-2),
                "classification": Expected("strongly-stable", "c0 > 0"),
                "matrix": Expected([[1.0, 0.0], [0.0, 1.0]], "R - A at every node", 1e-2),
            },
        ),
    }


class ScenarioCatalog:
    """Builtin scenarios plus user scenario files <id>.env in the scenario folder"""

    def __init__(self, log: Logger, folder: str) -> None:
        self.log = log
        self.folder = folder
        self.builtins = builtin_scenarios()

    def __repr__(self) -> str:
        """Returns the catalog as string"""
        return f"folder: '{self.folder}', scenarios: {self.available()}"

    def available(self) -> List[str]:
        ids = list(self.builtins)
        if os.path.isdir(self.folder):
            ids += sorted(name[:-4] for name in os.listdir(self.folder) if name.endswith(".env"))
        return ids

    def get(self, id: str) -> Scenario:
        if id in self.builtins:
            return self.builtins[id]
        filename = os.path.join(self.folder, f"{id}.env")
        if os.path.exists(filename):
            self.log.info(f"Loading scenario '{id}' from {filename}")
            with open(filename, "r", encoding="utf8") as handle:
                return load_scenario(id, handle.read())
        msg = f"Unknown scenario '{id}', available: {', '.join(self.available())}"
        self.log.error(msg)
        raise ScenarioError(msg)


def read_scenario_file(text: str) -> Dict[str, Tuple[str, int, int]]:
    """key -> (value, line, offset of the value in its line) for every binding of a dotenv text"""
    bindings: Dict[str, Tuple[str, int, int]] = {}
    for binding in parse_stream(io.StringIO(text)):
        original, line = binding.original.string, binding.original.line
        if binding.error:
            raise ScenarioError("Malformed scenario line", line, 1)
        if binding.key is None:
            continue
        key = binding.key.strip()
        if key != "DESCRIPTION" and not key.startswith(SECTIONS):
            raise ScenarioError(f"Unknown scenario key '{key}'", line, original.find(key) + 1)
        value = binding.value or ""
        start = original.find("=") + 1
        offset = original.find(value, start) if value else -1
        bindings[key] = (value, line, offset if offset >= 0 else start)
    return bindings


def load_scenario(id: str, text: str) -> Scenario:
    """Scenario from a dotenv text with METRIC_, SIGMA_, TUBE_, FLOW_ and EXPECTED_ keys"""
    bindings = read_scenario_file(text)

    def required(key: str) -> Tuple[str, int, int]:
        if key not in bindings:
            raise ScenarioError(f"Scenario '{id}' needs the key {key}")
        return bindings[key]

    def expression(key: str, variables: List[str]) -> Expression:
        value, line, column = required(key)
        return parse_expression(value, variables, line, column)

    def number(key: str) -> float:
        value, line, column = required(key)
        return float(parse_expression(value, [], line, column)({}))

    coordinates_text, line, column = required("METRIC_COORDINATES")
    coordinates = [name.strip() for name in coordinates_text.split(",")]
    dim = len(coordinates)
    if dim < 2 or len(set(coordinates)) != dim or not all(name.isidentifier() for name in coordinates):
        raise ScenarioError("METRIC_COORDINATES needs at least two distinct names", line, column + 1)
    entries: Dict[Tuple[int, int], Expression] = {}
    for i in range(dim):
        for j in range(i, dim):
            key = f"METRIC_G_{i}_{j}"
            if key in bindings:
                entries[(i, j)] = expression(key, coordinates)
            elif i == j:
                raise ScenarioError(f"Scenario '{id}' needs the diagonal metric entry {key}")
    periods: List[Optional[float]] = [None] * dim
    if "METRIC_PERIODS" in bindings:
        value, line, column = bindings["METRIC_PERIODS"]
        parts = value.split(",")
        if len(parts) != dim:
            raise ScenarioError(f"METRIC_PERIODS needs {dim} comma separated entries", line, column + 1)
        offset = column
        for c, part in enumerate(parts):
            if part.strip():
                periods[c] = float(parse_expression(part, [], line, offset)({}))
            offset += len(part) + 1

    def coeff(x: np.ndarray) -> np.ndarray:
        values = {name: x[..., c] for c, name in enumerate(coordinates)}
        g = np.zeros(x.shape[:-1] + (dim, dim))
        for (i, j), entry in entries.items():
            g[..., i, j] = np.broadcast_to(entry(values), x.shape[:-1])
            g[..., j, i] = g[..., i, j]
        return g

    metric = ChartMetric(dim, coeff, periods, name=id)

    reference: Optional[Callable[[ChartMetric], MinimalReference]] = None
    if "SIGMA_LENGTH" in bindings:
        length = number("SIGMA_LENGTH")
        components = [expression(f"SIGMA_{c}", ["s"]) for c in range(dim)]

        def point(s: np.ndarray) -> np.ndarray:
            s = np.asarray(s, dtype=float)
            return np.stack([np.broadcast_to(component({"s": s}), s.shape) for component in components], axis=-1)

        def build_reference(m: ChartMetric) -> MinimalReference:
            return MinimalReference(m, point, length, name=id)

        reference = build_reference

    tube_radius = number("TUBE_RADIUS") if "TUBE_RADIUS" in bindings else None
    if reference is not None and tube_radius is None:
        raise ScenarioError(f"Scenario '{id}' needs TUBE_RADIUS together with SIGMA_LENGTH")

    flow: Dict = {}
    for key, (target, convert) in FLOW_KEYS.items():
        if f"FLOW_{key}" in bindings:
            value, line, column = bindings[f"FLOW_{key}"]
            try:
                flow[target] = convert(value)
            except ValueError as e:
                raise ScenarioError(f"Invalid value for FLOW_{key}: {e}", line, column + 1) from e

    expected: Dict[str, Expected] = {}
    if "EXPECTED_C0" in bindings:
        tolerance = number("EXPECTED_C0_TOLERANCE") if "EXPECTED_C0_TOLERANCE" in bindings else 1e-3
        expected["c0"] = Expected(number("EXPECTED_C0"), "scenario file", tolerance)
    if "EXPECTED_CLASSIFICATION" in bindings:
        expected["classification"] = Expected(bindings["EXPECTED_CLASSIFICATION"][0].strip(), "scenario file")

    description = bindings.get("DESCRIPTION", ("user scenario", 0, 0))[0]
    return Scenario(id, description, metric, reference, tube_radius, flow, expected)

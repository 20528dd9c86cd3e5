import os

import numpy as np
import pytest

from helpers.Exceptions import BadUserInput, ScenarioError
from helpers.ScenarioHelper import ScenarioCatalog, builtin_scenarios, load_scenario, read_scenario_file
from helpers.StabilityHelper import StabilityAnalyzer

WAIST = """# waist of the hyperbolic cylinder, written out by hand
DESCRIPTION="user waist"
METRIC_COORDINATES=r,theta
METRIC_G_0_0=1
METRIC_G_1_1=cosh(r)^2
METRIC_PERIODS=,2*pi

SIGMA_0=0
SIGMA_1=s
SIGMA_LENGTH=2*pi
TUBE_RADIUS=0.5

FLOW_NODES=64
FLOW_MODES=0,1
FLOW_FIT_WINDOW=2,6
EXPECTED_C0=1
EXPECTED_C0_TOLERANCE=1e-2
EXPECTED_CLASSIFICATION=strongly-stable
"""


def test_builtin_catalog():
    scenarios = builtin_scenarios()
    assert set(scenarios) == {
        "flat-plane-circle",
        "hyperbolic-waist",
        "sphere-equator",
        "flat-torus-geodesic",
        "hyperbolic-3d-waist",
    }
    for id, scenario in scenarios.items():
        assert scenario.id == id
        assert scenario.expected, id
        assert scenario.has_reference == (scenario.tube_radius is not None)


def test_scenarios_without_reference(log, scenarios):
    circle = scenarios["flat-plane-circle"]
    assert circle.chart(log) is None
    with pytest.raises(BadUserInput):
        circle.reference()
    assert circle.initial_curve(32).nodes == 32


def test_bindings_carry_their_position():
    bindings = read_scenario_file(WAIST)
    value, line, offset = bindings["METRIC_G_1_1"]
    assert value == "cosh(r)^2"
    assert line == 5
    assert offset == len("METRIC_G_1_1=")
    assert bindings["DESCRIPTION"][0] == "user waist"


def test_user_scenario_matches_the_builtin_waist(log):
    scenario = load_scenario("user-waist", WAIST)
    assert scenario.description == "user waist"
    assert scenario.metric.periods[1] == pytest.approx(2 * np.pi)
    assert scenario.tube_radius == 0.5
    assert scenario.expected["c0"].tolerance == pytest.approx(1e-2)
    assert scenario.expected["classification"].value == "strongly-stable"

    config = scenario.flow_config()
    assert config.nodes == 64
    assert config.modes == [0, 1]
    assert config.fit_window == (2.0, 6.0)

    point = np.array([0.3, 1.0])
    np.testing.assert_allclose(scenario.metric.metric(point), np.diag([1.0, np.cosh(0.3) ** 2]))
    report = StabilityAnalyzer(log, scenario.chart(log)).strong_stability_margin(nodes=32)
    assert report.c0 == pytest.approx(1.0, abs=scenario.expected["c0"].tolerance)


def test_expression_errors_point_into_the_file():
    broken = WAIST.replace("METRIC_G_1_1=cosh(r)^2", "METRIC_G_1_1=cosh(r")
    with pytest.raises(ScenarioError) as info:
        load_scenario("broken", broken)
    assert info.value.line == 5
    assert info.value.column == len("METRIC_G_1_1=cosh(r") + 1


@pytest.mark.parametrize(
    "text, line",
    [
        ("METRIC_COORDINATES=x,y\nBOGUS_KEY=1\n", 2),
        ("METRIC_COORDINATES=x,y\nthis is not a binding\n", 2),
        ("METRIC_COORDINATES=x\nMETRIC_G_0_0=1\n", 1),
        ("METRIC_COORDINATES=x,y\nMETRIC_G_0_0=1\nMETRIC_G_1_1=1\nFLOW_NODES=many\n", 4),
        ("METRIC_COORDINATES=x,y\nMETRIC_G_0_0=1\nMETRIC_G_1_1=1\nMETRIC_PERIODS=1\n", 4),
    ],
)
def test_malformed_scenarios(text, line):
    with pytest.raises(ScenarioError) as info:
        load_scenario("broken", text)
    assert info.value.line == line


def test_missing_keys_are_named():
    with pytest.raises(ScenarioError, match="METRIC_G_1_1"):
        load_scenario("broken", "METRIC_COORDINATES=x,y\nMETRIC_G_0_0=1\n")
    with pytest.raises(ScenarioError, match="TUBE_RADIUS"):
        load_scenario("broken", WAIST.replace("TUBE_RADIUS=0.5\n", ""))


def test_catalog_reads_scenario_files(log, tmp_path):
    with open(os.path.join(tmp_path, "user-waist.env"), "w", encoding="utf8") as handle:
        handle.write(WAIST)
    catalog = ScenarioCatalog(log, str(tmp_path))
    assert "user-waist" in catalog.available()
    assert catalog.get("user-waist").description == "user waist"
    assert catalog.get("hyperbolic-waist").id == "hyperbolic-waist"
    with pytest.raises(ScenarioError, match="available: flat-plane-circle"):
        catalog.get("missing")

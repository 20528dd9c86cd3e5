import logging

import numpy as np
import pytest

from helpers.Exceptions import BadUserInput, DecayFitError, LeftTubeError, PreconditionError
from helpers.FlowHelper import (
    GRAPHICAL,
    LINEARIZED,
    PARAMETRIC,
    SEMI_IMPLICIT,
    FermiMetricTable,
    FlowConfig,
    FlowEngine,
    damped_velocity,
    fit_decay,
)
from helpers.TraceHelper import FlowTrace, combined_column


@pytest.fixture(scope="module")
def engine(waist_chart) -> FlowEngine:
    return FlowEngine(logging.getLogger("StableFlowTest"), waist_chart.metric, waist_chart)


def parallel_radius(y0: float, t: float) -> float:
    """Exact distance of a parallel of the hyperbolic cylinder under the flow"""
    return float(np.arcsinh(np.sinh(y0) * np.exp(-t)))


@pytest.mark.parametrize(
    "overrides",
    [
        {"representation": "spectral"},
        {"scheme": "forward"},
        {"nodes": 8},
        {"dt": 0.0},
        {"t_final": -1.0},
        {"modes": []},
        {"stepping": "implicit"},
    ],
)
def test_invalid_flow_settings(overrides):
    with pytest.raises(BadUserInput):
        FlowConfig("hyperbolic-waist", **overrides)


def test_representation_copies_keep_every_setting():
    config = FlowConfig("hyperbolic-waist", nodes=64, amplitude=0.01, modes=[1], scheme="exponential", gate=False)
    copy = config.with_representation(GRAPHICAL)
    assert copy.representation == GRAPHICAL
    assert copy.to_record() == {**config.to_record(), "representation": GRAPHICAL}
    assert copy.gate is False


def test_scenario_settings_feed_the_flow_config(scenarios):
    config = scenarios["hyperbolic-waist"].flow_config(nodes=64, dt=None)
    assert config.nodes == 64
    assert config.t_final == 25.0
    assert config.modes == [0, 1, 2]


def test_initial_section_mixes_modes(engine):
    section = engine.initial_section(64, 0.02, [0, 2])
    assert section.nodes == 64
    assert section.y[0, 0] == pytest.approx(0.02)
    assert np.mean(section.y[:, 0]) == pytest.approx(0.01, abs=1e-12)


def test_section_curve_lies_on_the_graph(engine):
    section = engine.initial_section(32, 0.1, [0])
    curve = engine.section_curve(section)
    np.testing.assert_allclose(np.abs(curve.points[:, 0]), 0.1, atol=1e-10)
    np.testing.assert_allclose(curve.shift, [0.0, 2 * np.pi], atol=1e-12)


def test_graph_velocity_of_a_parallel(engine):
    section = engine.initial_section(64, 0.1, [0])
    velocity, star_omega = engine.graphical_velocity(section)
    np.testing.assert_allclose(velocity[:, 0], -np.tanh(0.1), atol=1e-6)
    np.testing.assert_allclose(star_omega, 1.0, atol=1e-9)


def test_fermi_table_rejects_sections_outside_the_tube(waist_chart):
    table = FermiMetricTable(waist_chart, waist_chart.ref.nodes(16))
    G, dG, pairing = table.evaluate(np.full((16, 1), 0.2))
    np.testing.assert_allclose(G[:, 0, 0], np.cosh(0.2) ** 2, atol=1e-8)
    np.testing.assert_allclose(np.abs(dG[:, 0, 0, 0]), np.sinh(0.4), atol=1e-6)
    np.testing.assert_allclose(pairing[:, 0], np.cosh(0.2), atol=1e-8)
    with pytest.raises(LeftTubeError):
        table.evaluate(np.full((16, 1), 0.6))


@pytest.mark.parametrize("scheme, factor", [("exponential", np.exp(-0.5)), ("backward", 1 / 1.5)])
def test_linearized_step_on_the_constant_mode(engine, scheme, factor):
    section = engine.initial_section(64, 0.02, [0])
    stepped = engine.step_linearized(section, 0.5, scheme)
    np.testing.assert_allclose(stepped.y, factor * section.y, atol=1e-12)


def test_linearized_run_matches_the_exponential(engine):
    config = FlowConfig(
        "hyperbolic-waist", LINEARIZED, nodes=64, t_final=1.0, amplitude=0.02, modes=[0],
        monitor_every=0.1, scheme="exponential",
    )
    trace = engine.run(config)
    assert trace.termination == "horizon"
    assert trace.column("t")[-1] == pytest.approx(1.0)
    assert trace.column("psi_max")[-1] == pytest.approx(4e-4 * np.exp(-2.0), rel=1e-6)


@pytest.mark.parametrize("representation", [PARAMETRIC, GRAPHICAL])
def test_parallels_follow_the_exact_solution(engine, representation):
    config = FlowConfig(
        "hyperbolic-waist", representation, nodes=64, t_final=0.2, amplitude=0.02, modes=[0], monitor_every=0.05
    )
    trace = engine.run(config)
    assert trace.termination == "horizon"
    assert len(trace) == 5
    assert trace.column("psi_max")[-1] == pytest.approx(parallel_radius(0.02, 0.2) ** 2, rel=5e-3)
    assert trace.volume_non_increasing()
    assert np.all(np.diff(trace.column("psi_max")) < 0)
    assert trace.dt > 0


def test_semi_implicit_parallels_take_larger_steps(engine):
    settings = dict(nodes=64, t_final=0.2, amplitude=0.02, modes=[0], monitor_every=0.05)
    explicit = engine.run(FlowConfig("hyperbolic-waist", PARAMETRIC, **settings))
    trace = engine.run(FlowConfig("hyperbolic-waist", PARAMETRIC, stepping=SEMI_IMPLICIT, **settings))
    assert trace.termination == "horizon"
    assert trace.column("psi_max")[-1] == pytest.approx(parallel_radius(0.02, 0.2) ** 2, rel=2e-2)
    assert np.all(np.diff(trace.column("psi_max")) < 0)
    assert trace.dt > 5 * explicit.dt


def test_semi_implicit_step_damps_high_modes(engine):
    config = FlowConfig(
        "hyperbolic-waist", PARAMETRIC, nodes=64, t_final=0.5, amplitude=0.02, modes=[8],
        monitor_every=0.1, stepping=SEMI_IMPLICIT, gate=False,
    )
    trace = engine.run(config)
    psi = trace.column("psi_max")
    assert trace.termination in ("horizon", "converged")
    assert np.all(np.isfinite(psi))
    assert psi[-1] < psi[0]


def test_damped_velocity_keeps_the_mean_and_damps_oscillations():
    nodes = 32
    k = np.arange(nodes)
    dt = 0.01
    mean = np.ones((nodes, 2))
    np.testing.assert_allclose(damped_velocity(mean, np.ones(nodes), dt), mean, atol=1e-12)

    wave = np.stack([np.cos(2 * np.pi * 8 * k / nodes), np.zeros(nodes)], axis=-1)
    theta = 2 * np.pi * 8 / nodes
    symbol = (30 - 32 * np.cos(theta) + 2 * np.cos(2 * theta)) * nodes**2 / 12
    damped = damped_velocity(wave, np.full(nodes, 2.0), dt)
    np.testing.assert_allclose(damped, wave / (1 + dt * symbol / 4), atol=1e-12)


def test_large_initial_data_is_gated(engine):
    config = FlowConfig("hyperbolic-waist", PARAMETRIC, nodes=64, t_final=0.1, amplitude=0.3, modes=[0])
    with pytest.raises(PreconditionError):
        engine.run(config)


def test_shrinking_circle_without_a_reference(log, scenarios):
    scenario = scenarios["flat-plane-circle"]
    engine = FlowEngine(log, scenario.metric)
    trace = engine.run(scenario.flow_config(), initial=scenario.initial_curve(64))
    assert trace.termination == "horizon"
    radius = trace.column("volume")[-1] / (2 * np.pi)
    expected = scenario.expected["radius"]
    assert radius == pytest.approx(expected.value, abs=5 * expected.tolerance)
    assert np.all(np.isnan(trace.column("psi_max")))
    with pytest.raises(PreconditionError):
        engine.run(scenario.flow_config(representation=GRAPHICAL), initial=scenario.initial_curve(64))


def test_refinement_needs_three_levels(engine):
    with pytest.raises(PreconditionError):
        engine.refinement_study(levels=2)


def synthetic_trace(log, values) -> FlowTrace:
    trace = FlowTrace(log, "synthetic", PARAMETRIC, [1.0])
    for t, value in values:
        trace.append(
            {
                "t": t,
                "psi_max": value,
                "min_star_omega": 1.0,
                "max_one_minus_star_omega": 0.0,
                "sup_ii_difference": 0.0,
                "l2_ii_difference": 0.0,
                "volume": 1.0,
                "sup_mean_curvature": 0.0,
                combined_column(1.0): value,
            }
        )
    return trace


def test_decay_fit_recovers_the_rate(log):
    t = np.linspace(0.0, 10.0, 41)
    trace = synthetic_trace(log, zip(t, 3.0 * np.exp(-2.0 * t)))
    fit = fit_decay(trace, "psi_max", (2.0, 8.0))
    assert fit.rate == pytest.approx(2.0, abs=1e-10)
    assert fit.r2 == pytest.approx(1.0)
    assert trace.rates["psi_max"]["window"] == [2.0, 8.0]


def test_decay_fit_stops_at_non_positive_values(log):
    t = np.linspace(0.0, 10.0, 11)
    values = np.where(t < 3.5, np.exp(-t), 0.0)
    trace = synthetic_trace(log, zip(t, values))
    fit = fit_decay(trace, "psi_max", (0.0, 10.0))
    assert fit.window == (0.0, 3.0)
    with pytest.raises(DecayFitError):
        fit_decay(trace, "psi_max", (5.0, 10.0))


def test_omega_residual_vanishes_on_the_minimal_curve(engine):
    curve = engine.section_curve(engine.initial_section(32, 0.0, [0]))
    assert engine.omega_evolution_residual(curve, 1e-3) < 1e-6

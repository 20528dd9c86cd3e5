import json
import os

import pytest
from dotenv import dotenv_values  # type: ignore

from helpers.AcceptanceHelper import AcceptanceRunner
from helpers.ConfigHelper import Config
from StableFlow import VERSION, StableFlow

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "helpers", ".env.default")


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Runs the tool inside an empty folder so logs and outputs stay there"""
    monkeypatch.chdir(tmp_path)
    for key in dotenv_values(DEFAULT_CONFIG):
        monkeypatch.delenv(key, raising=False)
    return tmp_path


def run(*argv: str) -> int:
    try:
        StableFlow().main(list(argv))
    except SystemExit as e:
        return int(e.code or 0)
    return 0


def test_version(workspace, capsys):
    assert run("--version") == 0
    assert VERSION in capsys.readouterr().out


def test_missing_command_prints_help(workspace, capsys):
    assert run() == 2
    assert "Unknown command" in capsys.readouterr().out
    assert os.path.exists(os.path.join(workspace, "logs", "stableflow.log"))


def test_analyze_writes_a_record(workspace, capsys):
    assert run("analyze", "hyperbolic-waist", "--nodes", "64", "--eigenvalues", "4") == 0
    assert "strongly-stable" in capsys.readouterr().out
    with open(os.path.join(workspace, "output", "hyperbolic-waist_analysis.json"), encoding="utf8") as handle:
        record = json.load(handle)
    assert record["c0"] == pytest.approx(1.0, abs=1e-3)
    assert len(record["jacobi_spectrum"]) == 4


@pytest.mark.parametrize(
    "argv",
    [
        ("analyze", "flat-plane-circle"),
        ("analyze", "no-such-scenario"),
        ("g2-check", "--seeds", "one,two"),
        ("accept", "--criteria", "99"),
        ("-e", "missing.env", "analyze", "hyperbolic-waist"),
    ],
)
def test_usage_errors_exit_with_two(workspace, argv):
    assert run(*argv) == 2


def test_invalid_config_values_exit_with_two(workspace, monkeypatch, capsys):
    monkeypatch.setenv("CFL", "fast")
    assert run("analyze", "hyperbolic-waist") == 2
    assert "ConfigError" in capsys.readouterr().out


def test_user_config_file_is_layered(workspace):
    with open(os.path.join(workspace, "custom.env"), "w", encoding="utf8") as handle:
        handle.write("OUTPUT_FOLDER=results\n")
    assert run("-e", "custom.env", "analyze", "sphere-equator", "--nodes", "64", "--eigenvalues", "2") == 0
    assert os.path.exists(os.path.join(workspace, "results", "sphere-equator_analysis.json"))


def test_flow_writes_trace_and_summary(workspace, capsys):
    argv = ("flow", "hyperbolic-waist", "--nodes", "32", "--t-final", "0.1", "--modes", "0", "--amp", "0.01")
    assert run(*argv) == 0
    out = capsys.readouterr().out
    assert "psi_max" in out
    csv_file = os.path.join(workspace, "output", "hyperbolic-waist_parametric.csv")
    with open(csv_file, encoding="utf8") as handle:
        lines = handle.read().splitlines()
    assert lines[0].startswith("t,psi_max,")
    assert len(lines) == 4
    with open(os.path.splitext(csv_file)[0] + ".json", encoding="utf8") as handle:
        summary = json.load(handle)
    assert summary["termination"] == "horizon"
    assert summary["config"]["nodes"] == 32


def test_g2_check_passes(workspace, capsys):
    assert run("g2-check", "--samples", "5", "--seeds", "1,2") == 0
    out = capsys.readouterr().out
    assert "seed 2" in out
    assert "All identity checks passed" in out


def test_hessian_probe_prints_the_report(workspace, capsys):
    assert run("hessian-probe", "hyperbolic-waist", "--samples", "64", "--radius", "0.2") == 0
    assert "violations: 0" in capsys.readouterr().out


def test_acceptance_criteria_without_flows(log):
    config = Config(log, dotenv_values(DEFAULT_CONFIG))
    runner = AcceptanceRunner(log, config)
    results = runner.run([1, 2, 3])
    assert [result.number for result in results] == [1, 2, 3]
    for result in results:
        assert result.passed, result


def test_criteria_over_their_runtime_budget_fail(log, monkeypatch):
    monkeypatch.setattr("helpers.AcceptanceHelper.RUNTIME_BUDGETS", {1: 0.0})
    runner = AcceptanceRunner(log, Config(log, dotenv_values(DEFAULT_CONFIG)))
    result = runner.criterion(1)
    assert not result.passed
    assert "exceeds the 0s budget" in result.details[-1]

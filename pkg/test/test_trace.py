import json
import os

import numpy as np
import pytest

from helpers.Exceptions import DiscretizationError, GridMismatchError
from helpers.TraceHelper import MONITOR_COLUMNS, FlowTrace, combined_column


def row(t: float, volume: float = 1.0, psi: float = 0.0, star_omega: float = 1.0) -> dict:
    values = {name: 0.0 for name in MONITOR_COLUMNS}
    values.update(
        {
            "t": t,
            "volume": volume,
            "psi_max": psi,
            "min_star_omega": star_omega,
            "max_one_minus_star_omega": 1.0 - star_omega,
        }
    )
    for c6 in (1.0, 2.0):
        values[combined_column(c6)] = 1.0 - star_omega + c6 * psi
    return values


def make_trace(log, rows) -> FlowTrace:
    trace = FlowTrace(log, "hyperbolic-waist", "parametric", [1.0, 2.0], dt=0.01)
    for values in rows:
        trace.append(values)
    return trace


def test_columns_follow_the_candidates(log):
    trace = make_trace(log, [])
    assert trace.columns == MONITOR_COLUMNS + ["combined_c1", "combined_c2"]
    assert combined_column(0.5) == "combined_c0.5"


def test_rows_need_every_column(log):
    trace = make_trace(log, [])
    values = row(0.0)
    del values["volume"]
    with pytest.raises(GridMismatchError):
        trace.append(values)


def test_required_monitors_must_be_finite(log):
    trace = make_trace(log, [])
    with pytest.raises(DiscretizationError):
        trace.append(row(0.0, volume=float("nan")))
    trace.append({**row(0.1), "psi_max": float("nan")})
    assert len(trace) == 1


def test_unknown_terminations_are_rejected(log):
    trace = make_trace(log, [])
    trace.terminate("blowup")
    assert trace.termination == "blowup"
    with pytest.raises(GridMismatchError):
        trace.terminate("exploded")


def test_volume_may_rise_within_the_step_tolerance(log):
    trace = make_trace(log, [row(0.0, 1.0), row(0.1, 1.0 + 5e-4), row(0.2, 0.9)])
    assert trace.volume_non_increasing()
    trace.append(row(0.3, 1.0))
    assert not trace.volume_non_increasing()


def test_smallest_monotone_combined_monitor(log):
    # 1 - *Omega rises by 0.01 per row while psi falls by 0.008
    rows = [row(1.0 + 0.1 * k, psi=0.1 - 0.008 * k, star_omega=1.0 - 0.01 * k) for k in range(10)]
    trace = make_trace(log, rows)
    assert not trace.non_increasing_after("combined_c1")
    assert trace.non_increasing_after("combined_c2")
    assert trace.smallest_monotone_c6() == 2.0


def test_eventual_monotonicity_looks_at_the_tail(log):
    values = [0.5, 0.7, 0.4, 0.3, 0.2, 0.1]
    trace = make_trace(log, [row(0.1 * k, psi=v) for k, v in enumerate(values)])
    assert trace.eventually_monotone("psi_max")
    assert not trace.eventually_monotone("psi_max", tail=1.0)
    with pytest.raises(GridMismatchError):
        trace.column("omega")


def test_csv_and_summary_round_trip(log, tmp_path):
    trace = make_trace(log, [row(0.0, psi=1e-3), row(0.5, psi=np.pi * 1e-4)])
    trace.terminate("horizon")
    trace.rates["psi_max"] = {"rate": 2.0, "r2": 1.0, "stderr": 0.0, "window": [0.0, 0.5]}
    filename = os.path.join(tmp_path, "out", "trace.csv")
    trace.write_csv(filename)
    trace.write_summary(os.path.join(tmp_path, "out", "trace.json"), {"nodes": 64})

    with open(filename, "r", encoding="utf8") as handle:
        header = handle.readline().strip().split(",")
    assert header == trace.columns
    with open(os.path.join(tmp_path, "out", "trace.json"), "r", encoding="utf8") as handle:
        summary = json.load(handle)
    assert summary["termination"] == "horizon"
    assert summary["config"] == {"nodes": 64}

    loaded = FlowTrace.read_csv(log, filename)
    assert loaded.termination == "horizon"
    assert loaded.scenario == "hyperbolic-waist"
    assert loaded.rates["psi_max"]["rate"] == 2.0
    assert loaded.c6_candidates == [1.0, 2.0]
    np.testing.assert_array_equal(loaded.column("psi_max"), trace.column("psi_max"))


def test_foreign_csv_headers_are_rejected(log, tmp_path):
    filename = os.path.join(tmp_path, "foreign.csv")
    with open(filename, "w", encoding="utf8") as handle:
        handle.write("t,psi\n0,1\n")
    with pytest.raises(GridMismatchError):
        FlowTrace.read_csv(log, filename)

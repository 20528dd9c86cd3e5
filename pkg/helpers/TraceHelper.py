import csv
import json
import os
from logging import Logger
from typing import Dict, List, Optional, Sequence

import numpy as np

from helpers.Exceptions import DiscretizationError, GridMismatchError

MONITOR_COLUMNS = [
    "t",
    "psi_max",
    "min_star_omega",
    "max_one_minus_star_omega",
    "sup_ii_difference",
    "l2_ii_difference",
    "volume",
    "sup_mean_curvature",
]
# columns that must stay finite on every row (the rest are NaN without a reference)
REQUIRED_FINITE = ["t", "volume", "sup_mean_curvature"]
TERMINATIONS = ("running", "converged", "horizon", "blowup", "left-tube", "left-graphical")


def combined_column(c6: float) -> str:
    return f"combined_c{c6:g}"


class TraceRow:
    """One sample of the flow monitors"""

    def __init__(self, values: Dict[str, float]) -> None:
        self.values = {name: float(value) for name, value in values.items()}

    def __repr__(self) -> str:
        """Returns the row as string"""
        return ", ".join(f"{name}: {value:.6g}" for name, value in self.values.items())

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def get_csv_fields(self, columns: Sequence[str]) -> List[str]:
        return [format(self.values.get(name, float("nan")), ".16e") for name in columns]


class FlowTrace:
    """Time series of flow monitors with its termination reason and fitted decay rates"""

    def __init__(
        self,
        log: Logger,
        scenario: str,
        representation: str,
        c6_candidates: Sequence[float] = (1.0, 2.0, 5.0, 10.0),
        dt: float = 0.0,
    ) -> None:
        self.log = log
        self.scenario = scenario
        self.representation = representation
        self.c6_candidates = [float(c) for c in c6_candidates]
        self.columns = MONITOR_COLUMNS + [combined_column(c) for c in self.c6_candidates]
        self.dt = dt
        self.rows: List[TraceRow] = []
        self.termination = "running"
        self.rates: Dict[str, Dict[str, float]] = {}

    def __repr__(self) -> str:
        """Returns the trace summary as string"""
        last = self.rows[-1]["t"] if self.rows else 0.0
        return (
            f"scenario: '{self.scenario}', representation: {self.representation}, rows: {len(self.rows)}, "
            f"t_end: {last:.6g}, termination: {self.termination}"
        )

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, values: Dict[str, float]) -> TraceRow:
        row = TraceRow(values)
        missing = [name for name in self.columns if name not in row.values]
        if missing:
            raise GridMismatchError(f"Trace row is missing the columns {missing}")
        broken = [name for name in REQUIRED_FINITE if not np.isfinite(row[name])]
        if broken:
            msg = f"{self.scenario}: non-finite monitors {broken} at t = {row['t']:.6g}"
            self.log.error(msg)
            raise DiscretizationError(msg)
        self.rows.append(row)
        return row

    def terminate(self, reason: str) -> None:
        if reason not in TERMINATIONS:
            raise GridMismatchError(f"Unknown termination reason '{reason}'")
        self.termination = reason
        self.log.info(f"{self.scenario}: {self.representation} flow terminated ({reason})")

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise GridMismatchError(f"Trace has no column '{name}'")
        return np.array([row[name] for row in self.rows])

    def volume_non_increasing(self) -> bool:
        """Volume may rise by at most 10 dt^2 between consecutive rows"""
        volume = self.column("volume")
        return bool(np.all(np.diff(volume) <= 10 * self.dt**2))

    def non_increasing_after(self, name: str, transient: float = 1.0, tolerance: float = 1e-12) -> bool:
        values = self.column(name)[self.column("t") >= transient]
        scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
        return bool(np.all(np.diff(values) <= tolerance * scale))

    def smallest_monotone_c6(self, transient: float = 1.0) -> Optional[float]:
        """Smallest candidate c6 whose combined monitor max(1 - *Omega + c6 psi) stops increasing"""
        for c6 in sorted(self.c6_candidates):
            if self.non_increasing_after(combined_column(c6), transient):
                return c6
        return None

    def eventually_monotone(self, name: str, tail: float = 0.5) -> bool:
        """Non-increasing over the last `tail` fraction of the rows"""
        values = self.column(name)
        start = int(len(values) * (1.0 - tail))
        return bool(np.all(np.diff(values[start:]) <= 0))

    def write_csv(self, filename: str) -> None:
        folder = os.path.dirname(os.path.abspath(filename))
        os.makedirs(folder, exist_ok=True)
        with open(filename, "w", encoding="utf8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow(row.get_csv_fields(self.columns))
        self.log.info(f"{self.scenario}: wrote {len(self.rows)} trace rows to '{filename}'")

    def write_summary(self, filename: str, config: Optional[Dict] = None) -> None:
        """JSON sidecar with the termination reason, fitted rates and the run configuration"""
        summary = {
            "scenario": self.scenario,
            "representation": self.representation,
            "termination": self.termination,
            "rates": self.rates,
            "dt": self.dt,
            "c6_candidates": self.c6_candidates,
            "config": config or {},
        }
        with open(filename, "w", encoding="utf8", newline="\n") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")

    @classmethod
    def read_csv(cls, log: Logger, filename: str, scenario: str = "", representation: str = "") -> "FlowTrace":
        with open(filename, "r", encoding="utf8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            candidates = [float(name[len("combined_c"):]) for name in header if name.startswith("combined_c")]
            trace = cls(log, scenario, representation, candidates)
            if header != trace.columns:
                raise GridMismatchError(f"Unexpected trace header in '{filename}'")
            for fields in reader:
                trace.rows.append(TraceRow(dict(zip(header, (float(field) for field in fields)))))
        summary = os.path.splitext(filename)[0] + ".json"
        if os.path.exists(summary):
            with open(summary, "r", encoding="utf8") as handle:
                data = json.load(handle)
            trace.scenario = data.get("scenario", scenario)
            trace.representation = data.get("representation", representation)
            trace.termination = data.get("termination", "running")
            trace.rates = data.get("rates", {})
            trace.dt = data.get("dt", 0.0)
        return trace

"""Solver reports: JSON documents, table rows and the JSON schema they obey."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = ["SolverReport", "REPORT_SCHEMA", "TABLE_COLUMNS", "append_table_row",
           "SCALING_SCHEMA"]

TABLE_COLUMNS = ["n_t", "#DOFs", "outer", "av. inner", "CPU s",
                 "level", "beta", "problem", "preconditioner", "workers", "converged"]

TIMING_PHASES = ["assembly", "setup", "fft", "block_solves", "orthogonalization", "solve",
                 "total"]


@dataclass
class SolverReport:
    """Outcome of one all-at-once solve.

    ``inner_per_block[j]`` is the mean inner iteration count of block ``j``
    over all preconditioner applications; ``inner_average`` is the mean over
    blocks and applications, so it equals the mean of ``inner_per_block``.
    """

    problem: str
    preconditioner: str
    level: int
    n_t: int
    T: float
    beta: float
    nu: float
    n_v: int
    n_p: int
    dofs: int
    workers: int
    outer_iterations: int
    converged: bool
    final_residual: float
    tol: float
    inner_average: float
    inner_per_block: list
    inner_failures: int
    residual_history: list
    timings: dict
    velocity_error: Optional[float] = None
    solution: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("solution")
        data["inner_per_block"] = [float(v) for v in self.inner_per_block]
        data["residual_history"] = [float(v) for v in self.residual_history]
        data["timings"] = {k: float(v) for k, v in self.timings.items()}
        return data

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "SolverReport":
        return cls(**json.loads(Path(path).read_text()))

    def table_row(self) -> dict:
        return {"n_t": self.n_t, "#DOFs": self.dofs, "outer": self.outer_iterations,
                "av. inner": f"{self.inner_average:.1f}",
                "CPU s": f"{self.timings['total']:.2f}", "level": self.level,
                "beta": f"{self.beta:g}", "problem": self.problem,
                "preconditioner": self.preconditioner, "workers": self.workers,
                "converged": int(self.converged)}


def append_table_row(path, report: SolverReport) -> None:
    """Append one row to a results CSV, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        if new:
            w.writeheader()
        w.writerow(report.table_row())


_NUM = {"type": "number"}
_NONNEG_INT = {"type": "integer", "minimum": 0}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "SolverReport",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "preconditioner", "level", "n_t", "T", "beta", "nu", "n_v",
                 "n_p", "dofs", "workers", "outer_iterations", "converged",
                 "final_residual", "tol", "inner_average", "inner_per_block",
                 "inner_failures", "residual_history", "timings", "velocity_error"],
    "properties": {
        "problem": {"enum": ["stokes_manufactured", "oseen_cavity"]},
        "preconditioner": {"enum": ["linear", "nonlinear", "oseen_uz"]},
        "level": {"type": "integer", "minimum": 1},
        "n_t": {"type": "integer", "minimum": 2},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "nu": {"type": "number", "exclusiveMinimum": 0},
        "n_v": {"type": "integer", "minimum": 1},
        "n_p": {"type": "integer", "minimum": 1},
        "dofs": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "outer_iterations": _NONNEG_INT,
        "converged": {"type": "boolean"},
        "final_residual": {"type": "number", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "inner_average": {"type": "number", "minimum": 0},
        "inner_per_block": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "inner_failures": _NONNEG_INT,
        "residual_history": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "timings": {
            "type": "object",
            "required": TIMING_PHASES,
            "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in TIMING_PHASES},
        },
        "velocity_error": {"anyOf": [{"type": "null"}, _NUM]},
    },
}

SCALING_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "ScalingReport",
    "type": "object",
    "required": ["mode", "workers", "n_t", "times", "outer_iterations", "slope", "ratio",
                 "available_workers"],
    "properties": {
        "mode": {"enum": ["strong", "weak"]},
        "workers": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "n_t": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "outer_iterations": {"type": "array", "items": _NONNEG_INT},
        "slope": {"anyOf": [{"type": "null"}, _NUM]},
        "ratio": _NUM,
        "available_workers": {"type": "integer", "minimum": 1},
    },
}

"""Per-iteration solver traces and the common unmixing result container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AbundanceMatrix, HsiImage

__all__ = ["IterationRecord", "SolverTrace", "UnmixResult"]


@dataclass(frozen=True)
class IterationRecord:
    """One solver iteration.

    ``cost`` is the objective at the accepted (feasible) iterate;
    ``cost_accept`` is the objective at the point the step-size test
    accepted, before any box projection. ``rmse_a`` is populated only when
    ground-truth abundances were supplied to the solver.
    """

    iteration: int
    cost: float
    cost_accept: float
    step: float
    rel_change_a: float
    rel_change_s: float
    time_s: float
    rmse_a: float = math.nan


class SolverTrace:
    """Ordered list of :class:`IterationRecord` plus the starting cost."""

    _CSV_HEADER = "iteration,cost,cost_accept,step,rel_change_a,rel_change_s,time_s,rmse_a"

    def __init__(self, initial_cost: float = math.nan):
        self.initial_cost = float(initial_cost)
        self.records: list[IterationRecord] = []

    def append(self, record: IterationRecord) -> None:
        if not math.isfinite(record.cost):
            raise ValueError(f"non-finite cost at iteration {record.iteration}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> IterationRecord:
        return self.records[i]

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def write_csv(self, path: str | Path) -> None:
        lines = [self._CSV_HEADER]
        for r in self.records:
            lines.append(
                "%d,%s,%s,%s,%s,%s,%s,%s"
                % (
                    r.iteration,
                    repr(r.cost),
                    repr(r.cost_accept),
                    repr(r.step),
                    repr(r.rel_change_a),
                    repr(r.rel_change_s),
                    repr(r.time_s),
                    repr(r.rmse_a),
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


@dataclass(frozen=True)
class UnmixResult:
    """Unmixing output common to all methods.

    ``abundances`` is normalized; ``s_x``/``s_e`` hold the pixel and
    endmember scaling factors (all-ones when a method does not estimate
    them) and ``reconstruction`` equals ``E diag(s_e) A diag(s_x)``
    recomputed from these factors.
    """

    abundances: AbundanceMatrix
    s_x: np.ndarray
    s_e: np.ndarray
    reconstruction: HsiImage
    trace: SolverTrace = field(default_factory=SolverTrace, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.trace)

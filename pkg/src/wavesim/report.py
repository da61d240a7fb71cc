"""Cross-solver comparison and CSV artifacts.

The error measure follows the evaluation protocol used throughout: the
wavelet solution is evaluated at every accepted grid point of the transient
analysis and the maximum absolute difference is reported per printed
variable.  CSV output is plain, deterministic, full-precision text.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .galerkin import WaveletResult
from .transient import TranResult

__all__ = [
    "CompareReport",
    "max_abs_diff",
    "write_solution_csv",
    "write_stats_csv",
    "write_compare_report",
    "wavelet_sample_times",
]


@dataclass(frozen=True)
class CompareReport:
    labels: tuple[str, ...]
    max_abs_error: tuple[float, ...]
    wavelet_grid_size: int
    tran_grid_size: int
    wavelet_seconds: float
    tran_seconds: float
    wavelet_tol: float
    tran_reltol: float


def max_abs_diff(
    wavelet: WaveletResult, tran: TranResult, variables
) -> np.ndarray:
    """Per-variable max |wavelet - transient| over the transient grid points."""
    variables = list(variables)
    if tran.grid[0] < 0.0 or tran.grid[-1] > wavelet.tstop * (1.0 + 1e-12):
        raise ValueError("transient grid extends beyond the wavelet solution")
    worst = np.zeros(len(variables))
    for t, state in zip(tran.grid, tran.states):
        w = wavelet.eval(min(float(t), wavelet.tstop))
        diff = np.abs(w[variables] - state[variables])
        np.maximum(worst, diff, out=worst)
    return worst


def _format(value: float) -> str:
    return f"{value:.17g}"


def write_solution_csv(path, labels, times, values) -> None:
    """Solution table: header ``t,<label>...`` then one row per time."""
    times = np.asarray(times)
    values = np.asarray(values)
    with open(path, "w", newline="\n") as handle:
        handle.write("t," + ",".join(labels) + "\n")
        for t, row in zip(times, values):
            handle.write(_format(t) + "," + ",".join(_format(v) for v in row) + "\n")


def wavelet_sample_times(result: WaveletResult, tstop: float, samples: int) -> np.ndarray:
    """Uniform sample times plus every spline knot, sorted and deduplicated."""
    uniform = np.linspace(0.0, tstop, samples)
    return np.unique(np.concatenate([uniform, result.knot_times()]))


def write_stats_csv(path, rows) -> None:
    """Sweep statistics: solver,tol,cpu_seconds,grid_size,max_abs_error."""
    with open(path, "w", newline="\n") as handle:
        handle.write("solver,tol,cpu_seconds,grid_size,max_abs_error\n")
        for solver, tol, seconds, grid, error in rows:
            handle.write(
                f"{solver},{_format(tol)},{_format(seconds)},{grid},{_format(error)}\n"
            )


def write_compare_report(path, report: CompareReport) -> None:
    with open(path, "w", newline="\n") as handle:
        handle.write(
            "variable,max_abs_error,wavelet_tol,tran_reltol,"
            "wavelet_grid_size,tran_grid_size,wavelet_seconds,tran_seconds\n"
        )
        for label, error in zip(report.labels, report.max_abs_error):
            handle.write(
                f"{label},{_format(error)},{_format(report.wavelet_tol)},"
                f"{_format(report.tran_reltol)},{report.wavelet_grid_size},"
                f"{report.tran_grid_size},{_format(report.wavelet_seconds)},"
                f"{_format(report.tran_seconds)}\n"
            )

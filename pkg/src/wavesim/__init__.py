"""Adaptive spline-wavelet circuit simulator.

Solves charge/flux-oriented MNA circuit equations on nested spline
multiresolution spaces with damped Newton iteration, and validates the result
against a built-in classical trapezoidal transient solver.
"""
from importlib import resources

from .galerkin import WaveletConfig, WaveletResult, solve, solve_window
from .mna import MnaSystem, OperatingPoint, SolverError, dc_operating_point
from .netlist import Circuit, ElaborationError, NetlistError, elaborate, parse
from .report import CompareReport, max_abs_diff
from .splines import KnotVector, SplineCurve, SplineSpace
from .transient import TranConfig, TranResult, solve_transient

__all__ = [
    "WaveletConfig",
    "WaveletResult",
    "solve",
    "solve_window",
    "MnaSystem",
    "OperatingPoint",
    "SolverError",
    "dc_operating_point",
    "Circuit",
    "ElaborationError",
    "NetlistError",
    "elaborate",
    "parse",
    "CompareReport",
    "max_abs_diff",
    "KnotVector",
    "SplineCurve",
    "SplineSpace",
    "TranConfig",
    "TranResult",
    "solve_transient",
    "bundled_netlist_path",
]

__version__ = "0.1.0"


def bundled_netlist_path(name: str):
    """Filesystem path of one of the packaged example netlists."""
    return resources.files(__name__).joinpath("netlists", name)

"""Charge/flux-oriented modified nodal analysis.

Builds the functions of the circuit DAE  d/dt q(x) + f(x) = s(t)  from
element stamps, together with their exact Jacobians, and computes the DC
operating point by damped Newton with gmin stepping as a fallback.

The unknown vector x holds node potentials followed by branch currents
(voltage sources, then inductors).  Stamps are accumulated in arrays with one
extra scratch row for ground, which keeps the stamps globally conservative;
the public evaluators drop that row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netlist import (
    GROUND,
    Behavioral,
    Capacitor,
    Circuit,
    Diode,
    ISource,
    Inductor,
    Resistor,
    VSource,
    Vccs,
)

__all__ = [
    "SolverError",
    "StampError",
    "DcConvergenceError",
    "MnaSystem",
    "OperatingPoint",
    "dc_operating_point",
]

# exp() argument cap for diode stamps; beyond it the characteristic continues
# as its tangent line so damped Newton cannot overflow.
_DIODE_EXP_LIMIT = 40.0


class SolverError(Exception):
    """Base class for numerical failures in any of the solvers."""


class StampError(SolverError):
    pass


class DcConvergenceError(SolverError):
    def __init__(self, message: str, x_last: np.ndarray, residual_norm: float):
        self.x_last = x_last
        self.residual_norm = residual_norm
        super().__init__(f"{message} (residual max-norm {residual_norm:.3e})")


def _limited_exp(u: float) -> tuple[float, float]:
    """exp(u) with first-order linear extension beyond the overflow guard."""
    if u <= _DIODE_EXP_LIMIT:
        e = np.exp(u)
        return e, e
    cap = np.exp(_DIODE_EXP_LIMIT)
    return cap * (1.0 + (u - _DIODE_EXP_LIMIT)), cap


class MnaSystem:
    """Evaluator context for q, f, s and their Jacobians on one circuit."""

    def __init__(self, circuit: Circuit, gmin: float = 1e-12):
        self.circuit = circuit
        self.gmin = gmin
        self.size = circuit.size
        self.num_nodes = circuit.num_nodes
        self._ground = self.size  # scratch row/column index
        nall = self.size + 1

        # Constant (structural) parts.  The reactive stamps are linear for
        # this element set, so jac_q never depends on x.
        charge = np.zeros((nall, nall))
        static = np.zeros((nall, nall))
        self._diodes: list[Diode] = []
        self._behavioral: list[Behavioral] = []
        self._vsources: list[VSource] = []
        self._isources: list[ISource] = []

        def g(idx: int) -> int:
            return self._ground if idx == GROUND else idx

        for node in range(self.num_nodes):
            static[node, node] += gmin
            static[self._ground, node] -= gmin
        for element in circuit.elements:
            if isinstance(element, Resistor):
                a, b = g(element.a), g(element.b)
                conductance = 1.0 / element.ohms
                static[a, a] += conductance
                static[a, b] -= conductance
                static[b, b] += conductance
                static[b, a] -= conductance
            elif isinstance(element, Capacitor):
                a, b = g(element.a), g(element.b)
                charge[a, a] += element.farads
                charge[a, b] -= element.farads
                charge[b, b] += element.farads
                charge[b, a] -= element.farads
            elif isinstance(element, Inductor):
                a, b, row = g(element.a), g(element.b), element.branch
                charge[row, row] += element.henries
                static[a, row] += 1.0
                static[b, row] -= 1.0
                static[row, a] -= 1.0
                static[row, b] += 1.0
            elif isinstance(element, VSource):
                a, b, row = g(element.a), g(element.b), element.branch
                static[a, row] += 1.0
                static[b, row] -= 1.0
                static[row, a] += 1.0
                static[row, b] -= 1.0
                self._vsources.append(element)
            elif isinstance(element, ISource):
                self._isources.append(element)
            elif isinstance(element, Vccs):
                a, b = g(element.a), g(element.b)
                cp, cm = g(element.ctrl_p), g(element.ctrl_m)
                static[a, cp] += element.gm
                static[a, cm] -= element.gm
                static[b, cp] -= element.gm
                static[b, cm] += element.gm
            elif isinstance(element, Diode):
                self._diodes.append(element)
            elif isinstance(element, Behavioral):
                self._behavioral.append(element)
            else:
                raise StampError(f"unknown element type {type(element).__name__}")

        charge.setflags(write=False)
        static.setflags(write=False)
        self._charge = charge
        self._static = static
        self._charge_abs = np.abs(charge)
        self._static_abs = np.abs(static)
        self._jac_q = np.array(charge[: self.size, : self.size])
        self._jac_q.setflags(write=False)

    # -- helpers -----------------------------------------------------------

    def _with_ground(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"state vector must have length {self.size}")
        return np.concatenate([x, [0.0]])

    def _diode_current(self, element: Diode, vd: float) -> tuple[float, float]:
        vt = element.thermal * element.emission
        e, de = _limited_exp(vd / vt)
        return element.saturation * (e - 1.0), element.saturation * de / vt

    def _behavioral_env(self, element: Behavioral, xg: np.ndarray) -> dict[str, float]:
        return {name: (0.0 if idx == GROUND else float(xg[idx])) for name, idx in element.refs}

    # -- evaluators --------------------------------------------------------

    def eval_q(self, x: np.ndarray) -> np.ndarray:
        """Charges and fluxes q(x)."""
        xg = self._with_ground(x)
        return self._charge[: self.size] @ xg

    def jac_q(self, x: np.ndarray) -> np.ndarray:
        return self._jac_q

    def _f_full(self, x: np.ndarray) -> np.ndarray:
        xg = self._with_ground(x)
        out = self._static @ xg
        for element in self._diodes:
            va = 0.0 if element.a == GROUND else xg[element.a]
            vb = 0.0 if element.b == GROUND else xg[element.b]
            current, _ = self._diode_current(element, va - vb)
            if not np.isfinite(current):
                raise StampError(f"non-finite current in diode {element.name!r}")
            a = self._ground if element.a == GROUND else element.a
            b = self._ground if element.b == GROUND else element.b
            out[a] += current
            out[b] -= current
        for element in self._behavioral:
            current = element.expr.value(self._behavioral_env(element, xg))
            if not np.isfinite(current):
                raise StampError(f"non-finite current in source {element.name!r}")
            a = self._ground if element.a == GROUND else element.a
            b = self._ground if element.b == GROUND else element.b
            out[a] += current
            out[b] -= current
        return out

    def eval_f(self, x: np.ndarray) -> np.ndarray:
        """Static contributions f(x) (resistive currents, branch equations)."""
        return self._f_full(x)[: self.size]

    def jac_f(self, x: np.ndarray) -> np.ndarray:
        xg = self._with_ground(x)
        out = np.array(self._static)
        for element in self._diodes:
            va = 0.0 if element.a == GROUND else xg[element.a]
            vb = 0.0 if element.b == GROUND else xg[element.b]
            _, conductance = self._diode_current(element, va - vb)
            a = self._ground if element.a == GROUND else element.a
            b = self._ground if element.b == GROUND else element.b
            out[a, a] += conductance
            out[a, b] -= conductance
            out[b, b] += conductance
            out[b, a] -= conductance
        for element in self._behavioral:
            grads = element.expr.partials(self._behavioral_env(element, xg))
            a = self._ground if element.a == GROUND else element.a
            b = self._ground if element.b == GROUND else element.b
            for name, idx in element.refs:
                if idx == GROUND:
                    continue
                gval = grads.get(name, 0.0)
                out[a, idx] += gval
                out[b, idx] -= gval
        return out[: self.size, : self.size]

    def _s_full(self, t: float) -> np.ndarray:
        out = np.zeros(self.size + 1)
        for element in self._vsources:
            out[element.branch] = element.waveform.eval(t)
        for element in self._isources:
            value = element.waveform.eval(t)
            a = self._ground if element.a == GROUND else element.a
            b = self._ground if element.b == GROUND else element.b
            out[a] -= value
            out[b] += value
        return out

    def eval_s(self, t: float) -> np.ndarray:
        """Independent-source contributions s(t)."""
        if t < 0.0:
            raise ValueError("source evaluation requires t >= 0")
        return self._s_full(t)[: self.size]

    # Gross per-row stamp magnitudes (every element contribution taken in
    # absolute value before accumulation).  These never cancel, so they serve
    # as flow references when normalizing residual rows.

    def eval_q_abs(self, x: np.ndarray) -> np.ndarray:
        xg = np.abs(self._with_ground(x))
        return self._charge_abs[: self.size] @ xg

    def eval_f_abs(self, x: np.ndarray) -> np.ndarray:
        xg = self._with_ground(x)
        out = self._static_abs[: self.size] @ np.abs(xg)
        for element in self._diodes:
            va = 0.0 if element.a == GROUND else xg[element.a]
            vb = 0.0 if element.b == GROUND else xg[element.b]
            current, _ = self._diode_current(element, va - vb)
            magnitude = abs(current)
            if element.a != GROUND:
                out[element.a] += magnitude
            if element.b != GROUND:
                out[element.b] += magnitude
        for element in self._behavioral:
            magnitude = abs(element.expr.value(self._behavioral_env(element, xg)))
            if element.a != GROUND:
                out[element.a] += magnitude
            if element.b != GROUND:
                out[element.b] += magnitude
        return out

    def eval_s_abs(self, t: float) -> np.ndarray:
        out = np.zeros(self.size)
        for element in self._vsources:
            out[element.branch] += abs(element.waveform.eval(t))
        for element in self._isources:
            magnitude = abs(element.waveform.eval(t))
            if element.a != GROUND:
                out[element.a] += magnitude
            if element.b != GROUND:
                out[element.b] += magnitude
        return out

    def conservation_residual(self, x: np.ndarray, t: float) -> float:
        """Sum of f(x) - s(t) over every KCL row including the ground row.

        The element stamps inject each current with opposite signs into two
        KCL rows, so this sum is zero up to roundoff for any state.
        """
        total = self._f_full(x) - self._s_full(t)
        rows = list(range(self.num_nodes)) + [self._ground]
        return float(total[rows].sum())

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        return self.circuit.breakpoints(t0, t1)


@dataclass(frozen=True)
class OperatingPoint:
    x0: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    history: tuple[tuple[float, float, int, bool], ...] = field(default_factory=tuple)
    # history rows: (extra gmin, starting residual norm, iterations, converged)


def _damped_newton(
    residual, jacobian, x0, tol, max_iter, lambda_min=2.0 ** -12
) -> tuple[np.ndarray, int, bool, float]:
    """Newton iteration with halving line search (Armijo factor 1 - lambda/4)."""
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.max(np.abs(r)))
    iterations = 0
    while norm >= tol and iterations < max_iter:
        try:
            step = np.linalg.solve(jacobian(x), -r)
        except np.linalg.LinAlgError:
            return x, iterations, False, norm
        accepted = False
        lam = 1.0
        while lam >= lambda_min:
            x_try = x + lam * step
            try:
                r_try = residual(x_try)
            except (SolverError, FloatingPointError):
                r_try = None
            if r_try is not None and np.all(np.isfinite(r_try)):
                norm_try = float(np.max(np.abs(r_try)))
                if norm_try <= (1.0 - 0.25 * lam) * norm or norm_try < tol:
                    x, r, norm = x_try, r_try, norm_try
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return x, iterations, False, norm
        iterations += 1
    return x, iterations, norm < tol, norm


def dc_operating_point(
    system: MnaSystem,
    tol: float = 1e-9,
    max_iter: int = 100,
    gmin_start: float = 1e-2,
    gmin_stop: float = 1e-12,
) -> OperatingPoint:
    """Solve f(x) = s(0) by damped Newton from x = 0, with gmin stepping.

    If the plain solve fails, a shrinking extra conductance to ground
    (`gmin_start` down to `gmin_stop`, factor 10 per stage, warm-started from
    the previous stage) globalizes the iteration; a final stage removes the
    extra conductance.  Raises :class:`DcConvergenceError` if even the stepped
    sequence fails.
    """
    s0 = system.eval_s(0.0)
    nodes = np.arange(system.num_nodes)

    def make_residual(extra: float):
        def residual(x):
            r = system.eval_f(x) - s0
            if extra:
                r[nodes] += extra * x[nodes]
            return r

        def jac(x):
            j = system.jac_f(x)
            if extra:
                j = j.copy()
                j[nodes, nodes] += extra
            return j

        return residual, jac

    history: list[tuple[float, float, int, bool]] = []
    total_iterations = 0

    residual, jac = make_residual(0.0)
    x = np.zeros(system.size)
    start_norm = float(np.max(np.abs(residual(x))))
    x, iters, ok, norm = _damped_newton(residual, jac, x, tol, max_iter)
    history.append((0.0, start_norm, iters, ok))
    total_iterations += iters
    if ok:
        return OperatingPoint(x, True, total_iterations, norm, tuple(history))

    stages = []
    extra = gmin_start
    while extra >= gmin_stop * (1.0 - 1e-12):
        stages.append(extra)
        extra /= 10.0
    stages.append(0.0)

    x = np.zeros(system.size)
    for extra in stages:
        residual, jac = make_residual(extra)
        start = residual(x)
        if not np.all(np.isfinite(start)):
            x = np.zeros(system.size)
            start = residual(x)
        start_norm = float(np.max(np.abs(start)))
        x, iters, ok, norm = _damped_newton(residual, jac, x, tol, max_iter)
        history.append((extra, start_norm, iters, ok))
        total_iterations += iters
        if not ok and extra == 0.0:
            raise DcConvergenceError("operating point did not converge", x, norm)
    return OperatingPoint(x, True, total_iterations, norm, tuple(history))

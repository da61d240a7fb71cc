"""Classical adaptive-step transient analysis (the comparison oracle).

Integrates  d/dt q(x) + f(x) = s(t)  with the trapezoidal rule applied to the
charges:

    q(x_{k+1}) - q(x_k) = (h/2) [s_{k+1} - f(x_{k+1}) + s_k - f(x_k)]

Each step is solved by damped Newton with a linear-extrapolation predictor.
The local error is estimated by step doubling (one h step against two h/2
steps); the step is accepted when the per-component error stays within
reltol * |x| + abstol, and source corner times are forced onto the grid.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .mna import MnaSystem, SolverError

__all__ = ["TranConfig", "TranStats", "TranResult", "TransientFailure", "solve_transient"]

_MAX_NEWTON_HALVINGS = 10
_STEP_GROWTH = 4.0
_STEP_SHRINK = 0.25
_SAFETY = 0.9


class TransientFailure(SolverError):
    def __init__(self, message: str, t: float, x_last: np.ndarray):
        self.t = t
        self.x_last = x_last
        super().__init__(f"{message} at t = {t:.6e}")


@dataclass
class TranConfig:
    tstop: float
    dt_init: float | None = None
    dt_max: float | None = None
    reltol: float = 1e-4
    abstol_v: float = 1e-9
    abstol_i: float = 1e-12
    newton_max_iter: int = 25

    def __post_init__(self):
        if self.tstop <= 0.0:
            raise ValueError("tstop must be positive")
        if self.dt_max is None:
            self.dt_max = self.tstop / 50.0
        if self.dt_init is None:
            self.dt_init = min(self.tstop * 1e-4, self.dt_max)
        if not 0.0 < self.dt_init <= self.dt_max <= self.tstop:
            raise ValueError("need 0 < dt_init <= dt_max <= tstop")
        if min(self.reltol, self.abstol_v, self.abstol_i) <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class TranStats:
    steps: int = 0
    newton_iterations: int = 0
    rejected: int = 0
    seconds: float = 0.0


@dataclass(frozen=True)
class TranResult:
    grid: np.ndarray
    states: np.ndarray
    stats: TranStats

    def sample(self, t: float) -> np.ndarray:
        """State at time t by linear interpolation; exact at grid points."""
        if t < self.grid[0] or t > self.grid[-1]:
            raise ValueError(f"sample time {t!r} outside [0, {self.grid[-1]!r}]")
        idx = int(np.searchsorted(self.grid, t))
        if idx < self.grid.size and self.grid[idx] == t:
            return self.states[idx].copy()
        lo, hi = idx - 1, idx
        w = (t - self.grid[lo]) / (self.grid[hi] - self.grid[lo])
        return (1.0 - w) * self.states[lo] + w * self.states[hi]

    def sample_many(self, times) -> np.ndarray:
        return np.array([self.sample(float(t)) for t in times])


def _step_newton(system, x_base, q_base, f_base, s_base, t_new, h, x_pred, cfg, wtol):
    """Solve one trapezoidal step; returns (x, iterations) or None on failure."""
    s_new = system.eval_s(t_new)
    rhs_const = q_base + 0.5 * h * (s_new + s_base - f_base)

    def residual(x):
        return system.eval_q(x) + 0.5 * h * system.eval_f(x) - rhs_const

    x = np.array(x_pred)
    r = residual(x)
    # Residual floor: declares convergence once the step equation is satisfied
    # to roundoff relative to its own terms.
    q_scale = float(np.max(np.abs(q_base))) + 0.5 * h * float(
        np.max(np.abs(f_base)) + np.max(np.abs(s_base)) + np.max(np.abs(s_new))
    )
    r_floor = 1e-12 * q_scale + 1e-300
    norm = float(np.max(np.abs(r)))
    for iteration in range(1, cfg.newton_max_iter + 1):
        if norm <= r_floor:
            return x, iteration - 1
        jac = system.jac_q(x) + 0.5 * h * system.jac_f(x)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        accepted = False
        while lam >= 2.0 ** -12:
            x_try = x + lam * step
            try:
                r_try = residual(x_try)
            except SolverError:
                r_try = None
            if r_try is not None and np.all(np.isfinite(r_try)):
                norm_try = float(np.max(np.abs(r_try)))
                if norm_try <= (1.0 - 0.25 * lam) * norm or norm_try <= r_floor:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return None
        x, r, norm = x_try, r_try, norm_try
        if float(np.max(np.abs(lam * step) / wtol(x))) <= 1e-2 or norm <= r_floor:
            return x, iteration
    return None


def solve_transient(system: MnaSystem, x0: np.ndarray, cfg: TranConfig) -> TranResult:
    """Adaptive trapezoidal integration of the circuit DAE from a consistent x0."""
    start_time = time.perf_counter()
    is_current = system.circuit.variable_is_current()
    abstol = np.where(is_current, cfg.abstol_i, cfg.abstol_v)

    def wtol(x):
        return cfg.reltol * np.abs(x) + abstol

    breakpoints = [t for t in system.breakpoints(0.0, cfg.tstop) if t > 0.0]
    if not breakpoints or breakpoints[-1] < cfg.tstop:
        breakpoints.append(cfg.tstop)
    breakpoints = np.unique(np.asarray(breakpoints))

    x = np.array(x0, dtype=float)
    grid = [0.0]
    states = [x.copy()]
    stats = TranStats()
    h = cfg.dt_init
    h_floor = cfg.tstop * 1e-15
    t = 0.0
    bp_pos = 0
    x_prev = None
    t_prev = None

    while t < cfg.tstop:
        while breakpoints[bp_pos] <= t * (1.0 + 1e-15):
            bp_pos += 1
        next_bp = breakpoints[bp_pos]
        h_try = min(h, cfg.dt_max, next_bp - t)
        hit_bp = h_try >= (next_bp - t) * (1.0 - 1e-12)
        if hit_bp:
            h_try = next_bp - t

        q_base = system.eval_q(x)
        f_base = system.eval_f(x)
        s_base = system.eval_s(t)

        halvings = 0
        while True:
            if h_try < h_floor:
                raise TransientFailure("step size underflow", t, x)
            t_new = next_bp if hit_bp else t + h_try

            if x_prev is None:
                predictor = x
            else:
                predictor = x + (x - x_prev) * (h_try / (t - t_prev))
            big = _step_newton(
                system, x, q_base, f_base, s_base, t_new, h_try, predictor, cfg, wtol
            )
            if big is None:
                halvings += 1
                if halvings > _MAX_NEWTON_HALVINGS:
                    raise TransientFailure("Newton iteration failed", t, x)
                h_try *= 0.5
                hit_bp = False
                continue
            x_big, iters_big = big
            stats.newton_iterations += iters_big

            t_mid = t + 0.5 * h_try
            mid = _step_newton(
                system, x, q_base, f_base, s_base, t_mid, 0.5 * h_try,
                0.5 * (x + x_big), cfg, wtol,
            )
            if mid is None:
                halvings += 1
                if halvings > _MAX_NEWTON_HALVINGS:
                    raise TransientFailure("Newton iteration failed", t, x)
                h_try *= 0.5
                hit_bp = False
                continue
            x_mid, iters_mid = mid
            stats.newton_iterations += iters_mid
            half = _step_newton(
                system, x_mid, system.eval_q(x_mid), system.eval_f(x_mid),
                system.eval_s(t_mid), t_new, 0.5 * h_try, x_big, cfg, wtol,
            )
            if half is None:
                halvings += 1
                if halvings > _MAX_NEWTON_HALVINGS:
                    raise TransientFailure("Newton iteration failed", t, x)
                h_try *= 0.5
                hit_bp = False
                continue
            x_half, iters_half = half
            stats.newton_iterations += iters_half

            # Richardson estimate of the h-step error (trapezoidal is order 2).
            err = (4.0 / 3.0) * np.abs(x_big - x_half)
            tol_vec = cfg.reltol * np.maximum(np.abs(x_big), np.abs(x)) + abstol
            ratio = float(np.max(err / tol_vec))
            scale = _SAFETY * (1.0 / max(ratio, 1e-12)) ** (1.0 / 3.0)
            h_next = h_try * min(_STEP_GROWTH, max(_STEP_SHRINK, scale))
            if ratio <= 1.0:
                x_prev, t_prev = x, t
                x = x_big
                t = t_new
                grid.append(t)
                states.append(x.copy())
                stats.steps += 1
                h = min(h_next, cfg.dt_max)
                break
            stats.rejected += 1
            h_try = h_next
            hit_bp = False

    stats.seconds = time.perf_counter() - start_time
    return TranResult(np.asarray(grid), np.asarray(states), stats)

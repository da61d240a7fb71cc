"""Petrov-Galerkin spline discretization with nested adaptive refinement.

The circuit unknowns over a time window [a, b] are expanded in a clamped
B-spline space and the DAE residual is tested against indicator functions of
the Greville intervals [xi_{l-1}, xi_l].  With indicator test functions the
time-derivative term integrates exactly to an endpoint difference of the
charges, so residual block l reads

    q(x(xi_l)) - q(x(xi_{l-1})) + integral over [xi_{l-1}, xi_l] of (f(x) - s)

and block 0 pins the first coefficient to the window's initial value (clamped
bases interpolate their first coefficient).  That yields exactly as many
vector equations as coefficient rows.

The nonlinear system is solved by damped Newton.  A solve starts on a coarse
space; per-span residual-density indicators mark spans for midpoint
refinement, the iterate is prolonged exactly by knot insertion and Newton
resumes on the finer space, until the indicators drop below the target or the
pass budget is exhausted.  Long runs are split into windows, each warm-started
from the previous window's solution.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mna import MnaSystem, SolverError, dc_operating_point
from .multires import RefinementPlan, midpoint_refine
from .splines import (
    KnotVector,
    SplineCurve,
    SplineSpace,
    curve_from_samples,
    space_from_breakpoints,
)

__all__ = [
    "GalerkinSystem",
    "WaveletConfig",
    "WaveletSolveError",
    "NewtonOutcome",
    "PassStats",
    "WindowStats",
    "WindowSolution",
    "WaveletResult",
    "assemble_residual",
    "assemble_jacobian",
    "newton_solve",
    "refine_indicators",
    "flow_density_reference",
    "solve_window",
    "solve",
]

_DENSE_LIMIT = 500  # use a dense solve below this many scalar unknowns

# The span indicators are local defects; the accumulated solution error runs
# a small factor above them, so refinement targets this fraction of the
# configured tolerance.
_INDICATOR_SAFETY = 0.2


class WaveletSolveError(SolverError):
    pass


@dataclass
class WaveletConfig:
    """Knobs of the adaptive spline solver.

    `tol` is the dimensionless target accuracy: refinement stops once every
    span's residual density falls below `tol` relative to the solution's own
    charge-flow density (see :func:`flow_density_reference`).  The Newton
    tolerances are relative coefficient accuracies, also unit-free.
    """

    tol: float = 1e-4
    order: int = 4
    initial_spans: int = 8
    max_passes: int = 20
    refine_fraction: float = 0.25
    newton_tol: float = 1e-10
    newton_step_tol: float = 1e-10
    newton_max_iter: int = 50
    damping_min: float = 2.0 ** -12
    window: float | None = None
    quad_points: int | None = None
    seed_breakpoints: bool = True
    voltage_floor: float = 1e-6
    current_floor: float = 1e-9

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if not 2 <= self.order <= 6:
            raise ValueError("spline order must be in 2..6")
        if not 0.0 < self.refine_fraction <= 1.0:
            raise ValueError("refine_fraction must be in (0, 1]")
        if self.initial_spans < 1:
            raise ValueError("initial_spans must be >= 1")


class GalerkinSystem:
    """Assembly context: space, test partition, quadrature and scaling.

    Immutable after construction; quadrature nodes, basis values and source
    samples for every test interval are precomputed here so that residual and
    Jacobian assembly only evaluate the circuit functions.
    """

    def __init__(
        self,
        system: MnaSystem,
        space: SplineSpace,
        x0: np.ndarray,
        quad_points: int | None = None,
        scale: np.ndarray | None = None,
    ):
        self.system = system
        self.space = space
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (system.size,):
            raise ValueError("x0 must match the circuit unknown count")
        self.quad_points = quad_points if quad_points is not None else space.order
        if scale is None:
            scale = np.ones(system.size)
        self.scale = np.asarray(scale, dtype=float)
        self.xi = space.greville()
        if np.any(np.diff(self.xi) <= 0.0):
            raise ValueError("test partition requires strictly increasing Greville points")

        a, b = space.domain
        extra = system.breakpoints(a, b)
        self._interval_quads = []
        for left, right in zip(self.xi[:-1], self.xi[1:]):
            nodes, weights = _split_quadrature(
                space, float(left), float(right), self.quad_points, extra
            )
            basis = [space.eval_basis(float(t)) for t in nodes]
            svals = np.array([system.eval_s(float(t)) for t in nodes])
            self._interval_quads.append((nodes, weights, basis, svals))
        self._xi_basis = [space.eval_basis(float(t)) for t in self.xi]

    @property
    def num_blocks(self) -> int:
        return self.space.dimension

    def scaled_norm(self, blocks: np.ndarray) -> float:
        """Max over entries of |value| / scale of its circuit variable."""
        resh = blocks.reshape(-1, self.system.size)
        return float(np.max(np.abs(resh) / self.scale))

    def row_norm(self, blocks: np.ndarray, row_reference: np.ndarray) -> float:
        """Max over entries of |value| / per-row reference magnitude.

        Residual rows mix units (charges on KCL rows, flux-like terms on
        branch rows), so convergence and refinement tests normalize each row
        by a reference built from that row's own magnitudes.
        """
        return float(np.max(np.abs(blocks) / row_reference))

    def curve_value(self, curve: SplineCurve, basis_entry) -> np.ndarray:
        first, vals = basis_entry
        return vals @ curve.coefficients[first : first + self.space.order]


def _split_quadrature(space, a, b, points, extra_breaks):
    """Composite Gauss nodes on [a, b]: split at knots and source corners."""
    cuts = extra_breaks[(extra_breaks > a) & (extra_breaks < b)]
    edges = np.unique(np.concatenate([[a], cuts, [b]]))
    nodes = []
    weights = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sub_nodes, sub_weights = space.quadrature_nodes(float(lo), float(hi), points)
        nodes.append(sub_nodes)
        weights.append(sub_weights)
    return np.concatenate(nodes), np.concatenate(weights)


def assemble_residual(gs: GalerkinSystem, curve: SplineCurve) -> np.ndarray:
    """Stacked residual blocks (length n*N): constraint block then intervals."""
    system = gs.system
    n, N = gs.num_blocks, system.size
    out = np.empty(n * N)
    out[:N] = curve.coefficients[0] - gs.x0
    q_at_xi = [system.eval_q(gs.curve_value(curve, entry)) for entry in gs._xi_basis]
    for ell in range(1, n):
        nodes, weights, basis, svals = gs._interval_quads[ell - 1]
        acc = q_at_xi[ell] - q_at_xi[ell - 1]
        for k in range(nodes.size):
            x_t = gs.curve_value(curve, basis[k])
            acc = acc + weights[k] * (system.eval_f(x_t) - svals[k])
        out[ell * N : (ell + 1) * N] = acc
    return out


class BlockBandMatrix:
    """Block-banded Galerkin Jacobian with a banded or dense LU solve."""

    def __init__(self, num_blocks: int, block_size: int):
        self.n = num_blocks
        self.N = block_size
        self.blocks: dict[tuple[int, int], np.ndarray] = {}

    def add(self, row: int, col: int, value: np.ndarray):
        key = (row, col)
        existing = self.blocks.get(key)
        if existing is None:
            self.blocks[key] = value.copy()
        else:
            existing += value

    def row_references(self, scale: np.ndarray) -> np.ndarray:
        """Per-row sensitivity |J| @ scale: the residual change produced by
        coefficient perturbations of one scale unit.  Used to turn residual
        norms into (approximate) relative coefficient accuracies."""
        totals = np.zeros(self.n * self.N)
        for (row, col), block in self.blocks.items():
            contribution = np.abs(block) @ scale
            totals[row * self.N : (row + 1) * self.N] += contribution
        return np.maximum(totals, 1e-300)

    def to_dense(self) -> np.ndarray:
        size = self.n * self.N
        out = np.zeros((size, size))
        for (row, col), block in self.blocks.items():
            out[row * self.N : (row + 1) * self.N, col * self.N : (col + 1) * self.N] = block
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        size = self.n * self.N
        if size <= _DENSE_LIMIT:
            return np.linalg.solve(self.to_dense(), rhs)
        lower = max(row - col for row, col in self.blocks)
        upper = max(col - row for row, col in self.blocks)
        kl = lower * self.N + self.N - 1
        ku = upper * self.N + self.N - 1
        ab = np.zeros((kl + ku + 1, size))
        for (row, col), block in self.blocks.items():
            for i in range(self.N):
                r = row * self.N + i
                for j in range(self.N):
                    c = col * self.N + j
                    ab[ku + r - c, c] = block[i, j]
        return scipy.linalg.solve_banded((kl, ku), ab, rhs, check_finite=False)


def assemble_jacobian(gs: GalerkinSystem, curve: SplineCurve) -> BlockBandMatrix:
    """Exact derivative of :func:`assemble_residual` w.r.t. the coefficients."""
    system = gs.system
    n, N, m = gs.num_blocks, gs.system.size, gs.space.order
    jac = BlockBandMatrix(n, N)
    jac.add(0, 0, np.eye(N))
    jq_at_xi = []
    for entry in gs._xi_basis:
        x_t = gs.curve_value(curve, entry)
        jq_at_xi.append(system.jac_q(x_t))
    for ell in range(1, n):
        first_r, vals_r = gs._xi_basis[ell]
        for offset, phi in enumerate(vals_r):
            if phi != 0.0:
                jac.add(ell, first_r + offset, phi * jq_at_xi[ell])
        first_l, vals_l = gs._xi_basis[ell - 1]
        for offset, phi in enumerate(vals_l):
            if phi != 0.0:
                jac.add(ell, first_l + offset, -phi * jq_at_xi[ell - 1])
        nodes, weights, basis, _ = gs._interval_quads[ell - 1]
        for k in range(nodes.size):
            first, vals = basis[k]
            jf = system.jac_f(gs.curve_value(curve, basis[k]))
            weighted = weights[k] * jf
            for offset, phi in enumerate(vals):
                if phi != 0.0:
                    jac.add(ell, first + offset, phi * weighted)
    return jac


@dataclass(frozen=True)
class NewtonOutcome:
    curve: SplineCurve
    iterations: int
    converged: bool
    residual_norm: float
    residual_tol: float
    step_norm: float


def newton_solve(
    gs: GalerkinSystem,
    initial: SplineCurve,
    tol_res: float = 1e-10,
    tol_step: float = 1e-10,
    max_iter: int = 50,
    damping_min: float = 2.0 ** -12,
) -> NewtonOutcome:
    """Damped Newton on the Galerkin system.

    Residual components are normalized row-wise by the sensitivity |J| @ scale
    of the initial iterate, which turns the residual norm into an approximate
    relative coefficient accuracy; `tol_res` and `tol_step` are therefore both
    dimensionless.  Convergence requires the scaled residual below `tol_res`
    together with a small last step; a residual three decades below the
    threshold counts on its own, so affine problems finish in one iteration.
    Non-convergence is reported in the outcome, not raised.
    """
    n, N = gs.num_blocks, gs.system.size
    coefs = np.array(initial.coefficients)
    curve = SplineCurve(gs.space, coefs)
    residual = assemble_residual(gs, curve)
    step_norm = np.inf
    iterations = 0
    jac = assemble_jacobian(gs, curve)
    row_ref = jac.row_references(gs.scale)
    res_norm = gs.row_norm(residual, row_ref)

    while True:
        converged = res_norm < tol_res and (
            step_norm < tol_step or res_norm < 1e-3 * tol_res
        )
        if converged or iterations >= max_iter:
            return NewtonOutcome(curve, iterations, converged, res_norm, tol_res, step_norm)
        if jac is None:
            jac = assemble_jacobian(gs, curve)
        try:
            delta = jac.solve(-residual).reshape(n, N)
        except np.linalg.LinAlgError:
            return NewtonOutcome(curve, iterations, False, res_norm, tol_res, step_norm)
        accepted = False
        lam = 1.0
        while lam >= damping_min:
            trial_coefs = coefs + lam * delta
            trial = SplineCurve(gs.space, trial_coefs)
            try:
                trial_residual = assemble_residual(gs, trial)
            except SolverError:
                trial_residual = None
            if trial_residual is not None and np.all(np.isfinite(trial_residual)):
                trial_norm = gs.row_norm(trial_residual, row_ref)
                if trial_norm <= (1.0 - 0.25 * lam) * res_norm or trial_norm < tol_res:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return NewtonOutcome(curve, iterations, False, res_norm, tol_res, step_norm)
        step_norm = float(np.max(np.abs(lam * delta) / gs.scale))
        coefs, curve = trial_coefs, trial
        residual, res_norm = trial_residual, trial_norm
        iterations += 1
        jac = None


def _half_interval_residual(gs, curve, lo, hi, extra_breaks):
    system = gs.system
    x_hi = curve.eval(hi)
    x_lo = curve.eval(lo)
    acc = system.eval_q(x_hi) - system.eval_q(x_lo)
    nodes, weights = _split_quadrature(gs.space, lo, hi, gs.quad_points, extra_breaks)
    for t, w in zip(nodes, weights):
        x_t = curve.eval(float(t))
        acc = acc + w * (system.eval_f(x_t) - system.eval_s(float(t)))
    return acc


def flow_density_reference(gs: GalerkinSystem, curve: SplineCurve) -> np.ndarray:
    """Per-equation reference flow density of the current solution.

    For each residual row the maximum over test intervals of
    (|q| at the interval ends + integral of |f| + |s|) / interval length.
    Dividing a residual density by this reference yields the dimensionless
    relative defect the refinement indicators are built from.
    """
    system = gs.system
    reference = np.zeros(system.size)
    q_at_xi = [
        system.eval_q_abs(gs.curve_value(curve, entry)) for entry in gs._xi_basis
    ]
    for ell in range(1, gs.num_blocks):
        nodes, weights, basis, _ = gs._interval_quads[ell - 1]
        acc = q_at_xi[ell] + q_at_xi[ell - 1]
        for k in range(nodes.size):
            x_t = gs.curve_value(curve, basis[k])
            acc = acc + weights[k] * (
                system.eval_f_abs(x_t) + system.eval_s_abs(float(nodes[k]))
            )
        h = gs.xi[ell] - gs.xi[ell - 1]
        reference = np.maximum(reference, acc / h)
    return np.maximum(reference, 1e-300)


def refine_indicators(
    gs: GalerkinSystem, curve: SplineCurve, tol: float, alpha: float
) -> RefinementPlan:
    """Relative residual density of each knot span against the next level.

    Every span is split at its midpoint; each half is tested like a
    next-level test interval (charge difference plus static-term integral).
    The indicator is the larger of the two halves' residual densities,
    normalized row-wise by :func:`flow_density_reference`, making it a
    dimensionless local defect.  A span is flagged when its indicator reaches
    `alpha` times the maximum indicator and exceeds the threshold `tol`.
    """
    kv = gs.space.knot_vector
    a, b = kv.domain
    extra = gs.system.breakpoints(a, b)
    spans = kv.span_bounds()
    reference = flow_density_reference(gs, curve)
    indicators = np.zeros(spans.shape[0])
    for idx, (lo, hi) in enumerate(spans):
        mid = 0.5 * (lo + hi)
        half = mid - lo
        r_left = _half_interval_residual(gs, curve, float(lo), float(mid), extra)
        r_right = _half_interval_residual(gs, curve, float(mid), float(hi), extra)
        density = max(
            gs.row_norm(r_left, reference), gs.row_norm(r_right, reference)
        ) / half
        indicators[idx] = density
    top = indicators.max() if indicators.size else 0.0
    flags = (indicators >= alpha * top) & (indicators > tol)
    return RefinementPlan(kv, indicators, flags)


@dataclass(frozen=True)
class PassStats:
    knots: int
    newton_iterations: int
    converged: bool
    max_indicator: float
    flagged: int
    emergency: bool = False


@dataclass(frozen=True)
class WindowStats:
    window: tuple[float, float]
    passes: tuple[PassStats, ...]

    @property
    def newton_iterations(self) -> int:
        return sum(p.newton_iterations for p in self.passes)

    @property
    def final_indicator(self) -> float:
        return self.passes[-1].max_indicator

    @property
    def knot_count(self) -> int:
        return self.passes[-1].knots


@dataclass(frozen=True)
class WindowSolution:
    curve: SplineCurve
    stats: WindowStats


@dataclass(frozen=True)
class WaveletResult:
    windows: tuple[WindowSolution, ...]
    seconds: float = 0.0

    @property
    def tstop(self) -> float:
        return self.windows[-1].curve.space.domain[1]

    @property
    def grid_size(self) -> int:
        """Total spline grid size: distinct knots summed over the windows."""
        return sum(
            w.curve.space.knot_vector.breakpoints.size for w in self.windows
        )

    @property
    def newton_iterations(self) -> int:
        return sum(w.stats.newton_iterations for w in self.windows)

    def eval(self, t: float) -> np.ndarray:
        for window in self.windows:
            if t <= window.curve.space.domain[1]:
                lo = window.curve.space.domain[0]
                return window.curve.eval(max(t, lo))
        raise ValueError(f"time {t!r} beyond the solved range")

    def eval_many(self, times) -> np.ndarray:
        return np.array([self.eval(float(t)) for t in times])

    def knot_times(self) -> np.ndarray:
        return np.unique(
            np.concatenate(
                [w.curve.space.knot_vector.breakpoints for w in self.windows]
            )
        )


def _initial_knot_vector(system, window, cfg) -> KnotVector:
    a, b = window
    points = list(np.linspace(a, b, cfg.initial_spans + 1))
    if cfg.seed_breakpoints:
        h_min = (b - a) / 2.0 ** 24
        for t in system.breakpoints(a, b):
            if a < t < b and all(abs(t - p) > h_min for p in points):
                points.append(float(t))
    return space_from_breakpoints(cfg.order, np.sort(np.asarray(points))).knot_vector


def _initial_curve(space, x0, warm_start, shift):
    if warm_start is None:
        coefs = np.tile(x0, (space.dimension, 1))
        return SplineCurve(space, coefs)
    lo, hi = warm_start.space.domain
    xi = space.greville()
    samples = np.empty((space.dimension, x0.size))
    for i, t in enumerate(xi):
        samples[i] = warm_start.eval(min(max(t - shift, lo), hi))
    samples[0] = x0
    return curve_from_samples(space, samples)


def _scale_vector(system, cfg, x0, curve=None) -> np.ndarray:
    floors = np.where(
        system.circuit.variable_is_current(), cfg.current_floor, cfg.voltage_floor
    )
    scale = np.maximum(np.abs(x0), floors)
    if curve is not None:
        scale = np.maximum(scale, np.abs(curve.coefficients).max(axis=0))
    return scale


def solve_window(
    system: MnaSystem,
    x0: np.ndarray,
    window: tuple[float, float],
    cfg: WaveletConfig,
    warm_start: SplineCurve | None = None,
    warm_shift: float = 0.0,
) -> tuple[SplineCurve, WindowStats]:
    """Adaptive nested-space solve of one time window.

    Starts on the coarse space (uniform spans plus source corners), then
    alternates Newton solves with indicator-driven midpoint refinement; each
    refinement prolongs the converged iterate exactly, so the finer solve
    starts from an excellent initial guess.  A Newton failure triggers one
    emergency uniform refinement before giving up.
    """
    kv = _initial_knot_vector(system, window, cfg)
    space = SplineSpace(kv)
    curve = _initial_curve(space, x0, warm_start, warm_shift)
    scale = _scale_vector(system, cfg, x0, curve)
    passes: list[PassStats] = []
    emergencies = 0
    rescales = 0

    while True:
        gs = GalerkinSystem(system, space, x0, cfg.quad_points, scale)
        outcome = newton_solve(
            gs,
            curve,
            tol_res=cfg.newton_tol,
            tol_step=cfg.newton_step_tol,
            max_iter=cfg.newton_max_iter,
            damping_min=cfg.damping_min,
        )
        if not outcome.converged:
            # A stale scale vector (e.g. a window starting at a zero state)
            # makes the relative tolerances unreachable; refresh it from the
            # rejected iterate and retry before refining.
            refreshed = _scale_vector(system, cfg, x0, outcome.curve)
            if rescales < 8 and np.any(refreshed > 10.0 * scale):
                rescales += 1
                scale = refreshed
                curve = outcome.curve
                continue
            if emergencies >= 1 or len(passes) >= cfg.max_passes:
                raise WaveletSolveError(
                    f"Newton did not converge on window {window} with "
                    f"{kv.breakpoints.size} knots (scaled residual {outcome.residual_norm:.3e})"
                )
            emergencies += 1
            passes.append(
                PassStats(
                    kv.breakpoints.size, outcome.iterations, False, np.inf,
                    kv.num_spans, emergency=True,
                )
            )
            refined = midpoint_refine(kv, np.ones(kv.num_spans, dtype=bool))
            curve = _prolong_to(outcome.curve, refined)
            kv = refined
            space = curve.space
            continue

        curve = outcome.curve
        scale = _scale_vector(system, cfg, x0, curve)
        gs_scaled = GalerkinSystem(system, space, x0, cfg.quad_points, scale)
        plan = refine_indicators(
            gs_scaled, curve, _INDICATOR_SAFETY * cfg.tol, cfg.refine_fraction
        )
        flagged = int(np.count_nonzero(plan.flags))
        passes.append(
            PassStats(
                kv.breakpoints.size,
                outcome.iterations,
                True,
                float(plan.span_indicators.max()),
                flagged,
            )
        )
        if flagged == 0 or len(passes) > cfg.max_passes:
            return curve, WindowStats(window, tuple(passes))
        refined = midpoint_refine(kv, plan.flags)
        curve = _prolong_to(curve, refined)
        kv = refined
        space = curve.space


def _prolong_to(curve: SplineCurve, refined: KnotVector) -> SplineCurve:
    coarse = list(curve.space.knot_vector.knots)
    missing = []
    i = 0
    for value in refined.knots:
        if i < len(coarse) and coarse[i] == value:
            i += 1
        else:
            missing.append(value)
    return curve.insert_knots(missing)


def _default_window_count(system: MnaSystem, tstop: float) -> int:
    period = system.circuit.shortest_source_period()
    if period is None:
        return 16
    return int(min(max(round(tstop / period), 1), 256))


def solve(
    system: MnaSystem,
    cfg: WaveletConfig,
    tstop: float,
    x0: np.ndarray | None = None,
) -> WaveletResult:
    """Windowed adaptive solve over [0, tstop].

    Each window's initial value is the previous window's end value (enforced
    exactly by the constraint block), and the previous curve, time shifted,
    warm-starts the next window.  Without an explicit window length the run is
    split per the shortest periodic source (16 windows for aperiodic drives).
    """
    if tstop <= 0.0:
        raise ValueError("tstop must be positive")
    start_time = time.perf_counter()
    if x0 is None:
        x0 = dc_operating_point(system).x0
    if cfg.window is None:
        count = _default_window_count(system, tstop)
    else:
        if cfg.window > tstop:
            raise ValueError("window length exceeds tstop")
        count = int(np.ceil(tstop / cfg.window - 1e-9))
    edges = np.linspace(0.0, tstop, count + 1)

    windows: list[WindowSolution] = []
    warm: SplineCurve | None = None
    shift = 0.0
    value = np.asarray(x0, dtype=float)
    for k in range(count):
        window = (float(edges[k]), float(edges[k + 1]))
        if warm is not None:
            shift = window[0] - windows[-1].stats.window[0]
        try:
            curve, stats = solve_window(system, value, window, cfg, warm, shift)
        except WaveletSolveError as exc:
            raise WaveletSolveError(f"window {k}: {exc}") from exc
        windows.append(WindowSolution(curve, stats))
        value = curve.coefficients[-1].copy()
        warm = curve
    return WaveletResult(tuple(windows), seconds=time.perf_counter() - start_time)

"""B-spline spaces on clamped knot vectors.

Provides the function-space substrate used by the solvers: basis evaluation
and derivatives via the Cox-de Boor recursion, Greville abscissae, exact
knot insertion (Boehm's algorithm, applied knot by knot), and composite
Gauss-Legendre quadrature split at the knots.

All knot vectors are clamped (first and last knot of multiplicity exactly
equal to the order), so a curve interpolates its first and last coefficient
vectors.  Times are in seconds; coefficient vectors carry the circuit
unknowns (volts / amperes).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "KnotVector",
    "SplineSpace",
    "SplineCurve",
    "uniform_space",
    "space_from_breakpoints",
    "curve_from_samples",
]


def _as_readonly_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing knot sequence of a clamped B-spline space of order `order`.

    The space dimension is ``len(knots) - order``.  End knots must appear with
    multiplicity exactly `order`; interior multiplicities may not exceed it.
    """

    order: int
    knots: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"spline order must be >= 1, got {self.order}")
        knots = _as_readonly_array(self.knots)
        if knots.ndim != 1:
            raise ValueError("knots must be a one-dimensional sequence")
        object.__setattr__(self, "knots", knots)
        m = self.order
        if knots.size < 2 * m:
            raise ValueError(f"need at least {2 * m} knots for order {m}")
        if np.any(np.diff(knots) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if knots[0] >= knots[-1]:
            raise ValueError("knot vector domain is empty")
        if not (np.all(knots[:m] == knots[0]) and knots[m] > knots[0]):
            raise ValueError(f"first knot must have multiplicity exactly {m}")
        if not (np.all(knots[-m:] == knots[-1]) and knots[-m - 1] < knots[-1]):
            raise ValueError(f"last knot must have multiplicity exactly {m}")
        interior = knots[(knots > knots[0]) & (knots < knots[-1])]
        if interior.size:
            _, counts = np.unique(interior, return_counts=True)
            if counts.max() > m:
                raise ValueError(f"interior knot multiplicity exceeds order {m}")
        if self.dimension < m:
            raise ValueError("knot vector too short for the requested order")

    @property
    def dimension(self) -> int:
        return self.knots.size - self.order

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    @property
    def domain(self) -> tuple[float, float]:
        return self.t_start, self.t_end

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values, including both domain endpoints."""
        return np.unique(self.knots)

    @property
    def num_spans(self) -> int:
        return self.breakpoints.size - 1

    def span_bounds(self) -> np.ndarray:
        """(num_spans, 2) array of the nonempty knot spans."""
        bp = self.breakpoints
        return np.column_stack([bp[:-1], bp[1:]])

    def multiplicity(self, value: float) -> int:
        return int(np.count_nonzero(self.knots == value))

    def find_span(self, t: float) -> int:
        """Index mu of the nonempty span with knots[mu] <= t < knots[mu+1].

        Ties at a knot resolve to the right span, except at the domain end
        where the last span is used.
        """
        if t < self.t_start or t > self.t_end:
            raise ValueError(
                f"time {t!r} outside spline domain [{self.t_start!r}, {self.t_end!r}]"
            )
        n = self.dimension
        if t >= self.knots[n]:
            return n - 1
        mu = int(np.searchsorted(self.knots, t, side="right")) - 1
        return max(mu, self.order - 1)


def _basis_values(knots: np.ndarray, order: int, span: int, t: float) -> np.ndarray:
    """Values of the `order` basis functions active on span at t (de Boor)."""
    p = order - 1
    values = np.empty(order)
    values[0] = 1.0
    left = np.empty(p)
    right = np.empty(p)
    for j in range(1, p + 1):
        left[j - 1] = t - knots[span + 1 - j]
        right[j - 1] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            temp = values[r] / (right[r] + left[j - r - 1])
            values[r] = saved + right[r] * temp
            saved = left[j - r - 1] * temp
        values[j] = saved
    return values


def _basis_derivatives(
    knots: np.ndarray, order: int, span: int, t: float, nders: int
) -> np.ndarray:
    """All derivatives 0..nders of the active basis functions at t.

    Returns an array of shape (nders + 1, order).  Standard triangular-table
    algorithm for B-spline derivatives.
    """
    p = order - 1
    ndu = np.empty((order, order))
    ndu[0, 0] = 1.0
    left = np.empty(order)
    right = np.empty(order)
    for j in range(1, p + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, order))
    ders[0, :] = ndu[:, p]
    a = np.empty((2, order))
    for r in range(order):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nders + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, nders + 1):
        ders[k, :] *= factor
        factor *= p - k
    return ders


@dataclass(frozen=True)
class SplineSpace:
    """Space of splines of order `knot_vector.order` over a clamped knot vector."""

    knot_vector: KnotVector

    @property
    def order(self) -> int:
        return self.knot_vector.order

    @property
    def dimension(self) -> int:
        return self.knot_vector.dimension

    @property
    def domain(self) -> tuple[float, float]:
        return self.knot_vector.domain

    def eval_basis(self, t: float) -> tuple[int, np.ndarray]:
        """Evaluate the basis functions that are active at t.

        Parameters
        ----------
        t : float
            Evaluation time, inside the knot-vector domain.

        Returns
        -------
        first_active_index : int
            Index of the first active basis function.
        values : np.ndarray
            The `order` active basis values; non-negative and summing to 1.
        """
        kv = self.knot_vector
        span = kv.find_span(t)
        values = _basis_values(kv.knots, self.order, span, t)
        return span - (self.order - 1), values

    def eval_basis_deriv(self, t: float, deriv_order: int) -> tuple[int, np.ndarray]:
        """Derivatives of the active basis functions at t.

        `deriv_order` must satisfy 0 <= deriv_order < order; order 0 matches
        :meth:`eval_basis` exactly.
        """
        if deriv_order < 0 or deriv_order >= self.order:
            raise ValueError(
                f"derivative order must be in [0, {self.order - 1}], got {deriv_order}"
            )
        kv = self.knot_vector
        span = kv.find_span(t)
        if deriv_order == 0:
            values = _basis_values(kv.knots, self.order, span, t)
        else:
            values = _basis_derivatives(kv.knots, self.order, span, t, deriv_order)[
                deriv_order
            ]
        return span - (self.order - 1), values

    def greville(self) -> np.ndarray:
        """Greville abscissae: knot averages at which spline coefficients live.

        For order 1 the midpoints of the knot spans are used.  For order >= 2
        the first and last abscissa coincide with the domain endpoints.
        """
        kv = self.knot_vector
        m, n = self.order, self.dimension
        if m == 1:
            return 0.5 * (kv.knots[:-1] + kv.knots[1:])
        out = np.empty(n)
        for i in range(n):
            out[i] = kv.knots[i + 1 : i + m].mean()
        # The knot averages of the clamped end blocks are the endpoints; pin
        # them exactly (the mean can round off by one ulp) and keep interior
        # values inside the domain.
        np.clip(out, kv.t_start, kv.t_end, out=out)
        out[0] = kv.t_start
        out[-1] = kv.t_end
        return out

    def quadrature_nodes(
        self, a: float, b: float, points_per_segment: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre rule on [a, b], split at interior knots.

        Exact for piecewise polynomials of degree <= 2 * points_per_segment - 1
        on each knot segment.  Returns (nodes, weights).
        """
        if points_per_segment < 1:
            raise ValueError("points_per_segment must be >= 1")
        if a >= b:
            raise ValueError(f"empty quadrature interval [{a!r}, {b!r}]")
        t0, t1 = self.domain
        if a < t0 or b > t1:
            raise ValueError(f"quadrature interval [{a!r}, {b!r}] outside domain")
        bp = self.knot_vector.breakpoints
        inner = bp[(bp > a) & (bp < b)]
        edges = np.concatenate([[a], inner, [b]])
        ref_x, ref_w = np.polynomial.legendre.leggauss(points_per_segment)
        nodes = []
        weights = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            nodes.append(half * ref_x + 0.5 * (hi + lo))
            weights.append(half * ref_w)
        return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class SplineCurve:
    """Vector-valued spline: one coefficient row (length N) per basis function.

    Because the knot vector is clamped, the curve equals its first coefficient
    row at the start of the domain and its last row at the end.
    """

    space: SplineSpace
    coefficients: np.ndarray

    def __post_init__(self):
        coefs = np.array(self.coefficients, dtype=float)
        if coefs.ndim == 1:
            coefs = coefs[:, None]
        if coefs.ndim != 2:
            raise ValueError("coefficients must be a (dimension, N) array")
        if coefs.shape[0] != self.space.dimension:
            raise ValueError(
                f"expected {self.space.dimension} coefficient rows, got {coefs.shape[0]}"
            )
        coefs.setflags(write=False)
        object.__setattr__(self, "coefficients", coefs)

    @property
    def num_components(self) -> int:
        return self.coefficients.shape[1]

    def eval(self, t: float, deriv_order: int = 0) -> np.ndarray:
        """Curve value (or time derivative) at t as a length-N vector."""
        if deriv_order == 0:
            first, vals = self.space.eval_basis(t)
        else:
            first, vals = self.space.eval_basis_deriv(t, deriv_order)
        return vals @ self.coefficients[first : first + self.space.order]

    def eval_many(self, times: Sequence[float], deriv_order: int = 0) -> np.ndarray:
        out = np.empty((len(times), self.num_components))
        for k, t in enumerate(times):
            out[k] = self.eval(float(t), deriv_order)
        return out

    def insert_knots(self, new_knots: Sequence[float]) -> "SplineCurve":
        """Exact re-representation of the curve on a refined knot vector.

        Every new knot must lie strictly inside the domain and may not raise
        any multiplicity beyond the spline order.  Boehm's single-knot
        insertion is applied once per entry of `new_knots`.
        """
        kv = self.space.knot_vector
        m = self.space.order
        additions = np.sort(np.asarray(new_knots, dtype=float))
        if additions.size == 0:
            return self
        t0, t1 = kv.domain
        if np.any(additions <= t0) or np.any(additions >= t1):
            raise ValueError("inserted knots must lie strictly inside the domain")
        values, counts = np.unique(additions, return_counts=True)
        for value, count in zip(values, counts):
            if kv.multiplicity(value) + count > m:
                raise ValueError(
                    f"inserting {value!r} would exceed multiplicity {m}"
                )
        knots = np.array(kv.knots)
        coefs = np.array(self.coefficients)
        for u in additions:
            knots, coefs = _boehm_insert(knots, m, coefs, float(u))
        refined = SplineSpace(KnotVector(m, knots))
        return SplineCurve(refined, coefs)


def _boehm_insert(
    knots: np.ndarray, order: int, coefs: np.ndarray, u: float
) -> tuple[np.ndarray, np.ndarray]:
    p = order - 1
    kv = KnotVector(order, knots)
    span = kv.find_span(u)
    n = coefs.shape[0]
    out = np.empty((n + 1, coefs.shape[1]))
    out[: span - p + 1] = coefs[: span - p + 1]
    for i in range(span - p + 1, span + 1):
        alpha = (u - knots[i]) / (knots[i + p] - knots[i])
        out[i] = alpha * coefs[i] + (1.0 - alpha) * coefs[i - 1]
    out[span + 1 :] = coefs[span:]
    new_knots = np.insert(knots, span + 1, u)
    return new_knots, out


def uniform_space(order: int, a: float, b: float, num_spans: int) -> SplineSpace:
    """Clamped space on [a, b] with `num_spans` equal knot spans."""
    if num_spans < 1:
        raise ValueError("num_spans must be >= 1")
    return space_from_breakpoints(order, np.linspace(a, b, num_spans + 1))


def space_from_breakpoints(order: int, breakpoints: Sequence[float]) -> SplineSpace:
    """Clamped space whose simple interior knots are the given breakpoints."""
    bp = np.asarray(breakpoints, dtype=float)
    if bp.size < 2:
        raise ValueError("need at least two breakpoints")
    knots = np.concatenate(
        [np.full(order, bp[0]), bp[1:-1], np.full(order, bp[-1])]
    )
    return SplineSpace(KnotVector(order, knots))


def curve_from_samples(
    space: SplineSpace, values: Callable[[float], Sequence[float]] | np.ndarray
) -> SplineCurve:
    """Spline interpolating the given data at the Greville abscissae.

    `values` is either an array of shape (dimension, N) of samples at the
    Greville points, or a callable evaluated there.  The collocation system is
    nonsingular for strictly increasing abscissae (Schoenberg-Whitney); it
    reproduces exactly any function in the space, in particular polynomials of
    degree below the order.
    """
    xi = space.greville()
    if np.any(np.diff(xi) <= 0.0):
        raise ValueError("Greville abscissae are not strictly increasing")
    if callable(values):
        data = np.array([np.atleast_1d(np.asarray(values(t), dtype=float)) for t in xi])
    else:
        data = np.array(values, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
    n = space.dimension
    if data.shape[0] != n:
        raise ValueError(f"expected {n} sample rows, got {data.shape[0]}")
    collocation = np.zeros((n, n))
    for row, t in enumerate(xi):
        first, vals = space.eval_basis(float(t))
        collocation[row, first : first + space.order] = vals
    coefs = np.linalg.solve(collocation, data)
    return SplineCurve(space, coefs)

"""Two-scale structure over nested spline spaces.

A fine-space curve splits into its L2 projection onto a coarser space plus a
detail part expressed in the fine basis.  Because knot insertion is exact,
``prolong(coarse) + details`` reproduces the fine curve, which is the
coarse-plus-detail decomposition the adaptive solver reports and thresholds.
Refinement of knot vectors happens by flagging spans, inserting midpoints and
re-establishing a 2:1 span grading.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import KnotVector, SplineCurve, SplineSpace

__all__ = [
    "Decomposition",
    "RefinementPlan",
    "prolong",
    "two_scale_decompose",
    "threshold_details",
    "midpoint_refine",
    "MIN_SPAN_FRACTION",
]

# Hard stop against runaway refinement near discontinuous sources: no span may
# become shorter than this fraction of the domain length.
MIN_SPAN_FRACTION = 2.0 ** -24


@dataclass(frozen=True)
class RefinementPlan:
    """Per-span residual indicators and refinement flags for a knot vector."""

    base_knots: KnotVector
    span_indicators: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        indicators = np.asarray(self.span_indicators, dtype=float)
        flags = np.asarray(self.flags, dtype=bool)
        spans = self.base_knots.num_spans
        if indicators.shape != (spans,) or flags.shape != (spans,):
            raise ValueError("indicator/flag count must match the span count")
        if not np.all(np.isfinite(indicators)) or np.any(indicators < 0.0):
            raise ValueError("indicators must be finite and non-negative")
        object.__setattr__(self, "span_indicators", indicators)
        object.__setattr__(self, "flags", flags)


@dataclass(frozen=True)
class Decomposition:
    """Coarse-space part plus fine-space detail part of a spline curve."""

    coarse: SplineCurve
    details: SplineCurve


def _missing_knots(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Multiset difference fine - coarse, or raise if the spaces do not nest."""
    if coarse.order != fine.order:
        raise ValueError("nested spaces must share the spline order")
    ck, fk = coarse.knots, fine.knots
    missing = []
    i = 0
    for value in fk:
        if i < ck.size and ck[i] == value:
            i += 1
        else:
            missing.append(value)
    if i != ck.size:
        raise ValueError("coarse knots are not a subsequence of the fine knots")
    return np.asarray(missing)


def prolong(curve: SplineCurve, fine_space: SplineSpace) -> SplineCurve:
    """Exact representation of `curve` on the finer nested space."""
    missing = _missing_knots(curve.space.knot_vector, fine_space.knot_vector)
    refined = curve.insert_knots(missing)
    # Re-attach the caller's space object so identity comparisons hold.
    return SplineCurve(fine_space, refined.coefficients)


def two_scale_decompose(fine: SplineCurve, coarse_space: SplineSpace) -> Decomposition:
    """Split a fine curve into coarse L2 projection plus fine-basis details.

    The coarse part is the L2-orthogonal projection of the fine curve onto
    `coarse_space`, computed from the Gram system assembled with composite
    Gauss quadrature on the fine knot spans (exact for these piecewise
    polynomials).  The detail part is ``fine - prolong(coarse)``.
    """
    fine_kv = fine.space.knot_vector
    _missing_knots(coarse_space.knot_vector, fine_kv)  # nestedness check
    m = coarse_space.order
    a, b = fine_kv.domain
    nodes, weights = fine.space.quadrature_nodes(a, b, m)

    nc = coarse_space.dimension
    basis = np.zeros((nodes.size, nc))
    for k, t in enumerate(nodes):
        first, vals = coarse_space.eval_basis(float(t))
        basis[k, first : first + m] = vals
    fine_vals = fine.eval_many(nodes)

    weighted = basis * weights[:, None]
    gram = weighted.T @ basis
    rhs = weighted.T @ fine_vals
    coarse = SplineCurve(coarse_space, np.linalg.solve(gram, rhs))
    details = SplineCurve(
        fine.space, fine.coefficients - prolong(coarse, fine.space).coefficients
    )
    return Decomposition(coarse=coarse, details=details)


def threshold_details(decomposition: Decomposition, tol: float) -> set[int]:
    """Coarse-grid spans over which the detail curve exceeds `tol` in max-norm.

    The detail curve is sampled on each coarse span: a uniform budget of
    order**2 points plus order+1 points per fine sub-span, which pins down the
    support of the piecewise-polynomial details exactly.
    """
    if tol < 0.0:
        raise ValueError("tol must be >= 0")
    details = decomposition.details
    m = details.space.order
    coarse_bp = decomposition.coarse.space.knot_vector.breakpoints
    fine_bp = details.space.knot_vector.breakpoints
    exceeded = set()
    for span, (lo, hi) in enumerate(zip(coarse_bp[:-1], coarse_bp[1:])):
        samples = [np.linspace(lo, hi, m * m)]
        inner = fine_bp[(fine_bp >= lo) & (fine_bp <= hi)]
        for flo, fhi in zip(inner[:-1], inner[1:]):
            samples.append(np.linspace(flo, fhi, m + 1))
        ts = np.unique(np.concatenate(samples))
        if np.abs(details.eval_many(ts)).max() > tol:
            exceeded.add(span)
    return exceeded


def midpoint_refine(
    knots: KnotVector, flags, h_min: float | None = None
) -> KnotVector:
    """Insert midpoints of flagged spans, then re-establish 2:1 grading.

    After the flagged midpoints are inserted, any pair of adjacent spans whose
    length ratio exceeds 2 triggers a split of the longer span, repeatedly,
    until the grid is graded.  Spans are never split below `h_min`
    (default: domain length times ``MIN_SPAN_FRACTION``).  The returned knot
    vector contains every input knot; with all-false flags it is the input.
    """
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (knots.num_spans,):
        raise ValueError("flag count must equal the span count")
    a, b = knots.domain
    if h_min is None:
        h_min = (b - a) * MIN_SPAN_FRACTION

    points = list(knots.breakpoints)
    inserted = []

    def split(index: int) -> bool:
        lo, hi = points[index], points[index + 1]
        if hi - lo < 2.0 * h_min:
            return False
        mid = 0.5 * (lo + hi)
        points.insert(index + 1, mid)
        inserted.append(mid)
        return True

    for index in reversed(range(len(flags))):
        if flags[index]:
            split(index)

    # 2:1 grading: repeatedly split the longer span of a violating pair.
    ratio_cap = 2.0 * (1.0 + 1e-12)
    changed = True
    while changed:
        changed = False
        i = 0
        while i + 2 <= len(points) - 1:
            left = points[i + 1] - points[i]
            right = points[i + 2] - points[i + 1]
            if left > ratio_cap * right and split(i):
                changed = True
                continue
            if right > ratio_cap * left and split(i + 1):
                changed = True
                continue
            i += 1

    if not inserted:
        return knots
    merged = np.sort(np.concatenate([knots.knots, np.asarray(inserted)]))
    return KnotVector(knots.order, merged)

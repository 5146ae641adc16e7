"""Lower convex envelopes of functions tabulated on finite point sets.

The envelope at q is the LP  min sum_j lam_j v_j  over lam >= 0 with
sum_j lam_j = 1 and sum_j lam_j (p_j - q) = 0. Its multipliers (a, b) are an
affine minorant a + b.(p - q) <= v touching the envelope at q.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lp.simplex import LinearProgram, LpStatus, solve_lp
from utils.config import settings
from utils.errors import MmotError, OutsideHullError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class EnvelopeResult:
    value: float
    intercept: float
    slope: np.ndarray
    weights: np.ndarray
    degenerate: bool


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points.reshape(-1, 1) if points.ndim == 1 else points


def affine_rank(points) -> int:
    points = _as_points(points)
    if points.shape[0] <= 1:
        return 0
    return int(np.linalg.matrix_rank(points - points[0], tol=settings.hull_tol))


def envelope_lp(points, values, query) -> Optional[EnvelopeResult]:
    """Solve the envelope LP at query; None when query is outside conv(points)."""
    points = _as_points(points)
    values = np.asarray(values, dtype=float).reshape(-1)
    query = np.asarray(query, dtype=float).reshape(-1)
    if values.size != points.shape[0]:
        raise MmotError(f"{values.size} values for {points.shape[0]} points")

    matrix = np.vstack([np.ones(points.shape[0]), (points - query).T])
    rhs = np.zeros(matrix.shape[0])
    rhs[0] = 1.0

    solution = solve_lp(LinearProgram(points.shape[0], values, matrix, rhs), feasibility_tol=settings.hull_tol)
    if solution.status == LpStatus.INFEASIBLE:
        return None
    if solution.status != LpStatus.OPTIMAL:
        raise MmotError(f"envelope LP ended with status {solution.status.value}")

    return EnvelopeResult(
        value=solution.objective_value,
        intercept=float(solution.dual[0]),
        slope=solution.dual[1:].copy(),
        weights=solution.primal,
        degenerate=solution.degenerate or solution.rank_deficit > 0,
    )


def lower_hull_1d(points, values) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the lower convex hull of {(p_j, v_j)} by a monotone chain scan."""
    points = np.asarray(points, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float).reshape(-1)
    order = np.lexsort((values, points))

    hull: list[tuple[float, float]] = []
    for j in order:
        p, v = float(points[j]), float(values[j])
        if hull and abs(hull[-1][0] - p) <= settings.atom_tol:
            continue
        while len(hull) >= 2:
            (p0, v0), (p1, v1) = hull[-2], hull[-1]
            if (p1 - p0) * (v - v0) - (p - p0) * (v1 - v0) <= 0.0:
                hull.pop()
            else:
                break
        hull.append((p, v))

    xs, vs = zip(*hull)
    return np.array(xs), np.array(vs)


def lower_convex_envelope(points, values, query, method: str = "lp") -> float:
    """conv[v](query) over the finite set points.

    ``method="hull"`` evaluates the d=1 envelope by interpolating the lower
    hull, which agrees with the LP to rounding.
    """
    points = _as_points(points)
    query = np.asarray(query, dtype=float).reshape(-1)

    if method == "hull":
        if points.shape[1] != 1:
            raise MmotError("hull evaluation is only available for d=1")
        xs, vs = lower_hull_1d(points[:, 0], values)
        q = float(query[0])
        if q < xs[0] - settings.hull_tol or q > xs[-1] + settings.hull_tol:
            raise OutsideHullError(f"outside hull: {q} not in [{xs[0]}, {xs[-1]}]")
        return float(np.interp(q, xs, vs))

    if method != "lp":
        raise MmotError(f"unknown envelope method '{method}'")

    result = envelope_lp(points, values, query)
    if result is None:
        raise OutsideHullError(f"outside hull: {query.tolist()}")
    return result.value

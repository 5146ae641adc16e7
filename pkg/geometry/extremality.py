"""Extreme points of conditional supports and the staying decomposition."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from lp.simplex import LinearProgram, LpStatus, solve_lp
from measures.discrete import (
    GridMeasure,
    JointPlan,
    match_points,
    copulas_of,
    disintegrate,
    measure_min,
)
from utils.config import settings
from utils.logger import get_logger

logger = get_logger(__name__)


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    """Indices of the first occurrence of every distinct point."""
    keep: list[int] = []
    for j, p in enumerate(points):
        if not any(np.abs(points[k] - p).max() <= tol for k in keep):
            keep.append(j)
    return np.array(keep, dtype=int)


def extreme_point_indices(points, tol: Optional[float] = None) -> np.ndarray:
    """Indices (into points, first occurrences) of the extreme points of conv(points)."""
    tol = settings.hull_tol if tol is None else tol
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)

    distinct = _dedupe(points, tol)
    if distinct.size <= 2:
        return distinct

    extreme = []
    for j in distinct:
        others = points[distinct[distinct != j]]
        matrix = np.vstack([np.ones(others.shape[0]), (others - points[j]).T])
        rhs = np.zeros(matrix.shape[0])
        rhs[0] = 1.0
        lp = LinearProgram(others.shape[0], np.zeros(others.shape[0]), matrix, rhs)
        if solve_lp(lp, feasibility_tol=tol).status == LpStatus.INFEASIBLE:
            extreme.append(j)
    return np.array(extreme, dtype=int)


def extreme_points_of(points, tol: Optional[float] = None) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    return points[extreme_point_indices(points, tol)]


@dataclass
class ConditionalExtremality:
    x_index: int
    x: list[float]
    mass: float
    support_size: int
    non_extreme_points: list[list[float]]
    extreme_fraction_of_mass: float

    def to_row(self) -> dict:
        return {
            "x_index": self.x_index,
            "x": " ".join(f"{v:.12g}" for v in self.x),
            "mass": self.mass,
            "support_size": self.support_size,
            "non_extreme": len(self.non_extreme_points),
            "extreme_fraction_of_mass": self.extreme_fraction_of_mass,
        }


@dataclass
class ExtremalityReport:
    records: list[ConditionalExtremality] = field(default_factory=list)
    noise_floor: float = 0.0

    @property
    def worst_fraction(self) -> float:
        return min((r.extreme_fraction_of_mass for r in self.records), default=1.0)

    @property
    def violating_mass(self) -> float:
        return float(sum(r.mass * (1.0 - r.extreme_fraction_of_mass) for r in self.records))

    @property
    def extreme_fraction_of_mass(self) -> float:
        total = sum(r.mass for r in self.records)
        if total <= 0:
            return 1.0
        return 1.0 - self.violating_mass / total

    def passes(self, bar: Optional[float] = None) -> bool:
        bar = settings.extremality_bar if bar is None else bar
        return self.extreme_fraction_of_mass >= bar

    def to_dict(self) -> dict:
        return {
            "noise_floor": self.noise_floor,
            "worst_fraction": self.worst_fraction,
            "violating_mass": self.violating_mass,
            "extreme_fraction_of_mass": self.extreme_fraction_of_mass,
            "records": [
                {**r.to_row(), "x": r.x, "non_extreme_points": r.non_extreme_points}
                for r in self.records
            ],
        }


def check_conditional_extremality(plan: JointPlan, tol: Optional[float] = None) -> ExtremalityReport:
    """Compare every conditional's support with the extreme points of its hull.

    Conditional atoms lighter than ``tol`` are dropped first; the fraction is
    measured on the remaining conditional mass.
    """
    tol = settings.conditional_noise_floor if tol is None else tol
    report = ExtremalityReport(noise_floor=tol)

    for cond in disintegrate(plan):
        weights = cond.conditional.weights
        kept = weights >= tol
        points = cond.conditional.points[kept]
        kept_weights = weights[kept]

        extreme = np.zeros(points.shape[0], dtype=bool)
        if points.shape[0]:
            # duplicates cannot occur: y-grid points are distinct
            extreme[extreme_point_indices(points)] = True

        total = float(kept_weights.sum())
        fraction = float(kept_weights[extreme].sum() / total) if total > 0 else 1.0
        report.records.append(ConditionalExtremality(
            x_index=cond.x_index,
            x=cond.x.tolist(),
            mass=cond.mass,
            support_size=int(points.shape[0]),
            non_extreme_points=points[~extreme].tolist(),
            extreme_fraction_of_mass=min(max(fraction, 0.0), 1.0),
        ))

    logger.debug(
        f"Extremality: worst {report.worst_fraction:.6f}, mass-weighted {report.extreme_fraction_of_mass:.6f}"
    )
    return report


@dataclass
class StayingReport:
    diagonal_part: float
    diagonal: GridMeasure
    residual_plan: JointPlan
    dominance_ok: bool
    min_slack: float

    def normalized_residual(self) -> JointPlan:
        mass = self.residual_plan.mass
        plan = self.residual_plan
        if mass <= 0:
            return plan
        return JointPlan(plan.x_grid, plan.y_grid, plan.x_index, plan.y_index, plan.weights / mass)

    def to_dict(self) -> dict:
        return {
            "diagonal_part": self.diagonal_part,
            "dominance_ok": self.dominance_ok,
            "min_slack": self.min_slack,
            "residual_mass": self.residual_plan.mass,
            "diagonal": self.diagonal.to_json(),
        }


def staying_decomposition(plan: JointPlan, tol: float = 1e-10) -> StayingReport:
    """pi - D_#(pi1 ^ pi2): the mass that stays put and the moving residual."""
    pi1, pi2 = copulas_of(plan)
    diagonal = measure_min(pi1, pi2)

    stay = np.zeros((plan.x_grid.shape[0], plan.y_grid.shape[0]))
    if len(diagonal):
        xi = match_points(diagonal.points, plan.x_grid, settings.atom_tol)
        yi = match_points(diagonal.points, plan.y_grid, settings.atom_tol)
        stay[xi, yi] = diagonal.weights

    difference = plan.dense() - stay
    min_slack = float(difference.min(initial=0.0))
    dominance_ok = min_slack >= -tol
    if not dominance_ok:
        logger.warning(f"Plan does not dominate its diagonal part (slack {min_slack:.3e})")

    residual = JointPlan.from_dense(plan.x_grid, plan.y_grid, np.clip(difference, 0.0, None), floor=tol)
    return StayingReport(diagonal.mass, diagonal, residual, dominance_ok, min_slack)

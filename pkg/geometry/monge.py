"""Graph structure of conditionals: the twist condition, S-graph checks and
the three-point structure of one-dimensional optima."""
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from measures.discrete import JointPlan, disintegrate
from mmot.costs import CostSpec
from utils.config import settings
from utils.errors import KinkEncounteredError, MmotError, NotThreePointError
from utils.logger import get_logger

logger = get_logger(__name__)


def _partial(cost: CostSpec, x: np.ndarray, y: np.ndarray, axis: int, step: float) -> tuple[float, float, float]:
    """Central, forward and backward differences of c(x, .) along one axis of y."""
    shift = np.zeros_like(y)
    shift[axis] = step
    centre = float(cost.evaluate(x, y))
    ahead = float(cost.evaluate(x, y + shift))
    behind = float(cost.evaluate(x, y - shift))
    return (ahead - behind) / (2 * step), (ahead - centre) / step, (centre - behind) / step


def cost_gradient(cost: CostSpec, x, y, axes: Sequence[int]) -> np.ndarray:
    """(dc/dy_i)_{i in axes} by central differences, refusing kinks.

    Each partial is taken at fd_step and again at fd_check_step; the two must
    agree, and so must the one-sided quotients at fd_step.
    """
    if cost.is_table:
        raise MmotError("gradient probing needs an analytic cost, not a table")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    gradient = np.empty(len(axes))
    for k, axis in enumerate(axes):
        coarse, forward, backward = _partial(cost, x, y, axis, settings.fd_step)
        fine, _, _ = _partial(cost, x, y, axis, settings.fd_check_step)
        scale = settings.richardson_tol * (1.0 + abs(coarse))
        if abs(forward - backward) > scale or abs(coarse - fine) > scale:
            raise KinkEncounteredError(
                f"kink encountered: dc/dy_{axis} at x={x.tolist()}, y={y.tolist()} "
                f"(forward {forward:.6g}, backward {backward:.6g})"
            )
        gradient[k] = coarse
    return gradient


def twist_check(cost: CostSpec, S: Sequence[int], x, y_s: Sequence[float],
                complement_values: Sequence[Sequence[float]], tol: Optional[float] = None) -> bool:
    """Is  y_{S^c} -> (dc/dy_i(x, y))_{i in S}  one-to-one over the complement grid?

    ``complement_values[k]`` lists the grid values of the k-th coordinate
    outside S, in increasing coordinate order.
    """
    tol = settings.twist_tol if tol is None else tol
    x = np.asarray(x, dtype=float)
    d = x.size
    S = sorted(S)
    complement = [i for i in range(d) if i not in S]
    if len(complement) != len(complement_values) or len(S) != len(y_s):
        raise MmotError("twist points do not match the coordinate split")

    gradients = []
    for assignment in product(*complement_values):
        y = np.empty(d)
        y[S] = y_s
        y[complement] = assignment
        gradients.append(cost_gradient(cost, x, y, S))
    gradients = np.array(gradients)

    if gradients.shape[0] < 2:
        return True
    distance = np.abs(gradients[:, None, :] - gradients[None, :, :]).max(axis=2)
    distance[np.diag_indices_from(distance)] = np.inf
    closest = float(distance.min())
    logger.debug(f"Twist check S={S}: {gradients.shape[0]} gradients, closest pair {closest:.3e}")
    return closest > tol


@dataclass
class GraphViolation:
    x_index: int
    y_s: list[float]
    mass: float

    def to_row(self) -> dict:
        return {
            "x_index": self.x_index,
            "y_s": " ".join(f"{v:.12g}" for v in self.y_s),
            "mass": self.mass,
        }


@dataclass
class GraphReport:
    S: list[int]
    violations: list[GraphViolation] = field(default_factory=list)
    tol: float = 0.0

    @property
    def max_violation(self) -> float:
        return max((v.mass for v in self.violations), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "passed": self.passed,
            "violations": [v.to_row() for v in self.violations],
        }


def _clusters(points: np.ndarray, tol: float) -> np.ndarray:
    """Label rows of points that agree within tol (first-come single linkage)."""
    labels = np.full(points.shape[0], -1, dtype=int)
    heads: list[np.ndarray] = []
    for j, p in enumerate(points):
        for label, head in enumerate(heads):
            if np.abs(head - p).max(initial=0.0) <= tol:
                labels[j] = label
                break
        else:
            labels[j] = len(heads)
            heads.append(p)
    return labels


def check_graph_structure(plan: JointPlan, S: Sequence[int], tol: Optional[float] = None,
                          match_tol: float = 1e-9) -> GraphReport:
    """Is every conditional concentrated on a graph over its S-coordinates?

    Atoms sharing y_S (within match_tol) must share y_{S^c} (within tol); the
    violation of a group is its conditional mass outside its heaviest cluster.
    """
    tol = settings.conditional_noise_floor if tol is None else tol
    S = sorted(S)
    complement = [i for i in range(plan.dim) if i not in S]
    report = GraphReport(S=S, tol=tol)

    for cond in disintegrate(plan):
        points, weights = cond.conditional.points, cond.conditional.weights
        groups = _clusters(points[:, S], match_tol)
        for label in np.unique(groups):
            members = groups == label
            if members.sum() < 2:
                continue
            inner = _clusters(points[members][:, complement], tol)
            member_weights = weights[members]
            heaviest = max(member_weights[inner == k].sum() for k in np.unique(inner))
            excess = float(member_weights.sum() - heaviest)
            if excess > 0:
                report.violations.append(GraphViolation(
                    x_index=cond.x_index,
                    y_s=points[members][0, S].tolist(),
                    mass=excess,
                ))

    if report.passed:
        logger.debug(f"Graph structure over S={S} holds")
    else:
        logger.warning(f"Graph structure over S={S} violated, worst mass {report.max_violation:.3e}")
    return report


@dataclass
class ThreePointRecord:
    x: float
    mass: float
    T_minus: float
    T_plus: float
    lambda_minus: float
    lambda_plus: float
    stay_weight: float
    weight_sum: float
    barycenter_residual: float
    consistent: bool

    def to_row(self) -> dict:
        return dict(self.__dict__)


def _trend(values: np.ndarray, tol: float) -> str:
    if values.size < 2:
        return "constant"
    steps = np.diff(values)
    if np.all(np.abs(steps) <= tol):
        return "constant"
    if np.all(steps >= -tol):
        return "nondecreasing"
    if np.all(steps <= tol):
        return "nonincreasing"
    return "mixed"


@dataclass
class ThreePointStructure:
    records: list[ThreePointRecord] = field(default_factory=list)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.consistent for r in self.records)

    @property
    def trends(self) -> dict[str, str]:
        moving = [r for r in self.records if r.stay_weight < 1.0 - self.tol]
        return {
            "T_minus": _trend(np.array([r.T_minus for r in moving]), self.tol),
            "T_plus": _trend(np.array([r.T_plus for r in moving]), self.tol),
        }

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "passed": self.passed,
            "trends": self.trends,
            "records": [r.to_row() for r in self.records],
        }


def three_point_structure_1d(plan: JointPlan, tol: Optional[float] = None) -> ThreePointStructure:
    """Split each conditional of a 1D plan into stay weight and the two moving atoms T- < x < T+."""
    tol = settings.three_point_tol if tol is None else tol
    if plan.dim != 1:
        raise MmotError(f"three-point structure needs a 1D plan, got d={plan.dim}")

    structure = ThreePointStructure(tol=tol)
    for cond in disintegrate(plan):
        x = float(cond.x[0])
        ys = cond.conditional.points[:, 0]
        weights = cond.conditional.weights
        significant = weights > tol
        ys, weights = ys[significant], weights[significant]

        at_x = np.abs(ys - x) <= settings.order_tol
        left, right = ys < x - settings.order_tol, ys > x + settings.order_tol
        if left.sum() > 1 or right.sum() > 1:
            raise NotThreePointError(
                f"not three-point: conditional at x={x:.6g} has {int(left.sum())} atom(s) below "
                f"and {int(right.sum())} above"
            )

        stay = float(weights[at_x].sum())
        if left.any() != right.any():
            raise NotThreePointError(f"not three-point: conditional at x={x:.6g} moves to one side only")

        if left.any():
            t_minus, t_plus = float(ys[left][0]), float(ys[right][0])
            observed_minus, observed_plus = float(weights[left][0]), float(weights[right][0])
            spread = t_plus - t_minus
            expected_minus = abs((t_plus - x) / spread) * (1.0 - stay)
            expected_plus = abs((t_minus - x) / spread) * (1.0 - stay)
            consistent = max(abs(observed_minus - expected_minus), abs(observed_plus - expected_plus)) <= tol
        else:
            t_minus = t_plus = x
            observed_minus = observed_plus = 0.0
            consistent = True

        total = float(weights.sum())
        barycenter = float(weights @ ys / total) if total > 0 else x
        structure.records.append(ThreePointRecord(
            x=x,
            mass=cond.mass,
            T_minus=t_minus,
            T_plus=t_plus,
            lambda_minus=observed_minus,
            lambda_plus=observed_plus,
            stay_weight=stay,
            weight_sum=total,
            barycenter_residual=abs(barycenter - x),
            consistent=bool(consistent),
        ))

    logger.debug(f"Three-point structure on {len(structure.records)} conditionals, trends {structure.trends}")
    return structure

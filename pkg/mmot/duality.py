"""Primal solve, dual triple recovery and the gauge freedom of certificates.

A dual triple (f, g, h) certifies a plan when

    sum_i f_i(x_i) - sum_i g_i(y_i) + h(x).(y - x) <= c(x, y)

at every grid pair, with equality wherever the plan puts mass. The LP
multipliers of the mu rows give f, the negated multipliers of the nu rows
give g and the martingale-row multipliers give h.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from lp.dump import dump_lp
from lp.simplex import LinearProgram, LpSolution, LpStatus, solve_lp
from measures.discrete import JointPlan
from mmot.problem import MmotProblem, build_lp, lp_layout, plan_residual
from utils.config import settings
from utils.errors import InfeasibleProblemError, MmotError, UncertifiedDualError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class PrimalResult:
    plan: JointPlan
    value: float
    lp: LinearProgram
    solution: LpSolution

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "plan": self.plan.to_json(),
            "solver": {
                "engine": self.solution.stats.get("engine"),
                "iterations": self.solution.stats.get("iterations", 0),
                "primal_residual": self.solution.stats.get("primal_residual"),
                "rank_deficit": self.solution.rank_deficit,
                "degenerate": self.solution.degenerate,
            },
        }


@dataclass(frozen=True)
class CertificationReport:
    max_violation: float
    max_support_residual: float
    duality_gap: float
    finite: bool
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.finite
            and self.max_violation <= self.tol
            and self.max_support_residual <= self.tol
            and abs(self.duality_gap) <= self.tol
        )

    def to_dict(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "max_support_residual": self.max_support_residual,
            "duality_gap": self.duality_gap,
            "finite": self.finite,
            "tol": self.tol,
            "passed": self.passed,
        }

    def __str__(self) -> str:
        return (
            f"violation={self.max_violation:.3e}, support={self.max_support_residual:.3e}, "
            f"gap={self.duality_gap:.3e}, tol={self.tol:g}"
        )


@dataclass
class DualTriple:
    f: list[np.ndarray]
    g: list[np.ndarray]
    h: np.ndarray
    certification: Optional[CertificationReport] = field(default=None, compare=False)

    def f_sum(self, problem: MmotProblem) -> np.ndarray:
        """sum_i f_i(x_i) at every point of x_grid."""
        return sum(self.f[i][problem.x_atoms[:, i]] for i in range(problem.d))

    def g_sum(self, problem: MmotProblem) -> np.ndarray:
        """sum_i g_i(y_i) at every point of y_grid."""
        return sum(self.g[i][problem.y_atoms[:, i]] for i in range(problem.d))

    def pointwise_gap(self, problem: MmotProblem) -> np.ndarray:
        """|X| x |Y| matrix of  sum f - sum g + h.(y - x) - c; nonpositive for a valid certificate."""
        steps = problem.y_grid[None, :, :] - problem.x_grid[:, None, :]
        hedge = np.einsum("xi,xyi->xy", self.h, steps)
        return self.f_sum(problem)[:, None] - self.g_sum(problem)[None, :] + hedge - problem.cost_matrix

    def objective(self, problem: MmotProblem) -> float:
        return float(sum(
            mu.integrate(f_i) - nu.integrate(g_i)
            for mu, nu, f_i, g_i in zip(problem.mus, problem.nus, self.f, self.g)
        ))

    def is_finite(self) -> bool:
        arrays = list(self.f) + list(self.g) + [self.h]
        return all(np.all(np.isfinite(a)) for a in arrays)

    def to_dict(self) -> dict:
        data = {
            "f": [f_i.tolist() for f_i in self.f],
            "g": [g_i.tolist() for g_i in self.g],
            "h": self.h.tolist(),
        }
        if self.certification is not None:
            data["certification"] = self.certification.to_dict()
        return data


def solve_primal(problem: MmotProblem, dump_path: Optional[Union[str, Path]] = None) -> PrimalResult:
    lp = build_lp(problem)
    if dump_path is not None:
        dump_lp(lp, dump_path)

    solution = solve_lp(lp)
    if solution.status == LpStatus.INFEASIBLE:
        raise InfeasibleProblemError(
            "MMOT linear program is infeasible",
            {"phase_one_residual": solution.stats.get("phase_one_residual"), "ray": solution.dual.tolist()},
        )
    if solution.status != LpStatus.OPTIMAL:
        raise MmotError(f"MMOT linear program ended with status {solution.status.value}")

    plan = JointPlan.from_dense(problem.x_grid, problem.y_grid, solution.primal.reshape(problem.n_x, problem.n_y))
    residual = plan_residual(problem, plan)
    if residual["max"] > settings.plan_mass_tol:
        raise MmotError(
            f"optimal LP vertex is not a martingale plan: mu {residual['mu']:.3e}, "
            f"nu {residual['nu']:.3e}, martingale {residual['martingale']:.3e}"
        )

    value = plan.cost(problem.cost_matrix)
    logger.info(f"Primal value {value:.12g} ({len(plan)} support pairs, {solution.stats['iterations']} iterations)")
    return PrimalResult(plan, value, lp, solution)


def certify(dual: DualTriple, problem: MmotProblem, plan: JointPlan, value: float,
            tol: Optional[float] = None) -> CertificationReport:
    tol = settings.certification_tol if tol is None else tol
    if not dual.is_finite():
        return CertificationReport(np.inf, np.inf, np.inf, False, tol)

    gap = dual.pointwise_gap(problem)
    support = gap[plan.x_index, plan.y_index]
    return CertificationReport(
        max_violation=float(max(gap.max(), 0.0)),
        max_support_residual=float(np.abs(support).max(initial=0.0)),
        duality_gap=float(value - dual.objective(problem)),
        finite=True,
        tol=tol,
    )


def recover_dual(problem: MmotProblem, lp_solution: Union[LpSolution, PrimalResult],
                 tol: Optional[float] = None, strict: bool = True) -> DualTriple:
    """Dual triple from the LP multipliers, certified against the primal plan."""
    solution = lp_solution.solution if isinstance(lp_solution, PrimalResult) else lp_solution
    if not solution.optimal:
        raise MmotError(f"cannot recover a dual from a {solution.status.value} solution")

    layout = lp_layout(problem)
    y = solution.dual

    def pick(rows: np.ndarray) -> np.ndarray:
        return np.where(rows >= 0, y[np.maximum(rows, 0)], 0.0)

    dual = DualTriple(
        f=[pick(rows) for rows in layout.mu_rows],
        g=[-pick(rows) for rows in layout.nu_rows],
        h=y[layout.martingale_rows].copy(),
    )

    plan = JointPlan.from_dense(problem.x_grid, problem.y_grid, solution.primal.reshape(problem.n_x, problem.n_y))
    report = certify(dual, problem, plan, plan.cost(problem.cost_matrix), tol)
    dual.certification = report

    if not report.passed:
        if strict:
            raise UncertifiedDualError(report)
        logger.warning(f"Dual triple not certified: {report}")
    else:
        logger.debug(f"Dual triple certified: {report}")
    return dual


def gauge_normalize(dual: DualTriple, problem: MmotProblem) -> DualTriple:
    """Shift constants so that int f_i dmu_i = 0 for every i and int g_i dnu_i = 0 for i >= 2.

    The f shifts and the g shifts have equal sums, so the pointwise form and the
    dual objective are unchanged; g_1 absorbs the remainder.
    """
    mass = problem.mass
    s = [-mu.integrate(f_i) / mass for mu, f_i in zip(problem.mus, dual.f)]
    t = [0.0] + [-nu.integrate(g_i) / mass for nu, g_i in zip(problem.nus[1:], dual.g[1:])]
    t[0] = sum(s) - sum(t[1:])

    return replace(
        dual,
        f=[f_i + s_i for f_i, s_i in zip(dual.f, s)],
        g=[g_i + t_i for g_i, t_i in zip(dual.g, t)],
        h=dual.h.copy(),
    )


def duality_gap(problem: MmotProblem) -> float:
    """P(c) - D(c) for the LP optimum and its recovered multipliers."""
    primal = solve_primal(problem)
    dual = recover_dual(problem, primal.solution, strict=False)
    gap = primal.value - dual.objective(problem)
    if gap < -settings.certification_tol:
        logger.warning(f"Negative duality gap {gap:.3e}")
    return float(gap)


def affine_shift(dual: DualTriple, problem: MmotProblem, b, anchor, const: float = 0.0) -> DualTriple:
    """Subtract L(z) = b.(z - anchor) from sum f and sum g, b from h and const from f_1 and g_1.

    Pointwise residuals and the dual objective are unchanged because mu_i and
    nu_i share their mean.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    f = [f_i - b[i] * (mu.positions - anchor[i]) for i, (f_i, mu) in enumerate(zip(dual.f, problem.mus))]
    g = [g_i - b[i] * (nu.positions - anchor[i]) for i, (g_i, nu) in enumerate(zip(dual.g, problem.nus))]
    f[0] = f[0] - const
    g[0] = g[0] - const
    return replace(dual, f=f, g=g, h=dual.h - b[None, :])


def chi_values(dual: DualTriple, problem: MmotProblem, points) -> np.ndarray:
    """chi(y) = max_x [sum_i f_i(x_i) + h(x).(y - x)] at each row of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pieces = dual.f_sum(problem)[None, :] + np.einsum(
        "xi,pxi->px", dual.h, points[:, None, :] - problem.x_grid[None, :, :]
    )
    return pieces.max(axis=1)


def chi_from_dual(dual: DualTriple, problem: MmotProblem, y) -> float:
    return float(chi_values(dual, problem, y)[0])


def chi_sandwich(dual: DualTriple, problem: MmotProblem, tol: Optional[float] = None) -> dict:
    """Check sum f(y) <= chi(y) <= max_x c(x, y) + sum g(y).

    The upper bound is tested at every y of y_grid; the lower bound where f is
    defined, i.e. at y in x_grid and y_grid both.
    """
    tol = settings.certification_tol if tol is None else tol
    chi_y = chi_values(dual, problem, problem.y_grid)
    upper = problem.cost_matrix.max(axis=0) + dual.g_sum(problem)
    upper_violation = float(np.maximum(chi_y - upper, 0.0).max(initial=0.0))

    distance = np.abs(problem.x_grid[:, None, :] - problem.y_grid[None, :, :]).max(axis=2)
    xs, ys = np.nonzero(distance <= settings.atom_tol)
    lower_violation = float(np.maximum(dual.f_sum(problem)[xs] - chi_y[ys], 0.0).max(initial=0.0))

    return {
        "upper_violation": upper_violation,
        "lower_violation": lower_violation,
        "lower_points": int(xs.size),
        "passed": max(upper_violation, lower_violation) <= tol,
    }


def chi_anchor(problem: MmotProblem) -> np.ndarray:
    """x-grid point nearest the vector of mu means."""
    means = np.array([mu.mean for mu in problem.mus])
    return problem.x_grid[int(np.argmin(np.linalg.norm(problem.x_grid - means, axis=1)))].copy()


def normalize_chi(dual: DualTriple, problem: MmotProblem, anchor=None) -> tuple[DualTriple, np.ndarray]:
    """Affine change of certificate giving chi(a) = 0 and 0 in the subdifferential of chi at a."""
    anchor = chi_anchor(problem) if anchor is None else np.asarray(anchor, dtype=float).reshape(-1)
    pieces = dual.f_sum(problem) + np.einsum("xi,xi->x", dual.h, anchor[None, :] - problem.x_grid)
    active = int(np.argmax(pieces))
    shifted = affine_shift(dual, problem, dual.h[active], anchor, float(pieces[active]))
    return shifted, anchor

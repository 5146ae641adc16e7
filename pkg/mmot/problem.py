"""Discrete MMOT problems and their linear programs.

Grid points of x_grid = supp(mu_1) x ... x supp(mu_d) are enumerated in
C order (last coordinate fastest), likewise y_grid. The LP variable of the
pair (x_grid[k], y_grid[l]) is k * |Y| + l.
"""
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from lp.simplex import LinearProgram, LpStatus, solve_lp
from measures.discrete import DiscreteMeasure, JointPlan, convex_order_check
from mmot.costs import CostSpec
from utils.config import settings
from utils.errors import ConvexOrderError, InfeasibleProblemError, InvalidMeasureError
from utils.logger import get_logger

logger = get_logger(__name__)


def _product_grid(measures: Sequence[DiscreteMeasure]) -> tuple[np.ndarray, np.ndarray]:
    """Product grid points and, per point, the atom index of every coordinate."""
    shape = tuple(len(m) for m in measures)
    atoms = np.indices(shape).reshape(len(shape), -1).T
    points = np.column_stack([m.positions[atoms[:, i]] for i, m in enumerate(measures)])
    return points, atoms


class MmotProblem:

    def __init__(self, mus: Sequence[DiscreteMeasure], nus: Sequence[DiscreteMeasure], cost: CostSpec):
        mus, nus = list(mus), list(nus)
        if not mus or len(mus) != len(nus):
            raise InvalidMeasureError(f"need d >= 1 pairs of marginals, got {len(mus)} mu and {len(nus)} nu")

        for i, (mu, nu) in enumerate(zip(mus, nus)):
            check = convex_order_check(mu, nu)
            if not check.ordered:
                raise ConvexOrderError(f"coordinate {i} not in convex order: {check.reason}", check.witness)

        masses = [mu.mass for mu in mus]
        if max(masses) - min(masses) > settings.order_tol:
            raise InvalidMeasureError(f"marginals carry different masses: {masses}")

        cost.check_dimension(len(mus))
        self.mus = mus
        self.nus = nus
        self.cost = cost
        self.x_grid, self.x_atoms = _product_grid(mus)
        self.y_grid, self.y_atoms = _product_grid(nus)

    @property
    def d(self) -> int:
        return len(self.mus)

    @property
    def mass(self) -> float:
        return self.mus[0].mass

    @property
    def n_x(self) -> int:
        return int(self.x_grid.shape[0])

    @property
    def n_y(self) -> int:
        return int(self.y_grid.shape[0])

    @property
    def n_vars(self) -> int:
        return self.n_x * self.n_y

    @property
    def x_shape(self) -> tuple[int, ...]:
        return tuple(len(mu) for mu in self.mus)

    @property
    def y_shape(self) -> tuple[int, ...]:
        return tuple(len(nu) for nu in self.nus)

    @cached_property
    def cost_matrix(self) -> np.ndarray:
        return self.cost.matrix(self.x_grid, self.y_grid)

    def with_cost(self, cost: CostSpec) -> "MmotProblem":
        return MmotProblem(self.mus, self.nus, cost)

    def x_index_of(self, point) -> int:
        """Index of a point of x_grid, matched coordinatewise within atom_tol."""
        hit = np.flatnonzero(np.abs(self.x_grid - np.asarray(point, dtype=float)).max(axis=1) <= settings.atom_tol)
        if hit.size == 0:
            raise KeyError(tuple(point))
        return int(hit[0])

    def describe(self) -> dict:
        return {
            "d": self.d,
            "cost": self.cost.label(),
            "mu_atoms": [len(mu) for mu in self.mus],
            "nu_atoms": [len(nu) for nu in self.nus],
            "n_vars": self.n_vars,
        }


@dataclass(frozen=True)
class LpLayout:
    """Row numbers of every constraint of build_lp; -1 marks a dropped row."""
    mu_rows: tuple[np.ndarray, ...]
    nu_rows: tuple[np.ndarray, ...]
    martingale_rows: np.ndarray
    n_rows: int


def lp_layout(problem: MmotProblem) -> LpLayout:
    """Row numbering: mu blocks, then nu blocks, then the d martingale rows of each x.

    Every marginal block after the first loses the row of its last atom; those
    rows are implied by the first block's total mass.
    """
    next_row = 0
    blocks = []
    for block, measure in enumerate(list(problem.mus) + list(problem.nus)):
        rows = np.full(len(measure), -1, dtype=int)
        kept = len(measure) if block == 0 else len(measure) - 1
        rows[:kept] = np.arange(next_row, next_row + kept)
        next_row += kept
        blocks.append(rows)

    martingale = next_row + np.arange(problem.n_x * problem.d).reshape(problem.n_x, problem.d)
    next_row += problem.n_x * problem.d
    return LpLayout(tuple(blocks[:problem.d]), tuple(blocks[problem.d:]), martingale, next_row)


def build_lp(problem: MmotProblem) -> LinearProgram:
    layout = lp_layout(problem)
    n_x, n_y, d = problem.n_x, problem.n_y, problem.d

    xi = np.repeat(np.arange(n_x), n_y)
    yi = np.tile(np.arange(n_y), n_x)
    variables = xi * n_y + yi

    rows, cols, values = [], [], []
    rhs = np.zeros(layout.n_rows)
    labels: list[str] = [""] * layout.n_rows

    for kind, measures, atoms, index, block_rows in (
            ("mu", problem.mus, problem.x_atoms, xi, layout.mu_rows),
            ("nu", problem.nus, problem.y_atoms, yi, layout.nu_rows),
    ):
        for i, (measure, row_of_atom) in enumerate(zip(measures, block_rows)):
            row = row_of_atom[atoms[index, i]]
            kept = row >= 0
            rows.append(row[kept])
            cols.append(variables[kept])
            values.append(np.ones(int(kept.sum())))
            for a, r in enumerate(row_of_atom):
                if r >= 0:
                    rhs[r] = measure.weights[a]
                    labels[r] = f"{kind}[{i}]@{measure.positions[a]:.12g}"

    for i in range(d):
        step = problem.y_grid[yi, i] - problem.x_grid[xi, i]
        nonzero = step != 0.0
        rows.append(layout.martingale_rows[xi[nonzero], i])
        cols.append(variables[nonzero])
        values.append(step[nonzero])
    for k in range(n_x):
        for i in range(d):
            labels[layout.martingale_rows[k, i]] = f"martingale[{k}][{i}]"

    matrix = sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.n_rows, problem.n_vars),
    ).tocsr()

    logger.debug(f"Built MMOT LP: {problem.n_vars} variables, {layout.n_rows} rows")
    return LinearProgram(problem.n_vars, problem.cost_matrix.reshape(-1), matrix, rhs, tuple(labels))


def plan_residual(problem: MmotProblem, plan: JointPlan) -> dict[str, float]:
    """Largest violation of every marginal and martingale row, dropped rows included."""
    w = plan.weights
    x_atoms = problem.x_atoms[plan.x_index]
    y_atoms = problem.y_atoms[plan.y_index]

    mu_gap, nu_gap = 0.0, 0.0
    for i in range(problem.d):
        mu_marginal = np.bincount(x_atoms[:, i], weights=w, minlength=len(problem.mus[i]))
        nu_marginal = np.bincount(y_atoms[:, i], weights=w, minlength=len(problem.nus[i]))
        mu_gap = max(mu_gap, float(np.abs(mu_marginal - problem.mus[i].weights).max()))
        nu_gap = max(nu_gap, float(np.abs(nu_marginal - problem.nus[i].weights).max()))

    drift = np.zeros((problem.n_x, problem.d))
    steps = problem.y_grid[plan.y_index] - problem.x_grid[plan.x_index]
    np.add.at(drift, plan.x_index, w[:, None] * steps)
    martingale_gap = float(np.abs(drift).max(initial=0.0))

    return {
        "mu": mu_gap,
        "nu": nu_gap,
        "martingale": martingale_gap,
        "max": max(mu_gap, nu_gap, martingale_gap),
    }


def one_dimensional_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: Optional[CostSpec] = None) -> JointPlan:
    """A 1D martingale coupling of (mu, nu) from an LP solve (zero cost unless given)."""
    if cost is None:
        cost = CostSpec.from_table(np.zeros((len(mu), len(nu))))
    problem = MmotProblem([mu], [nu], cost)
    solution = solve_lp(build_lp(problem))
    if solution.status != LpStatus.OPTIMAL:
        raise InfeasibleProblemError(
            "no martingale coupling for a convex-ordered pair",
            {"status": solution.status.value, **solution.stats},
        )
    return JointPlan.from_dense(problem.x_grid, problem.y_grid, solution.primal.reshape(problem.n_x, problem.n_y))


def product_feasible_plan(problem: MmotProblem) -> JointPlan:
    """Tensor product of 1D martingale couplings; feasible for build_lp(problem)."""
    couplings = [
        one_dimensional_coupling(mu, nu).dense()
        for mu, nu in zip(problem.mus, problem.nus)
    ]
    joint = reduce(np.kron, couplings) / problem.mass ** (problem.d - 1)
    plan = JointPlan.from_dense(problem.x_grid, problem.y_grid, joint)

    residual = plan_residual(problem, plan)
    if residual["max"] > settings.plan_mass_tol:
        logger.warning(f"Product plan residual {residual['max']:.3e} above tolerance")
    return plan

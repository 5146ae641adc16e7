"""Martingale Legendre transforms of a dual triple on finite grids.

For every x of x_grid the pair (alpha(x), gamma(x)) is the best affine
minorant  a + b.(y - x) <= sum_i g_i(y_i) + c(x, y)  over y in y_grid, read
off the envelope LP at x. beta is the inverse transform and phi / psi are the
successive coordinate decompositions of alpha and beta.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from measures.discrete import JointPlan
from mmot.duality import DualTriple
from mmot.problem import MmotProblem
from transforms.envelope import affine_rank, envelope_lp, lower_convex_envelope
from utils.config import settings
from utils.errors import DegenerateSupportError
from utils.logger import get_logger

logger = get_logger(__name__)


def _grid_sum(parts: Sequence[np.ndarray], atoms: np.ndarray) -> np.ndarray:
    return sum(np.asarray(part, dtype=float)[atoms[:, i]] for i, part in enumerate(parts))


@dataclass
class LegendrePair:
    alpha: np.ndarray
    gamma: np.ndarray
    nonunique: np.ndarray


def martingale_legendre(g: Sequence[np.ndarray], problem: MmotProblem) -> LegendrePair:
    """(alpha, gamma) on x_grid from g; gamma is the multiplier of the solver's optimal vertex."""
    if affine_rank(problem.y_grid) < problem.d:
        raise DegenerateSupportError("degenerate support: y_grid does not span R^d affinely")

    g_sum = _grid_sum(g, problem.y_atoms)
    alpha = np.empty(problem.n_x)
    gamma = np.empty((problem.n_x, problem.d))
    nonunique = np.zeros(problem.n_x, dtype=bool)

    for k, x in enumerate(problem.x_grid):
        result = envelope_lp(problem.y_grid, g_sum + problem.cost_matrix[k], x)
        if result is None:
            raise DegenerateSupportError(f"degenerate support: x={x.tolist()} outside conv(y_grid)")
        alpha[k] = result.value
        gamma[k] = result.slope
        nonunique[k] = result.degenerate

    if nonunique.any():
        logger.debug(f"gamma not unique at {int(nonunique.sum())} of {problem.n_x} grid points")
    return LegendrePair(alpha, gamma, nonunique)


def inverse_martingale_legendre(alpha: np.ndarray, gamma: np.ndarray, problem: MmotProblem) -> np.ndarray:
    """beta(y) = max_x [alpha(x) + gamma(x).(y - x) - c(x, y)] on y_grid."""
    steps = problem.y_grid[None, :, :] - problem.x_grid[:, None, :]
    pieces = alpha[:, None] + np.einsum("xi,xyi->xy", gamma, steps) - problem.cost_matrix
    return pieces.max(axis=0)


def coordinate_legendre(target: np.ndarray, seeds: Sequence[np.ndarray], shape: Sequence[int],
                        mode: str = "min") -> list[np.ndarray]:
    """Successive coordinate decomposition of a function tabulated on a product grid.

    mode="min": phi_j = min over the other axes of target - sum_{i<j} phi_i - sum_{i>j} seed_i.
    mode="max": the same with max, used for psi from beta and g.
    """
    d = len(shape)
    table = np.asarray(target, dtype=float).reshape(tuple(shape))
    fold = np.min if mode == "min" else np.max

    def along(vector: np.ndarray, axis: int) -> np.ndarray:
        view = [1] * d
        view[axis] = shape[axis]
        return np.asarray(vector, dtype=float).reshape(view)

    result: list[np.ndarray] = []
    for j in range(d):
        rest = table.copy()
        for i in range(d):
            if i < j:
                rest = rest - along(result[i], i)
            elif i > j:
                rest = rest - along(seeds[i], i)
        others = tuple(i for i in range(d) if i != j)
        result.append(fold(rest, axis=others) if others else rest.copy())
    return result


@dataclass
class TransformBundle:
    alpha: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    phi: list[np.ndarray]
    psi: list[np.ndarray]
    nonunique: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def check_invariants(self, problem: MmotProblem, tol: Optional[float] = None) -> dict:
        """Max violations of alpha + gamma.(y-x) - c <= beta, sum phi <= alpha and sum psi >= beta."""
        tol = settings.certification_tol if tol is None else tol
        steps = problem.y_grid[None, :, :] - problem.x_grid[:, None, :]
        pieces = self.alpha[:, None] + np.einsum("xi,xyi->xy", self.gamma, steps) - problem.cost_matrix
        dual_bound = float(np.maximum(pieces - self.beta[None, :], 0.0).max(initial=0.0))
        phi_bound = float(np.maximum(_grid_sum(self.phi, problem.x_atoms) - self.alpha, 0.0).max(initial=0.0))
        psi_bound = float(np.maximum(self.beta - _grid_sum(self.psi, problem.y_atoms), 0.0).max(initial=0.0))
        return {
            "dual_bound_violation": dual_bound,
            "phi_violation": phi_bound,
            "psi_violation": psi_bound,
            "passed": max(dual_bound, phi_bound, psi_bound) <= tol,
        }

    def envelope_h(self, dual: DualTriple, problem: MmotProblem, x_index: int, query) -> float:
        """H(x, y) = conv[c(x, .) + sum g](y) at the query point."""
        values = problem.cost_matrix[x_index] + dual.g_sum(problem)
        method = "hull" if problem.d == 1 else "lp"
        return lower_convex_envelope(problem.y_grid, values, query, method=method)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma.tolist(),
            "beta": self.beta.tolist(),
            "phi": [p.tolist() for p in self.phi],
            "psi": [p.tolist() for p in self.psi],
            "gamma_nonunique": int(self.nonunique.sum()),
        }


def build_transform_bundle(dual: DualTriple, problem: MmotProblem) -> TransformBundle:
    pair = martingale_legendre(dual.g, problem)
    beta = inverse_martingale_legendre(pair.alpha, pair.gamma, problem)
    phi = coordinate_legendre(pair.alpha, dual.f, problem.x_shape, mode="min")
    psi = coordinate_legendre(beta, dual.g, problem.y_shape, mode="max")
    logger.debug(f"Transform bundle built on {problem.n_x} x {problem.n_y} grid pairs")
    return TransformBundle(pair.alpha, pair.gamma, beta, phi, psi, pair.nonunique)


def h_sandwich(dual: DualTriple, bundle: TransformBundle, problem: MmotProblem,
               pairs: Optional[Sequence[tuple[int, int]]] = None) -> dict:
    """sum f(x) <= H(x, x) and H(x, y) <= c(x, y) + sum g(y) on the grid.

    ``pairs`` restricts the second check to the given (x index, y index)
    pairs; by default every x is paired with every y.
    """
    f_sum = dual.f_sum(problem)
    g_sum = dual.g_sum(problem)
    if pairs is None:
        pairs = [(k, l) for k in range(problem.n_x) for l in range(problem.n_y)]

    lower = 0.0
    for k, x in enumerate(problem.x_grid):
        h_xx = bundle.envelope_h(dual, problem, k, x)
        lower = max(lower, f_sum[k] - h_xx)

    upper = 0.0
    for k, l in pairs:
        h_xy = bundle.envelope_h(dual, problem, k, problem.y_grid[l])
        upper = max(upper, h_xy - problem.cost_matrix[k, l] - g_sum[l])

    return {"lower_violation": float(lower), "upper_violation": float(upper)}


@dataclass(frozen=True)
class CopulaReport:
    phi_upper: float
    phi_support: float
    psi_lower: float
    psi_support: float
    tol: float

    @property
    def checks(self) -> dict[str, bool]:
        return {
            "sum_f_le_alpha": self.phi_upper <= self.tol,
            "sum_f_eq_alpha_on_pi1": self.phi_support <= self.tol,
            "sum_g_ge_beta": self.psi_lower <= self.tol,
            "sum_g_eq_beta_on_pi2": self.psi_support <= self.tol,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "residuals": {
                "sum_f_le_alpha": self.phi_upper,
                "sum_f_eq_alpha_on_pi1": self.phi_support,
                "sum_g_ge_beta": self.psi_lower,
                "sum_g_eq_beta_on_pi2": self.psi_support,
            },
            "checks": self.checks,
            "tol": self.tol,
            "passed": self.passed,
        }


def verify_copula_optimality(dual: DualTriple, plan: JointPlan, bundle: TransformBundle,
                             problem: MmotProblem, tol: Optional[float] = None) -> CopulaReport:
    tol = settings.certification_tol if tol is None else tol
    f_sum = dual.f_sum(problem)
    g_sum = dual.g_sum(problem)

    on_pi1 = np.flatnonzero(np.bincount(plan.x_index, weights=plan.weights, minlength=problem.n_x) > 0)
    on_pi2 = np.flatnonzero(np.bincount(plan.y_index, weights=plan.weights, minlength=problem.n_y) > 0)
    logger.debug(f"Copula supports: {on_pi1.size} x-points, {on_pi2.size} y-points")

    report = CopulaReport(
        phi_upper=float(np.maximum(f_sum - bundle.alpha, 0.0).max(initial=0.0)),
        phi_support=float(np.abs(f_sum[on_pi1] - bundle.alpha[on_pi1]).max(initial=0.0)),
        psi_lower=float(np.maximum(bundle.beta - g_sum, 0.0).max(initial=0.0)),
        psi_support=float(np.abs(g_sum[on_pi2] - bundle.beta[on_pi2]).max(initial=0.0)),
        tol=tol,
    )
    if not report.passed:
        logger.warning(f"Copula optimality checks failed: {report.checks}")
    return report

"""Vertex solutions of  min c.x  s.t.  A x = b,  x >= 0.

The engine is HiGHS' dual revised simplex, reached through
scipy.optimize.linprog. An optimal answer is only returned after its
primal has been re-checked against the original rows. Infeasible answers
carry the multipliers of an explicit phase-one program, which form a
Farkas ray: A^T y <= 0 with b.y equal to the smallest L1 row violation.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import OptimizeResult, linprog

from utils.config import settings
from utils.errors import IterationLimitError, MmotError
from utils.logger import get_logger

logger = get_logger(__name__)

HIGHS_METHOD = "highs-ds"
HIGHS_MIN_TOL = 1e-10


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    n_vars: int
    objective: np.ndarray
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    row_labels: tuple = ()

    def __post_init__(self):
        objective = np.asarray(self.objective, dtype=float).reshape(-1)
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        matrix = sparse.csr_matrix(self.matrix, shape=(rhs.size, self.n_vars), dtype=float)
        if objective.size != self.n_vars:
            raise MmotError(f"objective has {objective.size} entries for {self.n_vars} variables")
        if not (np.all(np.isfinite(objective)) and np.all(np.isfinite(rhs)) and np.all(np.isfinite(matrix.data))):
            raise MmotError("linear program has non-finite coefficients")
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_rows(
            cls,
            n_vars: int,
            objective: Sequence[float],
            rows: Iterable[tuple[Sequence[int], Sequence[float], float]],
            row_labels: tuple = ()
    ) -> "LinearProgram":
        indices, values, rhs, row_ids = [], [], [], []
        for r, (cols, coefs, b) in enumerate(rows):
            cols = list(cols)
            if cols and max(cols) >= n_vars:
                raise MmotError(f"row {r} references variable {max(cols)} >= {n_vars}")
            indices.extend(cols)
            values.extend(coefs)
            row_ids.extend([r] * len(cols))
            rhs.append(b)
        matrix = sparse.coo_matrix((values, (row_ids, indices)), shape=(len(rhs), n_vars)).tocsr()
        return cls(n_vars, np.asarray(objective, dtype=float), matrix, np.asarray(rhs, dtype=float), row_labels)

    @property
    def n_rows(self) -> int:
        return int(self.rhs.size)

    @property
    def rows(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        out = []
        for r in range(self.n_rows):
            start, end = self.matrix.indptr[r], self.matrix.indptr[r + 1]
            out.append((self.matrix.indices[start:end], self.matrix.data[start:end], float(self.rhs[r])))
        return out


@dataclass
class LpSolution:
    status: LpStatus
    primal: np.ndarray
    dual: np.ndarray
    objective_value: float
    basis: tuple[int, ...] = ()
    rank_deficit: int = 0
    degenerate: bool = False
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    def dual_value(self, lp: LinearProgram) -> float:
        return float(lp.rhs @ self.dual)


@dataclass(frozen=True)
class KktReport:
    max_primal_residual: float
    max_dual_violation: float
    max_cs_gap: float
    duality_gap: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.max_primal_residual, self.max_dual_violation, self.max_cs_gap) <= self.tol

    def to_dict(self) -> dict:
        return {
            "max_primal_residual": self.max_primal_residual,
            "max_dual_violation": self.max_dual_violation,
            "max_cs_gap": self.max_cs_gap,
            "duality_gap": self.duality_gap,
            "tol": self.tol,
            "passed": self.passed,
        }


class HighsSimplex:

    def __init__(
            self,
            lp: LinearProgram,
            feasibility_tol: Optional[float] = None,
            optimality_tol: Optional[float] = None,
    ):
        self.lp = lp
        self.feasibility_tol = settings.lp_feasibility_tol if feasibility_tol is None else feasibility_tol
        self.optimality_tol = settings.lp_optimality_tol if optimality_tol is None else optimality_tol
        self.m, self.n = lp.n_rows, lp.n_vars
        self.max_iterations = settings.lp_iteration_factor * (self.n + self.m)
        self.stats = {"engine": HIGHS_METHOD, "iterations": 0}

    def _linprog(self, objective: np.ndarray, matrix: sparse.csr_matrix, rhs: np.ndarray,
                 presolve: bool = True) -> OptimizeResult:
        # HiGHS compares against its own scaled model; ask for ten times tighter than we check
        options = {
            "maxiter": self.max_iterations,
            "presolve": presolve,
            "primal_feasibility_tolerance": max(self.feasibility_tol / 10.0, HIGHS_MIN_TOL),
            "dual_feasibility_tolerance": max(self.optimality_tol / 10.0, HIGHS_MIN_TOL),
        }
        return linprog(objective, A_eq=matrix, b_eq=rhs, bounds=(0, None), method=HIGHS_METHOD, options=options)

    def _phase_one(self) -> tuple[float, np.ndarray]:
        """Smallest L1 violation of A x = b over x >= 0, with its row multipliers."""
        identity = sparse.identity(self.m, format="csr")
        matrix = sparse.hstack([self.lp.matrix, identity, -identity], format="csr")
        costs = np.concatenate([np.zeros(self.n), np.ones(2 * self.m)])
        result = self._linprog(costs, matrix, self.lp.rhs)
        if result.status != 0:
            raise MmotError(f"phase one failed: {result.message}")
        return float(result.fun), np.asarray(result.eqlin.marginals, dtype=float)

    def _checked_primal(self, x: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(x)):
            raise MmotError("simplex returned a non-finite primal")
        lowest = float(x.min(initial=0.0))
        if lowest < -self.feasibility_tol:
            raise MmotError(f"simplex returned a negative primal entry {lowest:.3e}")
        x = np.maximum(x, 0.0)

        residual = float(np.abs(self.lp.matrix.dot(x) - self.lp.rhs).max(initial=0.0))
        if residual > self.feasibility_tol:
            raise MmotError(f"primal residual {residual:.3e} above {self.feasibility_tol:.1e}")
        self.stats["primal_residual"] = residual
        return x

    def _rank(self) -> int:
        if self.m == 0:
            return 0
        gram = (self.lp.matrix @ self.lp.matrix.T).toarray()
        scale = float(np.abs(gram).max(initial=0.0))
        if scale == 0.0:
            return 0
        return int(np.linalg.matrix_rank(gram, tol=self.feasibility_tol * scale, hermitian=True))

    def _infeasible(self) -> LpSolution:
        residual, ray = self._phase_one()
        self.stats["phase_one_residual"] = residual
        logger.debug(f"Infeasible: phase-one residual {residual:.3e}")
        return LpSolution(LpStatus.INFEASIBLE, np.zeros(self.n), ray, np.inf, stats=dict(self.stats))

    def solve(self) -> LpSolution:
        n, m = self.n, self.m
        c = self.lp.objective

        if m == 0:
            if n and c.min() < -self.optimality_tol:
                return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), np.zeros(0), -np.inf, stats=self.stats)
            return LpSolution(LpStatus.OPTIMAL, np.zeros(n), np.zeros(0), 0.0, stats=self.stats)

        result = self._linprog(c, self.lp.matrix, self.lp.rhs)
        if result.status in (2, 4):
            # presolve may stop at "infeasible or unbounded"; the plain simplex tells them apart
            logger.debug(f"HiGHS: {result.message}; solving again without presolve")
            result = self._linprog(c, self.lp.matrix, self.lp.rhs, presolve=False)
        self.stats["iterations"] = int(result.nit)

        if result.status == 1:
            raise IterationLimitError({
                "engine": HIGHS_METHOD,
                "iterations": int(result.nit),
                "max_iterations": self.max_iterations,
                "n_vars": n,
                "n_rows": m,
            })
        if result.status == 2:
            return self._infeasible()
        if result.status == 3:
            return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), np.zeros(m), -np.inf, stats=dict(self.stats))
        if result.status != 0:
            raise MmotError(f"simplex failed: {result.message}")

        primal = self._checked_primal(np.asarray(result.x, dtype=float))
        dual = np.asarray(result.eqlin.marginals, dtype=float)
        if not np.all(np.isfinite(dual)):
            raise MmotError("simplex returned non-finite multipliers")

        rank = self._rank()
        support = np.flatnonzero(primal > self.feasibility_tol)
        logger.debug(f"Simplex optimal after {self.stats['iterations']} iterations, {support.size} basic at rank {rank}")
        return LpSolution(
            status=LpStatus.OPTIMAL,
            primal=primal,
            dual=dual,
            objective_value=float(c @ primal),
            basis=tuple(int(j) for j in support),
            rank_deficit=m - rank,
            degenerate=bool(support.size < rank),
            stats=dict(self.stats),
        )


def solve_lp(lp: LinearProgram, feasibility_tol: Optional[float] = None) -> LpSolution:
    return HighsSimplex(lp, feasibility_tol=feasibility_tol).solve()


def check_kkt(lp: LinearProgram, sol: LpSolution, tol: Optional[float] = None) -> KktReport:
    tol = settings.certification_tol if tol is None else tol
    x, y = sol.primal, sol.dual

    residual = np.abs(lp.matrix.dot(x) - lp.rhs) if lp.n_rows else np.zeros(0)
    negativity = np.maximum(-x, 0.0)
    max_primal = float(max(residual.max(initial=0.0), negativity.max(initial=0.0)))

    reduced = lp.objective - (lp.matrix.T.dot(y) if lp.n_rows else 0.0)
    max_dual = float(np.maximum(-reduced, 0.0).max(initial=0.0))
    max_cs = float(np.abs(x * reduced).max(initial=0.0))

    gap = float(abs(lp.objective @ x - lp.rhs @ y)) if lp.n_vars else 0.0
    return KktReport(max_primal, max_dual, max_cs, gap, tol)

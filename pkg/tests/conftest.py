import json
from itertools import combinations
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from lp.simplex import LinearProgram
from measures.densities import uniform
from measures.discrete import DiscreteMeasure, JointPlan
from mmot.costs import CostSpec
from mmot.problem import MmotProblem
from utils.config import settings


@pytest.fixture
def restore_settings():
    """Snapshot the global settings and put every field back after the test."""
    original = settings.model_dump()

    yield settings

    for name, value in original.items():
        setattr(settings, name, value)


@pytest.fixture
def output_dir(tmp_path) -> Path:
    directory = tmp_path / "reports"
    directory.mkdir()
    return directory


@pytest.fixture
def dirac() -> DiscreteMeasure:
    return DiscreteMeasure.dirac(0.0)


@pytest.fixture
def two_point() -> DiscreteMeasure:
    return DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])


@pytest.fixture
def three_point() -> DiscreteMeasure:
    return DiscreteMeasure([-1.0, 0.0, 1.0], [0.25, 0.5, 0.25])


@pytest.fixture
def singleton_problem(dirac, two_point) -> MmotProblem:
    """mu = delta_0, nu = (delta_-1 + delta_1) / 2 under |x - y|; every coupling costs 1."""
    return MmotProblem([dirac], [two_point], CostSpec.pos_norm(2))


@pytest.fixture
def stay_problem(dirac, three_point) -> MmotProblem:
    return MmotProblem([dirac], [three_point], CostSpec.pos_norm(2))


@pytest.fixture
def small_pair() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """mu on {-1/4, 1/4}, nu on {-3/4, -1/4, 1/4, 3/4}: the n=2 discretization of the uniform pair."""
    return uniform(-0.5, 0.5, 2), uniform(-1.0, 1.0, 4)


@pytest.fixture
def small_problem(small_pair) -> MmotProblem:
    mu, nu = small_pair
    return MmotProblem([mu], [nu], CostSpec.neg_norm(2))


@pytest.fixture
def circle_problem(dirac, three_point) -> MmotProblem:
    return MmotProblem([dirac, dirac], [three_point, three_point], CostSpec.neg_norm(2))


@pytest.fixture
def three_point_plan() -> JointPlan:
    """x = 0 stays with weight 1/2 and splits the rest evenly to -1 and 1."""
    return JointPlan([[0.0]], [[-1.0], [0.0], [1.0]], [0, 0, 0], [0, 1, 2], [0.25, 0.5, 0.25])


@pytest.fixture
def vertex_oracle() -> Callable[[LinearProgram], float]:
    """Brute-force LP value: enumerate every basis of the row-reduced system."""

    def solve(lp: LinearProgram, tol: float = 1e-9) -> float:
        matrix = lp.matrix.toarray()
        rhs = lp.rhs.copy()

        kept: list[int] = []
        for r in range(matrix.shape[0]):
            if np.linalg.matrix_rank(matrix[kept + [r]]) > len(kept):
                kept.append(r)
        matrix, rhs = matrix[kept], rhs[kept]
        m = len(kept)

        best = np.inf
        for columns in combinations(range(lp.n_vars), m):
            basis = matrix[:, columns]
            if np.linalg.matrix_rank(basis) < m:
                continue
            values = np.linalg.solve(basis, rhs)
            if values.min(initial=0.0) < -tol:
                continue
            best = min(best, float(lp.objective[list(columns)] @ values))
        return best

    return solve


@pytest.fixture
def write_json(tmp_path) -> Callable[[str, object], Path]:
    def write(name: str, data) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            path.write_text(data, encoding="utf-8")
        else:
            path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    return write

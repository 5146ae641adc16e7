"""Finite atomic measures on the line and on product grids.

DiscreteMeasure holds the one-dimensional marginals; GridMeasure is a measure
on finitely many points of R^d (copulas, conditionals); JointPlan is a sparse
measure on x_grid x y_grid. All three are immutable once built.
"""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from utils.config import settings
from utils.errors import EmptyMeasureError, InvalidMeasureError
from utils.logger import get_logger

logger = get_logger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


class DiscreteMeasure:
    """Finite atomic measure on the real line.

    Atoms are sorted, strictly increasing and carry positive weight. Atoms
    closer than ``atom_tol`` are merged and zero-weight atoms are dropped.
    """

    def __init__(self, positions: Iterable[float], weights: Iterable[float]):
        positions = np.asarray(list(positions), dtype=float).reshape(-1)
        weights = np.asarray(list(weights), dtype=float).reshape(-1)

        if positions.shape != weights.shape:
            raise InvalidMeasureError(
                f"positions and weights differ in length ({positions.size} != {weights.size})"
            )
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise InvalidMeasureError("atoms must be finite")
        if np.any(weights < 0):
            raise InvalidMeasureError("negative atom weight")

        keep = weights > 0
        positions, weights = positions[keep], weights[keep]

        order = np.argsort(positions, kind="stable")
        positions, weights = positions[order], weights[order]

        if positions.size > 1:
            starts = np.concatenate(([True], np.diff(positions) > settings.atom_tol))
            group = np.cumsum(starts) - 1
            weights = np.bincount(group, weights=weights)
            positions = positions[starts]

        self._positions = _frozen(positions)
        self._weights = _frozen(weights)
        self._mass = float(self._weights.sum())
        self._mean = float(self._weights @ self._positions / self._mass) if self._mass > 0 else 0.0

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]]) -> "DiscreteMeasure":
        atoms = [tuple(atom) for atom in atoms]
        return cls([a[0] for a in atoms], [a[1] for a in atoms])

    @classmethod
    def dirac(cls, position: float, weight: float = 1.0) -> "DiscreteMeasure":
        return cls([position], [weight])

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def mass(self) -> float:
        return self._mass

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self._positions.tolist(), self._weights.tolist()))

    def __len__(self) -> int:
        return int(self._positions.size)

    def is_empty(self) -> bool:
        return self._positions.size == 0

    def potential(self, x) -> np.ndarray:
        """u(x) = sum_j w_j |x - a_j|, vectorised over x."""
        if self.is_empty():
            raise EmptyMeasureError()
        x = np.asarray(x, dtype=float)
        return np.abs(x[..., None] - self._positions).dot(self._weights)

    def first_moment(self) -> float:
        return float(self._weights @ self._positions)

    def integrate(self, values: Sequence[float]) -> float:
        return float(np.asarray(values, dtype=float) @ self._weights)

    def weight_at(self, position: float) -> float:
        hit = np.abs(self._positions - position) <= settings.atom_tol
        return float(self._weights[hit].sum())

    def index_of(self, position: float) -> int:
        hit = np.flatnonzero(np.abs(self._positions - position) <= settings.atom_tol)
        if hit.size == 0:
            raise KeyError(position)
        return int(hit[0])

    def restrict(self, lo: float, hi: float) -> "DiscreteMeasure":
        """Restriction to the open interval (lo, hi)."""
        inside = (self._positions > lo + settings.atom_tol) & (self._positions < hi - settings.atom_tol)
        return DiscreteMeasure(self._positions[inside], self._weights[inside])

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self._positions, self._weights * factor)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return DiscreteMeasure(
            np.concatenate([self._positions, other.positions]),
            np.concatenate([self._weights, other.weights]),
        )

    def allclose(self, other: "DiscreteMeasure", tol: float) -> bool:
        if len(self) != len(other):
            return False
        return bool(
            np.all(np.abs(self._positions - other.positions) <= settings.atom_tol)
            and np.all(np.abs(self._weights - other.weights) <= tol)
        )

    def to_json(self) -> list[list[float]]:
        return [[p, w] for p, w in self.atoms]

    @classmethod
    def from_json(cls, data: Iterable[Sequence[float]]) -> "DiscreteMeasure":
        return cls.from_atoms(data)

    def __repr__(self) -> str:
        body = ", ".join(f"{w:.6g}@{p:.6g}" for p, w in self.atoms)
        return f"DiscreteMeasure({body})"


def potential_eval(m: DiscreteMeasure, x: float) -> float:
    if m.is_empty():
        raise EmptyMeasureError()
    return float(m.potential(x))


@dataclass(frozen=True)
class OrderCheck:
    ordered: bool
    witness: Optional[tuple[float, float]] = None
    reason: str = ""


def convex_order_check(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: Optional[float] = None) -> OrderCheck:
    """mu <=_c nu on atomic measures.

    u_mu - u_nu is piecewise linear with kinks only at atoms and vanishes at
    infinity once masses and means agree, so testing the atoms is enough.
    """
    tol = settings.order_tol if tol is None else tol
    if mu.is_empty() or nu.is_empty():
        raise EmptyMeasureError()

    if abs(mu.mass - nu.mass) > tol:
        return OrderCheck(False, None, f"mass mismatch ({mu.mass} vs {nu.mass})")
    if abs(mu.mean - nu.mean) > tol:
        return OrderCheck(False, None, f"mean mismatch ({mu.mean} vs {nu.mean})")

    knots = np.union1d(mu.positions, nu.positions)
    gaps = mu.potential(knots) - nu.potential(knots)
    worst = int(np.argmax(gaps))
    if gaps[worst] > tol:
        return OrderCheck(False, (float(knots[worst]), float(gaps[worst])), "potential violation")
    return OrderCheck(True)


def match_points(a: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    """For every row of a, the index of the matching row of b (or -1)."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.full(a.shape[0], -1, dtype=int)
    distance = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    nearest = distance.argmin(axis=1)
    hit = distance[np.arange(a.shape[0]), nearest] <= tol
    return np.where(hit, nearest, -1)


class GridMeasure:
    """Finite measure on points of R^d; the measure type of copulas and conditionals."""

    def __init__(self, points, weights, drop_zero: bool = True):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if points.shape[0] != weights.size:
            raise InvalidMeasureError("points and weights differ in length")
        if drop_zero:
            keep = weights > 0
            points, weights = points[keep], weights[keep]
        self._points = _frozen(points)
        self._weights = _frozen(weights)

    @classmethod
    def zero(cls, dim: int) -> "GridMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def dim(self) -> int:
        return int(self._points.shape[1])

    @property
    def mass(self) -> float:
        return float(self._weights.sum())

    def __len__(self) -> int:
        return int(self._weights.size)

    def barycenter(self) -> np.ndarray:
        return self._weights @ self._points / self.mass

    def marginal(self, axis: int) -> DiscreteMeasure:
        return DiscreteMeasure(self._points[:, axis], self._weights)

    def weight_at(self, point) -> float:
        index = match_points(np.atleast_2d(np.asarray(point, dtype=float)), self._points, settings.atom_tol)
        return float(self._weights[index[0]]) if index[0] >= 0 else 0.0

    def to_json(self) -> list[list]:
        return [[p.tolist(), w] for p, w in zip(self._points, self._weights.tolist())]


class JointPlan:
    """Sparse nonnegative measure on x_grid x y_grid.

    Entries are kept as coordinate arrays (x index, y index, weight) sorted by
    (x index, y index); only positive weights are stored.
    """

    def __init__(self, x_grid, y_grid, x_index, y_index, weights):
        x_grid = np.asarray(x_grid, dtype=float)
        y_grid = np.asarray(y_grid, dtype=float)
        if x_grid.ndim == 1:
            x_grid = x_grid.reshape(-1, 1)
        if y_grid.ndim == 1:
            y_grid = y_grid.reshape(-1, 1)
        if x_grid.shape[1] != y_grid.shape[1]:
            raise InvalidMeasureError("x_grid and y_grid differ in dimension")

        x_index = np.asarray(x_index, dtype=int).reshape(-1)
        y_index = np.asarray(y_index, dtype=int).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if np.any(weights < 0):
            raise InvalidMeasureError("negative plan weight")

        # merge duplicates, keep positive entries
        n_y = y_grid.shape[0]
        flat = x_index * n_y + y_index
        unique, inverse = np.unique(flat, return_inverse=True)
        merged = np.bincount(inverse, weights=weights, minlength=unique.size)
        keep = merged > 0

        self._x_grid = _frozen(x_grid)
        self._y_grid = _frozen(y_grid)
        self._xi = unique[keep] // n_y if n_y else unique[keep]
        self._yi = unique[keep] % n_y if n_y else unique[keep]
        self._xi.setflags(write=False)
        self._yi.setflags(write=False)
        self._w = _frozen(merged[keep])

    @classmethod
    def from_dense(cls, x_grid, y_grid, matrix, floor: float = 0.0) -> "JointPlan":
        matrix = np.asarray(matrix, dtype=float)
        xi, yi = np.nonzero(matrix > floor)
        return cls(x_grid, y_grid, xi, yi, matrix[xi, yi])

    @property
    def dim(self) -> int:
        return int(self._x_grid.shape[1])

    @property
    def x_grid(self) -> np.ndarray:
        return self._x_grid

    @property
    def y_grid(self) -> np.ndarray:
        return self._y_grid

    @property
    def x_index(self) -> np.ndarray:
        return self._xi

    @property
    def y_index(self) -> np.ndarray:
        return self._yi

    @property
    def weights(self) -> np.ndarray:
        return self._w

    @property
    def mass(self) -> float:
        return float(self._w.sum())

    @property
    def entries(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(w) for i, j, w in zip(self._xi, self._yi, self._w)}

    def __len__(self) -> int:
        return int(self._w.size)

    def dense(self) -> np.ndarray:
        matrix = np.zeros((self._x_grid.shape[0], self._y_grid.shape[0]))
        matrix[self._xi, self._yi] = self._w
        return matrix

    def validate(self, expected_mass: float = 1.0, tol: Optional[float] = None) -> None:
        tol = settings.plan_mass_tol if tol is None else tol
        if abs(self.mass - expected_mass) > tol:
            raise InvalidMeasureError(f"plan mass {self.mass} differs from {expected_mass}")

    def cost(self, cost_matrix: np.ndarray) -> float:
        return float(self._w @ np.asarray(cost_matrix)[self._xi, self._yi])

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "x_grid": self._x_grid.tolist(),
            "y_grid": self._y_grid.tolist(),
            "entries": [[int(i), int(j), float(w)] for i, j, w in zip(self._xi, self._yi, self._w)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "JointPlan":
        entries = data.get("entries", [])
        return cls(
            np.asarray(data["x_grid"], dtype=float).reshape(-1, data["dim"]),
            np.asarray(data["y_grid"], dtype=float).reshape(-1, data["dim"]),
            [e[0] for e in entries],
            [e[1] for e in entries],
            [e[2] for e in entries],
        )


def copulas_of(plan: JointPlan) -> tuple[GridMeasure, GridMeasure]:
    n_x, n_y = plan.x_grid.shape[0], plan.y_grid.shape[0]
    pi1 = np.bincount(plan.x_index, weights=plan.weights, minlength=n_x)
    pi2 = np.bincount(plan.y_index, weights=plan.weights, minlength=n_y)
    return GridMeasure(plan.x_grid, pi1), GridMeasure(plan.y_grid, pi2)


@dataclass(frozen=True)
class Conditional:
    x_index: int
    x: np.ndarray
    mass: float
    conditional: GridMeasure
    y_index: np.ndarray

    def barycenter_residual(self) -> float:
        if len(self.conditional) == 0:
            return 0.0
        return float(np.abs(self.conditional.barycenter() - self.x).max())


def disintegrate(plan: JointPlan) -> list[Conditional]:
    """Conditionals pi_x for every x carrying positive first-copula mass."""
    conditionals = []
    boundaries = np.flatnonzero(np.diff(plan.x_index)) + 1
    for block in np.split(np.arange(len(plan)), boundaries):
        if block.size == 0:
            continue
        xi = int(plan.x_index[block[0]])
        weights = plan.weights[block]
        mass = float(weights.sum())
        yi = plan.y_index[block]
        conditionals.append(Conditional(
            x_index=xi,
            x=plan.x_grid[xi],
            mass=mass,
            conditional=GridMeasure(plan.y_grid[yi], weights / mass),
            y_index=yi,
        ))
    return conditionals


def measure_min(a: GridMeasure, b: GridMeasure) -> GridMeasure:
    """Atomwise minimum; atoms are matched by coordinates within atom_tol."""
    if len(a) == 0 or len(b) == 0:
        return GridMeasure.zero(a.dim)
    match = match_points(a.points, b.points, settings.atom_tol)
    shared = match >= 0
    weights = np.minimum(a.weights[shared], b.weights[match[shared]])
    return GridMeasure(a.points[shared], weights)


def diagonal_pushforward(m: GridMeasure) -> JointPlan:
    n = len(m)
    return JointPlan(m.points, m.points, np.arange(n), np.arange(n), m.weights)

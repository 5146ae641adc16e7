from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from measures.discrete import DiscreteMeasure
from utils.errors import InvalidMeasureError


@dataclass(frozen=True)
class UniformDensity:
    """Uniform probability density on [lo, hi]."""
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidMeasureError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def support(self) -> tuple[float, float]:
        return self.lo, self.hi

    def cell_moments(self, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        width = edges[1:] - edges[:-1]
        mass = width / (self.hi - self.lo)
        first = mass * (edges[1:] + edges[:-1]) / 2
        return mass, first


@dataclass(frozen=True)
class TableDensity:
    """Piecewise-constant density: ``densities[k]`` on [breakpoints[k], breakpoints[k+1]].

    The table is normalised to a probability density.
    """
    breakpoints: tuple[float, ...]
    densities: tuple[float, ...]

    def __post_init__(self):
        edges = np.asarray(self.breakpoints, dtype=float)
        values = np.asarray(self.densities, dtype=float)
        if edges.size < 2 or values.size != edges.size - 1:
            raise InvalidMeasureError("table needs len(densities) == len(breakpoints) - 1")
        if np.any(np.diff(edges) <= 0):
            raise InvalidMeasureError("invalid interval: breakpoints must increase")
        if np.any(values < 0) or not np.any(values > 0):
            raise InvalidMeasureError("table densities must be nonnegative with positive total")

    @property
    def support(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def _total(self) -> float:
        edges = np.asarray(self.breakpoints, dtype=float)
        return float(np.diff(edges) @ np.asarray(self.densities, dtype=float))

    def cell_moments(self, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        table_edges = np.asarray(self.breakpoints, dtype=float)
        values = np.asarray(self.densities, dtype=float) / self._total()
        mass = np.zeros(edges.size - 1)
        first = np.zeros(edges.size - 1)
        for k, rho in enumerate(values):
            lo = np.clip(edges[:-1], table_edges[k], table_edges[k + 1])
            hi = np.clip(edges[1:], table_edges[k], table_edges[k + 1])
            mass += rho * (hi - lo)
            first += rho * (hi ** 2 - lo ** 2) / 2
        return mass, first


Density = Union[UniformDensity, TableDensity]


def discretize_density(kind: Density, n_cells: int) -> DiscreteMeasure:
    """One atom per equal-width cell, placed at the cell's barycenter with the cell's mass.

    The output is the conditional-average coarsening of the density, so the
    mean is preserved and a coarser output is below a finer one in convex order
    whenever the finer cells refine the coarser ones.
    """
    if n_cells < 1:
        raise InvalidMeasureError("n_cells must be at least 1")
    lo, hi = kind.support
    edges = np.linspace(lo, hi, n_cells + 1)
    mass, first = kind.cell_moments(edges)
    positive = mass > 0
    return DiscreteMeasure(first[positive] / mass[positive], mass[positive])


def uniform(lo: float, hi: float, n_cells: int) -> DiscreteMeasure:
    return discretize_density(UniformDensity(lo, hi), n_cells)


def table(breakpoints: Sequence[float], densities: Sequence[float], n_cells: int) -> DiscreteMeasure:
    return discretize_density(TableDensity(tuple(breakpoints), tuple(densities)), n_cells)

"""Canonical decomposition of a convex-ordered pair into irreducible components.

The components are the maximal open intervals of {u_mu < u_nu} that carry
atoms of mu. Since u_nu - u_mu is piecewise linear with kinks at atoms, the
intervals are read off the union of the atoms.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from measures.discrete import DiscreteMeasure, convex_order_check
from utils.config import settings
from utils.errors import ConvexOrderError, DegenerateComponentError
from utils.logger import get_logger

logger = get_logger(__name__)


def _endpoint_json(value: float) -> Optional[float]:
    return None if np.isinf(value) else float(value)


@dataclass(frozen=True)
class IrreducibleComponent:
    index: int
    lo: float
    hi: float
    mu: DiscreteMeasure
    nu: DiscreteMeasure

    @property
    def interval(self) -> tuple[float, float]:
        return self.lo, self.hi

    @property
    def closed_endpoints(self) -> tuple[bool, bool]:
        """Which endpoints of I belong to J (endpoints that are atoms of nu_k)."""
        return (
            bool(np.isfinite(self.lo) and self.nu.weight_at(self.lo) > 0),
            bool(np.isfinite(self.hi) and self.nu.weight_at(self.hi) > 0),
        )

    def to_json(self) -> dict:
        left_closed, right_closed = self.closed_endpoints
        return {
            "index": self.index,
            "I": [_endpoint_json(self.lo), _endpoint_json(self.hi)],
            "J_closed": [left_closed, right_closed],
            "mu": self.mu.to_json(),
            "nu": self.nu.to_json(),
        }


@dataclass(frozen=True)
class Decomposition:
    fixed: DiscreteMeasure
    fixed_nu: DiscreteMeasure
    components: list[IrreducibleComponent] = field(default_factory=list)

    def reconstruction_error(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        """Largest atomwise discrepancy of fixed + sum mu_k vs mu and likewise for nu."""
        mu_sum = self.fixed
        nu_sum = self.fixed_nu
        for component in self.components:
            mu_sum = mu_sum + component.mu
            nu_sum = nu_sum + component.nu
        return max(_atomwise_gap(mu_sum, mu), _atomwise_gap(nu_sum, nu))

    def to_json(self) -> dict:
        return {
            "fixed": self.fixed.to_json(),
            "fixed_nu": self.fixed_nu.to_json(),
            "components": [component.to_json() for component in self.components],
        }


def _atomwise_gap(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    knots = np.union1d(a.positions, b.positions)
    if knots.size == 0:
        return 0.0
    return float(max(abs(a.weight_at(k) - b.weight_at(k)) for k in knots))


def _endpoint_masses(mu_k: DiscreteMeasure, nu_inside: DiscreteMeasure, lo: float, hi: float) -> tuple[float, float]:
    """Masses at lo and hi matching mass and mean of mu_k."""
    system = np.array([[1.0, 1.0], [lo, hi]])
    target = np.array([
        mu_k.mass - nu_inside.mass,
        mu_k.first_moment() - nu_inside.first_moment(),
    ])
    if abs(np.linalg.det(system)) <= settings.atom_tol:
        raise DegenerateComponentError()
    left, right = np.linalg.solve(system, target)
    if min(left, right) < -settings.order_tol:
        raise DegenerateComponentError(
            f"degenerate component: negative endpoint mass on ({lo}, {hi}): {left}, {right}"
        )
    return max(float(left), 0.0), max(float(right), 0.0)


def irreducible_components(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Decomposition:
    check = convex_order_check(mu, nu)
    if not check.ordered:
        raise ConvexOrderError(f"not in convex order: {check.reason}", check.witness)

    knots = np.union1d(mu.positions, nu.positions)
    gap = nu.potential(knots) - mu.potential(knots)
    touching = gap <= settings.strictness_tol

    components: list[IrreducibleComponent] = []
    allocated: dict[float, float] = {}

    zeros = np.flatnonzero(touching)
    for left, right in zip(zeros[:-1], zeros[1:]):
        if right - left < 2:
            continue
        lo, hi = float(knots[left]), float(knots[right])
        mu_k = mu.restrict(lo, hi)
        if mu_k.is_empty():
            continue
        nu_inside = nu.restrict(lo, hi)
        left_mass, right_mass = _endpoint_masses(mu_k, nu_inside, lo, hi)
        nu_k = nu_inside + DiscreteMeasure([lo, hi], [left_mass, right_mass])
        allocated[lo] = allocated.get(lo, 0.0) + left_mass
        allocated[hi] = allocated.get(hi, 0.0) + right_mass
        components.append(IrreducibleComponent(len(components) + 1, lo, hi, mu_k, nu_k))

    on_contact = touching[np.searchsorted(knots, mu.positions)]
    fixed = DiscreteMeasure(mu.positions[on_contact], mu.weights[on_contact])

    contact_knots = knots[touching]
    remainder = np.array([nu.weight_at(k) - allocated.get(float(k), 0.0) for k in contact_knots])
    remainder[remainder <= settings.order_tol] = 0.0
    fixed_nu = DiscreteMeasure(contact_knots, remainder)

    gap_fixed = _atomwise_gap(fixed, fixed_nu)
    if gap_fixed > settings.order_tol:
        logger.warning(f"Fixed parts of mu and nu differ by {gap_fixed:.3e}")

    logger.debug(f"Decomposed pair into {len(components)} component(s), fixed mass {fixed.mass:.6g}")
    return Decomposition(fixed, fixed_nu, components)


def irreducibility_check(mu: DiscreteMeasure, nu: DiscreteMeasure) -> bool:
    decomposition = irreducible_components(mu, nu)
    if len(decomposition.components) != 1:
        return False
    if decomposition.fixed.mass > settings.order_tol:
        return False
    return abs(decomposition.components[0].mu.mass - mu.mass) <= settings.order_tol

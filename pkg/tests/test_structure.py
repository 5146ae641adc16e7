import numpy as np
import pytest

from measures.densities import uniform
from measures.discrete import DiscreteMeasure
from mmot.costs import CostSpec
from mmot.duality import solve_primal
from mmot.problem import MmotProblem
from structure.decomposition import irreducibility_check, irreducible_components
from utils.errors import ConvexOrderError


def random_spread(seed: int) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """mu on a few random atoms; nu splits most of them into two mean-preserving atoms."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    centres = np.sort(rng.uniform(-5.0, 5.0, n))
    masses = rng.dirichlet(np.ones(n))

    positions, weights = [], []
    for x, w in zip(centres, masses):
        if rng.random() < 0.25:
            positions.append(x)
            weights.append(w)
            continue
        left, right = rng.uniform(0.1, 1.5, 2)
        positions += [x - left, x + right]
        weights += [w * right / (left + right), w * left / (left + right)]
    return DiscreteMeasure(centres, masses), DiscreteMeasure(positions, weights)


@pytest.fixture
def split_pair() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Two disjoint irreducible blocks, (-1, 1) around 0 and (3, 5) around 4."""
    mu = DiscreteMeasure([0.0, 4.0], [0.5, 0.5])
    nu = DiscreteMeasure([-1.0, 1.0, 3.0, 5.0], [0.25] * 4)
    return mu, nu


@pytest.fixture
def pair_with_fixed_mass() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """The atom at 0 cannot move; the atom at 3 spreads over (2, 4)."""
    mu = DiscreteMeasure([0.0, 3.0], [0.5, 0.5])
    nu = DiscreteMeasure([0.0, 2.0, 4.0], [0.5, 0.25, 0.25])
    return mu, nu


@pytest.mark.unit
class TestIrreducibleComponents:

    def test_single_component(self, dirac, two_point):
        decomposition = irreducible_components(dirac, two_point)

        assert len(decomposition.components) == 1
        component = decomposition.components[0]
        assert component.interval == (-1.0, 1.0)
        assert component.mu.allclose(dirac, 1e-12)
        assert component.nu.allclose(two_point, 1e-12)
        assert decomposition.fixed.is_empty()
        assert irreducibility_check(dirac, two_point)

    def test_two_components(self, split_pair):
        mu, nu = split_pair
        decomposition = irreducible_components(mu, nu)

        assert [c.interval for c in decomposition.components] == [(-1.0, 1.0), (3.0, 5.0)]
        assert [c.index for c in decomposition.components] == [1, 2]
        assert decomposition.components[1].mu.atoms == [(4.0, 0.5)]
        assert decomposition.components[1].nu.weights.tolist() == pytest.approx([0.25, 0.25])
        assert decomposition.reconstruction_error(mu, nu) == pytest.approx(0.0, abs=1e-12)
        assert not irreducibility_check(mu, nu)

    def test_shared_endpoint_is_split(self):
        mu = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
        nu = DiscreteMeasure([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])
        decomposition = irreducible_components(mu, nu)

        assert [c.interval for c in decomposition.components] == [(-2.0, 0.0), (0.0, 2.0)]
        assert decomposition.components[0].nu.atoms == [(-2.0, 0.25), (0.0, 0.25)]
        assert decomposition.components[1].nu.atoms == [(0.0, 0.25), (2.0, 0.25)]
        assert [c.closed_endpoints for c in decomposition.components] == [(True, True), (True, True)]
        assert decomposition.fixed.is_empty()
        assert decomposition.fixed_nu.is_empty()
        assert decomposition.reconstruction_error(mu, nu) == pytest.approx(0.0, abs=1e-12)

    def test_fixed_part(self, pair_with_fixed_mass):
        mu, nu = pair_with_fixed_mass
        decomposition = irreducible_components(mu, nu)

        assert decomposition.fixed.atoms == [(0.0, 0.5)]
        assert decomposition.fixed_nu.atoms == [(0.0, 0.5)]
        assert len(decomposition.components) == 1
        assert decomposition.components[0].interval == (2.0, 4.0)
        assert decomposition.reconstruction_error(mu, nu) == pytest.approx(0.0, abs=1e-12)

    def test_identical_measures_are_all_fixed(self, three_point):
        decomposition = irreducible_components(three_point, three_point)
        assert decomposition.components == []
        assert decomposition.fixed.allclose(three_point, 1e-12)

    def test_discretized_uniform_pair_is_irreducible(self):
        mu, nu = uniform(-0.5, 0.5, 6), uniform(-1.0, 1.0, 12)
        assert irreducibility_check(mu, nu)

    def test_not_in_convex_order(self, dirac, two_point):
        with pytest.raises(ConvexOrderError):
            irreducible_components(two_point, dirac)

    def test_json(self, split_pair):
        mu, nu = split_pair
        data = irreducible_components(mu, nu).to_json()

        assert data["fixed"] == []
        first = data["components"][0]
        assert first["I"] == [-1.0, 1.0]
        assert first["J_closed"] == [True, True]
        assert first["mu"] == [[0.0, 0.5]]


@pytest.mark.integration
class TestRandomPairs:

    @pytest.mark.parametrize("seed", range(20))
    def test_decomposition(self, seed):
        mu, nu = random_spread(seed)
        decomposition = irreducible_components(mu, nu)

        assert decomposition.reconstruction_error(mu, nu) <= 1e-9
        for component in decomposition.components:
            assert irreducibility_check(component.mu, component.nu)
            problem = MmotProblem([component.mu], [component.nu], CostSpec.pos_norm(2))
            assert solve_primal(problem).plan.mass == pytest.approx(component.mu.mass, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_atom_order_does_not_matter(self, seed):
        mu, nu = random_spread(seed)
        rng = np.random.default_rng(100 + seed)
        mu_order, nu_order = rng.permutation(len(mu)), rng.permutation(len(nu))
        shuffled_mu = DiscreteMeasure(mu.positions[mu_order], mu.weights[mu_order])
        shuffled_nu = DiscreteMeasure(nu.positions[nu_order], nu.weights[nu_order])

        assert irreducible_components(shuffled_mu, shuffled_nu).to_json() == irreducible_components(mu, nu).to_json()

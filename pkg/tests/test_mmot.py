import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import linprog

from lp.simplex import check_kkt, solve_lp
from measures.densities import uniform
from measures.discrete import DiscreteMeasure, JointPlan
from mmot.costs import CostKind, CostSpec
from mmot.duality import (
    DualTriple,
    affine_shift,
    certify,
    chi_anchor,
    chi_from_dual,
    chi_sandwich,
    chi_values,
    duality_gap,
    gauge_normalize,
    normalize_chi,
    recover_dual,
    solve_primal,
)
from mmot.problem import (
    MmotProblem,
    build_lp,
    lp_layout,
    one_dimensional_coupling,
    plan_residual,
    product_feasible_plan,
)
from utils.errors import ConvexOrderError, InvalidMeasureError, MmotError, UncertifiedDualError

TOL = 1e-8

DIRAC = DiscreteMeasure.dirac(0.0)
TWO_POINT = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
THREE_POINT = DiscreteMeasure([-1.0, 0.0, 1.0], [0.25, 0.5, 0.25])
MU, NU = uniform(-0.5, 0.5, 2), uniform(-1.0, 1.0, 4)

DUALITY_SUITE = {
    "1d-pos-norm": ([DIRAC], [TWO_POINT], CostSpec.pos_norm(2)),
    "1d-neg-norm": ([MU], [NU], CostSpec.neg_norm(2)),
    "1d-l1": ([uniform(-0.5, 0.5, 3)], [uniform(-1.0, 1.0, 6)], CostSpec.pos_norm(1)),
    "1d-coordinate": ([uniform(-0.5, 0.5, 3)], [uniform(-1.0, 1.0, 6)], CostSpec.coordinate_abs(0)),
    "2d-circle": ([DIRAC, DIRAC], [THREE_POINT, THREE_POINT], CostSpec.neg_norm(2)),
    "2d-stay": ([DIRAC, DIRAC], [THREE_POINT, THREE_POINT], CostSpec.pos_norm(2)),
    "2d-product": ([MU, MU], [NU, NU], CostSpec.neg_product(0, 1)),
    "2d-max-norm": ([MU, DIRAC], [NU, THREE_POINT], CostSpec.max_norm(+1)),
    "2d-neg-max-norm": ([MU, DIRAC], [NU, TWO_POINT], CostSpec.max_norm(-1)),
    "3d-neg-norm": ([DIRAC] * 3, [TWO_POINT] * 3, CostSpec.neg_norm(2)),
    "3d-l1": ([DIRAC] * 3, [TWO_POINT, THREE_POINT, TWO_POINT], CostSpec.pos_norm(1)),
    "3d-product": ([DIRAC] * 3, [THREE_POINT] * 3, CostSpec.neg_product(0, 2)),
}


@pytest.mark.unit
class TestCostSpec:

    def test_norm_costs(self):
        x, y = np.zeros(2), np.array([3.0, 4.0])
        assert CostSpec.neg_norm(2).evaluate(x, y) == pytest.approx(-5.0)
        assert CostSpec.pos_norm(1).evaluate(x, y) == pytest.approx(7.0)
        assert CostSpec.max_norm(-1).evaluate(x, y) == pytest.approx(-4.0)
        assert CostSpec.max_norm(+1).evaluate(x, y) == pytest.approx(4.0)

    def test_coordinate_costs(self):
        x, y = np.array([1.0, 1.0]), np.array([2.0, 3.0])
        assert CostSpec.neg_product(0, 1).evaluate(x, y) == pytest.approx(-6.0)
        assert CostSpec.coordinate_abs(1).evaluate(x, y) == pytest.approx(2.0)

    def test_vectorised_matrix(self):
        grid = np.array([[0.0], [1.0]])
        matrix = CostSpec.pos_norm(2).matrix(grid, np.array([[-1.0], [0.0], [2.0]]))
        assert matrix.tolist() == [[1.0, 0.0, 2.0], [2.0, 1.0, 1.0]]

    def test_strict_convexity(self):
        assert CostSpec.neg_norm(2).strictly_convex
        assert CostSpec.pos_norm(1.5).strictly_convex
        assert not CostSpec.neg_norm(1).strictly_convex
        assert not CostSpec.max_norm().strictly_convex

    def test_norm_needs_p(self):
        with pytest.raises(ValidationError):
            CostSpec(kind=CostKind.NEG_NORM)

    def test_invalid_sign(self):
        with pytest.raises(ValidationError):
            CostSpec(kind=CostKind.MAX_NORM_SIGNED, sign=0)

    def test_pair_needs_distinct_coordinates(self):
        with pytest.raises(ValidationError):
            CostSpec.neg_product(1, 1)

    def test_ragged_table(self):
        with pytest.raises(ValidationError):
            CostSpec(kind=CostKind.TABLE, table=[[1.0, 2.0], [3.0]])

    def test_table_is_grid_only(self):
        cost = CostSpec.from_table([[1.0, 2.0]])
        with pytest.raises(MmotError):
            cost.evaluate([0.0], [1.0])
        with pytest.raises(MmotError):
            cost.matrix(np.zeros((2, 1)), np.zeros((2, 1)))

    def test_labels(self):
        assert CostSpec.neg_norm(2).label() == "neg_norm(p=2)"
        assert CostSpec.max_norm(-1).label() == "max_norm_signed(-1)"
        assert CostSpec.neg_product(0, 1).label() == "neg_product_pair(0, 1)"

    def test_parsed_from_json(self):
        cost = CostSpec.model_validate({"kind": "coordinate_abs", "coordinate": 0})
        assert cost == CostSpec.coordinate_abs(0)


@pytest.mark.unit
class TestMmotProblem:

    def test_grids_in_c_order(self, dirac, two_point, three_point):
        problem = MmotProblem([two_point, dirac], [two_point, three_point], CostSpec.neg_norm(2))
        assert problem.x_grid.tolist() == [[-1.0, 0.0], [1.0, 0.0]]
        assert problem.y_grid[:3].tolist() == [[-1.0, -1.0], [-1.0, 0.0], [-1.0, 1.0]]
        assert problem.n_vars == 2 * 6
        assert problem.x_index_of([1.0, 0.0]) == 1

    def test_rejects_pair_out_of_order(self, dirac, two_point):
        with pytest.raises(ConvexOrderError):
            MmotProblem([two_point], [dirac], CostSpec.neg_norm(2))

    def test_rejects_unequal_masses(self, dirac, two_point):
        heavy = DiscreteMeasure.dirac(0.0, 2.0)
        with pytest.raises(InvalidMeasureError):
            MmotProblem([dirac, heavy], [two_point, heavy], CostSpec.neg_norm(2))

    def test_rejects_cost_out_of_range(self, dirac, two_point):
        with pytest.raises(MmotError):
            MmotProblem([dirac], [two_point], CostSpec.coordinate_abs(1))

    def test_layout_drops_implied_rows(self, circle_problem):
        layout = lp_layout(circle_problem)
        assert layout.n_rows == 1 + 0 + 2 + 2 + 2
        assert layout.mu_rows[0].tolist() == [0]
        assert layout.mu_rows[1].tolist() == [-1]
        assert layout.nu_rows[0].tolist() == [1, 2, -1]
        assert layout.nu_rows[1].tolist() == [3, 4, -1]
        assert layout.martingale_rows.tolist() == [[5, 6]]
        assert build_lp(circle_problem).n_rows == layout.n_rows
        assert layout.martingale_rows.shape == (1, 2)

    def test_product_plan_is_feasible(self, circle_problem):
        plan = product_feasible_plan(circle_problem)
        lp = build_lp(circle_problem)

        x = plan.dense().reshape(-1)
        assert np.abs(lp.matrix.dot(x) - lp.rhs).max() <= TOL
        assert plan_residual(circle_problem, plan)["max"] <= TOL

    def test_residual_of_infeasible_plan(self, circle_problem):
        plan = JointPlan(circle_problem.x_grid, circle_problem.y_grid, [0], [0], [1.0])
        residual = plan_residual(circle_problem, plan)
        assert residual["nu"] == pytest.approx(0.75)
        assert residual["martingale"] == pytest.approx(1.0)

    def test_one_dimensional_coupling(self, dirac, two_point):
        plan = one_dimensional_coupling(dirac, two_point)
        assert plan.entries == {(0, 0): pytest.approx(0.5), (0, 1): pytest.approx(0.5)}


@pytest.mark.integration
class TestPrimal:

    def test_singleton_value(self, singleton_problem):
        assert solve_primal(singleton_problem).value == pytest.approx(1.0, abs=TOL)

    def test_stay_value(self, stay_problem):
        assert solve_primal(stay_problem).value == pytest.approx(0.5, abs=TOL)

    def test_unit_circle_value(self, circle_problem):
        primal = solve_primal(circle_problem)
        assert primal.value == pytest.approx(-1.0, abs=TOL)
        assert plan_residual(circle_problem, primal.plan)["max"] <= TOL

    @pytest.mark.parametrize("cost", [CostSpec.neg_norm(2), CostSpec.pos_norm(2), CostSpec.pos_norm(1)])
    def test_matches_vertex_enumeration(self, small_pair, vertex_oracle, cost):
        mu, nu = small_pair
        problem = MmotProblem([mu], [nu], cost)
        primal = solve_primal(problem)
        assert primal.value == pytest.approx(vertex_oracle(primal.lp), abs=TOL)

    def test_random_table_cost(self, small_pair, vertex_oracle):
        mu, nu = small_pair
        rng = np.random.default_rng(3)
        problem = MmotProblem([mu], [nu], CostSpec.from_table(rng.normal(size=(2, 4))))
        primal = solve_primal(problem)
        assert primal.value == pytest.approx(vertex_oracle(primal.lp), abs=TOL)

    def test_dump_written(self, singleton_problem, tmp_path):
        solve_primal(singleton_problem, dump_path=tmp_path / "singleton.lp")
        assert (tmp_path / "singleton.lp").read_text(encoding="utf-8").startswith("lp 2 ")

    def test_report_shape(self, singleton_problem):
        data = solve_primal(singleton_problem).to_dict()
        assert data["plan"]["dim"] == 1
        assert "iterations" in data["solver"]
        assert data["solver"]["engine"] == "highs-ds"

    def test_large_one_dimensional_instance(self):
        mu, nu = uniform(-0.5, 0.5, 32), uniform(-1.0, 1.0, 64)
        problem = MmotProblem([mu], [nu], CostSpec.neg_norm(2))
        primal = solve_primal(problem)

        # E|Y - X| <= sqrt(Var nu - Var mu) = 1/2, attained only by Y = X +- 1/2
        assert primal.value == pytest.approx(-0.5, abs=TOL)
        report = check_kkt(primal.lp, primal.solution)
        assert report.passed, report.to_dict()
        assert np.abs(primal.lp.matrix.dot(primal.solution.primal) - primal.lp.rhs).max() <= 1e-9

        heavy = primal.plan.weights > 1e-9
        steps = (primal.plan.y_grid[primal.plan.y_index[heavy], 0]
                 - primal.plan.x_grid[primal.plan.x_index[heavy], 0])
        assert np.abs(np.abs(steps) - 0.5).max() <= 1e-12

        interior = linprog(primal.lp.objective, A_eq=primal.lp.matrix, b_eq=primal.lp.rhs,
                           bounds=(0, None), method="highs-ipm")
        assert interior.status == 0
        assert primal.value == pytest.approx(interior.fun, abs=1e-7)

    def test_plan_off_the_constraints_rejected(self, circle_problem, monkeypatch):
        solution = solve_lp(build_lp(circle_problem))
        solution.primal = solution.primal * 1.01
        monkeypatch.setattr("mmot.duality.solve_lp", lambda lp: solution)

        with pytest.raises(MmotError, match="not a martingale plan"):
            solve_primal(circle_problem)


@pytest.mark.integration
class TestDual:

    @pytest.mark.parametrize("fixture", ["singleton_problem", "stay_problem", "small_problem", "circle_problem"])
    def test_recovered_dual_certifies(self, request, fixture):
        problem = request.getfixturevalue(fixture)
        primal = solve_primal(problem)
        dual = recover_dual(problem, primal)

        assert dual.certification.passed
        gap = dual.pointwise_gap(problem)
        assert gap.max() <= TOL
        assert np.abs(gap[primal.plan.x_index, primal.plan.y_index]).max() <= TOL
        assert dual.objective(problem) == pytest.approx(primal.value, abs=TOL)

    def test_strict_recovery_raises(self, small_problem):
        primal = solve_primal(small_problem)
        with pytest.raises(UncertifiedDualError):
            recover_dual(small_problem, primal, tol=-1.0)

    def test_lenient_recovery_keeps_report(self, small_problem):
        dual = recover_dual(small_problem, solve_primal(small_problem), tol=-1.0, strict=False)
        assert not dual.certification.passed

    def test_trivial_triple_fails_certification(self, singleton_problem):
        primal = solve_primal(singleton_problem)
        zero = DualTriple(f=[np.zeros(1)], g=[np.zeros(2)], h=np.zeros((1, 1)))
        report = certify(zero, singleton_problem, primal.plan, primal.value, TOL)

        assert report.max_violation == 0.0
        assert report.max_support_residual == pytest.approx(1.0)
        assert not report.passed

    def test_non_finite_triple(self, singleton_problem):
        primal = solve_primal(singleton_problem)
        broken = DualTriple(f=[np.array([np.inf])], g=[np.zeros(2)], h=np.zeros((1, 1)))
        assert not certify(broken, singleton_problem, primal.plan, primal.value).finite

    def test_duality_gap_vanishes(self, circle_problem):
        assert abs(duality_gap(circle_problem)) <= TOL

    @pytest.mark.parametrize("name", sorted(DUALITY_SUITE))
    def test_zero_duality_gap_across_instances(self, name):
        problem = MmotProblem(*DUALITY_SUITE[name])
        primal = solve_primal(problem)
        dual = recover_dual(problem, primal)

        assert abs(dual.objective(problem) - primal.value) <= TOL
        assert dual.certification.max_violation <= TOL
        assert dual.certification.max_support_residual <= TOL


@pytest.mark.integration
class TestGauge:

    def test_gauge_normalize(self, circle_problem):
        dual = recover_dual(circle_problem, solve_primal(circle_problem))
        normalized = gauge_normalize(dual, circle_problem)

        for mu, f_i in zip(circle_problem.mus, normalized.f):
            assert mu.integrate(f_i) == pytest.approx(0.0, abs=1e-12)
        assert circle_problem.nus[1].integrate(normalized.g[1]) == pytest.approx(0.0, abs=1e-12)
        assert normalized.objective(circle_problem) == pytest.approx(dual.objective(circle_problem), abs=1e-12)
        assert np.abs(normalized.pointwise_gap(circle_problem) - dual.pointwise_gap(circle_problem)).max() <= 1e-12

    def test_affine_shift_keeps_residuals(self, small_problem):
        dual = recover_dual(small_problem, solve_primal(small_problem))
        shifted = affine_shift(dual, small_problem, b=[0.7], anchor=[0.1], const=2.0)

        assert np.abs(shifted.pointwise_gap(small_problem) - dual.pointwise_gap(small_problem)).max() <= 1e-12
        assert shifted.objective(small_problem) == pytest.approx(dual.objective(small_problem), abs=1e-12)

    def test_normalize_chi(self, small_problem):
        dual = recover_dual(small_problem, solve_primal(small_problem))
        normalized, anchor = normalize_chi(dual, small_problem)

        assert anchor.tolist() == chi_anchor(small_problem).tolist()
        assert chi_values(normalized, small_problem, anchor)[0] == pytest.approx(0.0, abs=1e-12)
        assert chi_values(normalized, small_problem, small_problem.y_grid).min() >= -TOL
        assert chi_sandwich(normalized, small_problem)["passed"]

    def test_chi_sandwich_lower_points(self, small_problem):
        dual = recover_dual(small_problem, solve_primal(small_problem))
        sandwich = chi_sandwich(dual, small_problem)
        assert sandwich["lower_points"] == 2
        assert sandwich["passed"]

    def test_chi_is_max_of_affine_pieces(self, small_problem):
        dual = DualTriple(f=[np.array([0.0, 1.0])], g=[np.zeros(4)], h=np.array([[1.0], [2.0]]))
        assert chi_from_dual(dual, small_problem, [0.0]) == pytest.approx(0.5)
        assert chi_from_dual(dual, small_problem, [-1.0]) == pytest.approx(-0.75)

import numpy as np
import pytest

from mmot.costs import CostSpec
from mmot.duality import solve_primal
from mmot.problem import MmotProblem, one_dimensional_coupling, plan_residual
from scenarios.examples import (
    chi_refinement_study,
    one_coordinate_construction,
    one_coordinate_problem,
    reproduce,
    unit_circle_certificate,
    unit_circle_problem,
)
from utils.errors import MmotError, NotThreePointError


def _claims(report) -> dict:
    return {claim.name: claim for claim in report.claims}


@pytest.mark.integration
class TestUnitCircleExample:

    def test_all_claims(self):
        report = reproduce("ex2_4")
        assert report.passed, report.failing
        assert _claims(report)["value_is_minus_one"].measured == pytest.approx(-1.0, abs=1e-8)

    def test_matches_vertex_enumeration(self, vertex_oracle):
        primal = solve_primal(unit_circle_problem())
        assert vertex_oracle(primal.lp) == pytest.approx(-1.0, abs=1e-8)

    def test_displayed_constant_is_valid_but_slack(self):
        problem = unit_circle_problem()
        gap = unit_circle_certificate(problem, total_constant=-1.0).pointwise_gap(problem)
        assert gap.max() <= -0.5 + 1e-12

    def test_constant_above_one_half_breaks_the_certificate(self):
        problem = unit_circle_problem()
        gap = unit_circle_certificate(problem, total_constant=-0.25).pointwise_gap(problem)
        assert gap.max() > 0


@pytest.mark.integration
class TestOneCoordinateExample:

    def test_small_grid(self):
        report = reproduce("ex2_5", 2)
        assert report.passed, report.failing
        data = report.data
        assert data["value"] == pytest.approx(data["one_dimensional_value"], abs=1e-8)

    def test_construction_is_feasible(self):
        problem = one_coordinate_problem(4)
        p1 = solve_primal(MmotProblem([problem.mus[0]], [problem.nus[0]], CostSpec.coordinate_abs(0))).plan
        plan = one_coordinate_construction(problem, [p1, p1])
        assert plan_residual(problem, plan)["max"] <= 1e-9

    def test_odd_grid_rejected(self):
        with pytest.raises(MmotError):
            reproduce("ex2_5", 3)

    def test_construction_needs_two_coordinates(self, small_problem):
        coupling = one_dimensional_coupling(small_problem.mus[0], small_problem.nus[0])
        with pytest.raises(MmotError):
            one_coordinate_construction(small_problem, [coupling])

    def test_euclidean_instance_between_the_bounds(self):
        report = reproduce("ex2_5", 4)
        assert report.passed, report.failing

        data = report.data
        p1 = data["one_dimensional_value"]
        assert data["euclidean_value"] >= np.sqrt(2.0) * p1 - 1e-8
        assert data["euclidean_value"] <= data["euclidean_construction_cost"] + 1e-8
        assert data["euclidean_construction_cost"] == pytest.approx(2.0 * p1, abs=1e-8)
        assert _claims(report)["construction_euclidean_twice_one_dimensional"].passed

    def test_structure_failure_is_reported(self, monkeypatch):
        def one_sided(plan):
            raise NotThreePointError("not three-point: conditional at x=-0.25 moves to one side only")

        monkeypatch.setattr("scenarios.examples.three_point_structure_1d", one_sided)
        report = reproduce("ex2_5", 2)

        assert report.passed, report.failing
        assert report.data["one_dimensional_three_point"] == {
            "passed": False,
            "reason": "not three-point: conditional at x=-0.25 moves to one side only",
        }

    @pytest.mark.slow
    def test_grid_of_twelve(self):
        report = reproduce("ex2_5", 12)
        assert report.passed, report.failing
        assert "one_dimensional_three_point" in report.data


@pytest.mark.integration
class TestMaxNormExample:

    def test_small_grid(self):
        report = reproduce("ex2_7", 2)
        assert report.passed, report.failing

        claims = _claims(report)
        assert claims["construction_not_extremal"].measured > 0
        assert report.data["construction_extreme_fraction"] < 1.0

    @pytest.mark.slow
    def test_grid_of_eight(self):
        report = reproduce("ex2_7", 8)
        assert report.passed, report.failing


@pytest.mark.integration
class TestProductExample:

    def test_small_grid(self):
        report = reproduce("ex2_8", 2)
        assert report.passed, report.failing
        assert _claims(report)["pi2_on_diagonal"].measured == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.slow
    def test_grid_of_eight(self):
        report = reproduce("ex2_8", 8)
        assert report.passed, report.failing


@pytest.mark.integration
class TestReproduce:

    def test_unknown_example(self):
        with pytest.raises(MmotError):
            reproduce("ex3_1")

    def test_grid_too_large(self):
        with pytest.raises(MmotError):
            reproduce("ex2_8", 1000)

    def test_report_dict(self):
        data = reproduce("ex2_4").to_dict()
        assert data["example"] == "ex2_4"
        assert data["n"] is None
        assert data["passed"]
        assert {"certificate_tight", "certificate_displayed"} <= set(data["data"])


@pytest.mark.integration
class TestChiRefinement:

    def test_small_refinements_stay_bounded(self):
        study = chi_refinement_study(ns=(2, 4))
        assert study["passed"]
        assert set(study["maxima"]) == {"2", "4"}
        assert all(np.isfinite(v) for v in study["maxima"].values())

    @pytest.mark.slow
    def test_refinements_stay_bounded(self):
        study = chi_refinement_study()
        assert study["passed"], study


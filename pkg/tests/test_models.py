import pytest
from pydantic import ValidationError

from mmot.costs import CostKind
from utils.models import (
    DensityKind,
    DensitySpec,
    MeasureFile,
    ProblemFile,
    ScenarioFile,
    StageName,
    StageSpec,
)


@pytest.fixture
def problem_data() -> dict:
    return ProblemFile.Config.json_schema_extra["example"]


@pytest.mark.unit
class TestDensitySpec:

    def test_uniform(self):
        spec = DensitySpec(kind="uniform", lo=-1.0, hi=1.0, cells=4)
        assert spec.kind == DensityKind.UNIFORM
        assert spec.to_measure().positions.tolist() == pytest.approx([-0.75, -0.25, 0.25, 0.75])

    def test_uniform_needs_bounds(self):
        with pytest.raises(ValidationError) as exc_info:
            DensitySpec(kind="uniform", lo=0.0)

        assert "lo and hi" in str(exc_info.value)

    def test_invalid_interval(self):
        with pytest.raises(ValidationError):
            DensitySpec(kind="uniform", lo=1.0, hi=0.0)

    def test_table(self):
        spec = DensitySpec(kind="table", breakpoints=[0.0, 1.0, 2.0], densities=[1.0, 3.0], cells=2)
        assert spec.to_measure().weights.tolist() == pytest.approx([0.25, 0.75])

    def test_cells_positive(self):
        with pytest.raises(ValidationError):
            DensitySpec(kind="uniform", lo=0.0, hi=1.0, cells=0)


@pytest.mark.unit
class TestMeasureFile:

    def test_atoms(self):
        measure = MeasureFile.model_validate([[1.0, 0.5], [-1.0, 0.5]]).to_measure()
        assert measure.positions.tolist() == [-1.0, 1.0]

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            MeasureFile.model_validate([])

    def test_negative_weight_rejected(self):
        with pytest.raises(ValidationError):
            MeasureFile.model_validate([[0.0, -1.0]])

    def test_malformed_atom(self):
        with pytest.raises(ValidationError):
            MeasureFile.model_validate([[0.0, 1.0, 2.0]])


@pytest.mark.unit
class TestProblemFile:

    def test_example_parses(self, problem_data):
        problem = ProblemFile.model_validate(problem_data)
        assert problem.d == 1
        assert problem.cost.kind == CostKind.POS_NORM

        mus, nus = problem.measures()
        assert mus[0].atoms == [(0.0, 1.0)]
        assert len(nus[0]) == 2

    def test_mixed_marginals(self):
        problem = ProblemFile.model_validate({
            "d": 2,
            "marginals": {
                "mu": [{"kind": "uniform", "lo": -0.5, "hi": 0.5, "cells": 2}, [[0.0, 1.0]]],
                "nu": [{"kind": "uniform", "lo": -1.0, "hi": 1.0, "cells": 4}, [[-1.0, 0.5], [1.0, 0.5]]],
            },
            "cost": {"kind": "neg_product_pair", "pair": [0, 1]},
        })
        mus, nus = problem.measures()
        assert [len(m) for m in mus] == [2, 1]
        assert [len(n) for n in nus] == [4, 2]

    def test_dimension_mismatch(self, problem_data):
        with pytest.raises(ValidationError) as exc_info:
            ProblemFile.model_validate({**problem_data, "d": 2})

        assert "d=2" in str(exc_info.value)

    def test_missing_cost(self, problem_data):
        data = {k: v for k, v in problem_data.items() if k != "cost"}
        with pytest.raises(ValidationError) as exc_info:
            ProblemFile.model_validate(data)

        assert {error["loc"][0] for error in exc_info.value.errors()} == {"cost"}


@pytest.mark.unit
class TestStageSpec:

    def test_plain_stage(self):
        stage = StageSpec.parse("dual")
        assert stage.name == StageName.DUAL
        assert stage.args == []
        assert stage.label() == "dual"

    def test_graph_stage(self):
        stage = StageSpec.parse("graph( 0, 1 )")
        assert stage.args == [0, 1]
        assert stage.label() == "graph(0,1)"

    @pytest.mark.parametrize("text", ["graph", "dual(1)", "teleport", "solve(", "Graph(0)"])
    def test_rejected(self, text):
        with pytest.raises(ValueError):
            StageSpec.parse(text)

    def test_requirements(self):
        assert StageName.SOLVE.requires is None
        assert StageName.COPULA_CHECK.requires == StageName.TRANSFORMS
        assert StageName.CHI_BOUND.requires == StageName.DUAL


@pytest.mark.unit
class TestScenarioFile:

    def test_valid(self, problem_data):
        scenario = ScenarioFile(
            name="singleton",
            problem=problem_data,
            pipeline=["solve", "dual", "transforms", "copula_check"],
            tolerances={"certification_tol": 1e-7},
            expected_value=1.0,
        )
        assert [s.name for s in scenario.stages][-1] == StageName.COPULA_CHECK

    def test_stage_before_its_requirement(self, problem_data):
        with pytest.raises(ValidationError) as exc_info:
            ScenarioFile(name="bad", problem=problem_data, pipeline=["solve", "copula_check"])

        assert "requires 'transforms'" in str(exc_info.value)

    def test_unknown_stage(self, problem_data):
        with pytest.raises(ValidationError) as exc_info:
            ScenarioFile(name="bad", problem=problem_data, pipeline=["solve", "levitate"])

        assert "unknown stage" in str(exc_info.value)

    def test_unknown_tolerance(self, problem_data):
        with pytest.raises(ValidationError):
            ScenarioFile(name="bad", problem=problem_data, pipeline=["solve"], tolerances={"lp_pivot_tol": 1e-3})

    def test_non_positive_tolerance(self, problem_data):
        with pytest.raises(ValidationError):
            ScenarioFile(name="bad", problem=problem_data, pipeline=["solve"], tolerances={"plan_mass_tol": 0.0})

    def test_exactly_one_problem_source(self, problem_data):
        with pytest.raises(ValidationError):
            ScenarioFile(name="bad", pipeline=["solve"])
        with pytest.raises(ValidationError):
            ScenarioFile(name="bad", problem=problem_data, problem_file="other.json", pipeline=["solve"])

    def test_empty_pipeline(self, problem_data):
        with pytest.raises(ValidationError):
            ScenarioFile(name="bad", problem=problem_data, pipeline=[])

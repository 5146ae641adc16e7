import re
from enum import Enum
from typing import Optional, List, Union

from pydantic import BaseModel, Field, RootModel, field_validator, model_validator

from measures.densities import TableDensity, UniformDensity, discretize_density
from measures.discrete import DiscreteMeasure
from mmot.costs import CostSpec
from utils.config import settings

Atom = tuple[float, float]


class DensityKind(str, Enum):
    UNIFORM = "uniform"
    TABLE = "table"


class DensitySpec(BaseModel):
    kind: DensityKind
    lo: Optional[float] = None
    hi: Optional[float] = None
    breakpoints: Optional[List[float]] = None
    densities: Optional[List[float]] = None
    cells: int = Field(default=settings.default_grid_size, ge=1, description="Number of equal-width cells")

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == DensityKind.UNIFORM:
            if self.lo is None or self.hi is None:
                raise ValueError("uniform density needs lo and hi")
            if not self.lo < self.hi:
                raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")
        elif not self.breakpoints or not self.densities:
            raise ValueError("table density needs breakpoints and densities")
        return self

    def to_measure(self) -> DiscreteMeasure:
        if self.kind == DensityKind.UNIFORM:
            density = UniformDensity(self.lo, self.hi)
        else:
            density = TableDensity(tuple(self.breakpoints), tuple(self.densities))
        return discretize_density(density, self.cells)


class MeasureFile(RootModel[List[Atom]]):
    """A measure file: ``[[position, weight], ...]``."""

    @field_validator("root")
    @classmethod
    def check_weights(cls, v):
        if not v:
            raise ValueError("empty measure")
        if any(w < 0 for _, w in v):
            raise ValueError("negative atom weight")
        return v

    def to_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_atoms(self.root)


MarginalSpec = Union[DensitySpec, List[Atom]]


def marginal_to_measure(spec: MarginalSpec) -> DiscreteMeasure:
    if isinstance(spec, DensitySpec):
        return spec.to_measure()
    return DiscreteMeasure.from_atoms(spec)


class MarginalsSpec(BaseModel):
    mu: List[MarginalSpec]
    nu: List[MarginalSpec]


class ProblemFile(BaseModel):
    d: int = Field(..., ge=1, description="Number of coordinates")
    marginals: MarginalsSpec
    cost: CostSpec

    @model_validator(mode="after")
    def check_dimension(self):
        if len(self.marginals.mu) != self.d or len(self.marginals.nu) != self.d:
            raise ValueError(
                f"d={self.d} but {len(self.marginals.mu)} mu and {len(self.marginals.nu)} nu marginals given"
            )
        return self

    def measures(self) -> tuple[list[DiscreteMeasure], list[DiscreteMeasure]]:
        return (
            [marginal_to_measure(m) for m in self.marginals.mu],
            [marginal_to_measure(m) for m in self.marginals.nu],
        )

    class Config:
        json_schema_extra = {
            "example": {
                "d": 1,
                "marginals": {"mu": [[[0.0, 1.0]]], "nu": [[[-1.0, 0.5], [1.0, 0.5]]]},
                "cost": {"kind": "pos_norm", "p": 2},
            }
        }


class StageName(str, Enum):
    SOLVE = "solve"
    DUAL = "dual"
    NORMALIZE = "normalize"
    TRANSFORMS = "transforms"
    COPULA_CHECK = "copula_check"
    EXTREMALITY = "extremality"
    STAYING = "staying"
    GRAPH = "graph"
    THREE_POINT = "three_point"
    CHI_BOUND = "chi_bound"

    @property
    def requires(self) -> Optional["StageName"]:
        return STAGE_REQUIREMENTS.get(self)


STAGE_REQUIREMENTS = {
    StageName.DUAL: StageName.SOLVE,
    StageName.NORMALIZE: StageName.DUAL,
    StageName.TRANSFORMS: StageName.DUAL,
    StageName.COPULA_CHECK: StageName.TRANSFORMS,
    StageName.EXTREMALITY: StageName.SOLVE,
    StageName.STAYING: StageName.SOLVE,
    StageName.GRAPH: StageName.SOLVE,
    StageName.THREE_POINT: StageName.SOLVE,
    StageName.CHI_BOUND: StageName.DUAL,
}

_STAGE_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([0-9,\s]*)\s*\))?\s*$")


class StageSpec(BaseModel):
    name: StageName
    args: List[int] = Field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "StageSpec":
        match = _STAGE_PATTERN.match(text)
        if not match:
            raise ValueError(f"malformed stage '{text}'")
        name, args = match.group(1), match.group(2)
        if name not in {s.value for s in StageName}:
            raise ValueError(f"unknown stage '{name}'")
        values = [int(a) for a in args.split(",") if a.strip()] if args else []
        stage = cls(name=name, args=values)
        if stage.name == StageName.GRAPH and not stage.args:
            raise ValueError("graph stage needs coordinates, e.g. graph(0)")
        if stage.name != StageName.GRAPH and stage.args:
            raise ValueError(f"stage '{stage.name.value}' takes no arguments")
        return stage

    def label(self) -> str:
        if self.args:
            return f"{self.name.value}({','.join(str(a) for a in self.args)})"
        return self.name.value


# tolerances a scenario may override; each is passed explicitly to its stage
TOLERANCE_FIELDS = (
    "certification_tol",
    "plan_mass_tol",
    "conditional_noise_floor",
    "extremality_bar",
    "three_point_tol",
)


class ScenarioFile(BaseModel):
    name: str = Field(..., min_length=1)
    problem: Optional[ProblemFile] = None
    problem_file: Optional[str] = Field(None, description="Path to a problem file, relative to the scenario")
    pipeline: List[str] = Field(..., min_length=1)
    tolerances: dict[str, float] = Field(default_factory=dict)
    expected_value: Optional[float] = None

    @field_validator("pipeline")
    @classmethod
    def check_pipeline(cls, v):
        stages = [StageSpec.parse(text) for text in v]
        seen = set()
        for stage in stages:
            required = stage.name.requires
            if required is not None and required not in seen:
                raise ValueError(f"stage '{stage.label()}' requires '{required.value}' earlier in the pipeline")
            seen.add(stage.name)
        return v

    @field_validator("tolerances")
    @classmethod
    def check_tolerances(cls, v):
        unknown = sorted(set(v) - set(TOLERANCE_FIELDS))
        if unknown:
            raise ValueError(f"unknown tolerance(s): {', '.join(unknown)}")
        if any(value <= 0 for value in v.values()):
            raise ValueError("tolerances must be positive")
        return v

    @model_validator(mode="after")
    def check_problem_source(self):
        if (self.problem is None) == (self.problem_file is None):
            raise ValueError("give exactly one of 'problem' and 'problem_file'")
        return self

    @property
    def stages(self) -> List[StageSpec]:
        return [StageSpec.parse(text) for text in self.pipeline]

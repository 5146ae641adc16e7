"""Scenario pipelines: parse a scenario file, run its stages, write reports.

A report directory holds ``report.json`` (sorted keys, no timestamps, so two
runs on the same input are byte-identical) and one CSV per tabular stage.
"""
import asyncio
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from geometry.extremality import check_conditional_extremality, staying_decomposition
from geometry.monge import check_graph_structure, three_point_structure_1d
from mmot.costs import CostKind
from mmot.duality import (
    DualTriple,
    PrimalResult,
    chi_sandwich,
    chi_values,
    gauge_normalize,
    normalize_chi,
    recover_dual,
    solve_primal,
)
from mmot.problem import MmotProblem, plan_residual
from transforms.legendre import TransformBundle, build_transform_bundle, verify_copula_optimality
from utils.config import settings
from utils.errors import MmotError, ScenarioParseError, StageFailure
from utils.logger import get_logger
from utils.models import TOLERANCE_FIELDS, ProblemFile, ScenarioFile, StageName, StageSpec

logger = get_logger(__name__)

DEFAULT_PIPELINE = ["solve", "dual"]

SOLVER_TOLERANCES = ("lp_feasibility_tol", "lp_optimality_tol", "atom_tol", "order_tol")


def effective_tolerances(overrides: Optional[dict[str, float]] = None) -> dict[str, float]:
    overrides = overrides or {}
    values = {name: overrides.get(name, getattr(settings, name)) for name in TOLERANCE_FIELDS}
    values.update({name: getattr(settings, name) for name in SOLVER_TOLERANCES})
    return values


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"not serializable: {type(value).__name__}")


def write_report(report: dict, directory: Union[str, Path], tables: Optional[dict[str, list[dict]]] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    report_file = directory / "report.json"
    with open(report_file, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    logger.info(f"JSON report saved: {report_file}")

    for name, rows in (tables or {}).items():
        if not rows:
            continue
        csv_file = directory / f"{name}.csv"
        with open(csv_file, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        logger.info(f"CSV table saved: {csv_file}")

    return report_file


def _location(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first.get("loc", ())) or "<root>"


def _read_json(path: Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ScenarioParseError("file not found", str(path))
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, f"{path}:{e.lineno}:{e.colno}")


def build_problem(problem_file: ProblemFile, location: str = "problem") -> MmotProblem:
    try:
        mus, nus = problem_file.measures()
        return MmotProblem(mus, nus, problem_file.cost)
    except MmotError as e:
        raise ScenarioParseError(str(e), location)


def load_scenario(path: Union[str, Path]) -> tuple[ScenarioFile, MmotProblem]:
    """Parse a scenario file, or a bare problem file run with the default pipeline."""
    path = Path(path)
    data = _read_json(path)

    if isinstance(data, dict) and "pipeline" not in data and "marginals" in data:
        data = {"name": path.stem, "problem": data, "pipeline": DEFAULT_PIPELINE}

    try:
        scenario = ScenarioFile.model_validate(data)
    except ValidationError as e:
        raise ScenarioParseError(e.errors()[0]["msg"], f"{path}:{_location(e)}")

    if scenario.problem is not None:
        problem_file = scenario.problem
        location = f"{path}:problem"
    else:
        problem_path = (path.parent / scenario.problem_file).resolve()
        try:
            problem_file = ProblemFile.model_validate(_read_json(problem_path))
        except ValidationError as e:
            raise ScenarioParseError(e.errors()[0]["msg"], f"{problem_path}:{_location(e)}")
        location = str(problem_path)

    return scenario, build_problem(problem_file, location)


@dataclass
class PipelineState:
    primal: Optional[PrimalResult] = None
    dual: Optional[DualTriple] = None
    normalized: Optional[DualTriple] = None
    bundle: Optional[TransformBundle] = None


class ScenarioRunner:

    def __init__(self, scenario: ScenarioFile, problem: MmotProblem, dump_path: Optional[Path] = None,
                 extra_tolerances: Optional[dict[str, float]] = None):
        self.scenario = scenario
        self.problem = problem
        self.dump_path = dump_path
        self.tol = effective_tolerances({**scenario.tolerances, **(extra_tolerances or {})})
        self.state = PipelineState()
        self.tables: dict[str, list[dict]] = {}

        self.handlers = {
            StageName.SOLVE: self._solve,
            StageName.DUAL: self._dual,
            StageName.NORMALIZE: self._normalize,
            StageName.TRANSFORMS: self._transforms,
            StageName.COPULA_CHECK: self._copula_check,
            StageName.EXTREMALITY: self._extremality,
            StageName.STAYING: self._staying,
            StageName.GRAPH: self._graph,
            StageName.THREE_POINT: self._three_point,
            StageName.CHI_BOUND: self._chi_bound,
        }

    def _require(self, stage: str, condition: bool, assertion: str):
        if not condition:
            raise StageFailure(stage, assertion)

    def _solve(self, spec: StageSpec) -> dict:
        primal = solve_primal(self.problem, dump_path=self.dump_path)
        self.state.primal = primal
        residual = plan_residual(self.problem, primal.plan)
        self.tables["plan"] = [
            {"x_index": int(i), "y_index": int(j), "weight": float(w)}
            for i, j, w in zip(primal.plan.x_index, primal.plan.y_index, primal.plan.weights)
        ]

        result = {**primal.to_dict(), "residual": residual}
        self._require(spec.label(), residual["max"] <= self.tol["plan_mass_tol"],
                      f"plan residual {residual['max']:.3e} > {self.tol['plan_mass_tol']:g}")
        expected = self.scenario.expected_value
        if expected is not None:
            result["expected_value"] = expected
            self._require(spec.label(), abs(primal.value - expected) <= self.tol["certification_tol"],
                          f"value {primal.value:.12g} differs from expected {expected:.12g}")
        return result

    def _dual(self, spec: StageSpec) -> dict:
        dual = recover_dual(self.problem, self.state.primal.solution, tol=self.tol["certification_tol"], strict=False)
        self.state.dual = dual
        report = dual.certification
        self._require(spec.label(), report.passed, f"uncertified dual ({report})")
        return {**dual.to_dict(), "objective": dual.objective(self.problem)}

    def _normalize(self, spec: StageSpec) -> dict:
        dual = self.state.dual
        normalized = gauge_normalize(dual, self.problem)
        self.state.normalized = normalized

        before, after = dual.objective(self.problem), normalized.objective(self.problem)
        drift = float(np.abs(normalized.pointwise_gap(self.problem) - dual.pointwise_gap(self.problem)).max())
        self._require(spec.label(), abs(after - before) <= 1e-12 * (1.0 + abs(before)),
                      f"dual objective moved by {after - before:.3e}")
        self._require(spec.label(), drift <= self.tol["certification_tol"],
                      f"pointwise residuals moved by {drift:.3e}")
        return {"objective_before": before, "objective_after": after, "residual_drift": drift,
                "f": [f_i.tolist() for f_i in normalized.f], "g": [g_i.tolist() for g_i in normalized.g]}

    def _transforms(self, spec: StageSpec) -> dict:
        bundle = build_transform_bundle(self.state.dual, self.problem)
        self.state.bundle = bundle
        invariants = bundle.check_invariants(self.problem, tol=self.tol["certification_tol"])
        self._require(spec.label(), invariants["passed"], f"bundle invariants violated: {invariants}")
        return {**bundle.to_dict(), "invariants": invariants}

    def _copula_check(self, spec: StageSpec) -> dict:
        report = verify_copula_optimality(
            self.state.dual, self.state.primal.plan, self.state.bundle, self.problem,
            tol=self.tol["certification_tol"],
        )
        failing = [name for name, ok in report.checks.items() if not ok]
        self._require(spec.label(), report.passed, f"copula checks failed: {', '.join(failing)}")
        return report.to_dict()

    def _extremality(self, spec: StageSpec) -> dict:
        report = check_conditional_extremality(self.state.primal.plan, tol=self.tol["conditional_noise_floor"])
        self.tables["extremality"] = [r.to_row() for r in report.records]
        result = report.to_dict()
        cost = self.problem.cost
        if cost.kind == CostKind.NEG_NORM and cost.strictly_convex:
            bar = self.tol["extremality_bar"]
            result["bar"] = bar
            self._require(spec.label(), report.passes(bar),
                          f"extreme fraction {report.extreme_fraction_of_mass:.6f} below {bar}")
        return result

    def _staying(self, spec: StageSpec) -> dict:
        report = staying_decomposition(self.state.primal.plan)
        result = report.to_dict()
        cost = self.problem.cost
        if cost.kind == CostKind.POS_NORM:
            self._require(spec.label(), report.dominance_ok,
                          f"plan does not dominate its diagonal part (slack {report.min_slack:.3e})")
            if cost.strictly_convex and report.residual_plan.mass > 0:
                residual = check_conditional_extremality(
                    report.normalized_residual(), tol=self.tol["conditional_noise_floor"]
                )
                bar = self.tol["extremality_bar"]
                result["residual_extreme_fraction"] = residual.extreme_fraction_of_mass
                self._require(spec.label(), residual.passes(bar),
                              f"residual extreme fraction {residual.extreme_fraction_of_mass:.6f} below {bar}")
        return result

    def _graph(self, spec: StageSpec) -> dict:
        if max(spec.args) >= self.problem.d:
            raise StageFailure(spec.label(), f"coordinates {spec.args} out of range for d={self.problem.d}")
        report = check_graph_structure(self.state.primal.plan, spec.args, tol=self.tol["conditional_noise_floor"])
        self.tables[f"graph_{'_'.join(str(a) for a in spec.args)}"] = [v.to_row() for v in report.violations]
        self._require(spec.label(), report.passed, f"graph violation of mass {report.max_violation:.3e}")
        return report.to_dict()

    def _three_point(self, spec: StageSpec) -> dict:
        if self.problem.d != 1:
            raise StageFailure(spec.label(), f"three-point structure needs d=1, got d={self.problem.d}")
        try:
            structure = three_point_structure_1d(self.state.primal.plan, tol=self.tol["three_point_tol"])
        except MmotError as e:
            raise StageFailure(spec.label(), str(e))
        self.tables["three_point"] = [r.to_row() for r in structure.records]
        self._require(spec.label(), structure.passed, "stay/move weights disagree with the barycenter formula")
        return structure.to_dict()

    def _chi_bound(self, spec: StageSpec) -> dict:
        tol = self.tol["certification_tol"]
        normalized, anchor = normalize_chi(self.state.dual, self.problem)
        sandwich = chi_sandwich(normalized, self.problem, tol=tol)
        at_anchor = float(chi_values(normalized, self.problem, anchor)[0])
        on_grid = chi_values(normalized, self.problem, self.problem.y_grid)
        on_compact = chi_values(normalized, self.problem, self.problem.x_grid)

        self._require(spec.label(), abs(at_anchor) <= tol, f"chi(a) = {at_anchor:.3e}, expected 0")
        self._require(spec.label(), on_grid.min() >= -tol, f"chi dips to {on_grid.min():.3e} below its value at a")
        self._require(spec.label(), sandwich["passed"], f"chi sandwich violated: {sandwich}")
        return {
            "anchor": anchor.tolist(),
            "chi_at_anchor": at_anchor,
            "chi_min_on_y_grid": float(on_grid.min()),
            "chi_max_on_x_grid": float(on_compact.max()),
            "sandwich": sandwich,
        }

    def run(self) -> dict:
        name = self.scenario.name
        logger.info("=" * 50)
        logger.info(f"Scenario '{name}': {self.problem.describe()}")
        logger.info("=" * 50)

        stages: dict[str, Any] = {}
        failures: list[str] = []
        for spec in self.scenario.stages:
            label = spec.label()
            if failures:
                stages[label] = {"status": "skipped"}
                continue
            logger.info(f"Stage {label}...")
            try:
                stages[label] = {"status": "passed", **self.handlers[spec.name](spec)}
            except StageFailure as e:
                logger.error(f"Stage {label} failed: {e.assertion}")
                stages[label] = {"status": "failed", "assertion": e.assertion}
                failures.append(f"{label}: {e.assertion}")
            except MmotError as e:
                logger.error(f"Stage {label} failed: {e}")
                stages[label] = {"status": "failed", "assertion": str(e)}
                failures.append(f"{label}: {e}")

        report = {
            "scenario": name,
            "problem": self.problem.describe(),
            "tolerances": self.tol,
            "pipeline": [spec.label() for spec in self.scenario.stages],
            "stages": stages,
            "failures": failures,
            "passed": not failures,
        }
        if self.state.primal is not None:
            report["value"] = self.state.primal.value
        if self.state.dual is not None:
            report["gap"] = self.state.primal.value - self.state.dual.objective(self.problem)
        return report


@dataclass
class ScenarioOutcome:
    name: str
    exit_code: int
    report_path: Optional[Path] = None
    value: Optional[float] = None
    failures: list[str] = field(default_factory=list)

    def to_row(self) -> dict:
        return {
            "name": self.name,
            "exit_code": self.exit_code,
            "value": "" if self.value is None else self.value,
            "failures": "; ".join(self.failures),
            "report": "" if self.report_path is None else str(self.report_path),
        }


def run_scenario(path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                 dump_lp: bool = False, tol: Optional[float] = None) -> ScenarioOutcome:
    """Run one scenario file; exit code 0 (all passed), 1 (stage failure) or 2 (parse error)."""
    path = Path(path)
    try:
        scenario, problem = load_scenario(path)
    except ScenarioParseError as e:
        logger.error(f"Scenario parse failed: {e}")
        return ScenarioOutcome(path.stem, e.exit_code, failures=[str(e)])

    directory = Path(out_dir or settings.output_dir) / scenario.name
    dump_path = directory / "problem.lp" if dump_lp else None
    extra = {"certification_tol": tol} if tol is not None else None

    runner = ScenarioRunner(scenario, problem, dump_path=dump_path, extra_tolerances=extra)
    report = runner.run()
    report_path = write_report(report, directory, runner.tables)

    if report["passed"]:
        logger.success(f"Scenario '{scenario.name}' passed")
        return ScenarioOutcome(scenario.name, 0, report_path, report.get("value"))
    return ScenarioOutcome(scenario.name, StageFailure.exit_code, report_path, report.get("value"), report["failures"])


async def run_batch(directory: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                    concurrency: Optional[int] = None, tol: Optional[float] = None) -> list[ScenarioOutcome]:
    """Run every *.json scenario in a directory, at most ``concurrency`` at a time."""
    paths = sorted(Path(directory).glob("*.json"))
    semaphore = asyncio.Semaphore(concurrency or settings.batch_concurrency)
    logger.info(f"Batch of {len(paths)} scenario(s) from {directory}")

    async def run_one(path: Path) -> ScenarioOutcome:
        async with semaphore:
            try:
                return await asyncio.to_thread(run_scenario, path, out_dir, False, tol)
            except Exception as e:
                logger.error(f"Scenario {path.name} failed: {e}")
                return ScenarioOutcome(path.stem, 1, failures=[str(e)])

    return list(await asyncio.gather(*(run_one(path) for path in paths)))


def write_batch_summary(outcomes: list[ScenarioOutcome], out_dir: Optional[Union[str, Path]] = None) -> Path:
    summary = {
        "scenarios": [outcome.to_row() for outcome in outcomes],
        "passed": sum(1 for o in outcomes if o.exit_code == 0),
        "failed": sum(1 for o in outcomes if o.exit_code != 0),
    }
    return write_report(summary, Path(out_dir or settings.output_dir) / "batch",
                        {"summary": [outcome.to_row() for outcome in outcomes]})


def batch_exit_code(outcomes: list[ScenarioOutcome]) -> int:
    return max((o.exit_code for o in outcomes), default=0)

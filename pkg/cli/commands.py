import asyncio
import json
import sys
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from scenarios.examples import EXAMPLES, reproduce as reproduce_example
from scenarios.runner import batch_exit_code, run_batch, run_scenario, write_batch_summary, write_report
from structure.decomposition import irreducible_components
from utils.config import settings
from utils.errors import ConvexOrderError, MmotError, ScenarioParseError
from utils.logger import configure_logging, get_logger
from utils.models import MeasureFile

logger = get_logger(__name__)


def _load_measure(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return MeasureFile.model_validate(json.load(f)).to_measure()
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, f"{path}:{e.lineno}:{e.colno}")
    except ValidationError as e:
        raise ScenarioParseError(e.errors()[0]["msg"], path)


@click.group()
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Override MMOT_LOG_LEVEL for this run")
def cli(log_level: Optional[str]):
    """Discrete martingale optimal transport: solve, certify, reproduce."""
    if log_level:
        configure_logging(log_level)


@cli.command()
@click.argument("file", type=click.Path(dir_okay=False))
@click.option("--tol", type=float, default=None, help="Certification tolerance for every stage")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory")
@click.option("--dump-lp", is_flag=True, help="Write the LP in plain text next to the report")
def solve(file: str, tol: Optional[float], out: Optional[str], dump_lp: bool):
    """Run a scenario file, or a problem file with the solve + dual pipeline."""
    outcome = run_scenario(file, out_dir=out, dump_lp=dump_lp, tol=tol)
    if outcome.exit_code == 0:
        click.echo(f"{outcome.name}: passed (value {outcome.value:.12g})")
    else:
        for failure in outcome.failures:
            click.echo(f"{outcome.name}: {failure}", err=True)
    sys.exit(outcome.exit_code)


@cli.command()
@click.argument("example", type=click.Choice(EXAMPLES))
@click.option("--n", "n", type=int, default=None, help="Cells per mu marginal (nu gets 2n)")
@click.option("--tol", type=float, default=None, help="Certification tolerance")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory")
def reproduce(example: str, n: Optional[int], tol: Optional[float], out: Optional[str]):
    """Rebuild a worked example and check its claims."""
    if tol is not None:
        settings.certification_tol = tol
    try:
        report = reproduce_example(example, n)
    except MmotError as e:
        logger.error(f"Reproduction failed: {e}")
        click.echo(f"{example}: {e}", err=True)
        sys.exit(1)

    directory = Path(out or settings.output_dir) / example
    write_report(report.to_dict(), directory, {"claims": [c.to_dict() for c in report.claims]})
    if report.passed:
        click.echo(f"{example}: {len(report.claims)} claims hold")
        sys.exit(0)
    click.echo(f"{example}: failing claims {', '.join(report.failing)}", err=True)
    sys.exit(1)


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False, exists=True))
@click.option("--tol", type=float, default=None, help="Certification tolerance for every scenario")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory")
@click.option("--concurrency", type=int, default=None, help="Scenarios run at once")
def batch(directory: str, tol: Optional[float], out: Optional[str], concurrency: Optional[int]):
    """Run every scenario file of a directory concurrently."""
    outcomes = asyncio.run(run_batch(directory, out_dir=out, concurrency=concurrency, tol=tol))
    summary = write_batch_summary(outcomes, out)
    for outcome in outcomes:
        click.echo(f"{outcome.name}: exit {outcome.exit_code}")
    click.echo(f"summary: {summary}")
    sys.exit(batch_exit_code(outcomes))


@cli.command()
@click.argument("mu_file", type=click.Path(dir_okay=False))
@click.argument("nu_file", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON here instead of stdout")
def decompose(mu_file: str, nu_file: str, out: Optional[str]):
    """Split a convex-ordered pair into its irreducible components."""
    try:
        mu, nu = _load_measure(mu_file), _load_measure(nu_file)
    except ScenarioParseError as e:
        click.echo(str(e), err=True)
        sys.exit(e.exit_code)

    try:
        decomposition = irreducible_components(mu, nu)
    except ConvexOrderError as e:
        click.echo(str(e), err=True)
        sys.exit(ScenarioParseError.exit_code)
    except MmotError as e:
        logger.error(f"Decomposition failed: {e}")
        click.echo(str(e), err=True)
        sys.exit(1)

    text = json.dumps(decomposition.to_json(), indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
        logger.info(f"Decomposition saved: {out}")
    else:
        click.echo(text)

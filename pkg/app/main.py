"""
Command-line entry point.

    python -m app.main --config scenarios/domestic_robot.env --mode adaptive --rho 0.5,0.9
"""
from pathlib import Path
from typing import Optional
import logging
import sys

import click
from pydantic import ValidationError

from app.core.config import SCENARIO_DIR, get_settings, load_scenario
from app.core.errors import ExplorerError
from app.explorer import audit_monotonicity, emit_outputs, plan_from_scenario, run_sweep
from app.gridworld import GridConfig, spec_params
from app.oracle import cross_check, state_space_diff

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = SCENARIO_DIR / "domestic_robot.env"

# click uses 2 for usage errors
EXIT_ORACLE_MISMATCH = 3

# small enough for the unmemoized oracle at every lattice point
ORACLE_CHECK_CONFIG = GridConfig(
    width=3,
    height=3,
    robot0=(1, 1),
    human0=(2, 2),
    station=(0, 0),
    capacity=3,
    min_energy=1,
    horizon=3,
)


def _parse_rho(value: Optional[str]):
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'", param_hint="--rho")


@click.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
              default=DEFAULT_SCENARIO, show_default=True, help="Scenario file (KEY=VALUE lines).")
@click.option("--mode", type=click.Choice(["exhaustive", "adaptive"]), default=None,
              help="Override the scenario's MODE.")
@click.option("--rho", default=None, help="Comma-separated frontier thresholds; overrides RHO.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory (default: EXPLORER_OUTPUT_DIR).")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker processes for exhaustive sweeps (default: EXPLORER_THREADS).")
@click.option("--oracle-check", is_flag=True, help="Compare checker and brute force on a 3x3 instance first.")
@click.option("--no-timestamp", is_flag=True, help="Omit timestamps and wall times from the outputs.")
@click.option("--log-level", default=None, help="Logging level (default: EXPLORER_LOG_LEVEL).")
def main(config_path, mode, rho, out_dir, threads, oracle_check, no_timestamp, log_level):
    """Sweep the specification lattice of the domestic robot scenario."""
    settings = get_settings()
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    rho_list = _parse_rho(rho)
    try:
        scenario = load_scenario(config_path)
        plan = plan_from_scenario(scenario, mode=mode, rho_list=rho_list)

        if oracle_check:
            mismatches = cross_check(ORACLE_CHECK_CONFIG, lattice=plan.lattice,
                                     tolerance=settings.oracle_tolerance)
            diverging = [p for p in plan.lattice.points()
                         if any(state_space_diff(ORACLE_CHECK_CONFIG, spec_params(plan.lattice, p)))]
            if mismatches or diverging:
                logger.error(f"Oracle check failed: {len(mismatches)} value mismatch(es), "
                             f"{len(diverging)} point(s) with a differing state space; aborting")
                sys.exit(EXIT_ORACLE_MISMATCH)
            click.echo(f"Oracle check passed on {plan.lattice.size} point(s)")

        result = run_sweep(plan, threads=threads or settings.threads, state_limit=settings.state_limit)
        for value, grid in result.grids.items():
            if grid.complete and not audit_monotonicity(grid).passed:
                logger.warning(f"{plan.swept_parameter}={value}: grid is not monotone under weakening")
        emit_outputs(result, out_dir or settings.output_dir, timestamps=not no_timestamp)
    except FileNotFoundError as e:
        logger.error(str(e))
        sys.exit(1)
    except (ExplorerError, ValidationError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        sys.exit(1)

    for value in plan.values:
        click.echo(f"{plan.swept_parameter}={value}: {result.checks[value]} model check(s)")


if __name__ == "__main__":
    main()

"""
Sweeps of the specification lattice across a scenario parameter.

For every swept value (battery capacity by default) each specification point
is turned into a model and a query, checked, and recorded. Results are
written as CSV files whose bytes depend only on the plan when timestamps are
switched off.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple
import csv
import io
import logging
import os
import tempfile

from pydantic import BaseModel, Field, field_validator, model_validator

from app.checker import check
from app.core.clock import Stopwatch, timestamp_line
from app.core.config import ScenarioFile
from app.core.errors import OutputError, SweepError
from app.core.run_log import RunLog, log_check
from app.gridworld import GridConfig, build_model, domestic_lattice, property_query, spec_params
from app.lattice import (
    EvaluationGrid,
    Frontier,
    SpecLattice,
    SpecPoint,
    adaptive_explore,
    frontier,
    monotonicity_violations,
)

logger = logging.getLogger(__name__)


class SweepPlan(BaseModel):
    scenario: GridConfig
    swept_parameter: Literal["capacity", "min_energy", "horizon"] = "capacity"
    values: List[int] = Field(min_length=1)
    lattice: SpecLattice = Field(default_factory=domestic_lattice)
    rho_list: List[float] = Field(default_factory=lambda: [0.9])
    mode: Literal["exhaustive", "adaptive"] = "exhaustive"
    filter_mode: Literal["min", "average"] = "min"

    @field_validator("rho_list")
    @classmethod
    def _rho_in_unit_interval(cls, rho_list):
        for rho in rho_list:
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"rho must lie in [0, 1], got {rho}")
        return rho_list

    @field_validator("values")
    @classmethod
    def _distinct_values(cls, values):
        if len(set(values)) != len(values):
            raise ValueError(f"Swept values must be distinct, got {values}")
        return values

    @model_validator(mode="after")
    def _values_make_valid_configs(self):
        for value in self.values:
            self.config_for(value)
        return self

    def config_for(self, value: int) -> GridConfig:
        """The scenario with the swept parameter set to value (validated)."""
        return GridConfig.model_validate({**self.scenario.model_dump(), self.swept_parameter: value})


def plan_from_scenario(scenario: ScenarioFile, mode: Optional[str] = None,
                       rho_list: Optional[Sequence[float]] = None) -> SweepPlan:
    """Turn a scenario file into a SweepPlan; explicit arguments win over the file."""
    if scenario.swept_parameter == "capacity":
        values = list(scenario.capacities)
    else:
        values = list(scenario.swept_values)
        if not values:
            raise ValueError(f"SWEPT_VALUES must list the values of {scenario.swept_parameter}")
    base = GridConfig(
        width=scenario.grid_width,
        height=scenario.grid_height,
        robot0=scenario.robot_start,
        human0=scenario.human_start,
        station=scenario.station,
        capacity=scenario.capacities[0] if scenario.capacities else GridConfig().capacity,
        min_energy=scenario.min_energy,
        horizon=scenario.horizon,
        arrival_prob=scenario.arrival_prob,
        human_stay_prob=scenario.human_stay_prob,
        all_start_positions=scenario.all_start_positions,
        expand_resolved=scenario.expand_resolved,
    )
    return SweepPlan(
        scenario=base,
        swept_parameter=scenario.swept_parameter,
        values=values,
        lattice=domestic_lattice(scenario.velocity_levels, scenario.service_time_levels),
        rho_list=list(rho_list) if rho_list is not None else list(scenario.rho),
        mode=mode or scenario.mode,
        filter_mode=scenario.filter,
    )


def evaluate_point(cfg: GridConfig, lattice: SpecLattice, indices: Tuple[int, ...],
                   filter_mode: str = "min", state_limit: Optional[int] = None) -> Tuple[float, int, float]:
    """
    Build, check and filter one specification point.

    Returns:
        (probability, number of states, wall milliseconds)
    """
    with Stopwatch() as watch:
        spec = spec_params(lattice, SpecPoint(tuple(indices)))
        mdp = build_model(cfg, spec, state_limit=state_limit)
        query, f = property_query(cfg, spec, filter_mode=filter_mode)
        result = check(mdp, query, f)
    return result.probability, mdp.num_states, watch.elapsed_ms


@dataclass
class SweepResult:
    plan: SweepPlan
    grids: Dict[int, EvaluationGrid] = field(default_factory=dict)
    frontiers: Dict[Tuple[int, float], Frontier] = field(default_factory=dict)
    run_log: RunLog = field(default_factory=RunLog)
    # model-check runs per swept value
    checks: Dict[int, int] = field(default_factory=dict)


def _run_exhaustive(plan: SweepPlan, result: SweepResult, threads: int, state_limit: Optional[int]) -> None:
    tasks = [(value, p) for value in plan.values for p in plan.lattice.points()]
    outcomes = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                (value, p): pool.submit(evaluate_point, plan.config_for(value), plan.lattice,
                                        p.indices, plan.filter_mode, state_limit)
                for value, p in tasks
            }
            for (value, p), future in futures.items():
                try:
                    outcomes[value, p] = future.result()
                except Exception as e:
                    logger.error(f"Sweep failed at {plan.swept_parameter}={value}, point {p}: {str(e)}")
                    raise SweepError(value, p.indices, e) from e
    else:
        for value, p in tasks:
            try:
                outcomes[value, p] = evaluate_point(plan.config_for(value), plan.lattice,
                                                    p.indices, plan.filter_mode, state_limit)
            except Exception as e:
                logger.error(f"Sweep failed at {plan.swept_parameter}={value}, point {p}: {str(e)}")
                raise SweepError(value, p.indices, e) from e

    for value, p in tasks:
        probability, states, wall_ms = outcomes[value, p]
        result.grids[value][p] = probability
        log_check(result.run_log, value, p.indices, probability, states, "exhaustive", wall_ms)
    for value in plan.values:
        for rho in plan.rho_list:
            result.frontiers[value, rho] = frontier(result.grids[value], rho)


def _run_adaptive(plan: SweepPlan, result: SweepResult, state_limit: Optional[int]) -> None:
    for value in plan.values:
        cfg = plan.config_for(value)
        cache: Dict[SpecPoint, float] = {}

        def evaluator(p: SpecPoint) -> float:
            try:
                probability, states, wall_ms = evaluate_point(cfg, plan.lattice, p.indices,
                                                              plan.filter_mode, state_limit)
            except Exception as e:
                logger.error(f"Sweep failed at {plan.swept_parameter}={value}, point {p}: {str(e)}")
                raise SweepError(value, p.indices, e) from e
            log_check(result.run_log, value, p.indices, probability, states, "adaptive", wall_ms)
            return probability

        for rho in plan.rho_list:
            explored = adaptive_explore(plan.lattice, evaluator, rho, cache=cache)
            result.frontiers[value, rho] = explored.frontier
        for p, probability in sorted(cache.items()):
            result.grids[value][p] = probability


def run_sweep(plan: SweepPlan, threads: int = 1, state_limit: Optional[int] = None) -> SweepResult:
    """
    Evaluate the plan's lattice for every swept value.

    Exhaustive mode checks every point (optionally in a process pool) and
    derives frontiers from the complete grids. Adaptive mode checks only the
    points the staircase search asks for, sharing evaluations between rho
    values, and leaves the grids partial.

    Raises:
        SweepError: a build or check failed; carries the swept value and point
        MonotonicityViolation: adaptive search met contradicting evaluations
    """
    if threads < 1:
        raise ValueError(f"threads must be at least 1, got {threads}")
    result = SweepResult(plan=plan)
    for value in plan.values:
        result.grids[value] = EvaluationGrid(plan.lattice, scenario={plan.swept_parameter: value})
    logger.info(f"Sweeping {plan.swept_parameter} over {plan.values} ({plan.mode}, "
                f"{plan.lattice.size} points per value, threads={threads})")
    if plan.mode == "exhaustive":
        _run_exhaustive(plan, result, threads, state_limit)
    else:
        if threads > 1:
            logger.warning("Adaptive exploration evaluates points one at a time; ignoring threads")
        _run_adaptive(plan, result, state_limit)
    for value in plan.values:
        result.checks[value] = result.run_log.count(value)
    logger.info(f"Sweep finished: {len(result.run_log)} model check(s)")
    return result


class Violation(BaseModel):
    weaker: Tuple[int, ...]
    stronger: Tuple[int, ...]
    weaker_probability: float
    stronger_probability: float


class MonotonicityReport(BaseModel):
    scenario: Dict[str, object] = {}
    violations: List[Violation] = []

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_monotonicity(grid: EvaluationGrid) -> MonotonicityReport:
    """Every comparable pair whose probability drops by more than 1e-9 on weakening."""
    if not grid.complete:
        raise ValueError(f"Audit needs a complete grid, got {len(grid)} of {grid.lattice.size} points")
    violations = [
        Violation(weaker=w.indices, stronger=s.indices, weaker_probability=pw, stronger_probability=ps)
        for w, s, pw, ps in monotonicity_violations(grid)
    ]
    report = MonotonicityReport(scenario=dict(grid.scenario), violations=violations)
    if violations:
        logger.warning(f"Monotonicity audit of {grid.scenario or 'grid'} found {len(violations)} violation(s)")
    return report


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _number(value: float) -> str:
    return repr(float(value))


def _write_atomic(path: Path, rows: List[List[str]], header_line: Optional[str]) -> Path:
    buffer = io.StringIO()
    if header_line:
        buffer.write(header_line + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    tmp_name = None
    try:
        with tempfile.NamedTemporaryFile("w", encoding="utf-8", newline="", dir=path.parent,
                                         prefix=f".{path.name}.", delete=False) as tmp:
            tmp_name = tmp.name
            tmp.write(buffer.getvalue())
        os.replace(tmp_name, path)
    except OSError as e:
        if tmp_name and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        logger.error(f"Failed to write {path}: {str(e)}")
        raise OutputError(path, e) from e
    logger.debug(f"Wrote {path} ({len(rows)} rows)")
    return path


def _grid_rows(result: SweepResult, value: int, timestamps: bool) -> List[List[str]]:
    lattice = result.plan.lattice
    wall = {r.indices: r.wall_ms for r in result.run_log.records if r.swept_value == value}
    rows = [["swept_value", *(c.name for c in lattice.chains), "probability", "wall_ms"]]
    grid = result.grids[value]
    for p in sorted(grid.values):
        wall_ms = wall.get(p.indices) if timestamps else None
        rows.append([str(value), *(str(i) for i in p), _number(grid[p]),
                     "" if wall_ms is None else f"{wall_ms:.3f}"])
    return rows


def _heatmap_rows(result: SweepResult, value: int) -> List[List[str]]:
    rows_chain, cols_chain = result.plan.lattice.chains
    grid = result.grids[value]
    rows = [[f"{rows_chain.name}\\{cols_chain.name}", *(level.label for level in cols_chain.levels)]]
    for i, row_level in enumerate(rows_chain.levels, start=1):
        cells = []
        for j in range(1, len(cols_chain) + 1):
            p = SpecPoint((i, j))
            cells.append(_number(grid[p]) if p in grid else "")
        rows.append([row_level.label, *cells])
    return rows


def _frontier_rows(result: SweepResult, rho: float) -> List[List[str]]:
    lattice = result.plan.lattice
    rows = [["swept_value", *(c.name for c in lattice.chains), "label", "probability"]]
    for value in result.plan.values:
        found = result.frontiers.get((value, rho))
        if found is None:
            continue
        for p in found:
            rows.append([str(value), *(str(i) for i in p), lattice.label(p), _number(found.probabilities[p])])
    return rows


def _runlog_rows(result: SweepResult, timestamps: bool) -> List[List[str]]:
    lattice = result.plan.lattice
    rows = [["swept_value", *(c.name for c in lattice.chains), "kind", "states", "probability", "wall_ms"]]
    for r in result.run_log.sorted(result.plan.values):
        wall_ms = f"{r.wall_ms:.3f}" if timestamps and r.wall_ms is not None else ""
        rows.append([str(r.swept_value), *(str(i) for i in r.indices), r.kind, str(r.states),
                     _number(r.probability), wall_ms])
    return rows


def emit_outputs(result: SweepResult, out_dir, timestamps: bool = True) -> List[Path]:
    """
    Write grid_<value>.csv, heatmap_<value>.csv, frontier_rho<rho>.csv and runlog.csv.

    With timestamps off the '# generated' line and the wall_ms cells are left
    out, so identical plans give byte-identical files.

    Raises:
        OutputError: a file could not be written
    """
    if not result.grids:
        raise ValueError("Nothing to write: the sweep produced no grids")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create output directory {out_dir}: {str(e)}")
        raise OutputError(out_dir, e) from e
    header_line = timestamp_line() if timestamps else None
    written = []
    two_chains = len(result.plan.lattice.chains) == 2
    if not two_chains:
        logger.warning(f"Heatmaps need a two-chain lattice, got {len(result.plan.lattice.chains)} chain(s)")
    for value in result.plan.values:
        written.append(_write_atomic(out_dir / f"grid_{value}.csv", _grid_rows(result, value, timestamps), header_line))
        if two_chains:
            written.append(_write_atomic(out_dir / f"heatmap_{value}.csv", _heatmap_rows(result, value), header_line))
    for rho in result.plan.rho_list:
        written.append(_write_atomic(out_dir / f"frontier_rho{rho:g}.csv", _frontier_rows(result, rho), header_line))
    written.append(_write_atomic(out_dir / "runlog.csv", _runlog_rows(result, timestamps), header_line))
    logger.info(f"Wrote {len(written)} file(s) to {out_dir}")
    return written

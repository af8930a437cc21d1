import pytest
from click.testing import CliRunner
from pydantic import ValidationError

from app.core.errors import OutputError, StateSpaceTooLarge, SweepError
from app.core.run_log import log_check
from app.explorer import (
    SweepPlan,
    SweepResult,
    audit_monotonicity,
    emit_outputs,
    evaluate_point,
    run_sweep,
)
from app.gridworld import domestic_lattice
from app.lattice import EvaluationGrid, frontier, point
from app.main import main
from app.oracle import Mismatch

EXAMPLE_3X3 = [[0, 0, .6], [0, .6, .8], [.6, .8, .9]]

SMALL_SCENARIO = """\
# 3x3 test floor
GRID_WIDTH=3
GRID_HEIGHT=3
ROBOT_START=1,1
HUMAN_START=2,2
STATION=0,0
CAPACITIES=3,2
MIN_ENERGY=1
HORIZON=3
VELOCITY_LEVELS=1,2
SERVICE_TIME_LEVELS=1,2,3
RHO=0.5
MODE=exhaustive
"""


@pytest.fixture
def small_lattice():
    return domestic_lattice([1, 2, 3], [1, 2, 3])


@pytest.fixture
def example_result(tiny_grid, small_lattice):
    """A finished sweep over one capacity with the hand-made 3x3 grid."""
    plan = SweepPlan(scenario=tiny_grid, values=[3], lattice=small_lattice, rho_list=[0.5, 1.0])
    result = SweepResult(plan=plan)
    result.grids[3] = EvaluationGrid.from_matrix(small_lattice, EXAMPLE_3X3, scenario={"capacity": 3})
    for rho in plan.rho_list:
        result.frontiers[3, rho] = frontier(result.grids[3], rho)
    for p in small_lattice.points():
        log_check(result.run_log, 3, p.indices, result.grids[3][p], 100, "exhaustive", 1.5)
    result.checks[3] = result.run_log.count(3)
    return result


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "small.env"
    path.write_text(SMALL_SCENARIO)
    return path


def test_plan_validation(tiny_grid):
    """Test SweepPlan rejects empty, repeated and invalid values and bad thresholds."""
    with pytest.raises(ValidationError):
        SweepPlan(scenario=tiny_grid, values=[])
    with pytest.raises(ValidationError):
        SweepPlan(scenario=tiny_grid, values=[3, 3])
    with pytest.raises(ValidationError):
        SweepPlan(scenario=tiny_grid, values=[3], rho_list=[1.5])
    with pytest.raises(ValidationError):
        SweepPlan(scenario=tiny_grid, swept_parameter="horizon", values=[0])


def test_plan_config_for_sets_swept_parameter(tiny_grid):
    """Test that config_for only changes the swept parameter."""
    plan = SweepPlan(scenario=tiny_grid, swept_parameter="min_energy", values=[0, 2])
    cfg = plan.config_for(2)
    assert cfg.min_energy == 2
    assert cfg.capacity == tiny_grid.capacity
    assert cfg.width == tiny_grid.width


def test_single_point_sweep(tiny_grid):
    """Test a one-value sweep over a one-point lattice."""
    lattice = domestic_lattice([2], [3])
    plan = SweepPlan(scenario=tiny_grid, values=[3], lattice=lattice, rho_list=[0.0])
    result = run_sweep(plan)
    assert result.checks == {3: 1}
    probability, states, _ = evaluate_point(tiny_grid, lattice, (1, 1))
    assert result.grids[3][point(1, 1)] == probability
    assert result.run_log.records[0].states == states
    # rho 0 is met everywhere, so the top is the whole frontier
    assert result.frontiers[3, 0.0].points == (point(1, 1),)


def test_adaptive_matches_exhaustive_on_tiny_grid(tiny_grid):
    """Test that both modes find the same frontiers and adaptive checks fewer points."""
    common = dict(scenario=tiny_grid, values=[3, 2], rho_list=[0.3, 0.6, 0.9])
    exhaustive = run_sweep(SweepPlan(mode="exhaustive", **common))
    adaptive = run_sweep(SweepPlan(mode="adaptive", **common))
    for key, found in exhaustive.frontiers.items():
        assert adaptive.frontiers[key].points == found.points
    for value in (3, 2):
        assert exhaustive.checks[value] == 60
        assert adaptive.checks[value] < 60
        for p in adaptive.grids[value].values:
            assert adaptive.grids[value][p] == pytest.approx(exhaustive.grids[value][p], abs=1e-12)
    assert {r.kind for r in adaptive.run_log.records} == {"adaptive"}


def test_exhaustive_grid_is_monotone(tiny_grid):
    """Test the audit on a real sweep."""
    result = run_sweep(SweepPlan(scenario=tiny_grid, values=[3]))
    report = audit_monotonicity(result.grids[3])
    assert report.passed
    assert report.scenario == {"capacity": 3}


def test_process_pool_gives_same_grid(tiny_grid, small_lattice):
    """Test that worker processes reproduce the single-process values."""
    plan = SweepPlan(scenario=tiny_grid, values=[3, 2], lattice=small_lattice)
    serial = run_sweep(plan, threads=1)
    pooled = run_sweep(plan, threads=2)
    for value in plan.values:
        assert pooled.grids[value].values == serial.grids[value].values


def test_failed_point_raises_sweep_error(tiny_grid, small_lattice):
    """Test that a build failure is wrapped with the swept value and point."""
    plan = SweepPlan(scenario=tiny_grid, values=[3], lattice=small_lattice)
    with pytest.raises(SweepError) as info:
        run_sweep(plan, state_limit=1)
    assert info.value.swept_value == 3
    assert info.value.indices == (1, 1)
    assert isinstance(info.value.__cause__, StateSpaceTooLarge)


def test_invalid_thread_count(tiny_grid):
    """Test that threads below one are refused."""
    with pytest.raises(ValueError):
        run_sweep(SweepPlan(scenario=tiny_grid, values=[3]), threads=0)


def test_audit_constant_and_planted(small_lattice):
    """Test the audit on a constant grid and on a grid with one planted drop."""
    constant = EvaluationGrid.from_matrix(small_lattice, [[0.4] * 3] * 3)
    assert audit_monotonicity(constant).passed

    planted = [row[:] for row in EXAMPLE_3X3]
    planted[2][2] = 0.7
    report = audit_monotonicity(EvaluationGrid.from_matrix(small_lattice, planted))
    assert not report.passed
    assert {(v.weaker, v.stronger) for v in report.violations} == {((3, 3), (2, 3)), ((3, 3), (3, 2))}
    assert report.violations[0].weaker_probability == 0.7


def test_audit_needs_complete_grid(small_lattice):
    """Test that a partial grid cannot be audited."""
    grid = EvaluationGrid(small_lattice)
    grid[point(1, 1)] = 0.5
    with pytest.raises(ValueError, match="complete grid"):
        audit_monotonicity(grid)


def test_emit_outputs_example_files(example_result, tmp_path):
    """Test the frontier, heatmap and grid files for the hand-made grid."""
    written = emit_outputs(example_result, tmp_path, timestamps=False)
    assert sorted(p.name for p in written) == [
        "frontier_rho0.5.csv", "frontier_rho1.csv", "grid_3.csv", "heatmap_3.csv", "runlog.csv",
    ]
    assert (tmp_path / "frontier_rho0.5.csv").read_text() == (
        "swept_value,velocity,service_time,label,probability\n"
        "3,1,3,p1 & q3,0.6\n"
        "3,2,2,p2 & q2,0.6\n"
        "3,3,1,p3 & q1,0.6\n"
    )
    # nothing reaches 1.0: header only
    assert (tmp_path / "frontier_rho1.csv").read_text() == "swept_value,velocity,service_time,label,probability\n"
    assert (tmp_path / "heatmap_3.csv").read_text() == (
        "velocity\\service_time,q1,q2,q3\n"
        "p1,0.0,0.0,0.6\n"
        "p2,0.0,0.6,0.8\n"
        "p3,0.6,0.8,0.9\n"
    )
    grid_lines = (tmp_path / "grid_3.csv").read_text().splitlines()
    assert grid_lines[0] == "swept_value,velocity,service_time,probability,wall_ms"
    assert grid_lines[1] == "3,1,1,0.0,"
    assert grid_lines[-1] == "3,3,3,0.9,"
    runlog_lines = (tmp_path / "runlog.csv").read_text().splitlines()
    assert runlog_lines[0] == "swept_value,velocity,service_time,kind,states,probability,wall_ms"
    assert runlog_lines[1] == "3,1,1,exhaustive,100,0.0,"
    assert len(runlog_lines) == 10


def test_emit_outputs_is_byte_identical_without_timestamps(example_result, tmp_path):
    """Test that two writes without timestamps produce the same bytes."""
    first = emit_outputs(example_result, tmp_path / "a", timestamps=False)
    second = emit_outputs(example_result, tmp_path / "b", timestamps=False)
    for a, b in zip(first, second):
        assert a.name == b.name
        assert a.read_bytes() == b.read_bytes()


def test_emit_outputs_with_timestamps(example_result, tmp_path):
    """Test the generated-at line and wall times."""
    emit_outputs(example_result, tmp_path)
    lines = (tmp_path / "grid_3.csv").read_text().splitlines()
    assert lines[0].startswith("# generated ")
    assert lines[0].endswith("Z")
    assert lines[2] == "3,1,1,0.0,1.500"


def test_emit_outputs_unwritable_directory(example_result, tmp_path):
    """Test that a file in place of the output directory raises OutputError."""
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory")
    with pytest.raises(OutputError) as info:
        emit_outputs(example_result, blocker, timestamps=False)
    assert "taken" in info.value.path


def test_emit_outputs_without_grids(tiny_grid, tmp_path):
    """Test that an empty result is refused."""
    result = SweepResult(plan=SweepPlan(scenario=tiny_grid, values=[3]))
    with pytest.raises(ValueError, match="no grids"):
        emit_outputs(result, tmp_path)


def test_cli_writes_outputs(scenario_file, tmp_path):
    """Test a full command-line run on a small scenario."""
    out = tmp_path / "out"
    runner = CliRunner()
    result = runner.invoke(main, ["--config", str(scenario_file), "--out", str(out), "--no-timestamp"])
    assert result.exit_code == 0, result.output
    assert "capacity=3: 6 model check(s)" in result.output
    assert "capacity=2: 6 model check(s)" in result.output
    assert (out / "grid_3.csv").exists()
    assert (out / "heatmap_2.csv").exists()
    assert (out / "frontier_rho0.5.csv").exists()
    assert not (out / "runlog.csv").read_text().startswith("#")


def test_cli_overrides_mode_and_rho(scenario_file, tmp_path):
    """Test --mode and --rho win over the scenario file."""
    out = tmp_path / "out"
    runner = CliRunner()
    result = runner.invoke(main, ["--config", str(scenario_file), "--out", str(out), "--no-timestamp",
                                  "--mode", "adaptive", "--rho", "0.2,0.8"])
    assert result.exit_code == 0, result.output
    assert (out / "frontier_rho0.2.csv").exists()
    assert (out / "frontier_rho0.8.csv").exists()
    assert not (out / "frontier_rho0.5.csv").exists()
    assert "adaptive" in (out / "runlog.csv").read_text()


def test_cli_oracle_check(scenario_file, tmp_path):
    """Test that the oracle check runs before the sweep and passes."""
    runner = CliRunner()
    result = runner.invoke(main, ["--config", str(scenario_file), "--out", str(tmp_path / "out"),
                                  "--no-timestamp", "--oracle-check"])
    assert result.exit_code == 0, result.output
    assert "Oracle check passed on 6 point(s)" in result.output


def test_cli_errors(scenario_file, tmp_path):
    """Test exit codes for a missing scenario and a malformed threshold list."""
    runner = CliRunner()
    missing = runner.invoke(main, ["--config", str(tmp_path / "absent.env")])
    assert missing.exit_code == 1
    bad_rho = runner.invoke(main, ["--config", str(scenario_file), "--rho", "high"])
    assert bad_rho.exit_code == 2
    out_of_range = runner.invoke(main, ["--config", str(scenario_file), "--rho", "1.5",
                                        "--out", str(tmp_path / "out")])
    assert out_of_range.exit_code == 1


def test_cli_output_is_identical_across_thread_counts(scenario_file, tmp_path):
    """Test that reruns at one and two worker processes write the same bytes."""
    runner = CliRunner()
    outputs = {}
    for threads in ("1", "2"):
        out = tmp_path / f"threads{threads}"
        result = runner.invoke(main, ["--config", str(scenario_file), "--out", str(out),
                                      "--no-timestamp", "--threads", threads])
        assert result.exit_code == 0, result.output
        outputs[threads] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert set(outputs["1"]) == {"grid_3.csv", "grid_2.csv", "heatmap_3.csv", "heatmap_2.csv",
                                 "frontier_rho0.5.csv", "runlog.csv"}
    assert outputs["1"] == outputs["2"]


def test_cli_oracle_mismatch_exit_code(monkeypatch, scenario_file, tmp_path):
    """Test that an oracle disagreement exits with its own status and writes nothing."""
    import app.main as cli

    monkeypatch.setattr(cli, "cross_check", lambda cfg, lattice, tolerance: [
        Mismatch(indices=(1, 1), state=0, checker=0.5, oracle=0.25),
    ])
    out = tmp_path / "out"
    result = CliRunner().invoke(main, ["--config", str(scenario_file), "--out", str(out), "--oracle-check"])
    assert result.exit_code == cli.EXIT_ORACLE_MISMATCH == 3
    assert not out.exists()

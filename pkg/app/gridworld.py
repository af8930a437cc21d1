"""
Domestic robot case study: a robot serving a wandering person on a grid.

One tick of the model:
  1. the robot stays or moves k cells in one cardinal direction (k <= vmax),
     never off the grid and never onto the person's cell;
  2. moving costs one energy unit; ending the tick on the station recharges
     fully; at or below min_energy (away from the station) only moves that
     bring the robot closer to the station are allowed;
  3. the person stays or steps to a free neighbouring cell at random;
  4. a pending request is served when robot and person end the tick at
     Manhattan distance 1, otherwise its timer advances;
  5. the tick counter advances, saturating at the horizon.

The velocity bound of a specification is enforced by pruning robot moves; the
service-time bound is left to the query (serviceTimer <= tmax).
"""
from array import array
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.checker import BoundedUntilQuery, FilterSpec
from app.core.errors import StateSpaceTooLarge
from app.formula import StateFormula, conj, disj, eq, le, ne
from app.lattice import AttributeChain, SpecLattice, SpecPoint
from app.mdp import Mdp, VariableSchema

logger = logging.getLogger(__name__)

MAX_VELOCITY = 6
MAX_SERVICE_TIME = 10
DIRECTIONS = (("N", 0, -1), ("S", 0, 1), ("E", 1, 0), ("W", -1, 0))
STAY = "stay"
IDLE = "idle"

Cell = Tuple[int, int]


class GridConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=7, ge=1)
    height: int = Field(default=7, ge=1)
    robot0: Cell = (4, 4)
    human0: Cell = (5, 5)
    station: Cell = (0, 0)
    capacity: int = Field(default=25, ge=1)
    min_energy: int = Field(default=2, ge=0)
    horizon: int = Field(default=20, ge=1)
    arrival_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    human_stay_prob: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    # seed every distinct robot/person placement instead of robot0/human0
    all_start_positions: bool = False
    # give decided states full dynamics instead of an idle self-loop
    expand_resolved: bool = False

    @model_validator(mode="after")
    def _check_layout(self):
        for name in ("robot0", "human0", "station"):
            x, y = getattr(self, name)
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"{name}={(x, y)} lies outside the {self.width}x{self.height} grid")
        if self.robot0 == self.human0:
            raise ValueError("robot0 and human0 must be different cells")
        if self.width * self.height < 2:
            raise ValueError("The grid needs at least two cells")
        if self.min_energy >= self.capacity:
            logger.warning(f"min_energy={self.min_energy} >= capacity={self.capacity}: "
                           f"the robot seeks recharge from the first tick")
        if self.arrival_prob > 0 and not self.expand_resolved:
            logger.warning(f"arrival_prob={self.arrival_prob} has no effect unless expand_resolved is set: "
                           f"served states idle, so no new request arrives")
        return self

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


class SpecParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    vmax: int = Field(ge=1, le=MAX_VELOCITY)
    tmax: int = Field(ge=1, le=MAX_SERVICE_TIME)


def velocity_chain(levels: Sequence[int] = tuple(range(1, MAX_VELOCITY + 1))) -> AttributeChain:
    return AttributeChain.upper_bounds("velocity", "p", levels)


def service_time_chain(levels: Sequence[int] = tuple(range(1, MAX_SERVICE_TIME + 1))) -> AttributeChain:
    return AttributeChain.upper_bounds("service_time", "q", levels)


def domestic_lattice(velocity_levels: Sequence[int] = tuple(range(1, MAX_VELOCITY + 1)),
                     service_time_levels: Sequence[int] = tuple(range(1, MAX_SERVICE_TIME + 1))) -> SpecLattice:
    """The velocity x service-time lattice (6 x 10 by default)."""
    return SpecLattice(chains=(velocity_chain(velocity_levels), service_time_chain(service_time_levels)))


def spec_params(lattice: SpecLattice, p: SpecPoint) -> SpecParams:
    bounds = lattice.bounds(p)
    return SpecParams(vmax=bounds["velocity"], tmax=bounds["service_time"])


def _manhattan(ax: int, ay: int, bx: int, by: int) -> int:
    return abs(ax - bx) + abs(ay - by)


def schema_for(cfg: GridConfig, spec: SpecParams, label_velocity: bool = False) -> VariableSchema:
    variables = [
        ("robotX", 0, cfg.width - 1),
        ("robotY", 0, cfg.height - 1),
        ("humanX", 0, cfg.width - 1),
        ("humanY", 0, cfg.height - 1),
        ("energy", 0, cfg.capacity),
        ("serviceHuman", 0, 1),
        ("serviceTimer", 0, spec.tmax + 1),
        ("tick", 0, cfg.horizon),
    ]
    if label_velocity:
        variables.append(("speed", 0, MAX_VELOCITY))
    return VariableSchema(variables)


class _Dynamics:
    """Successor generator for one (config, spec, mode) triple."""

    def __init__(self, cfg: GridConfig, spec: SpecParams, label_velocity: bool):
        self.cfg = cfg
        self.spec = spec
        self.label_velocity = label_velocity
        self.top_speed = MAX_VELOCITY if label_velocity else spec.vmax
        self.timer_cap = spec.tmax + 1
        self.labels: Dict[str, int] = {}
        self.robot_moves = lru_cache(maxsize=None)(self._robot_moves)
        self.human_moves = lru_cache(maxsize=None)(self._human_moves)

    def label_id(self, label: str) -> int:
        return self.labels.setdefault(label, len(self.labels))

    def _robot_moves(self, rx: int, ry: int, hx: int, hy: int, energy_mode: int):
        """(label id, x, y, speed) options; energy_mode 0 = empty, 1 = low, 2 = normal."""
        cfg = self.cfg
        moves = []
        if energy_mode > 0:
            for name, dx, dy in DIRECTIONS:
                for k in range(1, self.top_speed + 1):
                    x, y = rx + dx * k, ry + dy * k
                    if not cfg.contains(x, y):
                        break
                    if (x, y) == (hx, hy):
                        continue
                    moves.append((f"{name}-{k}", x, y, k))
        sx, sy = cfg.station
        if energy_mode == 1 and (rx, ry) != (sx, sy):
            here = _manhattan(rx, ry, sx, sy)
            moves = [m for m in moves if _manhattan(m[1], m[2], sx, sy) < here]
            if not any(m[3] <= self.spec.vmax for m in moves):
                moves.insert(0, (STAY, rx, ry, 0))
        else:
            moves.insert(0, (STAY, rx, ry, 0))
        return tuple((self.label_id(label), x, y, k) for label, x, y, k in moves)

    def _human_moves(self, hx: int, hy: int, rx: int, ry: int):
        """((x, y), prob) outcomes of the person's step given the robot's new cell."""
        cfg = self.cfg
        steps = []
        for _, dx, dy in DIRECTIONS:
            x, y = hx + dx, hy + dy
            if cfg.contains(x, y) and (x, y) != (rx, ry):
                steps.append((x, y))
        if not steps:
            return (((hx, hy), 1.0),)
        stay = cfg.human_stay_prob
        if stay is None:
            p = 1.0 / (len(steps) + 1)
            return (((hx, hy), p),) + tuple((cell, p) for cell in steps)
        outcomes = []
        if stay > 0:
            outcomes.append(((hx, hy), stay))
        if stay < 1:
            p = (1.0 - stay) / len(steps)
            outcomes.extend((cell, p) for cell in steps)
        return tuple(outcomes)

    def resolved(self, state) -> bool:
        if self.cfg.expand_resolved:
            return False
        if state[5] == 0 or state[6] > self.spec.tmax:
            return True
        return self.label_velocity and state[8] > self.spec.vmax

    def successors(self, state):
        """Yield (label id, [(successor state, prob), ...]) for each enabled action."""
        cfg = self.cfg
        rx, ry, hx, hy, energy, service, timer, tick = state[:8]
        next_tick = min(tick + 1, cfg.horizon)
        if energy == 0:
            energy_mode = 0
        elif energy <= cfg.min_energy:
            energy_mode = 1
        else:
            energy_mode = 2
        arrival = cfg.arrival_prob
        for label, x, y, k in self.robot_moves(rx, ry, hx, hy, energy_mode):
            new_energy = cfg.capacity if (x, y) == cfg.station else energy - (1 if k else 0)
            dist = []
            for (px, py), p in self.human_moves(hx, hy, x, y):
                if service:
                    if _manhattan(x, y, px, py) == 1:
                        outcomes = ((0, 0, p),)
                    else:
                        outcomes = ((1, min(timer + 1, self.timer_cap), p),)
                elif arrival >= 1.0:
                    outcomes = ((1, 0, p),)
                elif arrival > 0.0:
                    outcomes = ((1, 0, p * arrival), (0, 0, p * (1.0 - arrival)))
                else:
                    outcomes = ((0, 0, p),)
                for new_service, new_timer, q in outcomes:
                    successor = (x, y, px, py, new_energy, new_service, new_timer, next_tick)
                    if self.label_velocity:
                        successor += (k,)
                    dist.append((successor, q))
            yield label, dist


def _start_states(cfg: GridConfig, label_velocity: bool) -> List[tuple]:
    if cfg.all_start_positions:
        cells = [(x, y) for y in range(cfg.height) for x in range(cfg.width)]
        pairs = [(r, h) for r in cells for h in cells if r != h]
    else:
        pairs = [(cfg.robot0, cfg.human0)]
    states = []
    for (rx, ry), (hx, hy) in pairs:
        for service in (1, 0):
            state = (rx, ry, hx, hy, cfg.capacity, service, 0, 0)
            if label_velocity:
                state += (0,)
            states.append(state)
    return states


def build_model(cfg: GridConfig, spec: SpecParams, label_velocity: bool = False,
                state_limit: Optional[int] = None) -> Mdp:
    """
    Build the robot/person MDP for one specification.

    Args:
        cfg: grid scenario
        spec: velocity and service-time bounds
        label_velocity: allow every speed up to MAX_VELOCITY and record the
            last speed in a 'speed' variable instead of pruning fast moves
        state_limit: abort with StateSpaceTooLarge beyond this many states

    Returns:
        Mdp whose initial set holds the starting placements with and without
        a pending request
    """
    started = time.perf_counter()
    dynamics = _Dynamics(cfg, spec, label_velocity)
    idle = dynamics.label_id(IDLE)
    dynamics.label_id(STAY)

    index: Dict[tuple, int] = {}
    rows: List[tuple] = []

    def intern(state) -> int:
        found = index.get(state)
        if found is None:
            if state_limit is not None and len(rows) >= state_limit:
                raise StateSpaceTooLarge(state_limit, len(rows))
            found = index[state] = len(rows)
            rows.append(state)
        return found

    initial = [intern(s) for s in _start_states(cfg, label_velocity)]

    action_offsets = array("q", [0])
    labels = array("i")
    transition_offsets = array("q", [0])
    targets = array("q")
    probs = array("d")

    cursor = 0
    while cursor < len(rows):
        state = rows[cursor]
        if dynamics.resolved(state):
            labels.append(idle)
            targets.append(cursor)
            probs.append(1.0)
            transition_offsets.append(len(targets))
        else:
            for label, dist in dynamics.successors(state):
                labels.append(label)
                for successor, p in dist:
                    targets.append(intern(successor))
                    probs.append(p)
                transition_offsets.append(len(targets))
        action_offsets.append(len(labels))
        cursor += 1

    label_table = sorted(dynamics.labels, key=dynamics.labels.get)
    mdp = Mdp.from_arrays(
        schema_for(cfg, spec, label_velocity),
        np.array(rows, dtype=np.int64),
        np.frombuffer(action_offsets, dtype=np.int64),
        np.frombuffer(labels, dtype=np.int32),
        np.frombuffer(transition_offsets, dtype=np.int64),
        np.frombuffer(targets, dtype=np.int64),
        np.frombuffer(probs, dtype=np.float64),
        initial,
        label_table=label_table,
    )
    logger.info(f"Built {cfg.width}x{cfg.height} model (capacity={cfg.capacity}, vmax={spec.vmax}, "
                f"tmax={spec.tmax}{', labelled' if label_velocity else ''}): {mdp.num_states} states, "
                f"{mdp.num_transitions} transitions in {time.perf_counter() - started:.2f}s")
    return mdp


def initial_states(cfg: GridConfig) -> StateFormula:
    """Starting-state condition: full battery, tick 0, distinct cells, fresh or no request."""
    return conj(
        disj(conj(eq("serviceHuman", 1), eq("serviceTimer", 0)), eq("serviceHuman", 0)),
        eq("energy", cfg.capacity),
        eq("tick", 0),
        disj(ne("robotX", "humanX"), ne("robotY", "humanY")),
    )


def property_query(cfg: GridConfig, spec: SpecParams, label_velocity: bool = False,
                   filter_mode: str = "min") -> Tuple[BoundedUntilQuery, FilterSpec]:
    """serviceHuman & specOK U<=horizon !serviceHuman & specOK, filtered over the starting states."""
    spec_ok = le("serviceTimer", spec.tmax)
    if label_velocity:
        spec_ok = conj(spec_ok, le("speed", spec.vmax))
    phi = conj(eq("serviceHuman", 1), spec_ok)
    psi = conj(eq("serviceHuman", 0), spec_ok)
    query = BoundedUntilQuery(phi, psi, cfg.horizon)
    return query, FilterSpec(filter_mode, initial_states(cfg))

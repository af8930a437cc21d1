"""
Independent back-ends used to cross-check the checker.

brute_force_pmax expands the full recursion tree of the bounded-until value
without memoization, and simulate_policy estimates the value of a fixed
policy by rollouts. Neither reuses the checker's induction code.
"""
from collections import deque
from typing import Iterable, List, Optional, Sequence, Set, Tuple, Union
import logging
import math

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.checker import BoundedUntilQuery, PolicyTable, pmax_bounded_until
from app.core.errors import MissingPolicyEntry, TreeSizeExceeded
from app.gridworld import (
    MAX_VELOCITY,
    GridConfig,
    SpecParams,
    build_model,
    domestic_lattice,
    property_query,
    spec_params,
)
from app.lattice import SpecLattice, SpecPoint
from app.mdp import Mdp

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_HORIZON = 8
MAX_TREE_NODES = 10_000_000
GENERATOR = "PCG64"


class SimulationReport(BaseModel):
    samples: int = Field(ge=1)
    successes: int = Field(ge=0)
    estimate: float
    std_error: float
    seed: int
    generator: str = GENERATOR

    @model_validator(mode="after")
    def _consistent(self):
        if self.successes > self.samples:
            raise ValueError(f"{self.successes} successes out of {self.samples} samples")
        return self

    @classmethod
    def from_counts(cls, samples: int, successes: int, seed: int) -> "SimulationReport":
        estimate = successes / samples
        return cls(
            samples=samples,
            successes=successes,
            estimate=estimate,
            std_error=math.sqrt(estimate * (1.0 - estimate) / samples),
            seed=seed,
        )


class _TreeWalker:
    """Evaluates the bounded-until recursion directly on the Mdp's action lists."""

    def __init__(self, mdp: Mdp, query: BoundedUntilQuery):
        self.mdp = mdp
        self.query = query
        self._sizes = {}
        # per-state lookups only; values themselves are never cached
        self._decided = {}
        self._actions = {}

    def decided(self, s: int) -> Optional[float]:
        if s not in self._decided:
            valuation = self.mdp.valuation(s)
            if self.query.psi.holds(valuation):
                self._decided[s] = 1.0
            elif not self.query.phi.holds(valuation):
                self._decided[s] = 0.0
            else:
                self._decided[s] = None
        return self._decided[s]

    def actions(self, s: int):
        if s not in self._actions:
            self._actions[s] = [dist for _, dist in self.mdp.actions(s)]
        return self._actions[s]

    def tree_size(self, s: int, k: int, limit: int) -> int:
        """Node count of the unmemoized recursion, capped just above limit."""
        key = (s, k)
        if key in self._sizes:
            return self._sizes[key]
        size = 1
        if k > 0 and self.decided(s) is None:
            for dist in self.actions(s):
                for t, _ in dist:
                    size += self.tree_size(t, k - 1, limit)
                    if size > limit:
                        break
                if size > limit:
                    break
        size = min(size, limit + 1)
        self._sizes[key] = size
        return size

    def value(self, s: int, k: int) -> float:
        known = self.decided(s)
        if known is not None:
            return known
        if k == 0:
            return 0.0
        best = 0.0
        for dist in self.actions(s):
            total = 0.0
            for t, p in dist:
                total += p * self.value(t, k - 1)
            if total > best:
                best = total
        return min(best, 1.0)


def brute_force_pmax(mdp: Mdp, query: BoundedUntilQuery, s: int,
                     node_limit: int = MAX_TREE_NODES) -> float:
    """
    Pmax of phi U<=horizon psi from state s by full tree expansion.

    Raises:
        ValueError: horizon above MAX_BRUTE_FORCE_HORIZON
        TreeSizeExceeded: recursion tree larger than node_limit
    """
    if query.horizon > MAX_BRUTE_FORCE_HORIZON:
        raise ValueError(f"Brute force supports horizons up to {MAX_BRUTE_FORCE_HORIZON}, got {query.horizon}")
    query.validate(mdp)
    walker = _TreeWalker(mdp, query)
    nodes = walker.tree_size(s, query.horizon, node_limit)
    if nodes > node_limit:
        raise TreeSizeExceeded(nodes, node_limit)
    return walker.value(s, query.horizon)


def simulate_policy(mdp: Mdp, policy: PolicyTable, query: BoundedUntilQuery, start: int,
                    n: int, seed: int) -> SimulationReport:
    """
    Estimate the probability of phi U<=horizon psi from start under policy.

    All n rollouts advance in lockstep; each step draws one uniform number per
    live rollout from a single PCG64 stream, so the result depends only on the
    inputs and the seed.

    Raises:
        MissingPolicyEntry: a live rollout reaches a (step, state) the policy
            does not cover
    """
    if n < 1:
        raise ValueError(f"Need at least one rollout, got {n}")
    if not 0 <= start < mdp.num_states:
        raise ValueError(f"Start state {start} outside [0, {mdp.num_states})")
    query.validate(mdp)
    psi = query.psi.mask(mdp.columns, mdp.num_states)
    phi = query.phi.mask(mdp.columns, mdp.num_states)
    rng = np.random.Generator(np.random.PCG64(seed))
    cumulative = np.cumsum(mdp.probs)
    offsets = mdp.transition_offsets

    state = np.full(n, start, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    for step in range(query.horizon + 1):
        reached = ~done & psi[state]
        success |= reached
        done |= reached
        done |= ~phi[state]
        live = np.flatnonzero(~done)
        if step == query.horizon or live.size == 0:
            break
        current = state[live]
        if step >= policy.choices.shape[0]:
            raise MissingPolicyEntry(step, int(current[0]))
        outside = current[current >= policy.choices.shape[1]]
        if outside.size:
            raise MissingPolicyEntry(step, int(outside[0]))
        local = policy.choices[step, current].astype(np.int64)
        bad = np.flatnonzero((local < 0) | (local >= mdp.actions_per_state[current]))
        if bad.size:
            raise MissingPolicyEntry(step, int(current[bad[0]]))
        actions = mdp.action_offsets[current] + local
        lo, hi = offsets[actions], offsets[actions + 1]
        base = np.where(lo > 0, cumulative[np.maximum(lo - 1, 0)], 0.0)
        draw = base + rng.random(live.size) * (cumulative[hi - 1] - base)
        picked = np.searchsorted(cumulative, draw, side="right")
        picked = np.clip(picked, lo, hi - 1)
        state[live] = mdp.targets[picked]

    report = SimulationReport.from_counts(n, int(success.sum()), seed)
    logger.info(f"Simulated {n} rollouts from state {start}: {report.estimate:.6g} "
                f"+/- {report.std_error:.2g} (seed {seed})")
    return report


def enumerate_reachable(mdp: Mdp, start: Union[int, Iterable[int]]) -> int:
    """Breadth-first count of states reachable from start, walking the action lists."""
    sources = [start] if isinstance(start, (int, np.integer)) else list(start)
    seen = set(int(s) for s in sources)
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        for _, dist in mdp.actions(s):
            for t, _ in dist:
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
    return len(seen)


def _cells_along(cfg: GridConfig, x: int, y: int, dx: int, dy: int, reach: int):
    """(cell, distance) pairs walking from (x, y) until the grid edge or reach cells."""
    k = 1
    while k <= reach and 0 <= x + dx * k < cfg.width and 0 <= y + dy * k < cfg.height:
        yield (x + dx * k, y + dy * k), k
        k += 1


def enumerate_grid_states(cfg: GridConfig, spec: SpecParams, label_velocity: bool = False) -> Set[tuple]:
    """
    Valuations reachable under the scenario rules, found without the model builder.

    Tuples follow the model's variable order (robotX, robotY, humanX, humanY,
    energy, serviceHuman, serviceTimer, tick[, speed]).
    """
    reach = MAX_VELOCITY if label_velocity else spec.vmax
    sx, sy = cfg.station
    steps = ((0, -1), (0, 1), (1, 0), (-1, 0))

    def robot_options(rx, ry, hx, hy, energy):
        if energy == 0:
            return [((rx, ry), 0)]
        options = [
            (cell, k)
            for dx, dy in steps
            for cell, k in _cells_along(cfg, rx, ry, dx, dy, reach)
            if cell != (hx, hy)
        ]
        if energy > cfg.min_energy or (rx, ry) == (sx, sy):
            return [((rx, ry), 0)] + options
        gap = abs(rx - sx) + abs(ry - sy)
        closer = [(c, k) for c, k in options if abs(c[0] - sx) + abs(c[1] - sy) < gap]
        if all(k > spec.vmax for _, k in closer):
            closer.append(((rx, ry), 0))
        return closer

    def person_options(hx, hy, robot):
        free = [(hx + dx, hy + dy) for dx, dy in steps
                if cfg.contains(hx + dx, hy + dy) and (hx + dx, hy + dy) != robot]
        if not free or cfg.human_stay_prob is None:
            return [(hx, hy)] + free
        stay = [(hx, hy)] if cfg.human_stay_prob > 0 else []
        return stay + (free if cfg.human_stay_prob < 1 else [])

    def request_options(service, timer, robot, person):
        if service:
            if abs(robot[0] - person[0]) + abs(robot[1] - person[1]) == 1:
                return [(0, 0)]
            return [(1, min(timer + 1, spec.tmax + 1))]
        return [(s, 0) for s, p in ((1, cfg.arrival_prob), (0, 1.0 - cfg.arrival_prob)) if p > 0]

    def decided(state) -> bool:
        if cfg.expand_resolved:
            return False
        speed_out = label_velocity and state[8] > spec.vmax
        return state[5] == 0 or state[6] > spec.tmax or speed_out

    if cfg.all_start_positions:
        cells = [(x, y) for x in range(cfg.width) for y in range(cfg.height)]
        placements = [(r, h) for r in cells for h in cells if r != h]
    else:
        placements = [(cfg.robot0, cfg.human0)]
    tail = (0,) if label_velocity else ()
    seen = {(*r, *h, cfg.capacity, service, 0, 0, *tail) for r, h in placements for service in (0, 1)}
    queue = deque(seen)
    while queue:
        state = queue.popleft()
        if decided(state):
            continue
        rx, ry, hx, hy, energy, service, timer, tick = state[:8]
        for robot, k in robot_options(rx, ry, hx, hy, energy):
            charge = cfg.capacity if robot == (sx, sy) else energy - min(k, 1)
            for person in person_options(hx, hy, robot):
                for new_service, new_timer in request_options(service, timer, robot, person):
                    successor = (*robot, *person, charge, new_service, new_timer,
                                 min(tick + 1, cfg.horizon), *((k,) if label_velocity else ()))
                    if successor not in seen:
                        seen.add(successor)
                        queue.append(successor)
    return seen


def state_space_diff(cfg: GridConfig, spec: SpecParams,
                     label_velocity: bool = False) -> Tuple[Set[tuple], Set[tuple]]:
    """
    Compare the built model's states with the rule-based enumeration.

    Returns:
        (states the builder missed, states the builder invented)
    """
    mdp = build_model(cfg, spec, label_velocity=label_velocity)
    built = {tuple(row) for row in mdp.values.tolist()}
    expected = enumerate_grid_states(cfg, spec, label_velocity)
    missing, extra = expected - built, built - expected
    if missing or extra:
        logger.error(f"State space of {cfg.width}x{cfg.height} model at vmax={spec.vmax}, tmax={spec.tmax} "
                     f"differs: {len(missing)} missing, {len(extra)} unexpected")
    return missing, extra


class Mismatch(BaseModel):
    indices: tuple
    state: int
    checker: float
    oracle: float


def cross_check(cfg: GridConfig, points: Optional[Sequence[SpecPoint]] = None,
                lattice: Optional[SpecLattice] = None, tolerance: float = 1e-9,
                node_limit: int = MAX_TREE_NODES) -> List[Mismatch]:
    """
    Compare checker and brute force at the initial states of small instances.

    Returns:
        Every (point, state) where the two differ by more than tolerance
    """
    lattice = lattice or domestic_lattice()
    points = list(points) if points is not None else list(lattice.points())
    mismatches = []
    for p in points:
        spec = spec_params(lattice, p)
        mdp = build_model(cfg, spec)
        query, _ = property_query(cfg, spec)
        values = pmax_bounded_until(mdp, query)
        for s in mdp.initial:
            expected = brute_force_pmax(mdp, query, int(s), node_limit)
            if abs(values[int(s)] - expected) > tolerance:
                logger.error(f"Oracle mismatch at {p}, state {mdp.describe(int(s))}: "
                             f"checker {values[int(s)]!r}, brute force {expected!r}")
                mismatches.append(Mismatch(indices=p.indices, state=int(s),
                                           checker=values[int(s)], oracle=expected))
    logger.info(f"Oracle cross-check over {len(points)} point(s): {len(mismatches)} mismatch(es)")
    return mismatches

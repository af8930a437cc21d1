"""
Lattices of weakened specifications.

A specification picks one level from each attribute chain. Level 1 is the
strongest (smallest admissible state set); a point with larger indices in
every chain admits a superset of states and is therefore a weakening.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from app.core.errors import MonotonicityViolation

logger = logging.getLogger(__name__)

MONOTONICITY_TOLERANCE = 1e-9


class Level(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    bound: int


class AttributeChain(BaseModel):
    """Totally ordered family of upper-bound constraints on one attribute."""
    model_config = ConfigDict(frozen=True)

    name: str
    levels: Tuple[Level, ...]

    @field_validator("levels")
    @classmethod
    def _strictly_weakening(cls, levels):
        if not levels:
            raise ValueError("An attribute chain needs at least one level")
        bounds = [level.bound for level in levels]
        if any(b >= c for b, c in zip(bounds, bounds[1:])):
            raise ValueError(f"Level bounds must strictly increase, got {bounds}")
        return levels

    @classmethod
    def upper_bounds(cls, name: str, prefix: str, bounds: Sequence[int]) -> "AttributeChain":
        """Chain 'name <= b' for each bound, labelled prefix1, prefix2, ..."""
        levels = tuple(Level(label=f"{prefix}{i}", bound=b) for i, b in enumerate(bounds, start=1))
        return cls(name=name, levels=levels)

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True, order=True)
class SpecPoint:
    indices: Tuple[int, ...]

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> int:
        return self.indices[i]

    def __str__(self) -> str:
        return "(" + ",".join(str(i) for i in self.indices) + ")"


def point(*indices: int) -> SpecPoint:
    return SpecPoint(tuple(int(i) for i in indices))


class SpecLattice(BaseModel):
    """Product of attribute chains."""
    model_config = ConfigDict(frozen=True)

    chains: Tuple[AttributeChain, ...]

    @field_validator("chains")
    @classmethod
    def _non_empty(cls, chains):
        if not chains:
            raise ValueError("A lattice needs at least one attribute chain")
        names = [c.name for c in chains]
        if len(set(names)) != len(names):
            raise ValueError(f"Chain names must be unique, got {names}")
        return chains

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.chains)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def top(self) -> SpecPoint:
        """Strongest specification."""
        return SpecPoint(tuple(1 for _ in self.chains))

    @property
    def bottom(self) -> SpecPoint:
        """Weakest specification."""
        return SpecPoint(self.shape)

    def points(self) -> Iterator[SpecPoint]:
        """All points in lexicographic order of indices."""
        for indices in product(*(range(1, n + 1) for n in self.shape)):
            yield SpecPoint(indices)

    def contains(self, p: SpecPoint) -> bool:
        return len(p) == len(self.chains) and all(1 <= i <= n for i, n in zip(p, self.shape))

    def check(self, p: SpecPoint) -> None:
        if not self.contains(p):
            raise ValueError(f"Point {p} is not in lattice of shape {self.shape}")

    def level(self, p: SpecPoint, chain: str) -> Level:
        self.check(p)
        for c, i in zip(self.chains, p):
            if c.name == chain:
                return c.levels[i - 1]
        raise KeyError(f"No chain named '{chain}'")

    def bounds(self, p: SpecPoint) -> Dict[str, int]:
        self.check(p)
        return {c.name: c.levels[i - 1].bound for c, i in zip(self.chains, p)}

    def label(self, p: SpecPoint) -> str:
        self.check(p)
        return " & ".join(c.levels[i - 1].label for c, i in zip(self.chains, p))


def weakening_leq(a: SpecPoint, b: SpecPoint) -> bool:
    """True iff a is b or a weakening of b (a admits a superset of b's states)."""
    if len(a) != len(b):
        raise ValueError(f"Dimension mismatch: {a} has {len(a)} indices, {b} has {len(b)}")
    return all(x >= y for x, y in zip(a, b))


def covers(lattice: SpecLattice, a: SpecPoint) -> set:
    """Immediate weakenings of a: one chain index raised by one."""
    lattice.check(a)
    result = set()
    for d, n in enumerate(lattice.shape):
        if a[d] < n:
            raised = list(a.indices)
            raised[d] += 1
            result.add(SpecPoint(tuple(raised)))
    return result


def strengthenings(a: SpecPoint) -> List[SpecPoint]:
    """Immediate strengthenings of a: one chain index lowered by one."""
    result = []
    for d, i in enumerate(a):
        if i > 1:
            lowered = list(a.indices)
            lowered[d] -= 1
            result.append(SpecPoint(tuple(lowered)))
    return result


@dataclass
class EvaluationGrid:
    lattice: SpecLattice
    values: Dict[SpecPoint, float] = field(default_factory=dict)
    scenario: Dict[str, object] = field(default_factory=dict)

    def __setitem__(self, p: SpecPoint, probability: float) -> None:
        self.lattice.check(p)
        if not -MONOTONICITY_TOLERANCE <= probability <= 1 + MONOTONICITY_TOLERANCE:
            raise ValueError(f"Probability {probability!r} for {p} is outside [0, 1]")
        self.values[p] = min(max(float(probability), 0.0), 1.0)

    def __getitem__(self, p: SpecPoint) -> float:
        return self.values[p]

    def __contains__(self, p: SpecPoint) -> bool:
        return p in self.values

    def __len__(self) -> int:
        return len(self.values)

    @property
    def complete(self) -> bool:
        return len(self.values) == self.lattice.size

    def matrix(self) -> np.ndarray:
        """Values as an array shaped like the lattice (index 1 at position 0); NaN where missing."""
        grid = np.full(self.lattice.shape, np.nan)
        for p, v in self.values.items():
            grid[tuple(i - 1 for i in p)] = v
        return grid

    @classmethod
    def from_matrix(cls, lattice: SpecLattice, matrix, scenario: Optional[Mapping[str, object]] = None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != lattice.shape:
            raise ValueError(f"Matrix shape {matrix.shape} does not match lattice {lattice.shape}")
        grid = cls(lattice, scenario=dict(scenario or {}))
        for p in lattice.points():
            grid[p] = matrix[tuple(i - 1 for i in p)]
        return grid


@dataclass(frozen=True)
class Frontier:
    """Antichain of least-weakened points meeting the threshold, strongest-first."""
    points: Tuple[SpecPoint, ...]
    rho: float
    probabilities: Dict[SpecPoint, float] = field(default_factory=dict, compare=False)

    def __iter__(self):
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __contains__(self, p) -> bool:
        return p in self.points


def frontier(grid: EvaluationGrid, rho: float) -> Frontier:
    """Strongest points of {p : grid(p) >= rho}."""
    if not grid.complete:
        raise ValueError(f"Grid covers {len(grid)} of {grid.lattice.size} points; use adaptive_explore")
    satisfying = sorted(p for p, v in grid.values.items() if v >= rho)
    if not satisfying:
        return Frontier((), rho)
    table = np.array([p.indices for p in satisfying])
    members = []
    for row, p in zip(table, satisfying):
        # some other satisfying point is strictly stronger than p
        dominated = np.all(table <= row, axis=1) & np.any(table < row, axis=1)
        if not dominated.any():
            members.append(p)
    return Frontier(tuple(members), rho, {p: grid[p] for p in members})


def monotonicity_violations(grid: EvaluationGrid, tolerance: float = MONOTONICITY_TOLERANCE):
    """Every comparable pair (weaker, stronger) whose values decrease on weakening."""
    found = []
    items = sorted(grid.values.items())
    for weaker, pw in items:
        for stronger, ps in items:
            if weaker != stronger and weakening_leq(weaker, stronger) and pw < ps - tolerance:
                found.append((weaker, stronger, pw, ps))
    return found


class ExplorationResult(NamedTuple):
    frontier: Frontier
    evaluations: int


class _StaircaseSearch:
    """
    Exact frontier search for monotone evaluators.

    A satisfying point certifies every weakening of it, a failing point every
    strengthening. Boxes of the index grid are settled by their corners when
    possible and otherwise split at their midpoint.
    """

    def __init__(self, lattice, evaluator, rho, cache, tolerance):
        self.lattice = lattice
        self.evaluator = evaluator
        self.rho = rho
        self.tolerance = tolerance
        self.values: Dict[SpecPoint, float] = cache if cache is not None else {}
        self.satisfying: List[Tuple[int, ...]] = []
        self.failing: List[Tuple[int, ...]] = []
        self.evaluations = 0
        for p, v in sorted(self.values.items()):
            (self.satisfying if v >= rho else self.failing).append(p.indices)

    def status(self, p: SpecPoint) -> Optional[bool]:
        if p in self.values:
            return self.values[p] >= self.rho
        if any(all(q <= i for q, i in zip(known, p)) for known in self.satisfying):
            return True
        if any(all(q >= i for q, i in zip(known, p)) for known in self.failing):
            return False
        return None

    def classify(self, p: SpecPoint) -> bool:
        known = self.status(p)
        if known is not None:
            return known
        value = float(self.evaluator(p))
        if not -MONOTONICITY_TOLERANCE <= value <= 1 + MONOTONICITY_TOLERANCE:
            raise ValueError(f"Evaluator returned {value!r} for {p}, outside [0, 1]")
        self.evaluations += 1
        for q, other in self.values.items():
            if weakening_leq(p, q) and value < other - self.tolerance:
                raise MonotonicityViolation(p, q, value, other)
            if weakening_leq(q, p) and other < value - self.tolerance:
                raise MonotonicityViolation(q, p, other, value)
        self.values[p] = value
        satisfied = value >= self.rho
        (self.satisfying if satisfied else self.failing).append(p.indices)
        logger.debug(f"Evaluated {p}: {value:.6g} ({'meets' if satisfied else 'misses'} {self.rho})")
        return satisfied

    def run(self) -> Frontier:
        stack = [(self.lattice.top.indices, self.lattice.bottom.indices)]
        while stack:
            lo, hi = stack.pop()
            if self.classify(SpecPoint(lo)) or lo == hi:
                continue
            if not self.classify(SpecPoint(hi)):
                continue
            mid = tuple((a + b) // 2 for a, b in zip(lo, hi))
            stack.extend(reversed(self._split(lo, hi, mid, self.classify(SpecPoint(mid)))))
        return self._frontier()

    @staticmethod
    def _split(lo, hi, mid, satisfied):
        """Boxes covering lo..hi minus the region settled by mid."""
        boxes = []
        for d in range(len(lo)):
            new_lo, new_hi = list(lo), list(hi)
            for e in range(d):
                if satisfied:
                    new_lo[e] = mid[e]
                else:
                    new_hi[e] = mid[e]
            if satisfied:
                new_hi[d] = mid[d] - 1
            else:
                new_lo[d] = mid[d] + 1
            if all(a <= b for a, b in zip(new_lo, new_hi)):
                boxes.append((tuple(new_lo), tuple(new_hi)))
        return boxes

    def _frontier(self) -> Frontier:
        members = []
        for p, v in sorted(self.values.items()):
            if v >= self.rho and not any(self.status(q) for q in strengthenings(p)):
                members.append(p)
        return Frontier(tuple(members), self.rho, {p: self.values[p] for p in members})


def adaptive_explore(
    lattice: SpecLattice,
    evaluator: Callable[[SpecPoint], float],
    rho: float,
    cache: Optional[Dict[SpecPoint, float]] = None,
    tolerance: float = MONOTONICITY_TOLERANCE,
) -> ExplorationResult:
    """
    Frontier for rho using as few evaluator calls as monotonicity allows.

    Args:
        lattice: lattice to search
        evaluator: probability of a point; must not decrease under weakening
        rho: threshold
        cache: values already known (filled in as points are evaluated); lets
            several thresholds share evaluations
        tolerance: slack allowed before a decrease counts as a violation

    Returns:
        ExplorationResult(frontier, evaluations) where evaluations counts new
        evaluator calls only

    Raises:
        MonotonicityViolation: two evaluated points contradict monotonicity
    """
    search = _StaircaseSearch(lattice, evaluator, rho, cache, tolerance)
    result = search.run()
    logger.info(f"Adaptive search for rho={rho}: {len(result)} frontier point(s), "
                f"{search.evaluations} evaluation(s) of {lattice.size}")
    return ExplorationResult(result, search.evaluations)

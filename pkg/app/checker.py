"""
Finite-horizon Pmax model checking for bounded until.

    x0(s) = 1 if s |= psi else 0
    xk(s) = 1                                    if s |= psi
            0                                    if s |/= phi and s |/= psi
            max_a sum_t P(s, a, t) * x(k-1)(t)   otherwise

Each step is one sparse matrix-vector product over all actions followed by a
segmented max per state, so results do not depend on how work is scheduled.
"""
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple
import logging

import numpy as np

from app.core.errors import EmptyFilterError, FormulaError
from app.formula import TRUE, StateFormula
from app.mdp import Mdp

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BoundedUntilQuery:
    phi: StateFormula
    psi: StateFormula
    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError(f"Horizon must be non-negative, got {self.horizon}")

    def validate(self, mdp: Mdp) -> None:
        self.phi.validate(mdp.schema.names)
        self.psi.validate(mdp.schema.names)

    def __str__(self) -> str:
        return f"Pmax=? [ {self.phi} U<={self.horizon} {self.psi} ]"


@dataclass(frozen=True)
class FilterSpec:
    mode: Literal["min", "average"] = "min"
    condition: StateFormula = TRUE

    def __post_init__(self):
        if self.mode not in ("min", "average"):
            raise ValueError(f"Unknown filter mode '{self.mode}'")

    def __str__(self) -> str:
        return f"filter({self.mode}, ..., {self.condition})"


@dataclass(frozen=True)
class ValueVector:
    values: np.ndarray
    horizon: int

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PolicyTable:
    """
    Step-indexed deterministic policy.

    choices[k, s] is the local action index taken in state s after k steps,
    i.e. with horizon - k steps remaining.
    """
    choices: np.ndarray
    horizon: int

    def action(self, step: int, s: int) -> int:
        return int(self.choices[step, s])

    def covers(self, step: int, s: int) -> bool:
        return 0 <= step < self.choices.shape[0] and 0 <= s < self.choices.shape[1]


@dataclass(frozen=True)
class CheckResult:
    values: ValueVector
    probability: float
    filter: FilterSpec = field(default_factory=FilterSpec)


def _masks(mdp: Mdp, query: BoundedUntilQuery) -> Tuple[np.ndarray, np.ndarray]:
    query.validate(mdp)
    psi = query.psi.mask(mdp.columns, mdp.num_states)
    maybe = query.phi.mask(mdp.columns, mdp.num_states) & ~psi
    return psi, maybe


def _induction(mdp: Mdp, query: BoundedUntilQuery, keep_policy: bool):
    psi, maybe = _masks(mdp, query)
    x = psi.astype(np.float64)
    matrix = mdp.matrix
    starts = mdp.action_offsets[:-1]
    state_of_action = mdp.state_of_action
    local_index = np.arange(mdp.num_actions) - mdp.action_offsets[state_of_action]
    sentinel = np.iinfo(np.int64).max

    choices = np.zeros((query.horizon, mdp.num_states), dtype=np.int32) if keep_policy else None
    for k in range(1, query.horizon + 1):
        q = matrix @ x
        best = np.maximum.reduceat(q, starts)
        if keep_policy:
            # first action reaching the maximum (lowest index wins ties)
            hit = q == best[state_of_action]
            first = np.minimum.reduceat(np.where(hit, local_index, sentinel), starts)
            choices[query.horizon - k] = np.where(maybe, first, 0)
        x = np.where(psi, 1.0, np.where(maybe, best, 0.0))
        x = np.clip(x, 0.0, 1.0)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Step {k}/{query.horizon}: max value {x.max():.6g}")
    return x, choices


def pmax_bounded_until(mdp: Mdp, query: BoundedUntilQuery) -> ValueVector:
    """Maximum probability, per state, of phi U<=horizon psi."""
    values, _ = _induction(mdp, query, keep_policy=False)
    values.flags.writeable = False
    return ValueVector(values, query.horizon)


def extract_policy(mdp: Mdp, query: BoundedUntilQuery) -> PolicyTable:
    """Optimal step-indexed policy; states already decided record action 0."""
    _, choices = _induction(mdp, query, keep_policy=True)
    choices.flags.writeable = False
    return PolicyTable(choices, query.horizon)


def filter_states(values: ValueVector, f: FilterSpec, mdp: Mdp) -> np.ndarray:
    f.condition.validate(mdp.schema.names)
    if len(values) != mdp.num_states:
        raise ValueError(f"Value vector has {len(values)} entries, model has {mdp.num_states} states")
    return np.flatnonzero(f.condition.mask(mdp.columns, mdp.num_states))


def filter_apply(values: ValueVector, f: FilterSpec, mdp: Mdp) -> float:
    """Minimum or unweighted mean of the values of states satisfying f.condition."""
    selected = filter_states(values, f, mdp)
    if selected.size == 0:
        raise EmptyFilterError(str(f.condition))
    chosen = values.values[selected]
    if f.mode == "min":
        return float(chosen.min())
    return float(chosen.mean())


def check(mdp: Mdp, query: BoundedUntilQuery, f: Optional[FilterSpec] = None) -> CheckResult:
    """pmax_bounded_until followed by filter_apply."""
    f = f or FilterSpec("min", TRUE)
    try:
        values = pmax_bounded_until(mdp, query)
    except FormulaError:
        logger.error(f"Query {query} does not fit the model schema {mdp.schema.names}")
        raise
    probability = filter_apply(values, f, mdp)
    logger.info(f"Checked {query} over {mdp.num_states} states: {f.mode} = {probability:.6g}")
    return CheckResult(values, probability, f)

"""
Explicit-state Markov decision processes over bounded integer variables.

An Mdp stores its states as a valuation table (one row per state, one column
per schema variable) and its transition structure in CSR form:

    action_offsets[s] : action_offsets[s+1]          actions enabled in state s
    transition_offsets[a] : transition_offsets[a+1]  distribution of action a

Action indices inside a state are "local" (0, 1, ...); global action indices
address the flat arrays. Mdp objects are read-only once built.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, TextIO, Tuple, Union
import logging

import numpy as np
from scipy import sparse

from app.core.errors import ModelError
from app.formula import StateFormula

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-9
STALL = "stall"


@dataclass(frozen=True)
class Variable:
    name: str
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


class VariableSchema:
    """Ordered list of integer variables with inclusive ranges."""

    def __init__(self, variables: Iterable[Union[Variable, Tuple[str, int, int]]]):
        items = tuple(v if isinstance(v, Variable) else Variable(*v) for v in variables)
        if not items:
            raise ModelError("Schema needs at least one variable")
        names = [v.name for v in items]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ModelError(f"Duplicate variable name(s): {', '.join(duplicates)}")
        for v in items:
            if not v.name.isidentifier():
                raise ModelError(f"Variable name '{v.name}' is not an identifier")
            if v.lo > v.hi:
                raise ModelError(f"Variable '{v.name}' has empty domain [{v.lo}, {v.hi}]")
        self.variables = items
        self.names = tuple(names)
        self.lows = np.array([v.lo for v in items], dtype=np.int64)
        self.highs = np.array([v.hi for v in items], dtype=np.int64)
        sizes = self.highs - self.lows + 1
        # row-major: the last variable varies fastest
        strides = np.ones(len(items), dtype=np.int64)
        for i in range(len(items) - 2, -1, -1):
            strides[i] = strides[i + 1] * sizes[i + 1]
        self.sizes = sizes
        self.strides = strides
        self.cardinality = int(strides[0] * sizes[0])

    def __len__(self) -> int:
        return len(self.variables)

    def __eq__(self, other) -> bool:
        return isinstance(other, VariableSchema) and self.variables == other.variables

    def __hash__(self) -> int:
        return hash(self.variables)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def as_row(self, valuation: Union[Mapping[str, int], Sequence[int]]) -> Tuple[int, ...]:
        if isinstance(valuation, Mapping):
            missing = [n for n in self.names if n not in valuation]
            if missing:
                raise ModelError(f"Valuation is missing variable(s) {', '.join(missing)}")
            return tuple(int(valuation[n]) for n in self.names)
        row = tuple(int(v) for v in valuation)
        if len(row) != len(self.names):
            raise ModelError(f"Valuation has {len(row)} values, schema has {len(self.names)} variables")
        return row

    def encode(self, valuation) -> int:
        row = np.asarray(self.as_row(valuation), dtype=np.int64)
        return int(((row - self.lows) * self.strides).sum())

    def encode_many(self, table: np.ndarray) -> np.ndarray:
        return (table - self.lows) @ self.strides

    def decode(self, code: int) -> Tuple[int, ...]:
        code = int(code)
        if not 0 <= code < self.cardinality:
            raise ModelError(f"Code {code} outside schema of {self.cardinality} valuations")
        values = []
        for stride, lo in zip(self.strides, self.lows):
            digit, code = divmod(code, int(stride))
            values.append(int(lo) + digit)
        return tuple(values)

    def describe(self, row: Sequence[int]) -> str:
        return ", ".join(f"{n}={int(v)}" for n, v in zip(self.names, row))


Initial = Union[StateFormula, Callable[[Dict[str, int]], bool], Iterable[int]]


class Mdp:
    """Validated, immutable explicit MDP. Construct with build() or Mdp.from_arrays()."""

    def __init__(self, schema, values, action_offsets, action_labels, label_table,
                 transition_offsets, targets, probs, initial, diagnostics):
        self.schema = schema
        self.values = values
        self.action_offsets = action_offsets
        self.action_labels = action_labels
        self.label_table = label_table
        self.transition_offsets = transition_offsets
        self.targets = targets
        self.probs = probs
        self.initial = initial
        self.diagnostics = diagnostics
        for array in (values, action_offsets, action_labels, transition_offsets, targets, probs, initial):
            array.flags.writeable = False
        self._codes = schema.encode_many(values)
        self._code_order = np.argsort(self._codes, kind="stable")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        schema: VariableSchema,
        values,
        action_offsets,
        action_labels,
        transition_offsets,
        targets,
        probs,
        initial,
        label_table: Optional[Sequence[str]] = None,
    ) -> "Mdp":
        """
        Build and validate an Mdp from flat arrays.

        Args:
            schema: variable schema
            values: (n_states, n_vars) valuation table
            action_offsets: n_states + 1 offsets into the action arrays
            action_labels: label per action; strings, or ids into label_table
            transition_offsets: n_actions + 1 offsets into targets/probs
            targets, probs: flat distribution entries
            initial: state ids of the initial set
            label_table: names for integer action labels
        """
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise ModelError(f"Valuation table must have shape (n, {len(schema)}), got {values.shape}")
        n_states = values.shape[0]
        if n_states == 0:
            raise ModelError("Model has no states")
        action_offsets = np.asarray(action_offsets, dtype=np.int64)
        transition_offsets = np.asarray(transition_offsets, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)

        if label_table is None:
            label_table, action_labels = _intern_labels(action_labels)
        label_table = tuple(label_table)
        action_labels = np.asarray(action_labels, dtype=np.int32)

        if action_offsets.shape != (n_states + 1,) or action_offsets[0] != 0 or np.any(np.diff(action_offsets) < 0):
            raise ModelError("action_offsets must be non-decreasing, start at 0 and have one entry per state plus one")
        n_actions = int(action_offsets[-1])
        if action_labels.shape != (n_actions,):
            raise ModelError(f"Expected {n_actions} action labels, got {action_labels.shape[0]}")
        if transition_offsets.shape != (n_actions + 1,) or transition_offsets[0] != 0:
            raise ModelError("transition_offsets must start at 0 and have one entry per action plus one")
        if targets.shape != probs.shape or targets.shape != (int(transition_offsets[-1]),):
            raise ModelError("targets and probs must both cover every transition")

        _check_ranges(schema, values)
        _check_duplicates(schema, values)

        diagnostics: List[Tuple[int, str]] = []
        dead = np.flatnonzero(np.diff(action_offsets) == 0)
        if dead.size:
            if STALL not in label_table:
                label_table = label_table + (STALL,)
            stall_id = label_table.index(STALL)
            action_offsets, action_labels, transition_offsets, targets, probs = _insert_stalls(
                dead, action_offsets, action_labels, transition_offsets, targets, probs, stall_id)
            for s in dead:
                diagnostics.append((int(s), "no enabled actions; added stall self-loop"))
            logger.warning(f"{dead.size} deadlock state(s) received a '{STALL}' self-loop")

        _check_distributions(schema, values, action_offsets, action_labels, label_table,
                             transition_offsets, targets, probs)

        initial = np.unique(np.asarray(list(initial), dtype=np.int64))
        if initial.size == 0:
            raise ModelError("Initial state set is empty")
        if initial[0] < 0 or initial[-1] >= n_states:
            raise ModelError(f"Initial state ids must lie in [0, {n_states})")

        return cls(schema, values, action_offsets, action_labels, label_table,
                   transition_offsets, targets, probs, initial, tuple(diagnostics))

    # -- sizes ------------------------------------------------------------

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return int(self.action_offsets[-1])

    @property
    def num_transitions(self) -> int:
        return int(self.transition_offsets[-1])

    # -- derived structure --------------------------------------------------

    @cached_property
    def columns(self) -> Dict[str, np.ndarray]:
        return {name: self.values[:, i] for i, name in enumerate(self.schema.names)}

    @cached_property
    def actions_per_state(self) -> np.ndarray:
        return np.diff(self.action_offsets)

    @cached_property
    def state_of_action(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_states), self.actions_per_state)

    @cached_property
    def action_of_transition(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_actions), np.diff(self.transition_offsets))

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Action-by-state probability matrix; row a is the distribution of action a."""
        return sparse.csr_matrix(
            (self.probs, self.targets, self.transition_offsets),
            shape=(self.num_actions, self.num_states),
        )

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """State-by-state successor relation (any action, positive probability)."""
        sources = self.state_of_action[self.action_of_transition]
        data = np.ones(self.num_transitions, dtype=np.int8)
        graph = sparse.csr_matrix((data, (sources, self.targets)), shape=(self.num_states, self.num_states))
        graph.sum_duplicates()
        return graph

    # -- per-state access ---------------------------------------------------

    def valuation(self, s: int) -> Dict[str, int]:
        self._check_state(s)
        return {name: int(v) for name, v in zip(self.schema.names, self.values[s])}

    def describe(self, s: int) -> str:
        self._check_state(s)
        return self.schema.describe(self.values[s])

    def state_id(self, valuation) -> int:
        """StateId of a valuation (mapping or sequence in schema order)."""
        code = self.schema.encode(valuation)
        pos = np.searchsorted(self._codes, code, sorter=self._code_order)
        if pos < self.num_states and self._codes[self._code_order[pos]] == code:
            return int(self._code_order[pos])
        raise ModelError(f"No state with valuation ({self.schema.describe(self.schema.as_row(valuation))})")

    def encode(self, s: int) -> int:
        """Row-major code of state s under the schema."""
        return int(self._codes[s])

    def action_label(self, s: int, local: int) -> str:
        return self.label_table[self.action_labels[self._global_action(s, local)]]

    def actions(self, s: int) -> List[Tuple[str, List[Tuple[int, float]]]]:
        """Enabled actions of s as (label, [(target, prob), ...])."""
        self._check_state(s)
        result = []
        for a in range(self.action_offsets[s], self.action_offsets[s + 1]):
            lo, hi = self.transition_offsets[a], self.transition_offsets[a + 1]
            dist = [(int(t), float(p)) for t, p in zip(self.targets[lo:hi], self.probs[lo:hi])]
            result.append((self.label_table[self.action_labels[a]], dist))
        return result

    def _global_action(self, s: int, local: int) -> int:
        self._check_state(s)
        count = int(self.action_offsets[s + 1] - self.action_offsets[s])
        if not 0 <= local < count:
            raise ModelError(f"State {s} has {count} action(s); index {local} is not enabled")
        return int(self.action_offsets[s] + local)

    def _check_state(self, s: int) -> None:
        if not 0 <= s < self.num_states:
            raise ModelError(f"State id {s} outside [0, {self.num_states})")

    # -- checks and debugging -------------------------------------------------

    def validate(self) -> None:
        """Re-run the structural checks made at construction time."""
        _check_ranges(self.schema, self.values)
        _check_duplicates(self.schema, self.values)
        _check_distributions(self.schema, self.values, self.action_offsets, self.action_labels,
                             self.label_table, self.transition_offsets, self.targets, self.probs)
        decoded = (self._codes[:, None] // self.schema.strides) % self.schema.sizes + self.schema.lows
        mismatch = np.flatnonzero((decoded != self.values).any(axis=1))
        if mismatch.size:
            raise ModelError(f"Encoding round trip fails for state {int(mismatch[0])}")

    def dump(self, stream: TextIO) -> None:
        """One tab-separated line per (state, action, target, prob). Debug aid, not a stable format."""
        for s in range(self.num_states):
            source = self.describe(s)
            for label, dist in self.actions(s):
                for t, p in dist:
                    stream.write(f"{source}\t{label}\t{self.describe(t)}\t{p!r}\n")

    def __repr__(self) -> str:
        return (f"Mdp(states={self.num_states}, actions={self.num_actions}, "
                f"transitions={self.num_transitions}, initial={self.initial.size})")


def build(
    schema: VariableSchema,
    states: Sequence[Union[Mapping[str, int], Sequence[int]]],
    actions: Sequence[Sequence[Tuple[str, Sequence[Tuple[int, float]]]]],
    initial: Initial,
) -> Mdp:
    """
    Build a validated Mdp from Python lists.

    Args:
        schema: variable schema
        states: one valuation per state; its position is the StateId
        actions: per state, a list of (label, [(target StateId, prob), ...])
        initial: StateFormula, predicate over valuation dicts, or StateIds

    States without actions receive a 'stall' self-loop, listed in
    Mdp.diagnostics.
    """
    if len(actions) != len(states):
        raise ModelError(f"Got {len(states)} states but action lists for {len(actions)}")
    values = np.array([schema.as_row(v) for v in states], dtype=np.int64).reshape(len(states), len(schema))

    action_offsets = [0]
    labels: List[str] = []
    transition_offsets = [0]
    targets: List[int] = []
    probs: List[float] = []
    for state_actions in actions:
        for label, dist in state_actions:
            labels.append(label)
            for target, prob in dist:
                targets.append(int(target))
                probs.append(float(prob))
            transition_offsets.append(len(targets))
        action_offsets.append(len(labels))

    if isinstance(initial, StateFormula):
        initial.validate(schema.names)
        columns = {name: values[:, i] for i, name in enumerate(schema.names)}
        initial_ids = np.flatnonzero(initial.mask(columns, len(states)))
    elif callable(initial):
        initial_ids = [i for i, row in enumerate(values)
                       if initial({n: int(v) for n, v in zip(schema.names, row)})]
    else:
        initial_ids = list(initial)

    return Mdp.from_arrays(schema, values, action_offsets, labels, transition_offsets,
                           targets, probs, initial_ids)


def reachable(mdp: Mdp, sources: Iterable[int]) -> Set[int]:
    """Forward closure of `sources` under every enabled action and positive-probability transition."""
    sources = np.unique(np.asarray(list(sources), dtype=np.int64))
    if sources.size and (sources[0] < 0 or sources[-1] >= mdp.num_states):
        raise ModelError(f"Source states must lie in [0, {mdp.num_states})")
    seen = np.zeros(mdp.num_states, dtype=bool)
    seen[sources] = True
    frontier = sources
    graph = mdp.adjacency
    while frontier.size:
        successors = np.unique(graph[frontier].indices)
        frontier = successors[~seen[successors]]
        seen[frontier] = True
    return set(np.flatnonzero(seen).tolist())


def eval_formula(mdp: Mdp, s: int, formula: StateFormula) -> bool:
    """Truth of `formula` in state s."""
    return formula.holds(mdp.valuation(s))


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _intern_labels(labels: Sequence[str]):
    table: Dict[str, int] = {}
    ids = [table.setdefault(label, len(table)) for label in labels]
    return tuple(table), ids


def _check_ranges(schema: VariableSchema, values: np.ndarray) -> None:
    bad = (values < schema.lows) | (values > schema.highs)
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        var = schema.variables[col]
        raise ModelError(
            f"State ({schema.describe(values[row])}): {var.name}={int(values[row, col])} "
            f"outside [{var.lo}, {var.hi}]"
        )


def _check_duplicates(schema: VariableSchema, values: np.ndarray) -> None:
    codes = schema.encode_many(values)
    unique, counts = np.unique(codes, return_counts=True)
    if (counts > 1).any():
        row = schema.decode(int(unique[np.argmax(counts > 1)]))
        raise ModelError(f"Duplicate state valuation ({schema.describe(row)})")


def _check_distributions(schema, values, action_offsets, action_labels, label_table,
                         transition_offsets, targets, probs) -> None:
    n_states = values.shape[0]
    n_actions = int(action_offsets[-1])
    state_of_action = np.repeat(np.arange(n_states), np.diff(action_offsets))

    def where(a: int) -> str:
        s = int(state_of_action[a])
        return f"State ({schema.describe(values[s])}): action '{label_table[action_labels[a]]}'"

    sizes = np.diff(transition_offsets)
    if (sizes < 0).any():
        raise ModelError("transition_offsets must be non-decreasing")
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise ModelError(f"{where(int(empty[0]))} has an empty distribution")
    bad_target = np.flatnonzero((targets < 0) | (targets >= n_states))
    if bad_target.size:
        a = int(np.searchsorted(transition_offsets, bad_target[0], side="right") - 1)
        raise ModelError(f"{where(a)} targets unknown state id {int(targets[bad_target[0]])}")
    bad_prob = np.flatnonzero(~(probs > 0) | ~np.isfinite(probs))
    if bad_prob.size:
        a = int(np.searchsorted(transition_offsets, bad_prob[0], side="right") - 1)
        raise ModelError(f"{where(a)} has non-positive probability {float(probs[bad_prob[0]])!r}")
    if n_actions:
        sums = np.add.reduceat(probs, transition_offsets[:-1])
        off = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOLERANCE)
        if off.size:
            a = int(off[0])
            raise ModelError(f"{where(a)} probabilities sum to {float(sums[a]):.12g}")
        action_of_transition = np.repeat(np.arange(n_actions), sizes)
        keys = np.sort(action_of_transition * n_states + targets)
        repeated = np.flatnonzero(keys[1:] == keys[:-1])
        if repeated.size:
            a = int(keys[repeated[0]] // n_states)
            t = int(keys[repeated[0]] % n_states)
            raise ModelError(f"{where(a)} lists target ({schema.describe(values[t])}) more than once")


def _insert_stalls(dead, action_offsets, action_labels, transition_offsets, targets, probs, stall_id):
    """Give every state in `dead` a single self-loop action."""
    counts = np.diff(action_offsets)
    new_counts = counts.copy()
    new_counts[dead] = 1
    new_action_offsets = np.concatenate(([0], np.cumsum(new_counts)))
    n_new = int(new_action_offsets[-1])

    is_stall = np.zeros(n_new, dtype=bool)
    is_stall[new_action_offsets[dead]] = True
    old_positions = np.flatnonzero(~is_stall)

    new_labels = np.empty(n_new, dtype=np.int32)
    new_labels[old_positions] = action_labels
    new_labels[is_stall] = stall_id

    old_sizes = np.diff(transition_offsets)
    new_sizes = np.ones(n_new, dtype=np.int64)
    new_sizes[old_positions] = old_sizes
    new_transition_offsets = np.concatenate(([0], np.cumsum(new_sizes)))

    new_targets = np.empty(int(new_transition_offsets[-1]), dtype=np.int64)
    new_probs = np.empty_like(new_targets, dtype=np.float64)
    shift = np.repeat(new_transition_offsets[old_positions] - transition_offsets[:-1], old_sizes)
    moved = np.arange(targets.size) + shift
    new_targets[moved] = targets
    new_probs[moved] = probs
    stall_slots = new_transition_offsets[:-1][is_stall]
    new_targets[stall_slots] = dead
    new_probs[stall_slots] = 1.0
    return new_action_offsets, new_labels, new_transition_offsets, new_targets, new_probs

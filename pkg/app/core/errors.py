"""
Exception hierarchy for the explorer.
Errors caused by bad input also derive from ValueError so callers can treat
them the way they treat any other validation failure.
"""
from typing import Optional, Sequence


class ExplorerError(Exception):
    """Base class for every error raised by the explorer."""


class ModelError(ExplorerError, ValueError):
    """The MDP handed to build() or from_arrays() is not well formed."""


class StateSpaceTooLarge(ModelError):
    def __init__(self, limit: int, reached: int):
        self.limit = limit
        self.reached = reached
        super().__init__(
            f"State space exceeded {limit} states ({reached} discovered so far); "
            f"reduce the grid, the horizon or the capacity, or raise EXPLORER_STATE_LIMIT"
        )


class FormulaError(ExplorerError, ValueError):
    """Unknown variable or unparsable formula text."""


class EmptyFilterError(ExplorerError, ValueError):
    def __init__(self, condition: str):
        self.condition = condition
        super().__init__(f"Filter condition selects no state: {condition}")


class MonotonicityViolation(ExplorerError):
    """An evaluation got lower after weakening the specification."""

    def __init__(self, weaker: Sequence[int], stronger: Sequence[int],
                 weaker_probability: float, stronger_probability: float):
        self.weaker = tuple(weaker)
        self.stronger = tuple(stronger)
        self.weaker_probability = weaker_probability
        self.stronger_probability = stronger_probability
        super().__init__(
            f"Monotonicity violated: {self.weaker} is a weakening of {self.stronger} "
            f"but {weaker_probability:.12g} < {stronger_probability:.12g}"
        )


class TreeSizeExceeded(ExplorerError):
    def __init__(self, nodes: int, limit: int):
        self.nodes = nodes
        self.limit = limit
        super().__init__(f"Brute-force recursion tree has {nodes} nodes, limit is {limit}")


class MissingPolicyEntry(ExplorerError, KeyError):
    def __init__(self, step: int, state: int):
        self.step = step
        self.state = state
        super().__init__(f"Policy has no entry for step {step}, state {state}")

    def __str__(self) -> str:
        return self.args[0]


class SweepError(ExplorerError):
    """Failure while evaluating one (swept value, spec point) pair."""

    def __init__(self, swept_value: int, indices: Sequence[int], cause: BaseException):
        self.swept_value = swept_value
        self.indices = tuple(indices)
        super().__init__(f"Check failed for swept value {swept_value}, point {self.indices}: {cause}")


class OutputError(ExplorerError, OSError):
    def __init__(self, path, cause: Optional[BaseException] = None):
        self.path = str(path)
        detail = f": {cause}" if cause else ""
        super().__init__(f"Could not write {self.path}{detail}")

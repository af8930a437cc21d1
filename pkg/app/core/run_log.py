"""
Run log for model-check invocations.
Every check made during a sweep is recorded so runtimes and evaluation counts
can be audited after the fact.
"""
from pydantic import BaseModel
from typing import List, Literal, Optional, Sequence, Tuple
import logging

logger = logging.getLogger(__name__)


class CheckRecord(BaseModel):
    swept_value: int
    indices: Tuple[int, ...]
    probability: float
    states: int
    kind: Literal["exhaustive", "adaptive", "oracle"] = "exhaustive"
    wall_ms: Optional[float] = None

    def sort_key(self):
        return (self.kind, self.swept_value, self.indices)


class RunLog:
    """Append-only collection of CheckRecords."""

    def __init__(self):
        self.records: List[CheckRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def count(self, swept_value: Optional[int] = None) -> int:
        if swept_value is None:
            return len(self.records)
        return sum(1 for r in self.records if r.swept_value == swept_value)

    def sorted(self, order: Sequence[int] = ()) -> List[CheckRecord]:
        """Records in swept-value order (as given), then by point."""
        rank = {value: i for i, value in enumerate(order)}
        return sorted(
            self.records,
            key=lambda r: (rank.get(r.swept_value, len(rank)), r.swept_value, r.indices, r.kind),
        )


def log_check(
    run_log: RunLog,
    swept_value: int,
    indices: Sequence[int],
    probability: float,
    states: int,
    kind: str = "exhaustive",
    wall_ms: Optional[float] = None,
) -> Optional[CheckRecord]:
    """
    Record one model check.

    Returns:
        The CheckRecord, or None if recording failed
    """
    try:
        record = CheckRecord(
            swept_value=swept_value,
            indices=tuple(indices),
            probability=probability,
            states=states,
            kind=kind,
            wall_ms=wall_ms,
        )
        run_log.records.append(record)
        logger.debug(f"Check {kind} value={swept_value} point={tuple(indices)} p={probability:.6g} ({states} states)")
        return record
    except Exception as e:
        logger.error(f"Error recording check: {str(e)}")
        # Don't raise - a lost log row shouldn't abort the sweep
        return None

# app/core/clock.py
"""
Clock helpers for run logs and output headers.
Wall time is measured with a monotonic counter; timestamps are always UTC.
"""
from datetime import datetime, timezone
from typing import Optional
import time


def now_utc() -> datetime:
    """Get current datetime in UTC."""
    return datetime.now(timezone.utc)


def to_utc(dt: datetime) -> datetime:
    """Convert a datetime to UTC, assuming UTC when it has no timezone."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def timestamp_line(dt: Optional[datetime] = None) -> str:
    """Comment line placed at the top of generated CSV files."""
    dt = to_utc(dt or now_utc())
    return f"# generated {dt.strftime('%Y-%m-%dT%H:%M:%SZ')}"


class Stopwatch:
    """Context manager measuring elapsed wall time in milliseconds."""

    def __init__(self):
        self._start = None
        self.elapsed_ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed_ms = (time.perf_counter() - self._start) * 1000.0
        return False

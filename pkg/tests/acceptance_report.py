"""Collects one verdict line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

LINES: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str, limit_s: float | None = None, started: float | None = None):
    """Time a criterion body; record PASS or FAIL and re-raise failures.

    ``started`` lets shared fixture work count toward the runtime budget.
    """
    t0 = time.perf_counter() if started is None else started
    notes: dict = {}
    try:
        yield notes
    except AssertionError as exc:
        elapsed = time.perf_counter() - t0
        LINES[number] = f"FAIL criterion {number} ({title}) {elapsed:.1f}s: {exc}"
        raise
    elapsed = time.perf_counter() - t0
    detail = " ".join(f"{k}={v}" for k, v in notes.items())
    if limit_s is not None and elapsed >= limit_s:
        LINES[number] = f"FAIL criterion {number} ({title}) {elapsed:.1f}s exceeds {limit_s:.0f}s {detail}"
        raise AssertionError(LINES[number])
    LINES[number] = f"PASS criterion {number} ({title}) {elapsed:.1f}s {detail}".rstrip()

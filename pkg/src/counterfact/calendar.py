"""Week/day bookkeeping for the analysis window.

Conventions used throughout the package:

- Weeks are numbered 1..M. Week t covers window days 7*(t-1) .. 7*t-1,
  where day 0 is the calendar anchor (the first day of week 1).
- The sentinel week M+1 encodes "dose never received within the window".
- Arrays are 0-indexed: week t lives at index t-1.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta


@dataclass(frozen=True)
class WeekGrid:
    """Calendar anchoring of the M analysis weeks."""

    anchor: date  # first day of week 1
    n_weeks: int  # M

    def __post_init__(self) -> None:
        if self.n_weeks < 1:
            raise ValueError(f"need at least one week, got {self.n_weeks}")

    @property
    def n_days(self) -> int:
        return 7 * self.n_weeks

    @property
    def sentinel(self) -> int:
        """Week value meaning "never received"."""
        return self.n_weeks + 1

    def week_start(self, week: int) -> date:
        """First calendar day of week `week` (1-based)."""
        self._check_week(week)
        return self.anchor + timedelta(days=7 * (week - 1))

    def week_start_day(self, week: int) -> int:
        """First window-day index of week `week`."""
        self._check_week(week)
        return 7 * (week - 1)

    def week_of_day(self, day: int) -> int:
        """Week containing window day `day` (day 0 is in week 1)."""
        if not 0 <= day < self.n_days:
            raise ValueError(f"day {day} outside window 0..{self.n_days - 1}")
        return day // 7 + 1

    def week_of_date(self, d: date) -> int:
        offset = (d - self.anchor).days
        if not 0 <= offset < self.n_days:
            raise ValueError(f"date {d} outside analysis window")
        return offset // 7 + 1

    def week_dates(self) -> list[date]:
        return [self.anchor + timedelta(days=7 * i) for i in range(self.n_weeks)]

    def day_of_date(self, d: date) -> int:
        offset = (d - self.anchor).days
        if not 0 <= offset < self.n_days:
            raise ValueError(f"date {d} outside analysis window")
        return offset

    def weeks_between(self, start: date, end: date) -> list[int]:
        """Weeks whose first day falls in [start, end] (both inclusive).

        Used for wave windows, whose published endpoints align with week
        starts. Returns an empty list when the range misses the window.
        """
        weeks = []
        for t in range(1, self.n_weeks + 1):
            if start <= self.week_start(t) <= end:
                weeks.append(t)
        return weeks

    def _check_week(self, week: int) -> None:
        if not 1 <= week <= self.n_weeks + 1:
            raise ValueError(f"week {week} outside 1..{self.n_weeks + 1}")

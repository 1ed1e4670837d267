"""Dataset schema: age groups, observed tables and their invariants.

Array shape conventions (A age groups, M weeks, vaccination status v):

- ``cases``        (A, M)        weekly reported cases C_a(t)
- ``severe_counts``(4, A, M)     severe cases per status stratum, v = 0..3
- ``severe_pops``  (4, A, M)     persons in each (v, a, t) stratum
- ``dose_counts``  (3, A, M)     newly administered dose-i counts, i = 1..3
- ``vacc_fractions`` (4, A, M)   population fraction with exactly v doses
- ``waning_dist``  (3, A, M, M)  P(W = w | V = v, A = a, T = t), w = 0..M-1

Severe strata are stored as (count, population) pairs rather than ratios so
that empty strata stay representable; estimators decide how to treat them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from counterfact.calendar import WeekGrid

AGE_LABELS = (
    "0-19",
    "20-29",
    "30-39",
    "40-49",
    "50-59",
    "60-69",
    "70-79",
    "80-89",
    "90+",
)
REFERENCE_AGE_LABEL = "60-69"

CLOSURE_TOL = 1e-9


class DataError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        ctx = ""
        if source is not None:
            ctx = f" [{source}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + ctx)
        self.source = source
        self.line = line


@dataclass(frozen=True)
class AgeGroup:
    index: int
    label: str
    population: float

    def __post_init__(self) -> None:
        if self.population <= 0:
            raise DataError(f"age group {self.label!r} has non-positive population")


def total_population(groups: Sequence[AgeGroup]) -> float:
    return float(sum(g.population for g in groups))


def population_vector(groups: Sequence[AgeGroup]) -> np.ndarray:
    return np.array([g.population for g in groups], dtype=float)


def age_index(groups: Sequence[AgeGroup], label: str) -> int:
    for g in groups:
        if g.label == label:
            return g.index
    raise DataError(f"unknown age label {label!r}")


@dataclass(frozen=True)
class ObservedDataset:
    """Weekly age-resolved observations plus derived vaccination tables."""

    grid: WeekGrid
    groups: tuple[AgeGroup, ...]
    cases: np.ndarray
    severe_counts: np.ndarray
    severe_pops: np.ndarray
    dose_counts: np.ndarray
    vacc_fractions: np.ndarray
    waning_dist: np.ndarray
    truth: dict | None = field(default=None, compare=False)

    @property
    def n_ages(self) -> int:
        return len(self.groups)

    @property
    def n_weeks(self) -> int:
        return self.grid.n_weeks

    @property
    def populations(self) -> np.ndarray:
        return population_vector(self.groups)

    @property
    def total_population(self) -> float:
        return total_population(self.groups)

    def severe_probability(self, v: int, a: int, t: int) -> float:
        """P(S=1 | V=v, A=a, T=t); NaN when the stratum is empty."""
        pop = self.severe_pops[v, a, t - 1]
        if pop <= 0:
            return float("nan")
        return float(self.severe_counts[v, a, t - 1] / pop)

    def validate(self) -> None:
        a, m = self.n_ages, self.n_weeks
        _expect_shape(self.cases, (a, m), "cases")
        _expect_shape(self.severe_counts, (4, a, m), "severe_counts")
        _expect_shape(self.severe_pops, (4, a, m), "severe_pops")
        _expect_shape(self.dose_counts, (3, a, m), "dose_counts")
        _expect_shape(self.vacc_fractions, (4, a, m), "vacc_fractions")
        _expect_shape(self.waning_dist, (3, a, m, m), "waning_dist")

        for g, expected in zip(self.groups, range(a)):
            if g.index != expected:
                raise DataError(f"age group {g.label!r} has index {g.index}, expected {expected}")

        if np.any(self.cases < 0):
            raise DataError("negative case counts")
        pops = self.populations
        if np.any(self.cases > pops[:, None]):
            raise DataError("weekly cases exceed group population")
        for name, arr in [
            ("severe_counts", self.severe_counts),
            ("severe_pops", self.severe_pops),
            ("dose_counts", self.dose_counts),
        ]:
            if np.any(arr < 0):
                raise DataError(f"negative values in {name}")
        if np.any(self.severe_counts > self.severe_pops + CLOSURE_TOL):
            raise DataError("severe counts exceed stratum population")

        closure = self.vacc_fractions.sum(axis=0)
        if np.any(np.abs(closure - 1.0) > CLOSURE_TOL):
            worst = float(np.max(np.abs(closure - 1.0)))
            raise DataError(f"vaccination fractions do not close to 1 (max deviation {worst:.3g})")
        if np.any(self.vacc_fractions < -CLOSURE_TOL):
            raise DataError("negative vaccination fraction")

        # waning distributions normalise on strata that carry vaccinated mass
        mass = self.waning_dist.sum(axis=3)
        for v in range(3):
            occupied = self.vacc_fractions[v + 1] > CLOSURE_TOL
            bad = occupied & (np.abs(mass[v] - 1.0) > 1e-6)
            if np.any(bad):
                va, vt = np.argwhere(bad)[0]
                raise DataError(
                    f"waning distribution for v={v + 1}, age {self.groups[va].label}, "
                    f"week {vt + 1} sums to {mass[v, va, vt]:.6g}"
                )

    def derived_tables_consistent(self) -> bool:
        """True when vacc_fractions matches the cumulative dose counts."""
        expected = derive_vacc_fractions(self.dose_counts, self.populations)
        return bool(np.allclose(expected, self.vacc_fractions, atol=CLOSURE_TOL))


def _expect_shape(arr: np.ndarray, shape: tuple[int, ...], name: str) -> None:
    if arr.shape != shape:
        raise DataError(f"{name} has shape {arr.shape}, expected {shape}")


def derive_vacc_fractions(dose_counts: np.ndarray, populations: np.ndarray) -> np.ndarray:
    """Fractions with exactly v doses from cumulative dose marginals.

    Dose times per person are ordered, so the fraction with at least i doses
    at week t is the cumulative share of dose-i administrations up to t.
    """
    _, n_ages, n_weeks = dose_counts.shape
    cum = dose_counts.cumsum(axis=2) / populations[None, :, None]
    if np.any(cum > 1 + CLOSURE_TOL):
        raise DataError("cumulative dose counts exceed group population")
    for i in range(2):
        if np.any(cum[i + 1] > cum[i] + CLOSURE_TOL):
            raise DataError(f"more dose-{i + 2} than dose-{i + 1} recipients at some week")
    fractions = np.empty((4, n_ages, n_weeks))
    fractions[0] = 1.0 - cum[0]
    fractions[1] = cum[0] - cum[1]
    fractions[2] = cum[1] - cum[2]
    fractions[3] = cum[2]
    return fractions


def derive_waning_dist(dose_counts: np.ndarray) -> np.ndarray:
    """P(W | V, A, T) from dose marginals under first-dosed-first-upgraded.

    Recipients of dose i are moved to dose i+1 in order of their dose-i week
    (FIFO). That fixes the joint timing needed for waning times; joints built
    by the strategy generators refine this when a full strategy is available.
    """
    n_doses, n_ages, n_weeks = dose_counts.shape
    dist = np.zeros((3, n_ages, n_weeks, n_weeks))
    for a in range(n_ages):
        # cohort[v-1][tau] = persons whose latest dose is v, received in week tau
        cohort = [np.zeros(n_weeks + 1) for _ in range(3)]
        for t in range(1, n_weeks + 1):
            for i in range(3):  # dose i+1 administered in week t
                arriving = dose_counts[i, a, t - 1]
                if i > 0 and arriving > 0:
                    pool = cohort[i - 1]
                    take_total = arriving
                    for tau in range(1, t + 1):
                        if take_total <= 0:
                            break
                        take = min(pool[tau], take_total)
                        pool[tau] -= take
                        take_total -= take
                    if take_total > CLOSURE_TOL * max(1.0, arriving):
                        raise DataError(
                            f"dose {i + 1} count at week {t} exceeds upgradable dose-{i} cohort"
                        )
                cohort[i][t] += arriving
            for v in range(3):
                total = cohort[v][1 : t + 1].sum()
                if total > 0:
                    for tau in range(1, t + 1):
                        if cohort[v][tau] > 0:
                            dist[v, a, t - 1, t - tau] = cohort[v][tau] / total
    return dist

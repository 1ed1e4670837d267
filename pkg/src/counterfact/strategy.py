"""Vaccine allocation strategies as joint vaccination-time distributions.

A strategy stores, per age group, a sparse joint distribution over the weeks
of the first, second and third dose, ``(t1, t2, t3) -> mass`` with
``t_i in 1..M+1`` and the sentinel ``M+1`` meaning "dose never received".
Support points are monotone (``t1 <= t2 <= t3``; a sentinel absorbs all
later doses).

Greedy pairing rules shared by all generators:

- second doses pair with first-dose mass at a gap of 3 weeks where possible,
  else the smallest larger gap; gaps below 3 (2, 1, then same-week) are a
  last resort before declaring the marginals infeasible;
- third doses require a gap of at least 12 weeks after the second (hard);
- within equally-preferred choices, earlier cohorts are consumed first.

Person-count arithmetic uses ``math.fsum`` so that weekly dose budgets are
conserved to well below 1e-9 person-doses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

SECOND_DOSE_TARGET_GAP = 3
BOOSTER_MIN_GAP = 12
BOOSTER_CAP_RELAXATION = 0.025
MASS_TOL = 1e-12


class StrategyError(ValueError):
    """Infeasible marginals, budgets or caps."""


@dataclass(frozen=True)
class AllocationStrategy:
    """Per-age joint distribution over (first, second, third) dose weeks."""

    label: str
    n_weeks: int
    age_labels: tuple[str, ...]
    per_age: tuple[Mapping[tuple[int, int, int], float], ...]

    @property
    def n_ages(self) -> int:
        return len(self.per_age)

    @property
    def sentinel(self) -> int:
        return self.n_weeks + 1

    def mass_equal(self, other: "AllocationStrategy", tol: float = 0.0) -> bool:
        if self.n_weeks != other.n_weeks or self.n_ages != other.n_ages:
            return False
        for mine, theirs in zip(self.per_age, other.per_age):
            keys = set(mine) | set(theirs)
            for k in keys:
                if abs(mine.get(k, 0.0) - theirs.get(k, 0.0)) > tol:
                    return False
        return True

    def marginals(self) -> np.ndarray:
        """P(T_i = t | a) over real weeks, shape (3, A, M)."""
        out = np.zeros((3, self.n_ages, self.n_weeks))
        for a, joint in enumerate(self.per_age):
            for (t1, t2, t3), mass in joint.items():
                for i, ti in enumerate((t1, t2, t3)):
                    if ti <= self.n_weeks:
                        out[i, a, ti - 1] += mass
        return out

    def uptake(self) -> np.ndarray:
        """Fraction of each age group that receives dose i, shape (3, A)."""
        return self.marginals().sum(axis=2)

    def validate(self, tol: float = 1e-9) -> None:
        sent = self.sentinel
        for a, joint in enumerate(self.per_age):
            total = math.fsum(joint.values())
            if abs(total - 1.0) > tol:
                raise StrategyError(f"age {a}: joint mass sums to {total!r}, not 1")
            for (t1, t2, t3), mass in joint.items():
                if mass < -tol:
                    raise StrategyError(f"age {a}: negative mass at {(t1, t2, t3)}")
                if not (1 <= t1 <= sent and 1 <= t2 <= sent and 1 <= t3 <= sent):
                    raise StrategyError(f"age {a}: week out of range at {(t1, t2, t3)}")
                if not t1 <= t2 <= t3:
                    raise StrategyError(f"age {a}: non-monotone doses {(t1, t2, t3)}")
                if t1 == sent and (t2 != sent or t3 != sent):
                    raise StrategyError(f"age {a}: sentinel must absorb later doses {(t1, t2, t3)}")
                if t2 == sent and t3 != sent:
                    raise StrategyError(f"age {a}: sentinel must absorb later doses {(t1, t2, t3)}")
                if t3 != sent and t3 - t2 < BOOSTER_MIN_GAP:
                    raise StrategyError(
                        f"age {a}: booster gap {t3 - t2} below {BOOSTER_MIN_GAP} at {(t1, t2, t3)}"
                    )

    def status_at(self, point: tuple[int, int, int], week: int) -> tuple[int, int]:
        """(doses received, weeks since last dose) for a support point at `week`."""
        t1, t2, t3 = point
        if week >= t3:
            return 3, week - t3
        if week >= t2:
            return 2, week - t2
        if week >= t1:
            return 1, week - t1
        return 0, 0


# ---------------------------------------------------------------------------
# greedy pairing


def _prune(mass: float) -> bool:
    return mass <= MASS_TOL


def _gap_choices(t2: int) -> Iterator[int]:
    """Gap preference for pairing a second dose in week t2: 3,4,... then 2,1,0."""
    for gap in range(SECOND_DOSE_TARGET_GAP, t2):
        yield gap
    for gap in (2, 1, 0):
        if 1 <= t2 - gap <= t2:
            yield gap


def _pair_first_second(m1: np.ndarray, m2: np.ndarray, n_weeks: int) -> dict[tuple[int, int], float]:
    """Match second-dose mass to first-dose mass; returns {(t1, t2): mass}.

    ``m1``/``m2`` are 1-indexed arrays of length M+1 (slot 0 unused); ``m1``
    is consumed in place, leaving the unpaired first-dose mass.
    """
    pairs: dict[tuple[int, int], float] = {}
    for t2 in range(1, n_weeks + 1):
        need = float(m2[t2])
        if need <= MASS_TOL:
            continue
        for gap in _gap_choices(t2):
            t1 = t2 - gap
            take = min(m1[t1], need)
            if take <= 0:
                continue
            m1[t1] -= take
            need -= take
            pairs[(t1, t2)] = pairs.get((t1, t2), 0.0) + take
            if need <= MASS_TOL:
                break
        if need > MASS_TOL:
            raise StrategyError(
                f"second-dose mass {need:.3g} in week {t2} has no pairable first doses"
            )
    return pairs


def _pair_third(
    pairs: dict[tuple[int, int], float],
    m3: np.ndarray,
    n_weeks: int,
    spill_forward: bool = False,
) -> dict[tuple[int, int, int], float]:
    """Attach booster weeks to (t1, t2) pairs under the 12-week minimum gap.

    With ``spill_forward`` unpairable booster mass moves to the next week
    (the eligible pool only grows with time); used when rescaled marginals
    leave sub-permille tails that the gap rule cannot serve in place.
    """
    out: dict[tuple[int, int, int], float] = {}
    pool = dict(pairs)
    m3 = m3.copy()
    for t3 in range(1, n_weeks + 1):
        need = float(m3[t3])
        if need <= MASS_TOL:
            continue
        # earliest second dose first, ties broken on the earlier first dose
        for t1, t2 in sorted(pool, key=lambda k: (k[1], k[0])):
            if t2 > t3 - BOOSTER_MIN_GAP:
                break
            take = min(pool[(t1, t2)], need)
            if take <= 0:
                continue
            pool[(t1, t2)] -= take
            if _prune(pool[(t1, t2)]):
                residue = pool.pop((t1, t2))
                take += residue
            need -= take
            out[(t1, t2, t3)] = out.get((t1, t2, t3), 0.0) + take
            if need <= MASS_TOL:
                break
        if need > MASS_TOL:
            if spill_forward and t3 < n_weeks:
                m3[t3 + 1] += need
                continue
            raise StrategyError(
                f"third-dose mass {need:.3g} in week {t3} has no second doses at least "
                f"{BOOSTER_MIN_GAP} weeks old"
            )
    sent = n_weeks + 1
    for (t1, t2), mass in pool.items():
        if not _prune(mass):
            out[(t1, t2, sent)] = out.get((t1, t2, sent), 0.0) + mass
    return out


def _reconstruct_joint(
    m1: np.ndarray, m2: np.ndarray, m3: np.ndarray, n_weeks: int,
    spill_forward: bool = False,
) -> dict[tuple[int, int, int], float]:
    """Greedy joint for one age group from dose marginals (1-indexed arrays)."""
    for i, m in enumerate((m1, m2, m3)):
        total = math.fsum(m[1:])
        if total > 1.0 + 1e-9:
            raise StrategyError(f"dose-{i + 1} marginal sums to {total!r} > 1")
        if np.any(m < -MASS_TOL):
            raise StrategyError(f"dose-{i + 1} marginal has negative mass")
    remaining_first = m1.copy()
    pairs = _pair_first_second(remaining_first, m2, n_weeks)
    joint = _pair_third(pairs, m3, n_weeks, spill_forward=spill_forward)
    sent = n_weeks + 1
    for t1 in range(1, n_weeks + 1):
        if not _prune(remaining_first[t1]):
            joint[(t1, sent, sent)] = joint.get((t1, sent, sent), 0.0) + float(remaining_first[t1])
    never = 1.0 - math.fsum(m1[1:])
    if never > MASS_TOL:
        joint[(sent, sent, sent)] = never
    elif never < -1e-9:
        raise StrategyError(f"first-dose marginal exceeds 1 by {-never:.3g}")
    return joint


def _one_indexed(marginal: np.ndarray) -> np.ndarray:
    out = np.zeros(len(marginal) + 1)
    out[1:] = marginal
    return out


def reconstruct_factual(
    marginals: np.ndarray,
    age_labels: Sequence[str],
    label: str = "Factual",
) -> AllocationStrategy:
    """Greedy joint reconstruction from observed per-age dose marginals.

    ``marginals`` has shape (3, A, M) holding P(T_i = t | a); per-age mass may
    sum to less than 1, the remainder being never-vaccinated.
    """
    n_doses, n_ages, n_weeks = marginals.shape
    if n_doses != 3:
        raise StrategyError(f"expected 3 dose marginals, got {n_doses}")
    per_age = []
    for a in range(n_ages):
        try:
            joint = _reconstruct_joint(
                _one_indexed(marginals[0, a]),
                _one_indexed(marginals[1, a]),
                _one_indexed(marginals[2, a]),
                n_weeks,
            )
        except StrategyError as exc:
            raise StrategyError(f"age group {age_labels[a]!r}: {exc}") from None
        per_age.append(joint)
    return AllocationStrategy(
        label=label, n_weeks=n_weeks, age_labels=tuple(age_labels), per_age=tuple(per_age)
    )


# ---------------------------------------------------------------------------
# budgets


def weekly_dose_budgets(strategy: AllocationStrategy, populations: np.ndarray) -> np.ndarray:
    """Total administered doses per (dose, week) in persons, shape (3, M)."""
    marg = strategy.marginals()
    budgets = np.empty((3, strategy.n_weeks))
    for i in range(3):
        for t in range(strategy.n_weeks):
            budgets[i, t] = math.fsum(populations[a] * marg[i, a, t] for a in range(strategy.n_ages))
    return budgets


def generate_uniform(
    factual: AllocationStrategy, populations: np.ndarray, label: str = "Uniform"
) -> AllocationStrategy:
    """Same vaccination-time distribution for every age group.

    Weekly dose totals match the factual budgets; the shared marginal is the
    population-weighted average of the factual marginals.
    """
    budgets = weekly_dose_budgets(factual, populations)
    total_pop = math.fsum(populations)
    shared = budgets / total_pop  # (3, M) shared per-age marginals
    joint = _reconstruct_joint(
        _one_indexed(shared[0]), _one_indexed(shared[1]), _one_indexed(shared[2]), factual.n_weeks
    )
    return AllocationStrategy(
        label=label,
        n_weeks=factual.n_weeks,
        age_labels=factual.age_labels,
        per_age=tuple(dict(joint) for _ in range(factual.n_ages)),
    )


# terminal float dust absorbed when every cap is exhausted (persons)
_CAP_DUST = 1e-6


class _RankedState:
    """Cohort bookkeeping for one age group during ranked allocation."""

    def __init__(self) -> None:
        self.first: dict[int, float] = {}  # t1 -> persons awaiting dose 2
        self.pairs: dict[tuple[int, int], float] = {}  # (t1, t2) -> persons awaiting dose 3
        self.done: dict[tuple[int, int, int], float] = {}

    def second_dose_sources(self, week: int) -> Iterator[int]:
        for gap in _gap_choices(week):
            t1 = week - gap
            if self.first.get(t1, 0.0) > 0:
                yield t1

    def booster_sources(self, week: int) -> Iterator[tuple[int, int]]:
        for t1, t2 in sorted(self.pairs, key=lambda k: (k[1], k[0])):
            if t2 <= week - BOOSTER_MIN_GAP and self.pairs[(t1, t2)] > 0:
                yield t1, t2


def generate_ranked(
    factual: AllocationStrategy,
    ranking: Sequence[int],
    populations: np.ndarray,
    label: str = "Ranked",
    uptake_caps: np.ndarray | None = None,
    booster_relaxation: float = BOOSTER_CAP_RELAXATION,
) -> AllocationStrategy:
    """Assign each week's factual dose budget to age groups in ranking order.

    ``ranking`` is a permutation of age indices, highest priority first.
    First- and second-dose uptake is capped at the factual per-age uptake;
    the booster cap is relaxed by ``booster_relaxation`` (fraction of the
    group). ``uptake_caps`` (shape (3, A)) overrides the factual caps, e.g.
    for a flat 90 % uptake assumption.
    """
    n_ages, n_weeks = factual.n_ages, factual.n_weeks
    if sorted(ranking) != list(range(n_ages)):
        raise StrategyError(f"ranking {list(ranking)!r} is not a permutation of 0..{n_ages - 1}")

    budgets = weekly_dose_budgets(factual, populations)
    caps_frac = factual.uptake() if uptake_caps is None else np.asarray(uptake_caps, dtype=float)
    caps = (caps_frac * populations[None, :]).copy()  # persons

    states = [_RankedState() for _ in range(n_ages)]
    cap_rem = caps.copy()
    # booster relaxation headroom is kept separate and only spent on budget
    # that the strict caps cannot place (12-week eligibility lags the ranking)
    relax_rem = booster_relaxation * populations.copy()

    for t in range(1, n_weeks + 1):
        # dose 1
        remaining = float(budgets[0, t - 1])
        for a in ranking:
            if remaining <= 0:
                break
            take = min(cap_rem[0, a], remaining)
            if take <= 0:
                continue
            cap_rem[0, a] -= take
            remaining -= take
            st = states[a]
            st.first[t] = st.first.get(t, 0.0) + take
        remaining = _absorb_dust(remaining, states, ranking, dose=1, week=t)

        # dose 2
        remaining = float(budgets[1, t - 1])
        for a in ranking:
            if remaining <= 0:
                break
            st = states[a]
            budget_a = min(cap_rem[1, a], remaining)
            for t1 in st.second_dose_sources(t):
                take = min(st.first[t1], budget_a)
                if take <= 0:
                    continue
                st.first[t1] -= take
                if _prune(st.first[t1]):
                    take += st.first.pop(t1)
                st.pairs[(t1, t)] = st.pairs.get((t1, t), 0.0) + take
                budget_a -= take
                cap_rem[1, a] -= take
                remaining -= take
                if budget_a <= 0:
                    break
        if remaining > _CAP_DUST:
            raise StrategyError(
                f"cannot place {remaining:.3g} second doses in week {t}: "
                "no eligible first-dose cohorts or caps exhausted"
            )
        if remaining > 0:  # cap float dust; place it ignoring caps
            for a in reversed(ranking):
                st = states[a]
                for t1 in st.second_dose_sources(t):
                    take = min(st.first[t1], remaining)
                    st.first[t1] -= take
                    st.pairs[(t1, t)] = st.pairs.get((t1, t), 0.0) + take
                    remaining -= take
                    if remaining <= 0:
                        break
                if remaining <= 0:
                    break
            if remaining > 1e-9:
                raise StrategyError(f"cannot place residual second doses in week {t}")

        # dose 3: strict factual caps first, then the 2.5 % relaxation headroom
        remaining = float(budgets[2, t - 1])
        for caps_row in (cap_rem[2], relax_rem):
            for a in ranking:
                if remaining <= 0:
                    break
                st = states[a]
                budget_a = min(caps_row[a], remaining)
                for t1, t2 in st.booster_sources(t):
                    take = min(st.pairs[(t1, t2)], budget_a)
                    if take <= 0:
                        continue
                    st.pairs[(t1, t2)] -= take
                    if _prune(st.pairs[(t1, t2)]):
                        take += st.pairs.pop((t1, t2))
                    st.done[(t1, t2, t)] = st.done.get((t1, t2, t), 0.0) + take
                    budget_a -= take
                    caps_row[a] -= take
                    remaining -= take
                    if budget_a <= 0:
                        break
        if remaining > _CAP_DUST:
            raise StrategyError(
                f"cannot place {remaining:.3g} booster doses in week {t}: "
                "12-week gap or caps leave no eligible recipients"
            )
        if remaining > 0:  # cap float dust; place it ignoring caps
            for a in reversed(ranking):
                st = states[a]
                for t1, t2 in st.booster_sources(t):
                    take = min(st.pairs[(t1, t2)], remaining)
                    st.pairs[(t1, t2)] -= take
                    st.done[(t1, t2, t)] = st.done.get((t1, t2, t), 0.0) + take
                    remaining -= take
                    if remaining <= 0:
                        break
                if remaining <= 0:
                    break
            if remaining > 1e-9:
                raise StrategyError(f"cannot place residual booster doses in week {t}")

    sent = n_weeks + 1
    per_age = []
    for a in range(n_ages):
        st = states[a]
        joint = dict(st.done)
        for (t1, t2), mass in st.pairs.items():
            if not _prune(mass):
                joint[(t1, t2, sent)] = joint.get((t1, t2, sent), 0.0) + mass
        for t1, mass in st.first.items():
            if not _prune(mass):
                joint[(t1, sent, sent)] = joint.get((t1, sent, sent), 0.0) + mass
        pop = populations[a]
        joint = {k: v / pop for k, v in joint.items()}
        vaccinated = math.fsum(joint.values())
        if vaccinated < 1.0 - MASS_TOL:
            joint[(sent, sent, sent)] = 1.0 - vaccinated
        per_age.append(joint)
    return AllocationStrategy(
        label=label, n_weeks=n_weeks, age_labels=factual.age_labels, per_age=tuple(per_age)
    )


def _absorb_dust(remaining: float, states: list[_RankedState], ranking: Sequence[int], dose: int, week: int) -> float:
    """Place sub-1e-6-person residuals (cap/budget float mismatch) anywhere."""
    if remaining <= 0:
        return 0.0
    if remaining > _CAP_DUST:
        raise StrategyError(f"cannot place {remaining:.3g} dose-{dose} doses in week {week}: caps exhausted")
    st = states[ranking[-1]]
    st.first[week] = st.first.get(week, 0.0) + remaining
    return 0.0


def elderly_first(factual: AllocationStrategy, populations: np.ndarray) -> AllocationStrategy:
    ranking = list(range(factual.n_ages - 1, -1, -1))
    return generate_ranked(factual, ranking, populations, label="ElderlyFirst")


def young_first(factual: AllocationStrategy, populations: np.ndarray) -> AllocationStrategy:
    ranking = list(range(factual.n_ages))
    return generate_ranked(factual, ranking, populations, label="YoungFirst")


def boost_uptake(
    factual: AllocationStrategy,
    group: int,
    extra_doses: float,
    populations: np.ndarray,
    label: str | None = None,
) -> AllocationStrategy:
    """Move previously unvaccinated people of one group to full three-dose courses.

    ``extra_doses`` counts administered doses, so ``extra_doses / 3`` people
    change status. Their dose weeks follow the group's factual weekly pattern,
    which scales each dose's weekly counts by one constant.
    """
    if extra_doses < 0:
        raise StrategyError("extra_doses must be non-negative")
    if extra_doses == 0:
        return AllocationStrategy(
            label=label or factual.label,
            n_weeks=factual.n_weeks,
            age_labels=factual.age_labels,
            per_age=factual.per_age,
        )
    pop = populations[group]
    added_mass = extra_doses / (3.0 * pop)
    sent = factual.sentinel
    base = factual.per_age[group]
    never = base.get((sent, sent, sent), 0.0)
    if added_mass > never + MASS_TOL:
        raise StrategyError(
            f"need {added_mass:.4g} unvaccinated mass in group {factual.age_labels[group]!r}, "
            f"only {never:.4g} available"
        )

    marg = factual.marginals()[:, group, :]  # (3, M)
    uptake = marg.sum(axis=1)
    if np.any(uptake <= 0):
        raise StrategyError("group has a dose with zero factual uptake; cannot scale weekly doses")
    scaled = marg * (added_mass / uptake)[:, None]
    extra_joint = _reconstruct_joint(
        _one_indexed(scaled[0]),
        _one_indexed(scaled[1]),
        _one_indexed(scaled[2]),
        factual.n_weeks,
        spill_forward=True,
    )
    extra_joint.pop((sent, sent, sent), None)

    joint = dict(base)
    joint[(sent, sent, sent)] = never - added_mass
    if _prune(joint[(sent, sent, sent)]):
        joint.pop((sent, sent, sent))
    for key, mass in extra_joint.items():
        joint[key] = joint.get(key, 0.0) + mass

    per_age = list(factual.per_age)
    per_age[group] = joint
    return AllocationStrategy(
        label=label or f"{factual.label}+{extra_doses:g}doses@{factual.age_labels[group]}",
        n_weeks=factual.n_weeks,
        age_labels=factual.age_labels,
        per_age=tuple(per_age),
    )


# ---------------------------------------------------------------------------
# schedules consumed by the dynamics model


@dataclass(frozen=True)
class VaccinationSchedule:
    """Weekly status fractions and dose cohorts in persons.

    ``fractions[v, a, t-1]``      share of group a with exactly v doses in week t
    ``cohorts[v-1, a, t-1, tau-1]`` persons whose latest dose (their v-th) was
                                    given in week tau and who still have v doses
                                    in week t
    """

    fractions: np.ndarray  # (4, A, M)
    cohorts: np.ndarray  # (3, A, M, M)

    @property
    def n_weeks(self) -> int:
        return self.fractions.shape[2]

    def waning_distribution(self) -> np.ndarray:
        """P(W | V, A, T) implied by the cohorts, shape (3, A, M, M)."""
        n_v, n_ages, n_weeks, _ = self.cohorts.shape
        dist = np.zeros_like(self.cohorts)
        for v in range(n_v):
            for a in range(n_ages):
                for t in range(1, n_weeks + 1):
                    row = self.cohorts[v, a, t - 1]
                    total = row.sum()
                    if total > 0:
                        for tau in range(1, t + 1):
                            if row[tau - 1] > 0:
                                dist[v, a, t - 1, t - tau] = row[tau - 1] / total
        return dist


def schedule_from_strategy(
    strategy: AllocationStrategy, populations: np.ndarray
) -> VaccinationSchedule:
    m = strategy.n_weeks
    n_ages = strategy.n_ages
    fractions = np.zeros((4, n_ages, m))
    cohorts = np.zeros((3, n_ages, m, m))
    for a, joint in enumerate(strategy.per_age):
        pop = populations[a]
        for (t1, t2, t3), mass in joint.items():
            bounds = (1, t1, t2, t3, m + 1)
            for v in range(4):
                lo, hi = bounds[v], min(bounds[v + 1] - 1, m)
                if lo > m or hi < lo:
                    continue
                fractions[v, a, lo - 1 : hi] += mass
                if v >= 1:
                    cohorts[v - 1, a, lo - 1 : hi, bounds[v] - 1] += mass * pop
    return VaccinationSchedule(fractions=fractions, cohorts=cohorts)


def schedule_from_dataset(dataset) -> VaccinationSchedule:
    """Factual schedule from observed fractions and FIFO waning distributions."""
    fractions = dataset.vacc_fractions.copy()
    populations = dataset.populations
    n_ages, m = fractions.shape[1], fractions.shape[2]
    cohorts = np.zeros((3, n_ages, m, m))
    for v in range(3):
        stratum = fractions[v + 1] * populations[:, None]  # (A, M) persons
        for a in range(n_ages):
            for t in range(1, m + 1):
                if stratum[a, t - 1] <= 0:
                    continue
                w = dataset.waning_dist[v, a, t - 1, :t]
                cohorts[v, a, t - 1, :t] = (stratum[a, t - 1] * w)[::-1]
    return VaccinationSchedule(fractions=fractions, cohorts=cohorts)


# ---------------------------------------------------------------------------
# serialisation


def save_strategy(
    strategy: AllocationStrategy,
    directory: str | Path,
    stem: str | None = None,
    anchor: date | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or strategy.label.lower().replace(" ", "_")
    header = {
        "label": strategy.label,
        "n_weeks": strategy.n_weeks,
        "age_labels": list(strategy.age_labels),
        "window_anchor": anchor.isoformat() if anchor else None,
    }
    (directory / f"{stem}.json").write_text(json.dumps(header, indent=2))
    with open(directory / f"{stem}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age_label", "t1", "t2", "t3", "mass"])
        for a, joint in enumerate(strategy.per_age):
            for (t1, t2, t3) in sorted(joint):
                writer.writerow([strategy.age_labels[a], t1, t2, t3, repr(joint[(t1, t2, t3)])])
    return directory / f"{stem}.csv"


def load_strategy(directory: str | Path, stem: str) -> AllocationStrategy:
    directory = Path(directory)
    header = json.loads((directory / f"{stem}.json").read_text())
    labels = tuple(header["age_labels"])
    per_age: list[dict[tuple[int, int, int], float]] = [dict() for _ in labels]
    index = {lbl: i for i, lbl in enumerate(labels)}
    with open(directory / f"{stem}.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            a = index[row["age_label"]]
            key = (int(row["t1"]), int(row["t2"]), int(row["t3"]))
            per_age[a][key] = per_age[a].get(key, 0.0) + float(row["mass"])
    return AllocationStrategy(
        label=header["label"],
        n_weeks=int(header["n_weeks"]),
        age_labels=labels,
        per_age=tuple(per_age),
    )

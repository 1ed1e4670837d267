"""Age-structured discrete renewal dynamics on a one-day grid.

Daily update for newly exposed people in age group a:

    E_a(d) = sqrt(R_eff_a) * sum_a' C[a,a'] * sqrt(R_eff_a') *
             sum_{tau=0..10} E_a'(d-1-tau) * g(tau) * (S_a(d)/D_a) + h_a(d)

with g the discretised generation-interval kernel, C the contact matrix,
R_eff = R_base * infectability, and h the external influx (h*_weekly / 7).
Susceptibles are depleted by domestically generated exposures; imported
infections count towards exposures but not towards depletion, so

    S_a(end) + cumulative E_a = D_a + cumulative influx_a

holds exactly. The susceptible factor S/D is on by default and can be
disabled to mimic a bookkeeping-only reading of the update.

Weekly reported cases are exposures delayed by the 6-day reporting delay and
summed over ``t_day = 6..13`` relative to the week start, which literally
spans eight days of exposures. Seeding must provide pre-window exposures for
the kernel lookback (11 days); the case-delay lookback reaches 13 days back,
missing seed days are edge-padded.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

try:  # optional JIT for the daily recursion; pure numpy otherwise
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

from counterfact.calendar import WeekGrid
from counterfact.severity import WaningCurve
from counterfact.strategy import VaccinationSchedule

logger = logging.getLogger(__name__)

KERNEL_SUPPORT = 11  # tau = 0..10
CASE_DELAY_WINDOW = (6, 13)  # days before the week start, both inclusive
PROTECTION = (0.70, 0.90, 0.95)  # mu_v directly after dose v
CHANGE_POINT_ANCHOR = date(2021, 1, 10)
CHANGE_POINT_SPACING = 21  # days
N_CHANGE_POINTS = 10


class DynamicsError(RuntimeError):
    """Pathological parameters (negative or non-finite state)."""


@dataclass(frozen=True)
class ContactMatrix:
    gamma: float
    rho: np.ndarray
    matrix: np.ndarray


def build_contact_matrix(gamma: float, populations: np.ndarray) -> ContactMatrix:
    """C = (1-gamma)*I + gamma * rho 1^T; spectral invariants checked."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"mixing factor must be in [0, 1], got {gamma}")
    populations = np.asarray(populations, dtype=float)
    rho = populations / populations.sum()
    n = len(rho)
    matrix = (1.0 - gamma) * np.eye(n) + gamma * np.outer(rho, np.ones(n))
    # rho is the dominant right eigenvector with eigenvalue exactly 1
    if not np.allclose(matrix @ rho, rho, atol=1e-10):
        raise DynamicsError("contact matrix does not preserve the population shares")
    eigenvalues = np.linalg.eigvals(matrix)
    if abs(np.max(np.abs(eigenvalues)) - 1.0) > 1e-10:
        raise DynamicsError("largest contact-matrix eigenvalue is not 1")
    return ContactMatrix(gamma=gamma, rho=rho, matrix=matrix)


def generation_interval_kernel(mean: float = 4.0, sd: float = 1.5) -> np.ndarray:
    """Gamma(mean, sd) mass on integer lags 0..10 via CDF differences."""
    shape = (mean / sd) ** 2
    scale = sd**2 / mean
    edges = np.arange(KERNEL_SUPPORT + 1)
    pmf = np.diff(stats.gamma.cdf(edges, a=shape, scale=scale))
    return pmf / pmf.sum()


@dataclass(frozen=True)
class ChangePoints:
    """Per-age logistic change points for the base reproduction number.

    ``effects[a, n]`` is the saturated log-effect of change point n; the
    first effect equals log(R0_a) by model convention. Lengths are stored
    pre-softplus (``l = log(1+exp(l_raw))``), dates as day offsets from the
    window start (anchor + 21n + jitter).
    """

    effects: np.ndarray  # (A, N)
    lengths_raw: np.ndarray  # (A, N)
    day_offsets: np.ndarray  # (A, N) float days from window start

    @staticmethod
    def day_grid(grid: WeekGrid, n_points: int = N_CHANGE_POINTS,
                 anchor: date = CHANGE_POINT_ANCHOR, spacing: int = CHANGE_POINT_SPACING) -> np.ndarray:
        base = (anchor - grid.anchor).days
        return base + spacing * np.arange(n_points, dtype=float)


@dataclass(frozen=True)
class DynamicsParams:
    """Everything the simulator needs apart from the vaccination schedule."""

    r0: np.ndarray  # (A,)
    change_points: ChangePoints | None
    influx_weekly: np.ndarray  # (A, M) persons per week
    protection: tuple[float, float, float] = PROTECTION
    kernel: np.ndarray = field(default_factory=generation_interval_kernel)
    reporting_delay: int = 6
    base_trajectory: np.ndarray | None = None  # (A, n_days), overrides change points

    def validate(self) -> None:
        if np.any(self.r0 <= 0):
            raise ValueError("R0 must be positive")
        if np.any(self.influx_weekly < 0):
            raise ValueError("influx must be non-negative")
        for mu in self.protection:
            if not 0.0 < mu < 1.0:
                raise ValueError(f"protection {mu} outside (0, 1)")
        if abs(self.kernel.sum() - 1.0) > 1e-12 or np.any(self.kernel < 0):
            raise ValueError("kernel must be a probability vector")


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def base_reproduction(params: DynamicsParams, a: int, t_day: float) -> float:
    """R_base for one age group and day (days counted from the window start)."""
    if params.base_trajectory is not None:
        return float(params.base_trajectory[a, int(t_day)])
    cp = params.change_points
    value = np.log(params.r0[a])
    if cp is not None:
        lengths = softplus(cp.lengths_raw[a])
        arg = 4.0 / lengths * (t_day - cp.day_offsets[a])
        value = value + float(np.sum(_sigmoid(arg) * cp.effects[a]))
    return float(np.exp(value))


def base_reproduction_series(params: DynamicsParams, n_ages: int, n_days: int) -> np.ndarray:
    """R_base for all ages and days, shape (A, n_days)."""
    if params.base_trajectory is not None:
        traj = np.asarray(params.base_trajectory, dtype=float)
        if traj.shape != (n_ages, n_days):
            raise ValueError(f"base trajectory shape {traj.shape} != {(n_ages, n_days)}")
        return traj
    days = np.arange(n_days, dtype=float)
    out = np.empty((n_ages, n_days))
    cp = params.change_points
    for a in range(n_ages):
        log_r = np.full(n_days, np.log(params.r0[a]))
        if cp is not None:
            lengths = softplus(cp.lengths_raw[a])  # (N,)
            arg = 4.0 / lengths[None, :] * (days[:, None] - cp.day_offsets[a][None, :])
            log_r = log_r + _sigmoid(arg) @ cp.effects[a]
        out[a] = np.exp(log_r)
    return out


def _sigmoid(x):
    return expit(np.asarray(x, dtype=float))


def effective_waning(cohorts_row: np.ndarray, ve_norm_by_age_weeks: np.ndarray, week: int) -> float:
    """Group-wide waning for one (v, a, t): cohort-weighted normalised efficacy.

    ``cohorts_row[tau-1]`` holds persons vaccinated in week tau; the efficacy
    vector is indexed by waning time in weeks.
    """
    total = cohorts_row[:week].sum()
    if total <= 0:
        return 1.0
    taus = np.arange(1, week + 1)
    return float(np.dot(cohorts_row[:week], ve_norm_by_age_weeks[week - taus]) / total)


def infectability_table(
    schedule: VaccinationSchedule,
    waning: WaningCurve,
    protection: tuple[float, float, float] = PROTECTION,
) -> np.ndarray:
    """Infectability per (age, week): remaining susceptibility to spread."""
    fractions = schedule.fractions
    _, n_ages, n_weeks = fractions.shape
    ve_norm = waning.efficacy_norm(np.arange(n_weeks, dtype=float))
    out = np.empty((n_ages, n_weeks))
    for a in range(n_ages):
        for t in range(1, n_weeks + 1):
            value = fractions[0, a, t - 1]
            for v in range(1, 4):
                frac = fractions[v, a, t - 1]
                if frac <= 0:
                    continue
                w_eff = effective_waning(schedule.cohorts[v - 1, a, t - 1], ve_norm, t)
                value += frac * (1.0 - protection[v - 1] * w_eff)
            out[a, t - 1] = value
    return out


def infectability(
    schedule: VaccinationSchedule,
    waning: WaningCurve,
    a: int,
    t: int,
    protection: tuple[float, float, float] = PROTECTION,
) -> float:
    """Single-entry convenience wrapper around :func:`infectability_table`."""
    ve_norm = waning.efficacy_norm(np.arange(schedule.n_weeks, dtype=float))
    fractions = schedule.fractions
    total = fractions[:, a, t - 1].sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"vaccination fractions sum to {total}, not 1")
    value = fractions[0, a, t - 1]
    for v in range(1, 4):
        frac = fractions[v, a, t - 1]
        if frac <= 0:
            continue
        w_eff = effective_waning(schedule.cohorts[v - 1, a, t - 1], ve_norm, t)
        value += frac * (1.0 - protection[v - 1] * w_eff)
    return float(value)


@dataclass(frozen=True)
class EpidemicState:
    """Simulation output on daily and weekly grids."""

    grid: WeekGrid
    populations: np.ndarray
    daily_exposures: np.ndarray  # (A, n_days)
    susceptibles: np.ndarray  # (A, n_days + 1), S at the start of each day
    weekly_exposures: np.ndarray  # (A, M)
    weekly_cases: np.ndarray  # (A, M) modelled reported cases
    infection_probability: np.ndarray  # (A, M)
    influx_daily: np.ndarray  # (A, n_days)
    seeding: np.ndarray  # (A, seed_len)

    def to_csv(self, path: str | Path, age_labels) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["age_label", "week", "exposures", "susceptibles", "weekly_cases", "infection_probability"]
            )
            for a, label in enumerate(age_labels):
                for t in range(1, self.grid.n_weeks + 1):
                    writer.writerow(
                        [
                            label,
                            self.grid.week_start(t).isoformat(),
                            repr(float(self.weekly_exposures[a, t - 1])),
                            repr(float(self.susceptibles[a, self.grid.week_start_day(t)])),
                            repr(float(self.weekly_cases[a, t - 1])),
                            repr(float(self.infection_probability[a, t - 1])),
                        ]
                    )


def backcast_seeding(cases_week1: np.ndarray, n_days: int = 13) -> np.ndarray:
    """Pre-window exposures: first observed week's cases spread evenly per day."""
    daily = np.asarray(cases_week1, dtype=float) / 7.0
    return np.tile(daily[:, None], (1, n_days))


def renewal_loop(
    sqrt_r: np.ndarray,
    contact_matrix: np.ndarray,
    seeding: np.ndarray,
    influx_daily: np.ndarray,
    populations: np.ndarray,
    kernel_rev: np.ndarray,
    susceptible_depletion: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Core daily recursion; returns (exposures incl. seed prefix, susceptibles).

    ``kernel_rev`` is the generation kernel reversed (index j holds lag K-1-j).
    """
    n_ages, n_days = sqrt_r.shape
    seed_len = seeding.shape[1]
    e = np.zeros((n_ages, seed_len + n_days))
    e[:, :seed_len] = seeding
    s = np.empty((n_ages, n_days + 1))
    s[:, 0] = populations
    if _HAVE_NUMBA:
        bad_day = _renewal_core(
            np.ascontiguousarray(sqrt_r),
            np.ascontiguousarray(contact_matrix),
            e,
            s,
            np.ascontiguousarray(influx_daily),
            np.ascontiguousarray(populations, dtype=np.float64),
            kernel_rev,
            seed_len,
            susceptible_depletion,
        )
        if bad_day >= 0:
            raise DynamicsError(
                f"negative or non-finite state on day {bad_day}; reproduction numbers too large"
            )
        return e, s
    c = contact_matrix
    kernel = kernel_rev
    for d in range(n_days):
        col = seed_len + d
        pressure = e[:, col - KERNEL_SUPPORT : col] @ kernel
        coupled = sqrt_r[:, d] * (c @ (sqrt_r[:, d] * pressure))
        if susceptible_depletion:
            coupled = coupled * (s[:, d] / populations)
        new = coupled + influx_daily[:, d]
        if np.any(new < 0) or not np.all(np.isfinite(new)):
            raise DynamicsError(f"negative or non-finite exposures on day {d}")
        e[:, col] = new
        s[:, d + 1] = s[:, d] - (new - influx_daily[:, d])
        if np.any(s[:, d + 1] < -1e-9 * populations):
            raise DynamicsError(
                f"susceptibles negative on day {d + 1}; reproduction numbers too large"
            )
    return e, s


if _HAVE_NUMBA:

    @njit(cache=True)
    def _renewal_core(sqrt_r, c, e, s, influx, pops, kernel_rev, seed_len, depletion):
        n_ages, n_days = sqrt_r.shape
        k = kernel_rev.size
        tmp = np.empty(n_ages)
        for d in range(n_days):
            col = seed_len + d
            for a in range(n_ages):
                p = 0.0
                for j in range(k):
                    p += e[a, col - k + j] * kernel_rev[j]
                tmp[a] = p * sqrt_r[a, d]
            for a in range(n_ages):
                acc = 0.0
                for b in range(n_ages):
                    acc += c[a, b] * tmp[b]
                val = sqrt_r[a, d] * acc
                if depletion:
                    val *= s[a, d] / pops[a]
                val += influx[a, d]
                if not np.isfinite(val) or val < 0.0:
                    return d
                e[a, col] = val
                s[a, d + 1] = s[a, d] - (val - influx[a, d])
                if s[a, d + 1] < -1e-9 * pops[a]:
                    return d
        return -1


def delayed_weekly_cases(e: np.ndarray, seed_len: int, n_weeks: int) -> np.ndarray:
    """Reported weekly cases: exposures 6..13 days before each week start."""
    lo, hi = CASE_DELAY_WINDOW
    n_ages = e.shape[0]
    weekly = np.empty((n_ages, n_weeks))
    for t in range(1, n_weeks + 1):
        start = seed_len + 7 * (t - 1)
        weekly[:, t - 1] = e[:, start - hi : start - lo + 1].sum(axis=1)
    return weekly


def simulate(
    params: DynamicsParams,
    schedule: VaccinationSchedule,
    waning: WaningCurve,
    seeding: np.ndarray,
    grid: WeekGrid,
    populations: np.ndarray,
    contacts: ContactMatrix,
    susceptible_depletion: bool = True,
    infectability: np.ndarray | None = None,
) -> EpidemicState:
    """Run the daily renewal recursion over the analysis window.

    ``infectability`` may inject a precomputed (A, M) table for the given
    schedule and waning curve; it does not depend on the parameters, so
    callers evaluating many posterior draws share one table.
    """
    params.validate()
    populations = np.asarray(populations, dtype=float)
    n_ages = len(populations)
    n_days = grid.n_days
    m = grid.n_weeks

    seeding = np.asarray(seeding, dtype=float)
    if seeding.ndim != 2 or seeding.shape[0] != n_ages:
        raise ValueError(f"seeding must have shape (A, >= {KERNEL_SUPPORT}), got {seeding.shape}")
    seed_len = seeding.shape[1]
    if seed_len < KERNEL_SUPPORT:
        raise ValueError(f"seeding must cover at least {KERNEL_SUPPORT} days, got {seed_len}")
    lookback = max(KERNEL_SUPPORT, CASE_DELAY_WINDOW[1])
    if seed_len < lookback:  # pad the oldest seed value backwards
        pad = np.tile(seeding[:, :1], (1, lookback - seed_len))
        seeding = np.concatenate([pad, seeding], axis=1)
        seed_len = lookback

    r_base = base_reproduction_series(params, n_ages, n_days)
    infect = (
        infectability
        if infectability is not None
        else infectability_table(schedule, waning, params.protection)
    )
    r_eff = r_base * np.repeat(infect, 7, axis=1)[:, :n_days]
    if np.any(r_eff < 0) or not np.all(np.isfinite(r_eff)):
        raise DynamicsError("non-finite or negative effective reproduction number")
    sqrt_r = np.sqrt(r_eff)

    influx_daily = np.repeat(params.influx_weekly / 7.0, 7, axis=1)[:, :n_days]

    e, s = renewal_loop(
        sqrt_r,
        contacts.matrix,
        seeding,
        influx_daily,
        populations,
        params.kernel[::-1].copy(),
        susceptible_depletion,
    )

    exposures = e[:, seed_len:]
    weekly_exposures = exposures.reshape(n_ages, m, 7).sum(axis=2)
    weekly_cases = delayed_weekly_cases(e, seed_len, m)

    week_start_s = s[:, 0 : 7 * m : 7]
    with np.errstate(divide="ignore", invalid="ignore"):
        infection_probability = np.where(week_start_s > 0, weekly_exposures / week_start_s, 0.0)

    return EpidemicState(
        grid=grid,
        populations=populations,
        daily_exposures=exposures,
        susceptibles=s,
        weekly_exposures=weekly_exposures,
        weekly_cases=weekly_cases,
        infection_probability=infection_probability,
        influx_daily=influx_daily,
        seeding=seeding,
    )


def correction_factor(factual: EpidemicState, counterfactual: EpidemicState) -> np.ndarray:
    """f1(a, t): counterfactual over factual weekly infection probability.

    Weeks with zero factual infection probability fall back to 1 (no severity
    information to rescale) and are logged.
    """
    p_fact = factual.infection_probability
    p_counter = counterfactual.infection_probability
    out = np.ones_like(p_fact)
    ok = p_fact > 0
    out[ok] = p_counter[ok] / p_fact[ok]
    degenerate = (~ok) & (p_counter > 0)
    if np.any(degenerate):
        n = int(degenerate.sum())
        logger.warning(
            "correction factor: %d (age, week) cells have zero factual infections; using 1", n
        )
    return out

"""Synthetic dataset generation with stored ground truth.

Two severe-table modes:

- ``rollout``: stratum populations follow the vaccination rollout, waning
  times come from the reconstructed joint strategy. Realistic; estimators
  recover the generating factors up to week-weighting bias.
- ``cohort``: constant stratum populations and synthetic waning-time
  distributions for every (v, a, t). Decoupled from the rollout, this makes
  the factor estimators exact, which the recovery tests rely on.

Cases are the simulated weekly counts plus optional Student-t reporting
noise; severe counts are exact products of the generating factorization
(optionally binomial-sampled). ``truth.json`` stores everything needed for
recovery checks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from counterfact.calendar import WeekGrid
from counterfact.data.schema import (
    AGE_LABELS,
    AgeGroup,
    DataError,
    ObservedDataset,
    derive_vacc_fractions,
)
from counterfact.dynamics import (
    DynamicsParams,
    backcast_seeding,
    build_contact_matrix,
    generation_interval_kernel,
    simulate,
)
from counterfact.severity import WaningCurve, fit_waning
from counterfact.strategy import reconstruct_factual, schedule_from_strategy


@dataclass(frozen=True)
class SyntheticSpec:
    """Complete description of a synthetic world."""

    label: str
    anchor: date
    n_weeks: int
    age_labels: tuple[str, ...]
    populations: tuple[float, ...]
    dose_marginals: np.ndarray  # (3, A, M)
    r_base: np.ndarray  # (A, 7 * M) daily truth
    waning: WaningCurve
    g: np.ndarray  # (4, A) truth, anchored however the caller likes
    mixing_gamma: float = 0.8
    influx_per_million_week: float = 0.7  # deterministic weekly influx per 1e6
    seed_daily: tuple[float, ...] | None = None  # pre-window daily exposures per age
    case_noise_kappa: float = 0.0
    severe_mode: str = "rollout"  # or "cohort"
    cohort_stratum_size: float = 10_000.0
    severe_noise: bool = False
    f0: np.ndarray | None = None  # explicit weekly truth; else derived from the epidemic
    f0_scale: float = 1e-4  # scale applied to the case-rate shape when f0 is None

    def __post_init__(self) -> None:
        if len(self.age_labels) != len(self.populations):
            raise DataError("age_labels and populations disagree")
        if any(p <= 0 for p in self.populations):
            raise DataError("populations must be positive")
        if self.severe_mode not in ("rollout", "cohort"):
            raise DataError(f"unknown severe_mode {self.severe_mode!r}")
        if self.case_noise_kappa < 0:
            raise DataError("case_noise_kappa must be non-negative")

    @property
    def grid(self) -> WeekGrid:
        return WeekGrid(anchor=self.anchor, n_weeks=self.n_weeks)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> ObservedDataset:
    """Deterministic dataset for a fixed spec and seed, with ground truth."""
    rng = np.random.default_rng(seed)
    grid = spec.grid
    populations = np.array(spec.populations, dtype=float)
    n_ages, m = len(populations), spec.n_weeks

    factual = reconstruct_factual(spec.dose_marginals, spec.age_labels, label="Factual")
    schedule = schedule_from_strategy(factual, populations)

    influx = np.full((n_ages, m), 0.0)
    influx += spec.influx_per_million_week * populations[:, None] / 1e6
    params = DynamicsParams(
        r0=np.ones(n_ages),
        change_points=None,
        influx_weekly=influx,
        kernel=generation_interval_kernel(),
        base_trajectory=np.asarray(spec.r_base, dtype=float),
    )
    if spec.seed_daily is not None:
        seeding = np.tile(np.array(spec.seed_daily, dtype=float)[:, None], (1, 13))
    else:
        seeding = backcast_seeding(0.5 * populations / 1e3)
    contacts = build_contact_matrix(spec.mixing_gamma, populations)
    state = simulate(params, schedule, spec.waning, seeding, grid, populations, contacts)

    cases = state.weekly_cases.copy()
    if spec.case_noise_kappa > 0:
        noise = rng.standard_t(df=4, size=cases.shape)
        cases = cases + spec.case_noise_kappa * np.sqrt(cases + 1.0) * noise
        cases = np.round(np.clip(cases, 0.0, populations[:, None]))

    if spec.f0 is not None:
        f0 = np.asarray(spec.f0, dtype=float).copy()
    else:
        national = state.weekly_cases.sum(axis=0) / populations.sum()
        f0 = spec.f0_scale * national / max(national.mean(), 1e-300)

    if spec.severe_mode == "rollout":
        severe_pops = schedule.fractions * populations[None, :, None]
        waning_dist = schedule.waning_distribution()
    else:
        severe_pops = np.full((4, n_ages, m), float(spec.cohort_stratum_size))
        waning_dist = _cohort_waning_dist(rng, n_ages, m)

    mean_h = np.ones((4, n_ages, m))
    for v in range(1, 4):
        h_values = spec.waning.waning_factor(v, np.arange(m, dtype=float))
        for a in range(n_ages):
            for t in range(1, m + 1):
                dist = waning_dist[v - 1, a, t - 1]
                total = dist.sum()
                if total > 0:
                    mean_h[v, a, t - 1] = float(np.dot(dist, h_values) / total)

    probs = f0[None, None, :] * spec.g[:, :, None] * mean_h
    if np.any(probs > 1.0):
        raise DataError(
            f"severity probabilities exceed 1 (max {probs.max():.3g}); lower f0 or g"
        )
    severe_counts = probs * severe_pops
    if spec.severe_noise:
        severe_counts = rng.binomial(
            np.round(severe_pops).astype(int), np.clip(probs, 0.0, 1.0)
        ).astype(float)

    dose_counts = spec.dose_marginals * populations[None, :, None]
    vacc_fractions = derive_vacc_fractions(dose_counts, populations)
    if spec.severe_mode == "rollout":
        # strategy-derived fractions and the cumulative marginals must agree
        if not np.allclose(vacc_fractions, schedule.fractions, atol=1e-9):
            raise DataError("strategy-derived fractions disagree with dose marginals")

    groups = tuple(
        AgeGroup(index=i, label=lbl, population=float(p))
        for i, (lbl, p) in enumerate(zip(spec.age_labels, populations))
    )
    weekly_r_base = np.asarray(spec.r_base).reshape(n_ages, m, 7).mean(axis=2)
    truth = {
        "label": spec.label,
        "seed": seed,
        "f0": f0.tolist(),
        "g": np.asarray(spec.g, dtype=float).tolist(),
        "waning": spec.waning.to_dict(),
        "r_base_weekly": weekly_r_base.tolist(),
        "influx_weekly": influx.tolist(),
        "mixing_gamma": spec.mixing_gamma,
        "case_noise_kappa": spec.case_noise_kappa,
        "severe_mode": spec.severe_mode,
        "infection_probability": state.infection_probability.tolist(),
        "weekly_exposures": state.weekly_exposures.tolist(),
        "seed_daily": seeding[:, 0].tolist(),
    }

    dataset = ObservedDataset(
        grid=grid,
        groups=groups,
        cases=cases,
        severe_counts=severe_counts,
        severe_pops=severe_pops,
        dose_counts=dose_counts,
        vacc_fractions=vacc_fractions,
        waning_dist=waning_dist,
        truth=truth,
    )
    dataset.validate()
    return dataset


def _cohort_waning_dist(rng: np.random.Generator, n_ages: int, m: int) -> np.ndarray:
    """Random normalised waning-time distributions on w <= min(t-1, 12)."""
    dist = np.zeros((3, n_ages, m, m))
    for v in range(3):
        for a in range(n_ages):
            for t in range(1, m + 1):
                support = min(t - 1, 12) + 1
                weights = rng.random(support) + 0.1
                dist[v, a, t - 1, :support] = weights / weights.sum()
    return dist


def write_bundle(spec: SyntheticSpec, seed: int, directory: str | Path) -> ObservedDataset:
    from counterfact.data.loader import save_dataset

    dataset = generate_synthetic(spec, seed)
    save_dataset(dataset, directory)
    return dataset


# ---------------------------------------------------------------------------
# rollout building blocks


def smooth_bump(n_weeks: int, start: int, end: int, total: float) -> np.ndarray:
    """Raised-cosine weekly mass on weeks start..end (1-based, inclusive)."""
    out = np.zeros(n_weeks)
    start = max(1, start)
    end = min(n_weeks, end)
    if end < start or total <= 0:
        return out
    shape = np.sin(np.linspace(0.0, np.pi, end - start + 1)) + 0.05
    out[start - 1 : end] = shape / shape.sum() * total
    return out


def piecewise_daily(n_days: int, knots: list[tuple[int, float]]) -> np.ndarray:
    """Daily trajectory linearly interpolated between (day, value) knots."""
    days = [d for d, _ in knots]
    values = [v for _, v in knots]
    return np.interp(np.arange(n_days), days, values)


# ---------------------------------------------------------------------------
# presets


def desk_spec(
    n_weeks: int = 30,
    kappa: float = 3.0,
    with_vaccination: bool = False,
    label: str = "desk",
) -> SyntheticSpec:
    """Small two-group world with a known piecewise base reproduction number."""
    populations = (1_000_000.0, 800_000.0)
    age_labels = ("0-59", "60+")
    n_days = 7 * n_weeks
    r0 = piecewise_daily(
        n_days,
        [(0, 1.25), (60, 1.25), (75, 0.85), (130, 0.85), (145, 1.15), (n_days - 1, 1.15)],
    )
    r1 = piecewise_daily(
        n_days,
        [(0, 1.15), (60, 1.15), (75, 0.8), (130, 0.8), (145, 1.1), (n_days - 1, 1.1)],
    )
    marginals = np.zeros((3, 2, n_weeks))
    if with_vaccination:
        for a, uptake in enumerate((0.6, 0.9)):
            first = smooth_bump(n_weeks, 2, 12, uptake)
            marginals[0, a] = first
            marginals[1, a] = np.roll(first, 3) * (np.arange(1, n_weeks + 1) > 3)
            booster_start = 18
            marginals[2, a] = smooth_bump(n_weeks, booster_start, n_weeks, 0.5 * uptake)
    g = np.array([[0.02, 1.0], [0.008, 0.4], [0.002, 0.1], [0.001, 0.05]])
    return SyntheticSpec(
        label=label,
        anchor=date(2021, 1, 3),
        n_weeks=n_weeks,
        age_labels=age_labels,
        populations=populations,
        dose_marginals=marginals,
        r_base=np.vstack([r0, r1]),
        waning=fit_waning(),
        g=g,
        mixing_gamma=0.3,
        influx_per_million_week=0.7,
        seed_daily=(120.0, 80.0),
        case_noise_kappa=kappa,
        severe_mode="rollout",
        f0_scale=2e-4,
    )


ISRAEL_POPULATIONS: tuple[float, ...] = (
    3_100_000.0,  # 0-19
    1_400_000.0,  # 20-29
    1_300_000.0,  # 30-39
    1_150_000.0,  # 40-49
    850_000.0,  # 50-59
    750_000.0,  # 60-69
    480_000.0,  # 70-79
    210_000.0,  # 80-89
    51_000.0,  # 90+
)  # sums to 9,291,000

# (dose-1 uptake, dose-1 weeks, booster uptake, booster weeks); second doses
# follow the first-dose curve three weeks later at 96 % completion. The 0-19
# group splits into a winter cohort and a summer cohort and boosters last;
# all adult groups shed a small late-converts share into an autumn drip.
_ISRAEL_ROLLOUT = (
    None,
    (0.76, (5, 16), 0.68, (34, 41)),  # 20-29
    (0.82, (4, 15), 0.74, (34, 41)),  # 30-39
    (0.87, (3, 13), 0.78, (34, 40)),  # 40-49
    (0.91, (2, 12), 0.82, (33, 40)),  # 50-59
    (0.93, (1, 7), 0.86, (33, 46)),  # 60-69
    (0.95, (1, 7), 0.86, (33, 46)),  # 70-79
    (0.94, (1, 7), 0.86, (33, 46)),  # 80-89
    (0.90, (1, 7), 0.80, (33, 46)),  # 90+
)
_LATE_CONVERT_SHARE = 0.02
_LATE_CONVERT_WEEKS = (22, 36)

# winter wave level, lockdown level, spring level, delta-summer plateau; the
# delta wave is carried by the middle and older groups while the youngest
# stay low (school summer break at the wave onset)
_ISRAEL_R_LEVELS = (
    (1.60, 0.92, 1.50, 1.70),  # 0-19
    (1.40, 0.90, 1.40, 3.40),  # 20-29
    (1.35, 0.90, 1.38, 3.35),  # 30-39
    (1.28, 0.88, 1.30, 3.15),  # 40-49
    (1.15, 0.86, 1.20, 2.90),  # 50-59
    (1.07, 0.84, 1.12, 2.70),  # 60-69
    (1.02, 0.82, 1.06, 2.55),  # 70-79
    (1.00, 0.82, 1.03, 2.45),  # 80-89
    (0.98, 0.82, 1.03, 2.40),  # 90+
)

# unvaccinated severe-case risk relative to 60-69; dose effects multiply
ISRAEL_G0: tuple[float, ...] = (0.013, 0.04, 0.11, 0.30, 0.55, 1.0, 2.1, 4.2, 7.0)
_ISRAEL_DOSE_RISK = (0.35, 0.12, 0.04)

# cumulative severe cases per 100k over the two waves that the severe table
# is calibrated to reproduce under the factual strategy
ISRAEL_WAVE_SEVERE_PER_100K = (184.0, 126.0)
_WAVE3_WEEKS = range(1, 18)  # 2020-12-20 .. 2021-04-11 week starts
_WAVE4_WEEKS = range(27, 48)  # 2021-06-20 .. 2021-11-07
_CALIBRATION_SPLIT_WEEK = 23  # f0 scaled separately before/after


def israel_marginals(n_weeks: int = 53) -> np.ndarray:
    marg = np.zeros((3, 9, n_weeks))
    lo, hi = _LATE_CONVERT_WEEKS
    for a, plan in enumerate(_ISRAEL_ROLLOUT):
        if plan is None:  # 0-19
            first = smooth_bump(n_weeks, 7, 20, 0.16) + smooth_bump(n_weeks, 22, 36, 0.12)
            booster = smooth_bump(n_weeks, 40, 48, 0.22)
        else:
            u1, (w0, w1), u3, (b0, b1) = plan
            first = smooth_bump(n_weeks, w0, w1, u1 - _LATE_CONVERT_SHARE) + smooth_bump(
                n_weeks, lo, hi, _LATE_CONVERT_SHARE
            )
            booster = smooth_bump(n_weeks, b0, b1, u3)
        second = np.roll(first, 3) * 0.96
        second[:3] = 0.0
        marg[0, a] = first
        marg[1, a] = second
        marg[2, a] = booster
    return marg


def israel_r_base(n_days: int = 53 * 7) -> np.ndarray:
    rows = []
    for winter, lockdown, spring, delta in _ISRAEL_R_LEVELS:
        rows.append(
            piecewise_daily(
                n_days,
                [
                    (0, winter),
                    (18, winter),
                    (33, lockdown),
                    (60, lockdown),
                    (80, spring),
                    (130, spring),
                    (162, delta),
                    (210, delta),
                    (n_days - 1, delta),
                ],
            )
        )
    return np.vstack(rows)


def israel_spec(case_noise_kappa: float = 8.0, label: str = "israel-like") -> SyntheticSpec:
    """Nine-group, 53-week world shaped after Israel's 2021 epidemic.

    Rollout, base reproduction levels and risk factors are chosen so the
    factual run shows the winter and delta waves with the published
    cumulative severe incidence; counterfactual orderings emerge from the
    age structure (young-driven winter wave, middle/elderly-driven summer
    onset, booster-ended delta wave).
    """
    g0 = np.array(ISRAEL_G0)
    g = np.vstack([g0] + [r * g0 for r in _ISRAEL_DOSE_RISK])
    populations = ISRAEL_POPULATIONS
    total = sum(populations)
    seeds = [2400.0 * p / total for p in populations]
    seeds[0] *= 1.3  # winter wave seeded disproportionately among the young
    base = SyntheticSpec(
        label=label,
        anchor=date(2020, 12, 20),
        n_weeks=53,
        age_labels=AGE_LABELS,
        populations=populations,
        dose_marginals=israel_marginals(),
        r_base=israel_r_base(),
        waning=fit_waning(),
        g=g,
        mixing_gamma=0.8,
        influx_per_million_week=0.7,
        seed_daily=tuple(seeds),
        case_noise_kappa=case_noise_kappa,
        severe_mode="rollout",
        f0_scale=2e-5,
    )
    return _calibrate_severe(base)


def _calibrate_severe(spec: SyntheticSpec) -> SyntheticSpec:
    """Pin the factual per-wave severe incidence via two f0 segments."""
    probe = generate_synthetic(spec, seed=0)
    d = probe.total_population
    f0 = np.array(probe.truth["f0"])
    severe = probe.severe_counts.sum(axis=(0, 1))
    split = _CALIBRATION_SPLIT_WEEK
    wave3 = severe[[t - 1 for t in _WAVE3_WEEKS]].sum() / d * 1e5
    wave4 = severe[[t - 1 for t in _WAVE4_WEEKS]].sum() / d * 1e5
    s3 = ISRAEL_WAVE_SEVERE_PER_100K[0] / wave3
    s4 = ISRAEL_WAVE_SEVERE_PER_100K[1] / wave4
    f0[: split - 1] *= s3
    f0[split - 1 :] *= s4
    return replace(spec, f0=f0)


def cohort_spec(
    n_ages: int = 4,
    n_weeks: int = 20,
    f0: np.ndarray | None = None,
    g: np.ndarray | None = None,
    label: str = "cohort",
) -> SyntheticSpec:
    """Noise-free, exactly factorized severe tables for estimator round-trips."""
    populations = tuple(500_000.0 + 150_000.0 * i for i in range(n_ages))
    labels = tuple(AGE_LABELS[:n_ages]) if n_ages <= 9 else tuple(f"g{i}" for i in range(n_ages))
    if "60-69" not in labels:
        labels = labels[:-1] + ("60-69",)
    n_days = 7 * n_weeks
    if f0 is None:
        weeks = np.arange(n_weeks)
        f0 = 1e-3 * (1.0 + 0.5 * np.sin(2.0 * np.pi * weeks / n_weeks) + 0.1 * weeks / n_weeks)
    if g is None:
        ref = labels.index("60-69")
        base = np.geomspace(0.05, 2.0, n_ages)
        base = base / base[ref]
        g = np.vstack([base, 0.5 * base, 0.15 * base, 0.06 * base])
    marginals = np.zeros((3, n_ages, n_weeks))
    r = np.full((n_ages, n_days), 1.0)
    return SyntheticSpec(
        label=label,
        anchor=date(2021, 1, 3),
        n_weeks=n_weeks,
        age_labels=labels,
        populations=populations,
        dose_marginals=marginals,
        r_base=r,
        waning=fit_waning(),
        g=np.asarray(g, dtype=float),
        mixing_gamma=0.5,
        influx_per_million_week=0.7,
        seed_daily=tuple(50.0 for _ in range(n_ages)),
        case_noise_kappa=0.0,
        severe_mode="cohort",
        f0=np.asarray(f0, dtype=float),
    )

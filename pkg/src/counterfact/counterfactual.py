"""Counterfactual scenario evaluation.

The expected severe-case count under an allocation strategy splits every
(dose-times, week) combination into four exclusive branches by vaccination
status at that week:

    s(a, t) = D_a * f0(t) * f1(a, t) * sum over support {
        mass * g(0, a)                    if t <  t1
        mass * g(1, a) * h1(t - t1)       if t1 <= t < t2
        mass * g(2, a) * h2(t - t2)       if t2 <= t < t3
        mass * g(3, a) * h3(t - t3)       if t3 <= t
    }

Evaluation couples this to the renewal simulation: each posterior draw is
simulated under the factual schedule (regular waning) and the scenario
schedule (scenario waning); their weekly infection-probability ratio is the
correction factor f1 entering the sum. Infections are reported straight from
the scenario simulation. Credible intervals are equal-tailed percentiles of
the per-draw results.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from counterfact.calendar import WeekGrid
from counterfact.data.schema import ObservedDataset
from counterfact.dynamics import EpidemicState, infectability_table, simulate
from counterfact.inference.model import InferenceConfig, PosteriorModel
from counterfact.inference.sampler import PosteriorResult, PosteriorSample
from counterfact.severity import SeverityFactorization, WaningCurve, estimate_factorization
from counterfact.strategy import (
    AllocationStrategy,
    boost_uptake,
    generate_ranked,
    generate_uniform,
    reconstruct_factual,
    schedule_from_strategy,
)

logger = logging.getLogger(__name__)

N_JOINT_SAMPLES = 1000
FAST_WANING_TIMESCALE = 0.75

# Third and fourth infection waves (figure captions); endpoints align with
# week starts of the analysis grid.
WAVE_WINDOWS: tuple[tuple[str, date, date], ...] = (
    ("third", date(2020, 12, 20), date(2021, 4, 11)),
    ("fourth", date(2021, 6, 20), date(2021, 11, 7)),
)

# Young-adult-peaked age profile of excess respiratory death rates in the
# 1918-19 Spanish Flu (Kentucky); relative values, rescaled before use.
# Digitised shape, overridable via ScenarioSpec.risk_shape_override.
SPANISH_FLU_SHAPE: tuple[float, ...] = (0.8, 2.4, 2.2, 1.2, 0.8, 0.6, 0.5, 0.6, 0.7)

FLAT_UPTAKE = 0.90  # three-dose willingness assumed for non-COVID profiles


class ScenarioError(ValueError):
    """Inconsistent scenario specification."""


@dataclass(frozen=True)
class ScenarioSpec:
    """One counterfactual configuration."""

    strategy: str | AllocationStrategy = "factual"
    disease_profile: str = "covid"  # covid | spanish_flu | flat
    waning: str | float = "regular"  # regular | none | fast | timescale float
    mixing_gamma: float | None = None  # None = inherit the fit's value
    uptake_boost: tuple[str, float] | None = None  # (age label, extra doses)
    ranking: tuple[int, ...] | None = None  # explicit ranking for "ranked"
    label: str | None = None
    risk_shape_override: tuple[float, ...] | None = None

    def name(self) -> str:
        if self.label:
            return self.label
        if isinstance(self.strategy, AllocationStrategy):
            return self.strategy.label
        return str(self.strategy)


@dataclass
class ScenarioResult:
    """Per-draw infections and severe cases plus reporting helpers."""

    label: str
    grid: WeekGrid
    age_labels: tuple[str, ...]
    populations: np.ndarray
    severe_samples: np.ndarray  # (S, A, M)
    infection_samples: np.ndarray  # (S, A, M)
    strategy: AllocationStrategy | None = None
    f1_samples: np.ndarray | None = None  # (S, A, M)
    factorization: SeverityFactorization | None = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.severe_samples.shape[0]

    def _stack(self, metric: str) -> np.ndarray:
        if metric == "severe":
            return self.severe_samples
        if metric == "infections":
            return self.infection_samples
        raise ScenarioError(f"unknown metric {metric!r}")

    def summary(self, metric: str) -> dict[str, np.ndarray]:
        stack = self._stack(metric)
        return {
            "median": np.median(stack, axis=0),
            "lo95": np.percentile(stack, 2.5, axis=0),
            "hi95": np.percentile(stack, 97.5, axis=0),
        }

    def cumulative_samples(self, metric: str, weeks: list[int] | None = None) -> np.ndarray:
        """Per-draw totals over all ages and the given weeks (1-based)."""
        stack = self._stack(metric)
        if weeks is None:
            return stack.sum(axis=(1, 2))
        idx = [t - 1 for t in weeks]
        return stack[:, :, idx].sum(axis=(1, 2))

    def cumulative_per_100k(self, metric: str, weeks: list[int] | None = None) -> dict[str, float]:
        totals = self.cumulative_samples(metric, weeks) / self.populations.sum() * 1e5
        return {
            "median": float(np.median(totals)),
            "lo95": float(np.percentile(totals, 2.5)),
            "hi95": float(np.percentile(totals, 97.5)),
        }


def _f1_from_probabilities(p_factual: np.ndarray, p_counterfactual: np.ndarray) -> np.ndarray:
    """Correction factor from weekly infection probabilities; 0/0 cells use 1."""
    out = np.ones_like(p_factual)
    ok = p_factual > 0
    out[ok] = p_counterfactual[ok] / p_factual[ok]
    degenerate = (~ok) & (p_counterfactual > 0)
    if np.any(degenerate):
        logger.warning(
            "correction factor: %d (age, week) cells have zero factual infections; using 1",
            int(degenerate.sum()),
        )
    return out


def target_function(
    strategy: AllocationStrategy,
    fact: SeverityFactorization,
    populations: np.ndarray,
) -> np.ndarray:
    """Expected severe cases per (age, week) under the strategy, shape (A, M)."""
    m = strategy.n_weeks
    if fact.n_weeks != m:
        raise ScenarioError(
            f"strategy covers {m} weeks but the factorization covers {fact.n_weeks}"
        )
    h = np.ones((4, m))
    for v in range(1, 4):
        h[v] = fact.waning.waning_factor(v, np.arange(m, dtype=float))
    out = np.zeros((strategy.n_ages, m))
    for a, joint in enumerate(strategy.per_age):
        acc = np.zeros(m)
        for (t1, t2, t3), mass in joint.items():
            bounds = (1, t1, t2, t3, m + 1)
            for v in range(4):
                lo, hi = bounds[v], min(bounds[v + 1] - 1, m)
                if lo > m or hi < lo:
                    continue
                if v == 0:
                    acc[lo - 1 : hi] += mass * fact.g[0, a]
                else:
                    t = np.arange(lo, hi + 1)
                    acc[lo - 1 : hi] += mass * fact.g[v, a] * h[v, t - bounds[v]]
        out[a] = populations[a] * fact.f0 * fact.f1[a] * acc
    if not np.all(np.isfinite(out)):
        raise ScenarioError(
            "severe-case expectation is not finite; the strategy places mass on "
            "strata with unidentified risk factors"
        )
    return out


def brute_force_target(
    strategy: AllocationStrategy,
    fact: SeverityFactorization,
    populations: np.ndarray,
) -> np.ndarray:
    """Reference enumeration over every (t1, t2, t3, t) tuple; test oracle."""
    m = strategy.n_weeks
    out = np.zeros((strategy.n_ages, m))
    for a, joint in enumerate(strategy.per_age):
        for (t1, t2, t3), mass in joint.items():
            for t in range(1, m + 1):
                v = sum(1 for ti in (t1, t2, t3) if ti <= t)
                w = (0, t - t1, t - t2, t - t3)[v]
                out[a, t - 1] += mass * fact.probability(v, a, t, w) * populations[a]
    return out


# ---------------------------------------------------------------------------
# evaluator


class ScenarioEvaluator:
    """Shares the factual baseline runs across scenario evaluations."""

    def __init__(
        self,
        dataset: ObservedDataset,
        posterior: PosteriorResult | list[PosteriorSample],
        config: InferenceConfig,
        factorization: SeverityFactorization | None = None,
        factual_strategy: AllocationStrategy | None = None,
        n_samples: int = N_JOINT_SAMPLES,
    ):
        self.dataset = dataset
        self.config = config
        self.model = PosteriorModel(dataset, config)
        samples = posterior.samples if isinstance(posterior, PosteriorResult) else list(posterior)
        if not samples:
            raise ScenarioError("no posterior samples")
        if len(samples) < n_samples:
            logger.warning(
                "only %d posterior samples available (wanted %d); using all",
                len(samples),
                n_samples,
            )
        self.samples = samples[:n_samples]
        self.populations = dataset.populations
        self.grid = dataset.grid
        self.age_labels = tuple(g.label for g in dataset.groups)

        marginals = dataset.dose_counts / self.populations[None, :, None]
        self.factual = (
            factual_strategy
            if factual_strategy is not None
            else reconstruct_factual(marginals, self.age_labels)
        )
        self.factual_schedule = schedule_from_strategy(self.factual, self.populations)
        self.waning_regular = self.model.waning
        self.factorization = (
            factorization
            if factorization is not None
            else estimate_factorization(dataset, waning=self.waning_regular)
        )
        # per-sample (weekly exposures, weekly infection probability) pairs,
        # keyed by (strategy object, waning setting); full EpidemicStates are
        # too heavy to keep for a thousand draws
        self._run_cache: dict[tuple[int, str], list[tuple[np.ndarray, np.ndarray]]] = {}
        self._strategy_cache: dict[str, AllocationStrategy] = {}

    # -- shared plumbing ----------------------------------------------------

    def _simulate(
        self,
        sample: PosteriorSample,
        schedule,
        waning: WaningCurve,
        infectability: np.ndarray | None = None,
    ) -> EpidemicState:
        params = self.model.dynamics_params(sample.params)
        return simulate(
            params,
            schedule,
            waning,
            self.model.seeding,
            self.grid,
            self.populations,
            self.model.contacts,
            susceptible_depletion=self.config.susceptible_depletion,
            infectability=infectability,
        )

    def _runs(
        self, strategy: AllocationStrategy, schedule, waning: WaningCurve, waning_key: str
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        key = (id(strategy), waning_key)
        runs = self._run_cache.get(key)
        if runs is None:
            infect = infectability_table(schedule, waning, self.config.protection)
            runs = []
            for sample in self.samples:
                state = self._simulate(sample, schedule, waning, infectability=infect)
                runs.append((state.weekly_exposures, state.infection_probability))
            self._run_cache[key] = runs
        return runs

    def factual_runs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self._runs(self.factual, self.factual_schedule, self.waning_regular, "regular")

    def waning_curve(self, setting: str | float) -> WaningCurve:
        if setting == "regular" or setting == 1.0:
            return self.waning_regular
        if setting in ("none", "noWaning", "no_waning"):
            return self.waning_regular.without_waning()
        if setting == "fast":
            return self.waning_regular.rescaled(FAST_WANING_TIMESCALE)
        if isinstance(setting, (int, float)):
            return self.waning_regular.rescaled(float(setting))
        raise ScenarioError(f"unknown waning setting {setting!r}")

    def risk_profile(self, spec: ScenarioSpec) -> np.ndarray | None:
        """Unscaled g(0, .) override for non-COVID profiles, else None."""
        name = spec.disease_profile.lower()
        if name == "covid":
            return None
        if name in ("flat", "flat_risk", "flatrisk"):
            return np.ones(len(self.age_labels))
        if name in ("spanish_flu", "spanishflu"):
            shape = spec.risk_shape_override or SPANISH_FLU_SHAPE
            if len(shape) != len(self.age_labels):
                raise ScenarioError("risk shape length does not match the age groups")
            return np.array(shape, dtype=float)
        raise ScenarioError(f"unknown disease profile {spec.disease_profile!r}")

    def profile_g(self, g0_shape: np.ndarray) -> np.ndarray:
        """Full g matrix for an overridden risk shape, age-constant efficacy.

        The per-dose risk reduction is the population-weighted mean of the
        estimated COVID ratios g(v, .) / g(0, .).
        """
        g_cov = self.factorization.g
        weights = self.populations / self.populations.sum()
        g = np.empty_like(g_cov)
        g[0] = g0_shape
        for v in range(1, 4):
            ratio = g_cov[v] / g_cov[0]
            ok = np.isfinite(ratio)
            r_v = float(np.average(ratio[ok], weights=weights[ok]))
            g[v] = g0_shape * r_v
        return g

    def resolve_strategy(self, spec: ScenarioSpec) -> AllocationStrategy:
        if isinstance(spec.strategy, AllocationStrategy):
            return spec.strategy
        name = spec.strategy.lower()
        profile = spec.disease_profile.lower()
        caps = None
        if profile not in ("covid",) and name not in ("factual", "uniform"):
            caps = np.full((3, len(self.age_labels)), FLAT_UPTAKE)
        cache_key = f"{name}|{profile}|{spec.uptake_boost}"
        if cache_key in self._strategy_cache:
            return self._strategy_cache[cache_key]

        if name == "factual":
            out = self.factual
        elif name == "uniform":
            out = generate_uniform(self.factual, self.populations)
        elif name in ("elderlyfirst", "elderly_first"):
            ranking = list(range(len(self.age_labels) - 1, -1, -1))
            out = generate_ranked(
                self.factual, ranking, self.populations, label="ElderlyFirst", uptake_caps=caps
            )
        elif name in ("youngfirst", "young_first"):
            ranking = list(range(len(self.age_labels)))
            out = generate_ranked(
                self.factual, ranking, self.populations, label="YoungFirst", uptake_caps=caps
            )
        elif name in ("riskranked", "risk_ranked", "riskrankedreversed", "risk_ranked_reversed"):
            g0 = self.risk_profile(spec)
            if g0 is None:
                g0 = self.factorization.g[0]
            reverse = "reversed" in name
            if np.ptp(g0) < 1e-12:
                # flat risk: every ranking is equivalent to no prioritisation
                out = generate_uniform(self.factual, self.populations)
            else:
                order = np.argsort(-g0, kind="stable")
                ranking = list(order[::-1] if reverse else order)
                out = generate_ranked(
                    self.factual,
                    ranking,
                    self.populations,
                    label="RiskRankedReversed" if reverse else "RiskRanked",
                    uptake_caps=caps,
                )
        elif name == "ranked":
            if spec.ranking is None:
                raise ScenarioError("'ranked' needs an explicit ranking")
            out = generate_ranked(self.factual, list(spec.ranking), self.populations)
        elif name in ("uptake", "boost", "uptake_boost"):
            if spec.uptake_boost is None:
                raise ScenarioError("'uptake' needs (age label, extra doses)")
            label, doses = spec.uptake_boost
            group = self.age_labels.index(label)
            out = boost_uptake(self.factual, group, float(doses), self.populations)
        else:
            raise ScenarioError(f"unknown strategy {spec.strategy!r}")
        self._strategy_cache[cache_key] = out
        return out

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, spec: ScenarioSpec, g_override: np.ndarray | None = None) -> ScenarioResult:
        if spec.mixing_gamma is not None and abs(spec.mixing_gamma - self.config.mixing_gamma) > 1e-12:
            raise ScenarioError(
                f"scenario wants mixing {spec.mixing_gamma} but the posterior was fit at "
                f"{self.config.mixing_gamma}; re-run the fit"
            )
        strategy = self.resolve_strategy(spec)
        scenario_waning = self.waning_curve(spec.waning)
        schedule = (
            self.factual_schedule
            if strategy is self.factual
            else schedule_from_strategy(strategy, self.populations)
        )

        fact = self.factorization
        if g_override is not None:
            fact = fact.with_g(g_override)
        elif spec.disease_profile.lower() != "covid":
            raise ScenarioError(
                "non-COVID profiles need a normalised g override; use evaluate_profiles()"
            )
        fact = fact.with_waning(scenario_waning)

        n = len(self.samples)
        m = self.grid.n_weeks
        n_ages = len(self.age_labels)
        severe = np.empty((n, n_ages, m))
        infections = np.empty((n, n_ages, m))
        f1_all = np.empty((n, n_ages, m))
        factual = self.factual_runs()
        same_world = strategy is self.factual and scenario_waning is self.waning_regular
        if same_world:
            cf_runs = factual
        else:
            waning_key = "regular" if scenario_waning is self.waning_regular else str(spec.waning)
            cf_runs = self._runs(strategy, schedule, scenario_waning, waning_key)
        for i in range(n):
            fact_exposures, fact_prob = factual[i]
            cf_exposures, cf_prob = cf_runs[i]
            f1 = _f1_from_probabilities(fact_prob, cf_prob)
            severe[i] = target_function(strategy, fact.with_f1(f1), self.populations)
            infections[i] = cf_exposures
            f1_all[i] = f1
        return ScenarioResult(
            label=spec.name(),
            grid=self.grid,
            age_labels=self.age_labels,
            populations=self.populations,
            severe_samples=severe,
            infection_samples=infections,
            strategy=strategy,
            f1_samples=f1_all,
            factorization=fact,
        )

    def evaluate_profiles(
        self, strategies: list[str], profiles: list[str] = ("covid", "spanish_flu", "flat")
    ) -> dict[str, dict[str, ScenarioResult]]:
        """Disease-profile comparison with the Uniform normalisation rule."""
        out: dict[str, dict[str, ScenarioResult]] = {}
        covid_uniform = self.evaluate(ScenarioSpec(strategy="uniform"))
        for profile in profiles:
            out[profile] = {}
            if profile == "covid":
                for s in strategies:
                    out[profile][s] = (
                        covid_uniform if s == "uniform" else self.evaluate(ScenarioSpec(strategy=s))
                    )
                continue
            g_scaled = disease_profile(profile, covid_uniform, self)
            for s in strategies:
                spec = ScenarioSpec(strategy=s, disease_profile=profile)
                out[profile][s] = self.evaluate(spec, g_override=g_scaled)
        return out


def disease_profile(
    name: str, uniform_baseline: ScenarioResult, evaluator: ScenarioEvaluator
) -> np.ndarray:
    """Scaled g matrix for a risk profile.

    The scale matches the median cumulative severe total under the Uniform
    strategy to the COVID Uniform baseline, evaluated on the same correction
    factor draws, so the normalisation is exact by construction.
    """
    if uniform_baseline.f1_samples is None or uniform_baseline.strategy is None:
        raise ScenarioError("uniform baseline lacks the stored correction factors")
    shape = evaluator.risk_profile(ScenarioSpec(strategy="uniform", disease_profile=name))
    if shape is None:
        return evaluator.factorization.g.copy()
    g_unscaled = evaluator.profile_g(shape)

    fact = evaluator.factorization.with_g(g_unscaled)
    totals = np.empty(uniform_baseline.n_samples)
    for i in range(uniform_baseline.n_samples):
        per_at = target_function(
            uniform_baseline.strategy,
            fact.with_f1(uniform_baseline.f1_samples[i]),
            evaluator.populations,
        )
        totals[i] = per_at.sum()
    target = float(np.median(uniform_baseline.cumulative_samples("severe")))
    scale = target / float(np.median(totals))
    return g_unscaled * scale


def evaluate_scenario(
    spec: ScenarioSpec,
    posterior: PosteriorResult | list[PosteriorSample],
    dataset: ObservedDataset,
    config: InferenceConfig,
    **kwargs,
) -> ScenarioResult:
    """One-shot evaluation; build a ScenarioEvaluator for repeated use."""
    return ScenarioEvaluator(dataset, posterior, config, **kwargs).evaluate(spec)


# ---------------------------------------------------------------------------
# wave summaries


def wave_summary(
    results: dict[str, ScenarioResult] | ScenarioResult,
    waves: tuple[tuple[str, date, date], ...] = WAVE_WINDOWS,
) -> list[dict]:
    """Cumulative per-100k table: one row per (strategy, wave, metric)."""
    if isinstance(results, ScenarioResult):
        results = {results.label: results}
    rows = []
    for label, result in results.items():
        for wave_name, start, end in waves:
            weeks = result.grid.weeks_between(start, end)
            for metric in ("infections", "severe"):
                if weeks:
                    stats = result.cumulative_per_100k(metric, weeks)
                else:
                    stats = {"median": 0.0, "lo95": 0.0, "hi95": 0.0}
                rows.append(
                    {
                        "strategy": label,
                        "wave": wave_name,
                        "metric": metric,
                        "median": stats["median"],
                        "lo95": stats["lo95"],
                        "hi95": stats["hi95"],
                    }
                )
    return rows


def write_wave_summary(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["strategy", "wave", "metric", "median", "lo95", "hi95"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_result_tables(result: ScenarioResult, directory: str | Path, stem: str) -> None:
    """Per-(age, week) medians and intervals for one scenario."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{stem}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age_label", "week", "metric", "median", "lo95", "hi95"])
        for metric in ("infections", "severe"):
            s = result.summary(metric)
            for a, label in enumerate(result.age_labels):
                for t in range(1, result.grid.n_weeks + 1):
                    writer.writerow(
                        [
                            label,
                            result.grid.week_start(t).isoformat(),
                            metric,
                            repr(float(s["median"][a, t - 1])),
                            repr(float(s["lo95"][a, t - 1])),
                            repr(float(s["hi95"][a, t - 1])),
                        ]
                    )
    meta = {
        "label": result.label,
        "n_samples": result.n_samples,
        "age_labels": list(result.age_labels),
    }
    (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2))

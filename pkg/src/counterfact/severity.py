"""Severe-case factorization: waning curve and factor estimators.

The severe-case probability is modelled as the product

    P(S=1 | v, a, t, w) = f0(t) * g(v, a) * h_v(w) * f1(a, t)

with f0 the shared time dependence, g the age/status risk factor (anchored
at g(0, 60-69) = 1), h_v the relative risk increase as vaccine protection
wanes (h_v(0) = 1, no waning for v = 0) and f1 the infection-dynamics
correction (identically 1 under the factual allocation).

g and f0 are estimated from the observed severe-case tables after dividing
out the expected waning factor of each stratum; the waning curve itself is a
logistic fit to published vaccine-efficacy decay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from counterfact.data.schema import ObservedDataset, REFERENCE_AGE_LABEL, age_index

# Second-dose efficacy against infection over months since vaccination,
# digitised from the published six-month follow-up of the BioNTech vaccine
# (Tartof et al., Lancet 2021). Period bounds in weeks (~4.345 weeks/month).
SECOND_DOSE_EFFICACY_TABLE: tuple[tuple[float, float, float], ...] = (
    (0.0, 4.345, 0.88),
    (4.345, 8.690, 0.77),
    (8.690, 13.036, 0.73),
    (13.036, 17.381, 0.67),
    (17.381, 21.726, 0.53),
    (21.726, 26.071, 0.47),
)

# Efficacy directly after dose 1/2/3 used on the severity side.
FULL_EFFICACY = (0.75, 0.90, 0.95)


class SeverityError(ValueError):
    """Invalid inputs to the waning fit or the factor estimators."""


@dataclass(frozen=True)
class WaningCurve:
    """Logistic vaccine-efficacy decay, shared shape across doses.

    Efficacy after the v-th dose is ``VE_v(w) = VE_v(0) * L(w/s) / L(0)``
    with ``L(w) = 1 / (1 + exp((w - midpoint) / steepness))``, so efficacy
    tends to zero for large waning times and equals the full efficacy at
    w = 0. ``timescale`` < 1 compresses the time axis (faster waning);
    ``no_waning`` pins efficacy at the full value.
    """

    full_efficacy: tuple[float, float, float] = FULL_EFFICACY
    midpoint: float = 20.0
    steepness: float = 8.0
    timescale: float = 1.0
    no_waning: bool = False

    def __post_init__(self) -> None:
        for ve in self.full_efficacy:
            if not 0.0 < ve < 1.0:
                raise SeverityError(f"full efficacy {ve} outside (0, 1)")
        if self.timescale <= 0:
            raise SeverityError("timescale must be positive")
        if self.steepness <= 0:
            raise SeverityError("steepness must be positive")

    def _logistic(self, w):
        return 1.0 / (1.0 + np.exp((np.asarray(w, dtype=float) - self.midpoint) / self.steepness))

    def efficacy_norm(self, w):
        """VE(w) / VE(0); dose-independent by construction."""
        if self.no_waning:
            return np.ones_like(np.asarray(w, dtype=float))
        w = np.asarray(w, dtype=float) / self.timescale
        return self._logistic(w) / self._logistic(0.0)

    def efficacy(self, dose: int, w):
        """Vaccine efficacy against infection w weeks after dose ``dose``."""
        self._check_dose(dose)
        return self.full_efficacy[dose - 1] * self.efficacy_norm(w)

    def waning_factor(self, dose: int, w):
        """h_v(w) = (1 - VE_v(w)) / (1 - VE_v(0)); equals 1 at w = 0."""
        self._check_dose(dose)
        ve0 = self.full_efficacy[dose - 1]
        return (1.0 - self.efficacy(dose, w)) / (1.0 - ve0)

    def rescaled(self, timescale: float) -> "WaningCurve":
        return WaningCurve(
            full_efficacy=self.full_efficacy,
            midpoint=self.midpoint,
            steepness=self.steepness,
            timescale=timescale,
            no_waning=False,
        )

    def without_waning(self) -> "WaningCurve":
        return WaningCurve(
            full_efficacy=self.full_efficacy,
            midpoint=self.midpoint,
            steepness=self.steepness,
            timescale=self.timescale,
            no_waning=True,
        )

    @staticmethod
    def _check_dose(dose: int) -> None:
        if dose not in (1, 2, 3):
            raise SeverityError(f"dose must be 1..3, got {dose}")

    def to_dict(self) -> dict:
        return {
            "full_efficacy": list(self.full_efficacy),
            "midpoint": self.midpoint,
            "steepness": self.steepness,
            "timescale": self.timescale,
            "no_waning": self.no_waning,
        }

    @staticmethod
    def from_dict(d: dict) -> "WaningCurve":
        return WaningCurve(
            full_efficacy=tuple(d["full_efficacy"]),
            midpoint=float(d["midpoint"]),
            steepness=float(d["steepness"]),
            timescale=float(d["timescale"]),
            no_waning=bool(d["no_waning"]),
        )


def fit_waning(
    efficacy_table: Sequence[tuple[float, float, float]] = SECOND_DOSE_EFFICACY_TABLE,
    full_efficacies: tuple[float, float, float] = FULL_EFFICACY,
    scale: float = 1.0,
) -> WaningCurve:
    """Least-squares logistic fit to second-dose efficacy over period midpoints.

    Dose-1 and dose-3 curves reuse the fitted shape rescaled to their own
    full efficacy. ``scale`` compresses (<1) or stretches (>1) the time axis.
    """
    table = [(float(lo), float(hi), float(ve)) for lo, hi, ve in efficacy_table]
    if len(table) < 2:
        raise SeverityError("need at least two efficacy periods to fit")
    ve_values = [ve for _, _, ve in table]
    for ve in ve_values:
        if not 0.0 < ve < 1.0:
            raise SeverityError(f"table efficacy {ve} outside (0, 1)")
    if any(b < a for a, b in zip(ve_values[1:], ve_values)):
        raise SeverityError("efficacy table must be non-increasing over time")

    mids = np.array([(lo + hi) / 2.0 for lo, hi, _ in table])
    ve = np.array(ve_values)
    ve2_full = full_efficacies[1]

    def residuals(theta):
        mid, log_steep = theta
        s = math.exp(log_steep)
        logistic = 1.0 / (1.0 + np.exp((mids - mid) / s))
        logistic0 = 1.0 / (1.0 + math.exp(-mid / s))
        return ve2_full * logistic / logistic0 - ve

    fit = least_squares(residuals, x0=[20.0, math.log(8.0)], method="lm")
    midpoint, steepness = float(fit.x[0]), float(math.exp(fit.x[1]))
    return WaningCurve(
        full_efficacy=tuple(full_efficacies),
        midpoint=midpoint,
        steepness=steepness,
        timescale=scale,
    )


@dataclass(frozen=True)
class SeverityFactorization:
    """The four estimated factors plus diagnostics.

    ``f0`` has shape (M,), ``g`` (4, A) with NaN marking unidentified strata,
    ``f1`` (A, M) and defaults to 1 (factual strategy).
    """

    f0: np.ndarray
    g: np.ndarray
    waning: WaningCurve
    f1: np.ndarray
    age_labels: tuple[str, ...]
    unidentified: tuple[tuple[int, int], ...] = field(default=())  # (v, a) pairs

    @property
    def n_weeks(self) -> int:
        return len(self.f0)

    def probability(self, v: int, a: int, t: int, w: int) -> float:
        """P(S=1 | v, a, t, w); the waning factor is 1 for the unvaccinated."""
        h = 1.0 if v == 0 else float(self.waning.waning_factor(v, w))
        return float(self.f0[t - 1] * self.g[v, a] * h * self.f1[a, t - 1])

    def with_f1(self, f1: np.ndarray) -> "SeverityFactorization":
        return SeverityFactorization(
            f0=self.f0, g=self.g, waning=self.waning, f1=np.asarray(f1, dtype=float),
            age_labels=self.age_labels, unidentified=self.unidentified,
        )

    def with_g(self, g: np.ndarray) -> "SeverityFactorization":
        return SeverityFactorization(
            f0=self.f0, g=np.asarray(g, dtype=float), waning=self.waning, f1=self.f1,
            age_labels=self.age_labels, unidentified=self.unidentified,
        )

    def with_waning(self, waning: WaningCurve) -> "SeverityFactorization":
        return SeverityFactorization(
            f0=self.f0, g=self.g, waning=waning, f1=self.f1,
            age_labels=self.age_labels, unidentified=self.unidentified,
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "f0": self.f0.tolist(),
            "g": self.g.tolist(),
            "waning": self.waning.to_dict(),
            "f1": self.f1.tolist(),
            "age_labels": list(self.age_labels),
            "unidentified": [list(p) for p in self.unidentified],
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @staticmethod
    def load(path: str | Path) -> "SeverityFactorization":
        d = json.loads(Path(path).read_text())
        return SeverityFactorization(
            f0=np.array(d["f0"]),
            g=np.array(d["g"]),
            waning=WaningCurve.from_dict(d["waning"]),
            f1=np.array(d["f1"]),
            age_labels=tuple(d["age_labels"]),
            unidentified=tuple((int(v), int(a)) for v, a in d["unidentified"]),
        )


def severity_probability(fact: SeverityFactorization, v: int, a: int, t: int, w: int) -> float:
    return fact.probability(v, a, t, w)


def expected_waning_factor(
    dataset: ObservedDataset, waning: WaningCurve, v: int, a: int, t: int
) -> float:
    """E[h_v(W) | V=v, A=a, T=t] under the dataset's waning-time distribution.

    NaN when the stratum carries no waning-time mass.
    """
    if v == 0:
        return 1.0
    dist = dataset.waning_dist[v - 1, a, t - 1]
    total = dist.sum()
    if total <= 0:
        return float("nan")
    w_values = np.arange(dataset.n_weeks)
    return float(np.dot(dist, waning.waning_factor(v, w_values)) / total)


def _time_average(values: np.ndarray, weights: np.ndarray, weighting: str) -> float:
    """Average over weeks where both value and weight are usable."""
    ok = np.isfinite(values) & (weights > 0)
    if not np.any(ok):
        return float("nan")
    if weighting == "uniform":
        return float(values[ok].mean())
    return float(np.average(values[ok], weights=weights[ok]))


def estimate_g0(dataset: ObservedDataset, weighting: str = "person") -> np.ndarray:
    """Unvaccinated risk factors relative to the 60-69 reference group."""
    _check_weighting(weighting)
    ref = age_index(dataset.groups, REFERENCE_AGE_LABEL) if _has_reference(dataset) else 0
    m = dataset.n_weeks
    means = np.empty(dataset.n_ages)
    for a in range(dataset.n_ages):
        probs = np.array([dataset.severe_probability(0, a, t) for t in range(1, m + 1)])
        weights = dataset.severe_pops[0, a]
        means[a] = _time_average(probs, weights, weighting)
        if not np.isfinite(means[a]):
            raise SeverityError(
                f"no unvaccinated exposure for age group {dataset.groups[a].label!r}"
            )
    if means[ref] <= 0:
        raise SeverityError("reference group has zero unvaccinated severe-case rate")
    g0 = means / means[ref]
    g0[ref] = 1.0  # exact anchor
    return g0


def estimate_gv(
    dataset: ObservedDataset,
    waning: WaningCurve,
    g0: np.ndarray,
    weighting: str = "person",
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Risk factors for the vaccinated, corrected for realised waning.

    Returns (g, unidentified) where g has shape (4, A) with g[0] = g0 and
    NaN entries for strata with no usable weeks.
    """
    _check_weighting(weighting)
    m = dataset.n_weeks
    g = np.full((4, dataset.n_ages), np.nan)
    g[0] = g0
    unidentified: list[tuple[int, int]] = []
    for a in range(dataset.n_ages):
        probs0 = np.array([dataset.severe_probability(0, a, t) for t in range(1, m + 1)])
        denom = _time_average(probs0, dataset.severe_pops[0, a], weighting)
        for v in range(1, 4):
            corrected = np.full(m, np.nan)
            for t in range(1, m + 1):
                p = dataset.severe_probability(v, a, t)
                if not np.isfinite(p):
                    continue
                mean_h = expected_waning_factor(dataset, waning, v, a, t)
                if not np.isfinite(mean_h) or mean_h <= 0:
                    continue
                corrected[t - 1] = p / mean_h
            num = _time_average(corrected, dataset.severe_pops[v, a], weighting)
            if not np.isfinite(num) or not np.isfinite(denom) or denom <= 0:
                unidentified.append((v, a))
                continue
            g[v, a] = num / denom * g0[a]
    return g, unidentified


def estimate_f0(
    dataset: ObservedDataset, g: np.ndarray, waning: WaningCurve
) -> np.ndarray:
    """Shared time dependence, person-weighted over the week's strata."""
    m = dataset.n_weeks
    f0 = np.empty(m)
    for t in range(1, m + 1):
        num = 0.0
        wsum = 0.0
        for v in range(4):
            for a in range(dataset.n_ages):
                pop = dataset.severe_pops[v, a, t - 1]
                if pop <= 0 or not np.isfinite(g[v, a]) or g[v, a] <= 0:
                    continue
                mean_h = expected_waning_factor(dataset, waning, v, a, t)
                if not np.isfinite(mean_h) or mean_h <= 0:
                    continue
                p = dataset.severe_probability(v, a, t)
                num += pop * p / (g[v, a] * mean_h)
                wsum += pop
        if wsum <= 0:
            raise SeverityError(f"week {t} has no population exposure")
        f0[t - 1] = num / wsum
    return f0


def estimate_factorization(
    dataset: ObservedDataset,
    waning: WaningCurve | None = None,
    weighting: str = "person",
) -> SeverityFactorization:
    """Full estimation pipeline: g(0, .) -> g(v, .) -> f0, with f1 = 1."""
    if waning is None:
        waning = fit_waning()
    g0 = estimate_g0(dataset, weighting)
    g, unidentified = estimate_gv(dataset, waning, g0, weighting)
    f0 = estimate_f0(dataset, g, waning)
    return SeverityFactorization(
        f0=f0,
        g=g,
        waning=waning,
        f1=np.ones((dataset.n_ages, dataset.n_weeks)),
        age_labels=tuple(grp.label for grp in dataset.groups),
        unidentified=tuple(unidentified),
    )


def _check_weighting(weighting: str) -> None:
    if weighting not in ("person", "uniform"):
        raise SeverityError(f"weighting must be 'person' or 'uniform', got {weighting!r}")


def _has_reference(dataset: ObservedDataset) -> bool:
    return any(g.label == REFERENCE_AGE_LABEL for g in dataset.groups)

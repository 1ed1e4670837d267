"""Posterior definition: parameter layout, priors and the case likelihood.

Sampled quantities live in one flat unconstrained vector. Per age group:
log R0, the free change-point effects (the first effect is pinned to log R0),
raw transient lengths, date jitters and log sigma_dgamma; then optionally the
log weekly influx per age and log kappa. The likelihood runs the renewal
recursion under the factual vaccination schedule and scores observed weekly
cases with a Student-t (nu = 4, sigma = kappa * sqrt(C_hat + 1)).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date

import numpy as np

from counterfact.calendar import WeekGrid
from counterfact.data.schema import ObservedDataset
from counterfact.dynamics import (
    CHANGE_POINT_ANCHOR,
    CHANGE_POINT_SPACING,
    N_CHANGE_POINTS,
    PROTECTION,
    ChangePoints,
    ContactMatrix,
    DynamicsError,
    DynamicsParams,
    backcast_seeding,
    base_reproduction_series,
    build_contact_matrix,
    delayed_weekly_cases,
    generation_interval_kernel,
    infectability_table,
    renewal_loop,
)
from counterfact.inference import priors
from counterfact.severity import WaningCurve, fit_waning
from counterfact.strategy import VaccinationSchedule, schedule_from_dataset

NEG_INF = float("-inf")


@dataclass(frozen=True)
class InferenceConfig:
    """Sampler and model settings; beyond the data, fully determines the fit."""

    mixing_gamma: float = 0.8
    n_change_points: int = N_CHANGE_POINTS
    cp_anchor: date = CHANGE_POINT_ANCHOR
    cp_spacing: int = CHANGE_POINT_SPACING
    chains: int = 8
    init_steps: int = 150
    kept_chains: int = 2
    tune: int = 500
    draws: int = 500
    fix_kappa: float | None = None
    fix_influx: float | None = None
    susceptible_depletion: bool = True
    waning: WaningCurve | None = None
    protection: tuple[float, float, float] = PROTECTION
    student_nu: float = priors.STUDENT_T_DOF
    proposals_per_update: int = 3  # MH proposals per block coordinate and sweep

    def with_budget(self, chains=None, init_steps=None, tune=None, draws=None) -> "InferenceConfig":
        kwargs = {}
        if chains is not None:
            kwargs["chains"] = chains
        if init_steps is not None:
            kwargs["init_steps"] = init_steps
        if tune is not None:
            kwargs["tune"] = tune
        if draws is not None:
            kwargs["draws"] = draws
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ParameterLayout:
    """Index bookkeeping for the flat parameter vector."""

    n_ages: int
    n_weeks: int
    n_cp: int
    sample_influx: bool
    sample_kappa: bool

    @property
    def per_age(self) -> int:
        # log_r0 + free dgamma + lengths + dates + log sigma
        return 1 + (self.n_cp - 1) + self.n_cp + self.n_cp + 1

    @property
    def size(self) -> int:
        n = self.n_ages * self.per_age
        if self.sample_influx:
            n += self.n_ages * self.n_weeks
        if self.sample_kappa:
            n += 1
        return n

    def age_base(self, a: int) -> int:
        return a * self.per_age

    def slice_log_r0(self, a: int) -> int:
        return self.age_base(a)

    def slice_dgamma(self, a: int) -> slice:
        b = self.age_base(a) + 1
        return slice(b, b + self.n_cp - 1)

    def slice_lengths(self, a: int) -> slice:
        b = self.age_base(a) + self.n_cp
        return slice(b, b + self.n_cp)

    def slice_dates(self, a: int) -> slice:
        b = self.age_base(a) + 2 * self.n_cp
        return slice(b, b + self.n_cp)

    def slice_log_sigma(self, a: int) -> int:
        return self.age_base(a) + 3 * self.n_cp

    def slice_influx(self, a: int) -> slice:
        if not self.sample_influx:
            raise ValueError("influx is fixed in this configuration")
        b = self.n_ages * self.per_age + a * self.n_weeks
        return slice(b, b + self.n_weeks)

    @property
    def index_log_kappa(self) -> int:
        if not self.sample_kappa:
            raise ValueError("kappa is fixed in this configuration")
        return self.size - 1


class PosteriorModel:
    """Callable log posterior bound to one dataset and configuration."""

    def __init__(self, dataset: ObservedDataset, config: InferenceConfig,
                 schedule: VaccinationSchedule | None = None):
        self.dataset = dataset
        self.config = config
        self.grid: WeekGrid = dataset.grid
        self.populations = dataset.populations
        self.n_ages = dataset.n_ages
        self.n_weeks = dataset.n_weeks
        self.layout = ParameterLayout(
            n_ages=self.n_ages,
            n_weeks=self.n_weeks,
            n_cp=config.n_change_points,
            sample_influx=config.fix_influx is None,
            sample_kappa=config.fix_kappa is None,
        )
        self.waning = config.waning if config.waning is not None else fit_waning()
        self.schedule = schedule if schedule is not None else schedule_from_dataset(dataset)
        self.contacts: ContactMatrix = build_contact_matrix(config.mixing_gamma, self.populations)
        self.kernel = generation_interval_kernel()
        self.kernel_rev = self.kernel[::-1].copy()
        self.seeding = backcast_seeding(dataset.cases[:, 0])
        self.cp_day_grid = ChangePoints.day_grid(
            self.grid, config.n_change_points, config.cp_anchor, config.cp_spacing
        )
        # neither depends on the sampled parameters: precompute once
        self.infectability = infectability_table(self.schedule, self.waning, config.protection)
        self.infect_daily = np.repeat(self.infectability, 7, axis=1)[:, : self.grid.n_days]
        self.observed = dataset.cases
        self.influx_scales = np.array([priors.influx_scale(p) for p in self.populations])
        self.prior_sampler = priors.PriorSampler(
            n_ages=self.n_ages,
            n_weeks=self.n_weeks,
            n_change_points=config.n_change_points,
            populations=self.populations,
        )

    # -- packing ------------------------------------------------------------

    def pack(self, draw: dict[str, np.ndarray]) -> np.ndarray:
        z = np.empty(self.layout.size)
        lay = self.layout
        for a in range(self.n_ages):
            z[lay.slice_log_r0(a)] = draw["log_r0"][a]
            z[lay.slice_dgamma(a)] = draw["dgamma"][a, 1:]
            z[lay.slice_lengths(a)] = draw["lengths_raw"][a]
            z[lay.slice_dates(a)] = draw["date_jitter"][a]
            z[lay.slice_log_sigma(a)] = np.log(draw["sigma_dgamma"][a])
            if lay.sample_influx:
                z[lay.slice_influx(a)] = np.log(np.maximum(draw["influx"][a], 1e-300))
        if lay.sample_kappa:
            z[lay.index_log_kappa] = np.log(draw["kappa"])
        return z

    def unpack(self, z: np.ndarray) -> dict[str, np.ndarray]:
        lay = self.layout
        a_n = self.n_ages
        log_r0 = np.array([z[lay.slice_log_r0(a)] for a in range(a_n)])
        dgamma = np.empty((a_n, lay.n_cp))
        dgamma[:, 0] = log_r0
        lengths = np.empty((a_n, lay.n_cp))
        dates = np.empty((a_n, lay.n_cp))
        sigma = np.empty(a_n)
        influx = np.empty((a_n, self.n_weeks))
        for a in range(a_n):
            dgamma[a, 1:] = z[lay.slice_dgamma(a)]
            lengths[a] = z[lay.slice_lengths(a)]
            dates[a] = z[lay.slice_dates(a)]
            sigma[a] = np.exp(z[lay.slice_log_sigma(a)])
            if lay.sample_influx:
                influx[a] = np.exp(z[lay.slice_influx(a)])
            else:
                influx[a] = self.config.fix_influx
        kappa = np.exp(z[lay.index_log_kappa]) if lay.sample_kappa else self.config.fix_kappa
        return {
            "log_r0": log_r0,
            "dgamma": dgamma,
            "lengths_raw": lengths,
            "date_jitter": dates,
            "sigma_dgamma": sigma,
            "influx": influx,
            "kappa": float(kappa),
        }

    def initial_vector(self, rng: np.random.Generator) -> np.ndarray:
        return self.pack(self.prior_sampler.draw(rng))

    # -- densities ------------------------------------------------------------

    def dynamics_params(self, draw: dict[str, np.ndarray]) -> DynamicsParams:
        cp = ChangePoints(
            effects=draw["dgamma"],
            lengths_raw=draw["lengths_raw"],
            day_offsets=self.cp_day_grid[None, :] + draw["date_jitter"],
        )
        return DynamicsParams(
            r0=np.exp(draw["log_r0"]),
            change_points=cp,
            influx_weekly=draw["influx"],
            protection=self.config.protection,
            kernel=self.kernel,
        )

    def log_prior(self, draw: dict[str, np.ndarray]) -> float:
        total = float(
            np.sum(priors.normal_logpdf(draw["log_r0"], priors.R0_LOG_MEAN, priors.R0_LOG_SD))
        )
        dg = draw["dgamma"]
        sigma = draw["sigma_dgamma"]
        # random walk: dgamma_n ~ N(dgamma_{n-1}, sigma_a); dgamma_0 = log R0
        steps = (dg[:, 1:] - dg[:, :-1]) / sigma[:, None]
        total += float(
            np.sum(-0.5 * steps**2 - np.log(sigma)[:, None] - 0.5 * priors.LOG_2PI)
        )
        total += float(
            np.sum(priors.normal_logpdf(draw["lengths_raw"], priors.CP_LENGTH_MEAN, priors.CP_LENGTH_SD))
        )
        total += float(np.sum(priors.normal_logpdf(draw["date_jitter"], 0.0, priors.CP_DATE_SD)))
        total += float(
            np.sum(priors.half_cauchy_log_logpdf(np.log(sigma), priors.SIGMA_DGAMMA_SCALE))
        )
        if self.layout.sample_influx:
            log_influx = np.log(draw["influx"])
            for a in range(self.n_ages):
                total += float(
                    np.sum(
                        priors.weibull_log_logpdf(
                            log_influx[a], self.influx_scales[a], priors.INFLUX_WEIBULL_SHAPE
                        )
                    )
                )
        if self.layout.sample_kappa:
            total += float(priors.half_cauchy_log_logpdf(np.log(draw["kappa"]), priors.KAPPA_SCALE))
        return total

    def modelled_cases(self, draw: dict[str, np.ndarray]) -> np.ndarray:
        """Weekly case expectations under the factual schedule; may raise."""
        params = self.dynamics_params(draw)
        r_base = base_reproduction_series(params, self.n_ages, self.grid.n_days)
        r_eff = r_base * self.infect_daily
        sqrt_r = np.sqrt(r_eff)
        influx_daily = np.repeat(draw["influx"] / 7.0, 7, axis=1)[:, : self.grid.n_days]
        e, _ = renewal_loop(
            sqrt_r,
            self.contacts.matrix,
            self.seeding,
            influx_daily,
            self.populations,
            self.kernel_rev,
            self.config.susceptible_depletion,
        )
        return delayed_weekly_cases(e, self.seeding.shape[1], self.n_weeks)

    def log_likelihood(self, draw: dict[str, np.ndarray]) -> float:
        try:
            modelled = self.modelled_cases(draw)
        except DynamicsError:
            return NEG_INF
        if not np.all(np.isfinite(modelled)):
            return NEG_INF
        sigma = draw["kappa"] * np.sqrt(modelled + 1.0)
        if np.any(sigma <= 0):
            return NEG_INF
        return float(
            np.sum(priors.student_t_logpdf(self.observed, modelled, sigma, self.config.student_nu))
        )

    def log_posterior_vector(self, z: np.ndarray) -> float:
        if not np.all(np.isfinite(z)):
            return NEG_INF
        draw = self.unpack(z)
        lp = self.log_prior(draw)
        if not np.isfinite(lp):
            return NEG_INF
        ll = self.log_likelihood(draw)
        if not np.isfinite(ll):
            return NEG_INF
        return lp + ll


def log_posterior(params: dict[str, np.ndarray], dataset: ObservedDataset,
                  config: InferenceConfig) -> float:
    """Log prior plus Student-t case likelihood for one parameter draw."""
    model = PosteriorModel(dataset, config)
    lp = model.log_prior(params)
    if not np.isfinite(lp):
        return NEG_INF
    ll = model.log_likelihood(params)
    return lp + ll if np.isfinite(ll) else NEG_INF

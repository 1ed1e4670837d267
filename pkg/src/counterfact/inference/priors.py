"""Prior distributions for the dynamics parameters.

All scale-constrained quantities (R0, sigma_dgamma, influx, kappa) are
sampled on the log scale; the densities below include the log-transform
Jacobian, so `log_r0 ~ Normal(1, 1)` is exactly `R0 ~ LogNormal(mu=1, sigma=1)`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

R0_LOG_MEAN = 1.0
R0_LOG_SD = 1.0
SIGMA_DGAMMA_SCALE = 0.5  # HalfCauchy
CP_LENGTH_MEAN = 4.0  # days, pre-softplus
CP_LENGTH_SD = 1.0
CP_DATE_SD = 3.5  # days
INFLUX_WEIBULL_SHAPE = 0.3
INFLUX_RATE_PER_MILLION = 0.1  # weekly Weibull scale per million inhabitants
KAPPA_SCALE = 30.0  # HalfCauchy
STUDENT_T_DOF = 4.0


def influx_scale(population: float) -> float:
    """Weibull scale parameter of the weekly per-group influx."""
    return INFLUX_RATE_PER_MILLION * population / 1e6


def normal_logpdf(x, mu, sd):
    z = (np.asarray(x, dtype=float) - mu) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


def half_cauchy_log_logpdf(u, scale):
    """Density of log(x) where x ~ HalfCauchy(scale); includes the Jacobian."""
    x = np.exp(np.asarray(u, dtype=float))
    return math.log(2.0 / math.pi) - math.log(scale) - np.log1p((x / scale) ** 2) + u


def weibull_log_logpdf(u, scale, shape):
    """Density of log(x) where x ~ Weibull(scale, shape); includes the Jacobian."""
    u = np.asarray(u, dtype=float)
    z = np.exp(u) / scale
    return math.log(shape / scale) + (shape - 1.0) * (u - math.log(scale)) - z**shape + u


def weibull_mean(scale, shape):
    return scale * math.gamma(1.0 + 1.0 / shape)

def weibull_median(scale, shape):
    return scale * math.log(2.0) ** (1.0 / shape)


def half_cauchy_median(scale):
    return scale  # tan(pi/4) = 1


@dataclass(frozen=True)
class PriorSampler:
    """Direct draws from the prior for chain initialisation and checks."""

    n_ages: int
    n_weeks: int
    n_change_points: int
    populations: np.ndarray

    def draw(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        a, m, n = self.n_ages, self.n_weeks, self.n_change_points
        log_r0 = rng.normal(R0_LOG_MEAN, R0_LOG_SD, size=a)
        sigma_dg = np.abs(rng.standard_cauchy(size=a)) * SIGMA_DGAMMA_SCALE
        dgamma = np.empty((a, n))
        dgamma[:, 0] = log_r0  # model convention: first effect equals log R0
        for i in range(a):
            for j in range(1, n):
                dgamma[i, j] = rng.normal(dgamma[i, j - 1], sigma_dg[i])
        lengths_raw = rng.normal(CP_LENGTH_MEAN, CP_LENGTH_SD, size=(a, n))
        date_jitter = rng.normal(0.0, CP_DATE_SD, size=(a, n))
        influx = np.empty((a, m))
        for i in range(a):
            influx[i] = influx_scale(self.populations[i]) * rng.weibull(
                INFLUX_WEIBULL_SHAPE, size=m
            )
        kappa = abs(rng.standard_cauchy()) * KAPPA_SCALE
        return {
            "log_r0": log_r0,
            "sigma_dgamma": sigma_dg,
            "dgamma": dgamma,
            "lengths_raw": lengths_raw,
            "date_jitter": date_jitter,
            "influx": influx,
            "kappa": kappa,
        }


def student_t_logpdf(x, mu, sigma, nu=STUDENT_T_DOF):
    """Location-scale Student-t, vectorised."""
    x = np.asarray(x, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = (x - mu) / sigma
    return (
        math.lgamma((nu + 1.0) / 2.0)
        - math.lgamma(nu / 2.0)
        - 0.5 * math.log(nu * math.pi)
        - np.log(sigma)
        - (nu + 1.0) / 2.0 * np.log1p(z * z / nu)
    )

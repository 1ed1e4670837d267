from __future__ import annotations

import time

import numpy as np
import pytest

from counterfact.data.synthetic import (
    cohort_spec,
    desk_spec,
    generate_synthetic,
    israel_spec,
)
from counterfact.inference import InferenceConfig, PosteriorModel, PosteriorSample, sample_posterior


@pytest.fixture(scope="session")
def cohort_bundle():
    spec = cohort_spec()
    return spec, generate_synthetic(spec, seed=1)


@pytest.fixture(scope="session")
def desk_bundle():
    spec = desk_spec()
    return spec, generate_synthetic(spec, seed=42)


@pytest.fixture(scope="session")
def desk_vacc_bundle():
    spec = desk_spec(with_vaccination=True, kappa=2.0)
    return spec, generate_synthetic(spec, seed=42)


@pytest.fixture(scope="session")
def israel_bundle():
    spec = israel_spec(case_noise_kappa=8.0)
    return spec, generate_synthetic(spec, seed=20211220)


def desk_config(spec, **overrides) -> InferenceConfig:
    defaults = dict(mixing_gamma=spec.mixing_gamma, cp_anchor=spec.anchor, waning=spec.waning)
    defaults.update(overrides)
    return InferenceConfig(**defaults)


@pytest.fixture(scope="session")
def desk_posterior(desk_bundle):
    """Full-protocol fit of the desk dataset (acceptance criterion budget)."""
    spec, ds = desk_bundle
    config = desk_config(spec)  # 8 chains, 150 init, 500 tune, 500 draws
    t0 = time.time()
    result = sample_posterior(ds, config, seed=7)
    runtime = time.time() - t0
    return config, result, runtime


def fake_posterior(ds, config: InferenceConfig, n: int = 12, seed: int = 0,
                   kappa: float = 3.0) -> list[PosteriorSample]:
    """Cheap plausible posterior samples for scenario-machinery tests.

    Draws mild jitter around unit reproduction numbers; fit quality is
    irrelevant where only the evaluation plumbing is under test.
    """
    model = PosteriorModel(ds, config)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        draw = model.prior_sampler.draw(rng)
        draw["log_r0"] = rng.normal(0.1, 0.05, size=ds.n_ages)
        draw["dgamma"] = rng.normal(0.0, 0.05, size=draw["dgamma"].shape)
        draw["dgamma"][:, 0] = draw["log_r0"]
        draw["influx"] = np.full((ds.n_ages, ds.n_weeks), 0.7) * ds.populations[:, None] / 1e6
        draw["kappa"] = kappa
        samples.append(
            PosteriorSample(chain_id=0, draw_index=i, log_posterior=0.0, params=draw)
        )
    return samples

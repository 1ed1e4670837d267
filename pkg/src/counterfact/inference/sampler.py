"""Adaptive Metropolis-within-Gibbs sampling of the dynamics posterior.

Chain protocol: a configurable number of randomly initialised chains run a
short warm-up; the chains with the highest unnormalised posterior continue
through tuning and sampling (default 8 -> 2, 150 warm-up sweeps, 500 tuning
sweeps, 500 recorded draws each).

One sweep updates, per age group: the reproduction block (log R0 and the
free change-point effects) coordinate-wise plus one joint level-shift move,
the transient lengths and change-point dates as joint blocks, and the
random-walk scale; then the influx block per age and the noise scale kappa.
Proposal scales adapt towards standard acceptance targets during warm-up and
tuning and are frozen while recording draws.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from counterfact.data.schema import ObservedDataset
from counterfact.inference.model import InferenceConfig, PosteriorModel

ACCEPT_TARGET_SCALAR = 0.44
ACCEPT_TARGET_JOINT = 0.234


class SamplingError(RuntimeError):
    """All chains diverged or the posterior is nowhere finite."""


@dataclass(frozen=True)
class PosteriorSample:
    chain_id: int
    draw_index: int
    log_posterior: float
    params: dict

    def to_json(self) -> str:
        payload = {
            "chain": self.chain_id,
            "draw": self.draw_index,
            "log_posterior": self.log_posterior,
            "params": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()
            },
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(line: str) -> "PosteriorSample":
        d = json.loads(line)
        params = {
            k: (np.array(v) if isinstance(v, list) else float(v)) for k, v in d["params"].items()
        }
        return PosteriorSample(
            chain_id=int(d["chain"]),
            draw_index=int(d["draw"]),
            log_posterior=float(d["log_posterior"]),
            params=params,
        )


@dataclass
class PosteriorResult:
    samples: list[PosteriorSample]
    diagnostics: dict = field(default_factory=dict)

    def save(self, directory: str | Path, stem: str = "posterior") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{stem}.jsonl"
        with open(path, "w") as fh:
            for s in self.samples:
                fh.write(s.to_json() + "\n")
        (directory / f"{stem}_summary.json").write_text(
            json.dumps(self.diagnostics, indent=2, default=_jsonify)
        )
        return path

    @staticmethod
    def load(path: str | Path) -> "PosteriorResult":
        samples = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    samples.append(PosteriorSample.from_json(line))
        summary = Path(str(path).replace(".jsonl", "_summary.json"))
        diagnostics = json.loads(summary.read_text()) if summary.exists() else {}
        return PosteriorResult(samples=samples, diagnostics=diagnostics)


def _jsonify(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x)}")


# ---------------------------------------------------------------------------
# proposal blocks


@dataclass
class _Block:
    name: str
    indices: np.ndarray
    mode: str  # "coordinate" | "joint" | "shift"
    scales: np.ndarray  # per-coordinate (coordinate mode) or length 1
    accepted: int = 0
    proposed: int = 0

    def adapt_rate(self, step: int) -> float:
        return min(0.25, 2.0 / math.sqrt(step + 10.0))


def _build_blocks(model: PosteriorModel) -> list[_Block]:
    lay = model.layout
    blocks: list[_Block] = []
    for a in range(model.n_ages):
        rw = np.r_[lay.slice_log_r0(a), np.arange(*lay.slice_dgamma(a).indices(lay.size))]
        blocks.append(_Block(f"rw[{a}]", rw, "coordinate", np.full(len(rw), 0.1)))
        blocks.append(_Block(f"rw_shift[{a}]", rw, "shift", np.array([0.1])))
        lengths = np.arange(*lay.slice_lengths(a).indices(lay.size))
        blocks.append(_Block(f"lengths[{a}]", lengths, "joint", np.array([0.3])))
        dates = np.arange(*lay.slice_dates(a).indices(lay.size))
        blocks.append(_Block(f"dates[{a}]", dates, "joint", np.array([0.5])))
        blocks.append(
            _Block(f"sigma[{a}]", np.array([lay.slice_log_sigma(a)]), "coordinate", np.array([0.5]))
        )
    if lay.sample_influx:
        for a in range(model.n_ages):
            influx = np.arange(*lay.slice_influx(a).indices(lay.size))
            blocks.append(_Block(f"influx[{a}]", influx, "joint", np.array([1.0])))
    if lay.sample_kappa:
        blocks.append(
            _Block("kappa", np.array([lay.index_log_kappa]), "coordinate", np.array([0.3]))
        )
    return blocks


@dataclass
class _ChainState:
    chain_id: int
    z: np.ndarray
    logp: float
    blocks: list[_Block]
    rng: np.random.Generator
    step: int = 0
    logp_trace: list[float] = field(default_factory=list)


def _metropolis(state: _ChainState, model: PosteriorModel, z_new: np.ndarray) -> bool:
    logp_new = model.log_posterior_vector(z_new)
    if math.isfinite(logp_new) and math.log(state.rng.random() + 1e-300) < logp_new - state.logp:
        state.z = z_new
        state.logp = logp_new
        return True
    return False


def _update_scale(block: _Block, slot: int, accepted: bool, step: int, target: float) -> None:
    rate = block.adapt_rate(step)
    block.scales[slot] *= math.exp(rate * ((1.0 if accepted else 0.0) - target))
    block.scales[slot] = min(max(block.scales[slot], 1e-5), 50.0)


def _sweep(state: _ChainState, model: PosteriorModel, adapt: bool) -> None:
    state.step += 1
    proposals = max(1, model.config.proposals_per_update)
    for block in state.blocks:
        if block.mode == "coordinate":
            for _ in range(proposals):
                for j, idx in enumerate(block.indices):
                    z_new = state.z.copy()
                    z_new[idx] += state.rng.normal(0.0, block.scales[j])
                    block.proposed += 1
                    accepted = _metropolis(state, model, z_new)
                    if accepted:
                        block.accepted += 1
                    if adapt:
                        _update_scale(block, j, accepted, state.step, ACCEPT_TARGET_SCALAR)
        elif block.mode == "shift":
            for _ in range(proposals):
                z_new = state.z.copy()
                z_new[block.indices] += state.rng.normal(0.0, block.scales[0])
                block.proposed += 1
                accepted = _metropolis(state, model, z_new)
                if accepted:
                    block.accepted += 1
                if adapt:
                    _update_scale(block, 0, accepted, state.step, ACCEPT_TARGET_SCALAR)
        else:  # joint
            for _ in range(proposals):
                z_new = state.z.copy()
                z_new[block.indices] += block.scales[0] * state.rng.normal(
                    0.0, 1.0, size=len(block.indices)
                ) / math.sqrt(len(block.indices))
                block.proposed += 1
                accepted = _metropolis(state, model, z_new)
                if accepted:
                    block.accepted += 1
                if adapt:
                    _update_scale(block, 0, accepted, state.step, ACCEPT_TARGET_JOINT)
    state.logp_trace.append(state.logp)


def _init_chain(model: PosteriorModel, chain_id: int, seed_seq: np.random.SeedSequence,
                max_tries: int = 20, max_shrink: int = 40) -> _ChainState:
    """Random prior initialisation, shrunk towards R = 1 when dynamics diverge.

    Joint prior draws over many age groups routinely produce reproduction
    numbers whose renewal dynamics overshoot the susceptible pool (zero
    posterior mass). Rather than rejection-sampling the rare tame corner of
    the prior, the drawn reproduction block is contracted geometrically until
    the posterior is finite.
    """
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    for _ in range(max_tries):
        draw = model.prior_sampler.draw(rng)
        for _ in range(max_shrink):
            z = model.pack(draw)
            logp = model.log_posterior_vector(z)
            if math.isfinite(logp):
                return _ChainState(
                    chain_id=chain_id, z=z, logp=logp, blocks=_build_blocks(model), rng=rng
                )
            draw["log_r0"] = 0.7 * draw["log_r0"]
            draw["dgamma"] = 0.7 * draw["dgamma"]
            draw["dgamma"][:, 0] = draw["log_r0"]
            draw["influx"] = np.minimum(draw["influx"], 1.0 + 0.5 * draw["influx"])
    raise SamplingError(f"chain {chain_id}: no finite posterior after {max_tries} prior draws")


def _warm_up(args) -> _ChainState:
    model, chain_id, seed_seq, n_steps = args
    state = _init_chain(model, chain_id, seed_seq)
    for _ in range(n_steps):
        _sweep(state, model, adapt=True)
    return state


def _tune_and_draw(args) -> tuple[_ChainState, list[PosteriorSample]]:
    model, state, tune, draws = args
    for _ in range(tune):
        _sweep(state, model, adapt=True)
    samples: list[PosteriorSample] = []
    for i in range(draws):
        _sweep(state, model, adapt=False)
        samples.append(
            PosteriorSample(
                chain_id=state.chain_id,
                draw_index=i,
                log_posterior=state.logp,
                params=model.unpack(state.z),
            )
        )
    return state, samples


def _worker_count() -> int:
    env = os.environ.get("COUNTERFACT_THREADS", "1")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _map_jobs(fn, jobs):
    workers = _worker_count()
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def sample_posterior(
    dataset: ObservedDataset,
    config: InferenceConfig,
    seed: int,
    schedule=None,
) -> PosteriorResult:
    """Run the full chain-selection protocol; deterministic given the seed."""
    model = PosteriorModel(dataset, config, schedule=schedule)
    root = np.random.SeedSequence(seed)
    chain_seeds = root.spawn(config.chains)

    t0 = time.time()
    warm = _map_jobs(_warm_up, [(model, c, chain_seeds[c], config.init_steps) for c in range(config.chains)])
    warm_logp = {st.chain_id: st.logp for st in warm}
    # keep the chains with the highest unnormalised posterior after warm-up
    ranked = sorted(warm, key=lambda st: (-st.logp, st.chain_id))
    kept = ranked[: config.kept_chains]
    dropped = ranked[config.kept_chains :]
    if not kept or not math.isfinite(kept[0].logp):
        raise SamplingError("all chains diverged during warm-up")

    finished = _map_jobs(
        _tune_and_draw, [(model, st, config.tune, config.draws) for st in kept]
    )
    samples: list[PosteriorSample] = []
    diagnostics_chains = {}
    for st, chain_samples in finished:
        samples.extend(chain_samples)
        diagnostics_chains[str(st.chain_id)] = {
            "final_log_posterior": st.logp,
            "acceptance": {
                b.name: (b.accepted / b.proposed if b.proposed else 0.0) for b in st.blocks
            },
            "log_posterior_trace": st.logp_trace,
        }

    diagnostics = {
        "runtime_seconds": time.time() - t0,
        "warmup_log_posterior": warm_logp,
        "kept_chains": [st.chain_id for st in kept],
        "dropped_chains": [st.chain_id for st in dropped],
        "chains": diagnostics_chains,
        "n_samples": len(samples),
        "seed": seed,
        "budget": {
            "chains": config.chains,
            "init_steps": config.init_steps,
            "tune": config.tune,
            "draws": config.draws,
        },
    }
    return PosteriorResult(samples=samples, diagnostics=diagnostics)


def posterior_predictive(
    samples: list[PosteriorSample], dataset: ObservedDataset, config: InferenceConfig,
    schedule=None, include_observation_noise: bool = True, seed: int = 0,
) -> dict[str, np.ndarray]:
    """Median fit and central 95 % band of weekly cases per (age, week).

    The band is over replicate observations (one Student-t draw per posterior
    sample) so observed data should fall inside it at the nominal rate; with
    ``include_observation_noise=False`` it brackets the modelled means only.
    A single sample without noise collapses the band onto its trajectory.
    """
    if not samples:
        raise SamplingError("need at least one posterior sample")
    model = PosteriorModel(dataset, config, schedule=schedule)
    rng = np.random.default_rng(seed)
    means = np.empty((len(samples), dataset.n_ages, dataset.n_weeks))
    stack = np.empty_like(means)
    for i, s in enumerate(samples):
        means[i] = model.modelled_cases(s.params)
        if include_observation_noise and len(samples) > 1:
            sigma = s.params["kappa"] * np.sqrt(means[i] + 1.0)
            noise = rng.standard_t(df=config.student_nu, size=means[i].shape)
            stack[i] = np.maximum(means[i] + sigma * noise, 0.0)
        else:
            stack[i] = means[i]
    return {
        "median": np.median(means, axis=0),
        "lo95": np.percentile(stack, 2.5, axis=0),
        "hi95": np.percentile(stack, 97.5, axis=0),
    }


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of an autocorrelated sequence."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2 * n_batches:
        n_batches = max(2, n // 2)
    size = n // n_batches
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))

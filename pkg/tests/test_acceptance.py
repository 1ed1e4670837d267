"""Acceptance criteria, one test per criterion, each printing a verdict line.

Criterion 8 (full-scale counterfactual reproduction) runs for tens of
minutes and is gated behind COUNTERFACT_FULL=1; everything else runs in the
default suite. There is no bundled Ministry-of-Health extract, so
"real data" means the calibrated nine-group Israel-like bundle whose severe
tables reproduce the published per-wave incidence under the factual
strategy.
"""

from __future__ import annotations

import os
import time
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from counterfact.counterfactual import (
    ScenarioEvaluator,
    ScenarioSpec,
    brute_force_target,
    disease_profile,
    target_function,
    wave_summary,
)
from counterfact.data.schema import age_index
from counterfact.data.synthetic import ISRAEL_POPULATIONS, cohort_spec, generate_synthetic
from counterfact.dynamics import (
    DynamicsParams,
    backcast_seeding,
    base_reproduction_series,
    build_contact_matrix,
    generation_interval_kernel,
    simulate,
)
from counterfact.inference import InferenceConfig, PosteriorModel, sample_posterior
from counterfact.severity import estimate_factorization, fit_waning
from counterfact.strategy import (
    VaccinationSchedule,
    elderly_first,
    reconstruct_factual,
    schedule_from_strategy,
    weekly_dose_budgets,
    young_first,
)

from conftest import desk_config, fake_posterior
from test_counterfactual import make_fact, random_strategy

PAPER_SEVERE_PER_100K = {
    ("elderly_first", "third"): 177.0,
    ("factual", "third"): 184.0,
    ("elderly_first", "fourth"): 84.0,
    ("factual", "fourth"): 126.0,
}
TOLERANCE = 0.15


def verdict(criterion: int, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def test_criterion_1_target_function_oracle():
    rng = np.random.default_rng(123)
    t0 = time.time()
    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(1, 5))
        n_ages = int(rng.integers(1, 4))
        strat = random_strategy(m, n_ages, rng)
        fact = make_fact(m, n_ages, seed=int(rng.integers(1e9)))
        pops = rng.uniform(1e3, 1e6, size=n_ages)
        fast = target_function(strat, fact, pops)
        slow = brute_force_target(strat, fact, pops)
        scale = np.maximum(np.abs(slow), 1e-300)
        worst = max(worst, float(np.max(np.abs(fast - slow) / scale)))
    runtime = time.time() - t0
    verdict(
        1,
        worst < 1e-12 and runtime < 30.0,
        f"200 instances, max relative error {worst:.2e} (limit 1e-12), {runtime:.1f}s (< 30s)",
    )


def test_criterion_2_contact_matrix_spectrum():
    populations = np.array(ISRAEL_POPULATIONS)
    t0 = time.time()
    worst_eig = 0.0
    worst_vec = 0.0
    for gamma in np.arange(0.0, 1.0001, 0.1):
        cm = build_contact_matrix(float(gamma), populations)
        eigenvalues = np.linalg.eigvals(cm.matrix)
        worst_eig = max(worst_eig, abs(float(np.max(np.abs(eigenvalues))) - 1.0))
        worst_vec = max(worst_vec, float(np.max(np.abs(cm.matrix @ cm.rho - cm.rho))))
    runtime = time.time() - t0
    verdict(
        2,
        worst_eig < 1e-10 and worst_vec < 1e-10 and runtime < 1.0,
        f"gamma grid 0..1: |lambda_max - 1| <= {worst_eig:.1e}, eigvec residual <= "
        f"{worst_vec:.1e} (limits 1e-10), {runtime * 1000:.0f}ms (< 1s)",
    )


def test_criterion_3_factorization_anchors(israel_bundle, desk_vacc_bundle):
    spec, ds = israel_bundle
    fact = estimate_factorization(ds, waning=spec.waning)
    anchor = fact.g[0, age_index(ds.groups, "60-69")]

    h_ok = True
    for scale in (1.0, 0.75):
        curve = fit_waning(scale=scale)
        for v in (1, 2, 3):
            h_ok = h_ok and float(curve.waning_factor(v, 0.0)) == 1.0
    flat = fit_waning().without_waning()
    h_ok = h_ok and all(float(flat.waning_factor(v, 0.0)) == 1.0 for v in (1, 2, 3))

    dspec, dds = desk_vacc_bundle
    config = desk_config(dspec)
    evaluator = ScenarioEvaluator(
        dds, fake_posterior(dds, config, n=6), config,
        factorization=estimate_factorization(dds, waning=dspec.waning),
    )
    result = evaluator.evaluate(ScenarioSpec(strategy="factual"))
    f1_dev = float(np.max(np.abs(result.f1_samples - 1.0)))

    verdict(
        3,
        anchor == 1.0 and h_ok and f1_dev <= 1e-12,
        f"g(0, 60-69) = {anchor} (exact), h_v(0) = 1 exact for v in 1..3, "
        f"factual |f1 - 1| <= {f1_dev:.1e} (limit 1e-12)",
    )


def test_criterion_4_estimator_round_trip():
    t0 = time.time()
    spec = cohort_spec(n_ages=9, n_weeks=30)
    ds = generate_synthetic(spec, seed=44)
    fact = estimate_factorization(ds, waning=spec.waning)
    g_err = float(np.nanmax(np.abs(fact.g - spec.g) / spec.g))
    f0_true = np.array(ds.truth["f0"])
    f0_err = float(np.max(np.abs(fact.f0 - f0_true) / f0_true))
    runtime = time.time() - t0
    verdict(
        4,
        max(g_err, f0_err) < 1e-6 and runtime < 10.0,
        f"noise-free recovery: max rel err g {g_err:.2e}, f0 {f0_err:.2e} "
        f"(limit 1e-6), {runtime:.1f}s (< 10s)",
    )


def test_criterion_5_simulator_conservation():
    rng = np.random.default_rng(55)
    t0 = time.time()
    worst = 0.0
    waning = fit_waning()
    for trial in range(50):
        n_ages = int(rng.integers(1, 4))
        m = int(rng.integers(4, 16))
        populations = rng.uniform(5e4, 5e6, size=n_ages)
        from counterfact.calendar import WeekGrid

        grid = WeekGrid(anchor=date(2021, 1, 3), n_weeks=m)
        traj = rng.uniform(0.2, 1.6, size=(n_ages, 1)) * np.ones((n_ages, 7 * m))
        params = DynamicsParams(
            r0=np.ones(n_ages),
            change_points=None,
            influx_weekly=rng.uniform(0.0, 50.0, size=(n_ages, m)),
            kernel=generation_interval_kernel(),
            base_trajectory=traj,
        )
        fractions = np.zeros((4, n_ages, m))
        fractions[0] = 1.0
        schedule = VaccinationSchedule(
            fractions=fractions, cohorts=np.zeros((3, n_ages, m, m))
        )
        seeding = backcast_seeding(rng.uniform(10.0, 2000.0, size=n_ages))
        state = simulate(
            params,
            schedule,
            waning,
            seeding,
            grid,
            populations,
            build_contact_matrix(float(rng.uniform(0, 1)), populations),
        )
        lhs = state.susceptibles[:, -1] + state.daily_exposures.sum(axis=1)
        rhs = populations + state.influx_daily.sum(axis=1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / rhs)))
    runtime = time.time() - t0
    verdict(
        5,
        worst < 1e-9 and runtime < 10.0,
        f"50 random draws: conservation rel err <= {worst:.2e} (limit 1e-9), "
        f"{runtime:.1f}s (< 10s)",
    )


def test_criterion_6_posterior_recovery(desk_bundle, desk_posterior):
    spec, ds = desk_bundle
    config, result, runtime = desk_posterior
    model = PosteriorModel(ds, config)
    truth = np.array(ds.truth["r_base_weekly"])
    stack = np.empty((len(result.samples), ds.n_ages, ds.n_weeks))
    for i, s in enumerate(result.samples):
        rb = base_reproduction_series(model.dynamics_params(s.params), ds.n_ages, ds.grid.n_days)
        stack[i] = rb.reshape(ds.n_ages, ds.n_weeks, 7).mean(axis=2)
    median = np.median(stack, axis=0)
    rel = np.abs(median - truth) / truth
    frac = float((rel < 0.10).mean())
    budget = result.diagnostics["budget"]
    verdict(
        6,
        frac >= 0.80 and runtime < 600.0,
        f"{frac * 100:.0f}% of weekly R_base within 10% of truth (need >= 80%), "
        f"protocol {budget['chains']}->2 chains {budget['init_steps']}/{budget['tune']}/"
        f"{budget['draws']}, {runtime:.0f}s (< 600s)",
    )


def test_criterion_7_strategy_constraints(israel_bundle):
    _, ds = israel_bundle
    t0 = time.time()
    marg = ds.dose_counts / ds.populations[None, :, None]
    factual = reconstruct_factual(marg, [g.label for g in ds.groups])
    budgets = weekly_dose_budgets(factual, ds.populations)
    uptake = factual.uptake()

    from counterfact.strategy import generate_uniform

    strategies = {
        "uniform": generate_uniform(factual, ds.populations),
        "elderly_first": elderly_first(factual, ds.populations),
        "young_first": young_first(factual, ds.populations),
    }
    worst_budget = 0.0
    worst_cap = -np.inf
    gap_violation_mass = 0.0
    for name, strat in strategies.items():
        strat.validate()
        diff = np.abs(weekly_dose_budgets(strat, ds.populations) - budgets)
        worst_budget = max(worst_budget, float(diff.max()))
        if name != "uniform":  # the uptake caps constrain the ranked strategies
            new_uptake = strat.uptake()
            for i in range(2):
                worst_cap = max(
                    worst_cap, float(np.max((new_uptake[i] - uptake[i]) * ds.populations))
                )
            worst_cap = max(
                worst_cap,
                float(np.max((new_uptake[2] - uptake[2] - 0.025) * ds.populations)),
            )
        sent = strat.sentinel
        for joint in strat.per_age:
            for (t1, t2, t3), mass in joint.items():
                if t3 != sent and t3 - t2 < 12:
                    gap_violation_mass += mass
    runtime = time.time() - t0
    verdict(
        7,
        worst_budget < 1e-9 and worst_cap <= 1e-6 and gap_violation_mass == 0.0 and runtime < 30.0,
        f"budget deviation <= {worst_budget:.2e} person-doses (limit 1e-9), cap excess <= "
        f"{max(worst_cap, 0.0):.2e} persons, booster-gap violating mass {gap_violation_mass}, "
        f"{runtime:.1f}s (< 30s)",
    )


def test_criterion_9_waning_monotonicity_desk(desk_vacc_bundle):
    spec, ds = desk_vacc_bundle
    t0 = time.time()
    config = desk_config(spec)
    evaluator = ScenarioEvaluator(
        ds, fake_posterior(ds, config, n=8), config,
        factorization=estimate_factorization(ds, waning=spec.waning),
    )
    ok = True
    detail = []
    for name in ("factual", "uniform", "elderly_first", "young_first"):
        totals = {}
        severe = {}
        for setting in ("none", "regular", "fast"):
            result = evaluator.evaluate(ScenarioSpec(strategy=name, waning=setting))
            totals[setting] = float(np.median(result.cumulative_samples("infections")))
            severe[setting] = float(np.median(result.cumulative_samples("severe")))
        strategy_ok = (
            totals["none"] <= totals["regular"] <= totals["fast"]
            and severe["none"] <= severe["regular"] <= severe["fast"]
        )
        ok = ok and strategy_ok
        detail.append(f"{name}: infections {totals['none']:.3g}<={totals['regular']:.3g}<="
                      f"{totals['fast']:.3g}")
    runtime = time.time() - t0
    verdict(
        9,
        ok and runtime < 120.0,
        f"none <= regular <= fast for all strategies ({'; '.join(detail)}), "
        f"{runtime:.0f}s (< 120s)",
    )


def test_criterion_10_disease_profile_normalisation(israel_bundle):
    spec, ds = israel_bundle
    config = desk_config(spec)
    evaluator = ScenarioEvaluator(
        ds, fake_posterior(ds, config, n=6), config,
        factorization=estimate_factorization(ds, waning=spec.waning, weighting="uniform"),
    )
    covid_uniform = evaluator.evaluate(ScenarioSpec(strategy="uniform"))
    covid_total = float(np.median(covid_uniform.cumulative_samples("severe")))
    rel_errs = {}
    for profile in ("flat", "spanish_flu"):
        g_scaled = disease_profile(profile, covid_uniform, evaluator)
        result = evaluator.evaluate(
            ScenarioSpec(strategy="uniform", disease_profile=profile), g_override=g_scaled
        )
        total = float(np.median(result.cumulative_samples("severe")))
        rel_errs[profile] = abs(total - covid_total) / covid_total

    g_flat = disease_profile("flat", covid_uniform, evaluator)
    flat_uniform = evaluator.evaluate(
        ScenarioSpec(strategy="uniform", disease_profile="flat"), g_override=g_flat
    )
    flat_ranked = evaluator.evaluate(
        ScenarioSpec(strategy="risk_ranked", disease_profile="flat"), g_override=g_flat
    )
    bitwise = np.array_equal(flat_ranked.severe_samples, flat_uniform.severe_samples) and np.array_equal(
        flat_ranked.infection_samples, flat_uniform.infection_samples
    )
    verdict(
        10,
        max(rel_errs.values()) < 1e-6 and bitwise,
        f"uniform-normalisation rel err flat {rel_errs['flat']:.1e}, spanish_flu "
        f"{rel_errs['spanish_flu']:.1e} (limit 1e-6); FlatRisk RiskRanked == Uniform bit-for-bit: "
        f"{bitwise}",
    )


@pytest.mark.full
def test_criterion_8_paper_number_reproduction(israel_bundle, tmp_path_factory):
    """Full pipeline on the Israel-like bundle at the paper's sampler budget.

    Gated behind COUNTERFACT_FULL=1 (tens of minutes). Orderings are hard
    requirements; magnitudes outside +-15% are documented as a gap per the
    stated fallback.
    """
    if os.environ.get("COUNTERFACT_FULL") != "1":
        pytest.skip("full-scale run (tens of minutes); set COUNTERFACT_FULL=1 to enable")
    spec, ds = israel_bundle
    out_dir = Path(os.environ.get("COUNTERFACT_FULL_OUT", tmp_path_factory.mktemp("criterion8")))
    t0 = time.time()
    config = InferenceConfig(mixing_gamma=spec.mixing_gamma, waning=spec.waning)
    posterior = sample_posterior(ds, config, seed=8)
    posterior.save(out_dir)
    fit_seconds = time.time() - t0

    evaluator = ScenarioEvaluator(
        ds, posterior, config,
        factorization=estimate_factorization(ds, waning=spec.waning, weighting="uniform"),
    )
    results = {
        name: evaluator.evaluate(ScenarioSpec(strategy=name))
        for name in ("factual", "uniform", "elderly_first", "young_first")
    }
    rows = wave_summary({r.label: r for name, r in results.items()})
    table = {
        (r["strategy"].lower().replace("elderlyfirst", "elderly_first")
         .replace("youngfirst", "young_first"), r["wave"], r["metric"]): r["median"]
        for r in rows
    }

    def med(name, wave, metric):
        return table[(name, wave, metric)]

    lines = [f"fit: {fit_seconds:.0f}s, draws={len(evaluator.samples)}"]
    for (name, wave, metric), value in sorted(table.items()):
        lines.append(f"{name:14s} {wave:6s} {metric:10s} {value:10.1f}")

    # orderings of the cumulative-incidence figure
    sev3 = {n: med(n, "third", "severe") for n in results}
    sev4 = {n: med(n, "fourth", "severe") for n in results}
    inf3 = {n: med(n, "third", "infections") for n in results}
    inf4 = {n: med(n, "fourth", "infections") for n in results}
    ordering_ok = (
        min(sev3, key=sev3.get) == "elderly_first"
        and min(sev4, key=sev4.get) == "elderly_first"
        and min(inf3, key=inf3.get) == "young_first"
        # highest tier: YoungFirst sits above the factual baseline, with
        # Uniform at the top of the wave-four infection ranking
        and inf4["young_first"] >= inf4["factual"]
    )
    lines.append(f"orderings ok: {ordering_ok}")

    gaps = []
    for (name, wave), target in PAPER_SEVERE_PER_100K.items():
        value = {"third": sev3, "fourth": sev4}[wave][name]
        rel = abs(value - target) / target
        lines.append(f"magnitude {name} {wave}: {value:.1f} vs {target} (rel {rel:.2%})")
        if rel > TOLERANCE:
            gaps.append((name, wave, value, target, rel))
    if gaps:
        lines.append(
            "DOCUMENTED GAP: magnitudes outside +-15%; compare against the mixing-factor "
            "sensitivity runs (gamma = 0.7 / 0.9) via `counterfact fit --mixing ...`"
        )
    (out_dir / "criterion8_report.txt").write_text("\n".join(lines))
    print("\n".join(lines))

    # full-scale waning monotonicity (criterion 9's full variant)
    waning_ok = True
    for name in ("factual", "elderly_first"):
        totals = [
            float(np.median(
                evaluator.evaluate(ScenarioSpec(strategy=name, waning=s)).cumulative_samples("infections")
            ))
            for s in ("none", "regular", "fast")
        ]
        waning_ok = waning_ok and totals[0] <= totals[1] <= totals[2]

    verdict(
        8,
        ordering_ok and waning_ok,
        f"orderings reproduced: {ordering_ok}; full-scale waning monotonicity: {waning_ok}; "
        + ("magnitudes within +-15%" if not gaps else f"{len(gaps)} magnitude gap(s) documented in "
           f"{out_dir / 'criterion8_report.txt'}"),
    )

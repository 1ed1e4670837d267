"""Command-line pipeline: ingest -> synth -> fit -> evaluate -> report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. ``COUNTERFACT_THREADS`` caps chain/scenario parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from counterfact import __version__
from counterfact.calendar import WeekGrid
from counterfact.counterfactual import (
    ScenarioError,
    ScenarioEvaluator,
    ScenarioSpec,
    WAVE_WINDOWS,
    wave_summary,
    write_result_tables,
    write_wave_summary,
)
from counterfact.data.loader import load_dataset, save_dataset
from counterfact.data.schema import DataError
from counterfact.data.synthetic import cohort_spec, desk_spec, generate_synthetic, israel_spec
from counterfact.dynamics import CHANGE_POINT_ANCHOR, CHANGE_POINT_SPACING, DynamicsError
from counterfact.inference import (
    InferenceConfig,
    PosteriorResult,
    SamplingError,
    posterior_predictive,
    sample_posterior,
)
from counterfact.severity import SeverityError, estimate_factorization, fit_waning
from counterfact.strategy import StrategyError
from counterfact import svgplot

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

STRATEGY_FAMILY = ("factual", "uniform", "elderly_first", "young_first")
PROFILE_STRATEGIES = (
    "factual",
    "uniform",
    "elderly_first",
    "young_first",
    "risk_ranked",
    "risk_ranked_reversed",
)
WANING_SETTINGS = ("none", "regular", "fast")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counterfact",
        description="Retrospective evaluation of age-dependent vaccine allocation strategies.",
    )
    parser.add_argument("--version", action="version", version=f"counterfact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a data bundle")
    p.add_argument("--data", required=True, help="bundle directory")

    p = sub.add_parser("synth", help="write a synthetic bundle with ground truth")
    p.add_argument("--preset", choices=("israel", "desk", "desk-vacc", "cohort"), default="desk")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa", type=float, default=None, help="case noise scale (preset default)")

    p = sub.add_parser("fit", help="sample the dynamics posterior from weekly cases")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _mixing_flag(p)
    p.add_argument("--chains", type=int, default=8)
    p.add_argument("--init-steps", type=int, default=150)
    p.add_argument("--tune", type=int, default=500)
    p.add_argument("--draws", type=int, default=500)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument(
        "--cp-anchor",
        default=None,
        help="change-point anchor date (ISO); default 2021-01-10 or the window start",
    )

    p = sub.add_parser("evaluate", help="run counterfactual scenarios against a posterior")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", required=True, help="posterior.jsonl from fit")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--scenario",
        required=True,
        choices=("strategies", "uptake", "profiles", "waning"),
    )
    _mixing_flag(p)
    p.add_argument("--doses", type=float, default=55_746.0, help="extra doses for --scenario uptake")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--cp-anchor", default=None)
    p.add_argument(
        "--weighting",
        choices=("person", "uniform"),
        default="person",
        help="week weighting inside the severity estimators",
    )

    p = sub.add_parser("report", help="collate evaluation outputs into one report")
    p.add_argument("--out", required=True, help="directory holding fit/evaluate outputs")
    return parser


def _mixing_flag(p: argparse.ArgumentParser) -> None:
    def mixing(text: str) -> float:
        value = float(text)
        if not 0.0 <= value <= 1.0:
            raise argparse.ArgumentTypeError(f"mixing factor must be in [0, 1], got {value}")
        return value

    p.add_argument("--mixing", type=mixing, default=0.8)


def default_cp_anchor(grid: WeekGrid, override: str | None) -> date:
    if override:
        return date.fromisoformat(override)
    window_end = grid.week_start(grid.n_weeks)
    if grid.anchor <= CHANGE_POINT_ANCHOR <= window_end:
        return CHANGE_POINT_ANCHOR
    return grid.anchor + timedelta(days=CHANGE_POINT_SPACING)


def cmd_ingest(args) -> int:
    dataset = load_dataset(args.data)
    grid = dataset.grid
    print(f"bundle {args.data}: {dataset.n_ages} age groups, {grid.n_weeks} weeks")
    print(f"window {grid.anchor} .. {grid.week_start(grid.n_weeks)} + 6 days")
    print(f"population {dataset.total_population:,.0f}, cases {dataset.cases.sum():,.0f}")
    print(f"doses {dataset.dose_counts.sum(axis=(1, 2)).round(0).tolist()}")
    print("validation: ok")
    return 0


def cmd_synth(args) -> int:
    if args.preset == "israel":
        spec = israel_spec() if args.kappa is None else israel_spec(case_noise_kappa=args.kappa)
    elif args.preset == "desk":
        spec = desk_spec() if args.kappa is None else desk_spec(kappa=args.kappa)
    elif args.preset == "desk-vacc":
        kwargs = {} if args.kappa is None else {"kappa": args.kappa}
        spec = desk_spec(with_vaccination=True, label="desk-vacc", **kwargs)
    else:
        spec = cohort_spec()
    dataset = generate_synthetic(spec, seed=args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {spec.label} bundle ({dataset.n_ages} groups, {dataset.n_weeks} weeks) to {args.out}")
    return 0


def _inference_config(dataset, mixing: float, cp_anchor: str | None, **budget) -> InferenceConfig:
    return InferenceConfig(
        mixing_gamma=mixing,
        cp_anchor=default_cp_anchor(dataset.grid, cp_anchor),
        waning=fit_waning(),
        **budget,
    )


def cmd_fit(args) -> int:
    dataset = load_dataset(args.data)
    config = _inference_config(
        dataset,
        args.mixing,
        args.cp_anchor,
        chains=args.chains,
        init_steps=args.init_steps,
        tune=args.tune,
        draws=args.draws,
    )
    result = sample_posterior(dataset, config, seed=args.seed)
    out = Path(args.out)
    path = result.save(out)
    bands = posterior_predictive(result.samples, dataset, config)
    _write_predictive(out / "posterior_predictive.csv", dataset, bands)
    meta = {
        "command": "fit",
        "data": str(args.data),
        "mixing": args.mixing,
        "seed": args.seed,
        "cp_anchor": config.cp_anchor.isoformat(),
        "budget": result.diagnostics["budget"],
        "runtime_seconds": result.diagnostics["runtime_seconds"],
        "kept_chains": result.diagnostics["kept_chains"],
    }
    (out / "fit_meta.json").write_text(json.dumps(meta, indent=2))
    labels = [g.label for g in dataset.groups]
    weeks = [dataset.grid.week_start(t).isoformat() for t in range(1, dataset.n_weeks + 1)]
    national = {
        "observed": dataset.cases.sum(axis=0).tolist(),
        "modelled median": bands["median"].sum(axis=0).tolist(),
    }
    svg = svgplot.line_chart(
        "Factual fit: weekly cases (national)",
        weeks,
        national,
        y_label="weekly cases",
    )
    svgplot.save_svg(svg, out / "fit_national.svg")
    print(f"posterior: {path} ({len(result.samples)} draws, kept chains "
          f"{result.diagnostics['kept_chains']}, {result.diagnostics['runtime_seconds']:.0f}s)")
    if dataset.truth is not None:
        _print_recovery(dataset, config, result)
    return 0


def _print_recovery(dataset, config, result) -> None:
    from counterfact.dynamics import base_reproduction_series
    from counterfact.inference import PosteriorModel

    truth = np.array(dataset.truth["r_base_weekly"])
    model = PosteriorModel(dataset, config)
    stack = []
    for s in result.samples:
        params = model.dynamics_params(s.params)
        rb = base_reproduction_series(params, dataset.n_ages, dataset.grid.n_days)
        stack.append(rb.reshape(dataset.n_ages, dataset.n_weeks, 7).mean(axis=2))
    med = np.median(np.stack(stack), axis=0)
    rel = np.abs(med - truth) / truth
    print(f"recovery vs truth: {(rel < 0.10).mean() * 100:.0f}% of weekly R_base within 10%")


def _write_predictive(path: Path, dataset, bands) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age_label", "week", "observed", "median", "lo95", "hi95"])
        for a, g in enumerate(dataset.groups):
            for t in range(1, dataset.n_weeks + 1):
                writer.writerow(
                    [
                        g.label,
                        dataset.grid.week_start(t).isoformat(),
                        repr(float(dataset.cases[a, t - 1])),
                        repr(float(bands["median"][a, t - 1])),
                        repr(float(bands["lo95"][a, t - 1])),
                        repr(float(bands["hi95"][a, t - 1])),
                    ]
                )


def _evaluator(args) -> ScenarioEvaluator:
    dataset = load_dataset(args.data)
    config = _inference_config(dataset, args.mixing, args.cp_anchor)
    posterior = PosteriorResult.load(args.posterior)
    factorization = estimate_factorization(
        dataset, waning=config.waning, weighting=args.weighting
    )
    return ScenarioEvaluator(
        dataset, posterior, config, factorization=factorization, n_samples=args.samples
    )


def _bars_from_rows(rows, metric, wave, title, path):
    strategies = sorted({r["strategy"] for r in rows})
    values, intervals = [], []
    for s in strategies:
        row = next(r for r in rows if r["strategy"] == s and r["metric"] == metric and r["wave"] == wave)
        values.append(row["median"])
        intervals.append((row["lo95"], row["hi95"]))
    svg = svgplot.grouped_bars(
        title,
        strategies,
        {metric: values},
        intervals={metric: intervals},
        y_label=f"cumulative {metric} per 100k",
    )
    svgplot.save_svg(svg, path)


def cmd_evaluate(args) -> int:
    evaluator = _evaluator(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": "evaluate",
        "scenario": args.scenario,
        "data": str(args.data),
        "posterior": str(args.posterior),
        "mixing": args.mixing,
        "samples": len(evaluator.samples),
    }

    if args.scenario == "strategies":
        results = {}
        for name in STRATEGY_FAMILY:
            results[name] = evaluator.evaluate(ScenarioSpec(strategy=name))
            write_result_tables(results[name], out, f"strategies_{name}")
        rows = wave_summary({r.label: r for r in results.values()})
        write_wave_summary(rows, out / "strategies_waves.csv")
        for metric in ("infections", "severe"):
            for wave, _, _ in WAVE_WINDOWS:
                _bars_from_rows(
                    rows,
                    metric,
                    wave,
                    f"Cumulative {metric} per 100k, {wave} wave",
                    out / f"strategies_{metric}_{wave}.svg",
                )
    elif args.scenario == "uptake":
        results = {"factual": evaluator.evaluate(ScenarioSpec(strategy="factual"))}
        for label in evaluator.age_labels:
            spec = ScenarioSpec(
                strategy="uptake", uptake_boost=(label, args.doses), label=f"uptake+{label}"
            )
            results[label] = evaluator.evaluate(spec)
        window = (("window", evaluator.grid.anchor, evaluator.grid.week_start(evaluator.grid.n_weeks)),)
        rows = wave_summary({r.label: r for r in results.values()}, waves=window)
        write_wave_summary(rows, out / "uptake_impact.csv")
        base = {r["metric"]: r["median"] for r in rows if r["strategy"] == "factual"}
        for metric in ("infections", "severe"):
            groups, deltas = [], []
            for label in evaluator.age_labels:
                row = next(
                    r
                    for r in rows
                    if r["strategy"] == f"uptake+{label}" and r["metric"] == metric
                )
                groups.append(label)
                deltas.append(base[metric] - row["median"])
            svg = svgplot.grouped_bars(
                f"Reduction in cumulative {metric} per 100k when boosting uptake by "
                f"{args.doses:,.0f} doses",
                groups,
                {f"averted {metric} per 100k": deltas},
            )
            svgplot.save_svg(svg, out / f"uptake_{metric}.svg")
        meta["doses"] = args.doses
    elif args.scenario == "profiles":
        table = evaluator.evaluate_profiles(list(PROFILE_STRATEGIES))
        all_rows = []
        for profile, results in table.items():
            rows = wave_summary({f"{profile}:{k}": v for k, v in results.items()})
            all_rows.extend(rows)
            for name, result in results.items():
                write_result_tables(result, out, f"profiles_{profile}_{name}")
        write_wave_summary(all_rows, out / "profiles_waves.csv")
        for profile in table:
            rows = [r for r in all_rows if r["strategy"].startswith(f"{profile}:")]
            _bars_from_rows(
                [
                    {**r, "strategy": r["strategy"].split(":", 1)[1]}
                    for r in rows
                ],
                "severe",
                "third",
                f"Cumulative severe per 100k, third wave, {profile} risk profile",
                out / f"profiles_{profile}_severe.svg",
            )
    else:  # waning
        all_rows = []
        window = (("window", evaluator.grid.anchor, evaluator.grid.week_start(evaluator.grid.n_weeks)),)
        for setting in WANING_SETTINGS:
            for name in STRATEGY_FAMILY:
                spec = ScenarioSpec(strategy=name, waning=setting, label=f"{setting}:{name}")
                result = evaluator.evaluate(spec)
                all_rows.extend(wave_summary({result.label: result}, waves=window))
        write_wave_summary(all_rows, out / "waning_window.csv")
        for metric in ("infections", "severe"):
            series = {}
            for setting in WANING_SETTINGS:
                series[setting] = [
                    next(
                        r["median"]
                        for r in all_rows
                        if r["strategy"] == f"{setting}:{name}" and r["metric"] == metric
                    )
                    for name in STRATEGY_FAMILY
                ]
            svg = svgplot.grouped_bars(
                f"Cumulative {metric} per 100k by waning timescale",
                list(STRATEGY_FAMILY),
                series,
                y_label=f"cumulative {metric} per 100k",
            )
            svgplot.save_svg(svg, out / f"waning_{metric}.svg")

    (out / f"{args.scenario}_meta.json").write_text(json.dumps(meta, indent=2))
    print(f"scenario {args.scenario}: outputs in {out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    if not out.exists():
        raise DataError(f"output directory {out} does not exist; run fit/evaluate first")
    metas = sorted(out.glob("*_meta.json")) + ([out / "fit_meta.json"] if (out / "fit_meta.json").exists() else [])
    csvs = sorted(out.glob("*.csv"))
    svgs = sorted(out.glob("*.svg"))
    if not csvs and not metas:
        raise DataError(f"no evaluation outputs in {out}; run fit/evaluate first")
    lines = ["# counterfact report", ""]
    lines.append("## Provenance")
    seen = set()
    for meta_path in metas:
        if meta_path in seen:
            continue
        seen.add(meta_path)
        meta = json.loads(meta_path.read_text())
        lines.append(f"- `{meta_path.name}`: " + ", ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append("")
    for svg in svgs:
        lines.append(f"## {svg.stem}")
        lines.append(f"![{svg.stem}]({svg.name})")
        lines.append("")
    for path in csvs:
        lines.append(f"## {path.stem}")
        lines.append("")
        rows = path.read_text().strip().splitlines()
        head = rows[:26]
        lines.append("| " + " | ".join(head[0].split(",")) + " |")
        lines.append("|" + "---|" * len(head[0].split(",")))
        for row in head[1:]:
            lines.append("| " + " | ".join(row.split(",")) + " |")
        if len(rows) > 26:
            lines.append(f"\n({len(rows) - 26} more rows in `{path.name}`)")
        lines.append("")
    (out / "report.md").write_text("\n".join(lines))
    print(f"report: {out / 'report.md'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "ingest": cmd_ingest,
        "synth": cmd_synth,
        "fit": cmd_fit,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StrategyError as exc:
        print(f"data error (strategy infeasible): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ScenarioError, SeverityError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DynamicsError, SamplingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

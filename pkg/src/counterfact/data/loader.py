"""CSV ingestion for the weekly Israel-format bundle.

A bundle directory holds four UTF-8 CSV files with header rows:

- ``population.csv``    age_label,population
- ``cases.csv``         week,age_label,cases
- ``severe.csv``        week,age_label,doses,severe_count,stratum_population
- ``vaccinations.csv``  week,age_label,dose_number,count

Weeks are written as the ISO date of the week's first day. Synthetic bundles
add ``truth.json`` with the generating parameters. Validation failures carry
file and line context.
"""

from __future__ import annotations

import csv
import json
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from counterfact.calendar import WeekGrid
from counterfact.data.schema import (
    AgeGroup,
    DataError,
    ObservedDataset,
    derive_vacc_fractions,
    derive_waning_dist,
)

REQUIRED_FILES = ("population.csv", "cases.csv", "severe.csv", "vaccinations.csv")


def load_dataset(directory: str | Path) -> ObservedDataset:
    """Load and validate a bundle; derived tables are computed from dose counts."""
    directory = Path(directory)
    for name in REQUIRED_FILES:
        if not (directory / name).exists():
            raise DataError(f"missing input file {name!r}", source=str(directory))

    groups = _read_population(directory / "population.csv")
    labels = {g.label: g.index for g in groups}

    case_rows = _read_rows(directory / "cases.csv", ["week", "age_label", "cases"])
    if not case_rows:
        raise DataError("no observations", source=str(directory / "cases.csv"))
    grid = _infer_grid(case_rows, directory / "cases.csv")
    week_index = {grid.week_start(t).isoformat(): t for t in range(1, grid.n_weeks + 1)}

    a, m = len(groups), grid.n_weeks
    cases = np.zeros((a, m))
    seen = np.zeros((a, m), dtype=bool)
    for line, row in case_rows:
        t = _lookup_week(row["week"], week_index, "cases.csv", line)
        g = _lookup_age(row["age_label"], labels, "cases.csv", line)
        cases[g, t - 1] = _parse_number(row["cases"], "cases.csv", line)
        seen[g, t - 1] = True
    if not seen.all():
        g, t = np.argwhere(~seen)[0]
        raise DataError(
            f"missing case row for age {groups[g].label!r}, week {grid.week_start(t + 1)}",
            source="cases.csv",
        )

    severe_counts = np.zeros((4, a, m))
    severe_pops = np.zeros((4, a, m))
    for line, row in _read_rows(
        directory / "severe.csv",
        ["week", "age_label", "doses", "severe_count", "stratum_population"],
    ):
        t = _lookup_week(row["week"], week_index, "severe.csv", line)
        g = _lookup_age(row["age_label"], labels, "severe.csv", line)
        v = int(_parse_number(row["doses"], "severe.csv", line))
        if not 0 <= v <= 3:
            raise DataError(f"doses must be 0..3, got {v}", source="severe.csv", line=line)
        severe_counts[v, g, t - 1] = _parse_number(row["severe_count"], "severe.csv", line)
        severe_pops[v, g, t - 1] = _parse_number(row["stratum_population"], "severe.csv", line)

    dose_counts = np.zeros((3, a, m))
    for line, row in _read_rows(
        directory / "vaccinations.csv", ["week", "age_label", "dose_number", "count"]
    ):
        t = _lookup_week(row["week"], week_index, "vaccinations.csv", line)
        g = _lookup_age(row["age_label"], labels, "vaccinations.csv", line)
        i = int(_parse_number(row["dose_number"], "vaccinations.csv", line))
        if not 1 <= i <= 3:
            raise DataError(f"dose_number must be 1..3, got {i}", source="vaccinations.csv", line=line)
        dose_counts[i - 1, g, t - 1] = _parse_number(row["count"], "vaccinations.csv", line)

    populations = np.array([g.population for g in groups])
    vacc_fractions = derive_vacc_fractions(dose_counts, populations)
    waning_dist = derive_waning_dist(dose_counts)

    truth = None
    truth_path = directory / "truth.json"
    if truth_path.exists():
        truth = json.loads(truth_path.read_text())

    dataset = ObservedDataset(
        grid=grid,
        groups=tuple(groups),
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


def save_dataset(dataset: ObservedDataset, directory: str | Path) -> Path:
    """Write a bundle in the load format; load(save(d)) round-trips exactly.

    Numbers are written with repr so float values survive bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = dataset.grid

    with open(directory / "population.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["age_label", "population"])
        for g in dataset.groups:
            w.writerow([g.label, _fmt(g.population)])

    with open(directory / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week", "age_label", "cases"])
        for t in range(1, grid.n_weeks + 1):
            for g in dataset.groups:
                w.writerow([grid.week_start(t).isoformat(), g.label, _fmt(dataset.cases[g.index, t - 1])])

    with open(directory / "severe.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week", "age_label", "doses", "severe_count", "stratum_population"])
        for t in range(1, grid.n_weeks + 1):
            for g in dataset.groups:
                for v in range(4):
                    pop = dataset.severe_pops[v, g.index, t - 1]
                    cnt = dataset.severe_counts[v, g.index, t - 1]
                    if pop == 0 and cnt == 0:
                        continue
                    w.writerow([grid.week_start(t).isoformat(), g.label, v, _fmt(cnt), _fmt(pop)])

    with open(directory / "vaccinations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week", "age_label", "dose_number", "count"])
        for t in range(1, grid.n_weeks + 1):
            for g in dataset.groups:
                for i in range(1, 4):
                    cnt = dataset.dose_counts[i - 1, g.index, t - 1]
                    if cnt == 0:
                        continue
                    w.writerow([grid.week_start(t).isoformat(), g.label, i, _fmt(cnt)])

    if dataset.truth is not None:
        (directory / "truth.json").write_text(json.dumps(dataset.truth, indent=2, sort_keys=True))
    return directory


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def _read_population(path: Path) -> list[AgeGroup]:
    rows = _read_rows(path, ["age_label", "population"])
    if not rows:
        raise DataError("population file is empty", source=path.name)
    groups = []
    for idx, (line, row) in enumerate(rows):
        pop = _parse_number(row["population"], path.name, line)
        if pop <= 0:
            raise DataError(f"non-positive population {pop}", source=path.name, line=line)
        groups.append(AgeGroup(index=idx, label=row["age_label"], population=pop))
    if len({g.label for g in groups}) != len(groups):
        raise DataError("duplicate age labels", source=path.name)
    return groups


def _read_rows(path: Path, columns: list[str]) -> list[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("missing header row", source=path.name)
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise DataError(f"missing columns {missing}", source=path.name, line=1)
        out = []
        for line, row in enumerate(reader, start=2):
            if all((row[c] or "").strip() == "" for c in columns):
                continue
            for c in columns:
                if (row[c] or "").strip() == "":
                    raise DataError(f"empty field {c!r}", source=path.name, line=line)
            out.append((line, row))
        return out


def _infer_grid(case_rows: list[tuple[int, dict]], path: Path) -> WeekGrid:
    dates = set()
    for line, row in case_rows:
        dates.add(_parse_date(row["week"], path.name, line))
    ordered = sorted(dates)
    anchor, last = ordered[0], ordered[-1]
    expected = {anchor + timedelta(days=7 * i) for i in range(((last - anchor).days // 7) + 1)}
    if dates != expected:
        raise DataError("weeks are not consecutive 7-day periods", source=path.name)
    return WeekGrid(anchor=anchor, n_weeks=len(ordered))


def _parse_date(text: str, source: str, line: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"bad ISO date {text!r}: {exc}", source=source, line=line) from None


def _parse_number(text: str, source: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"bad number {text!r}", source=source, line=line) from None
    if not np.isfinite(value):
        raise DataError(f"non-finite number {text!r}", source=source, line=line)
    return value


def _lookup_week(text: str, week_index: dict[str, int], source: str, line: int) -> int:
    t = week_index.get(text.strip())
    if t is None:
        raise DataError(f"week {text!r} not on the analysis grid", source=source, line=line)
    return t


def _lookup_age(label: str, labels: dict[str, int], source: str, line: int) -> int:
    g = labels.get(label.strip())
    if g is None:
        raise DataError(f"unknown age label {label!r}", source=source, line=line)
    return g

"""Comparison of two population-estimate vintages."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import AGE_BANDS, SEXES, DeathsSeries, MonthRange, PopulationSeries, quarter_label
from .errors import ExcessMortError, NoOverlap, StrataMismatch
from .excess import DEFAULT_DRAWS, ExcessReport, excess_report, run_qpr
from .glm import ModelSpec

DIFF_COLUMNS = ("quarter", "age_band", "old", "new", "abs_diff", "rel_diff_pct")


def relative_diff_pct(old: float, new: float):
    """``100 * (new - old) / old``; ``None`` when ``old`` is zero and the ratio is undefined."""
    if old == 0:
        return 0.0 if new == 0 else None
    return 100.0 * (new - old) / old


@dataclass(frozen=True)
class RebaseRow:
    quarter: int
    age_band: str  # an AGE_BANDS label or "total"
    old: float
    new: float
    abs_diff: float
    rel_diff_pct: float | None


@dataclass(frozen=True, eq=False)
class RebaseDiff:
    old_vintage: str
    new_vintage: str
    quarters: np.ndarray
    old_bands: np.ndarray  # (nq, n_bands), sexes summed
    new_bands: np.ndarray
    rows: tuple

    @property
    def absolute(self) -> np.ndarray:
        return self.new_bands - self.old_bands

    def total(self, quarter: int) -> RebaseRow:
        for r in self.rows:
            if r.quarter == quarter and r.age_band == "total":
                return r
        raise KeyError(quarter_label(quarter))


def _bands(counts: np.ndarray) -> np.ndarray:
    return counts.reshape(len(counts), len(AGE_BANDS), len(SEXES)).sum(axis=2)


def rebase_diff(old: PopulationSeries, new: PopulationSeries) -> RebaseDiff:
    if old.counts.shape[1] != new.counts.shape[1]:
        raise StrataMismatch("population vintages have different strata")
    start = max(int(old.quarters[0]), int(new.quarters[0]))
    stop = min(int(old.quarters[-1]), int(new.quarters[-1]))
    if start > stop:
        raise NoOverlap(f"{old.vintage} and {new.vintage} share no quarters")
    quarters = np.arange(start, stop + 1)
    old_bands = _bands(np.array([old.row(q) for q in quarters]))
    new_bands = _bands(np.array([new.row(q) for q in quarters]))
    rows = []
    for i, q in enumerate(quarters):
        for b, band in enumerate(AGE_BANDS):
            o, n = float(old_bands[i, b]), float(new_bands[i, b])
            rows.append(RebaseRow(int(q), band, o, n, n - o, relative_diff_pct(o, n)))
        o, n = float(old_bands[i].sum()), float(new_bands[i].sum())
        rows.append(RebaseRow(int(q), "total", o, n, n - o, relative_diff_pct(o, n)))
    return RebaseDiff(old.vintage, new.vintage, quarters, old_bands, new_bands, tuple(rows))


@dataclass(frozen=True)
class DeltaRow:
    key: object
    excess: float
    excess_pct: float


@dataclass(frozen=True)
class Sensitivity:
    old: ExcessReport
    new: ExcessReport
    delta: tuple  # of DeltaRow, new minus old


def excess_sensitivity(
    deaths: DeathsSeries,
    old: PopulationSeries,
    new: PopulationSeries,
    spec: ModelSpec,
    window: MonthRange,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    aggregation: str = "total",
    workers: int = 1,
) -> Sensitivity:
    """Run the same pipeline on two population vintages and difference the reports."""

    def run(pop):
        try:
            _, expected, _ = run_qpr(spec, deaths, pop, window, draws, seed)
            return excess_report(deaths, expected, aggregation)
        except ExcessMortError as exc:
            exc.args = (f"[{pop.vintage}] {exc}",) + exc.args[1:]
            raise

    if workers > 1:
        with ThreadPoolExecutor(2) as pool:
            old_report, new_report = pool.map(run, (old, new))
    else:
        old_report, new_report = run(old), run(new)
    delta = tuple(
        DeltaRow(a.key, b.excess - a.excess, b.excess_pct - a.excess_pct)
        for a, b in zip(old_report.rows, new_report.rows)
    )
    return Sensitivity(old_report, new_report, delta)

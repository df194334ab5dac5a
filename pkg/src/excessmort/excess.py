"""Expected deaths over a projection window and excess mortality reports."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import (
    AGE_BANDS,
    SEXES,
    CovidDeathsSeries,
    DeathsSeries,
    MonthlyExposure,
    MonthRange,
    PopulationSeries,
    month_label,
    month_year,
    monthly_exposure,
    year_months,
)
from .errors import (
    AggregationMismatch,
    DrawCountTooSmall,
    DrawCountWarning,
    ExcessMortError,
    GranularityUnavailable,
    WindowNotCovered,
)
from .glm import ModelFit, ModelSpec, cell_layout, cell_values, design_matrix, fit_model, log_exposure

AGGREGATIONS = ("total", "year", "month", "age_band", "sex")
DEFAULT_DRAWS = 10_000
PARTITION_SIZE = 1000
CI_PERCENTILES = (2.5, 97.5)

REPORT_COLUMNS = (
    "key",
    "actual",
    "expected_mean",
    "expected_lo",
    "expected_hi",
    "excess",
    "excess_lo",
    "excess_hi",
    "excess_pct",
    "excess_pct_lo",
    "excess_pct_hi",
)


def covariance_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == cov`` for a symmetric PSD matrix (tiny negative eigenvalues clipped)."""
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class ExpectedDeaths:
    """Expected-death distribution over (month, stratum) cells of a window.

    Draws are not stored; :meth:`aggregate` regenerates them from
    ``(seed, partition index)`` so every aggregation sees the same draws.
    """

    fit: ModelFit
    window: MonthRange
    months: np.ndarray
    strata: np.ndarray
    X: np.ndarray
    offset: np.ndarray
    mean: np.ndarray
    draws: int
    seed: int
    workers: int = 1

    @property
    def n_cells(self) -> int:
        return len(self.months)

    def _partitions(self):
        return [(s, min(s + PARTITION_SIZE, self.draws)) for s in range(0, self.draws, PARTITION_SIZE)]

    def aggregate(self, groups: np.ndarray, n_groups: int):
        """Return ``(mean, draws)`` aggregated to ``n_groups`` groups.

        ``mean`` has shape ``(n_groups,)`` and is the sum of the point
        predictions; ``draws`` has shape ``(self.draws, n_groups)``. Cells
        with group id -1 are left out.
        """
        groups = np.ascontiguousarray(groups, dtype=np.int64)
        beta_hat = np.ascontiguousarray(self.fit.coefficients[None, :])
        mean = np.zeros((1, n_groups))
        kernels.simulate_grouped(self.X, self.offset, beta_hat, np.empty((0, 0)), 0.0, groups, mean)

        out = np.zeros((self.draws, n_groups))
        L = covariance_factor(self.fit.covariance)
        phi = float(self.fit.dispersion)
        p = len(self.fit.coefficients)

        def run(index):
            start, stop = self._partitions()[index]
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(index,)))
            nb = stop - start
            beta = self.fit.coefficients + rng.standard_normal((nb, p)) @ L.T
            z = rng.standard_normal((nb, self.n_cells)) if phi > 0 else np.empty((0, 0))
            kernels.simulate_grouped(self.X, self.offset, np.ascontiguousarray(beta), z, phi, groups, out[start:stop])

        indices = range(len(self._partitions()))
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(run, indices))
        else:
            for i in indices:
                run(i)
        return mean[0], out


def expected_deaths(
    fit: ModelFit,
    exposure: MonthlyExposure,
    window: MonthRange,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    workers: int = 1,
) -> ExpectedDeaths:
    if not exposure.covers(window):
        raise WindowNotCovered(f"exposure ({exposure.range}) does not cover window {window}")
    months, strata = cell_layout(fit.spec, window)
    X = design_matrix(fit.spec, months, strata)
    offset = log_exposure(cell_values(fit.spec, exposure.window(window)))
    return project(fit, window, months, strata, X, offset, draws, seed, workers)


def project(fit, window, months, strata, X, offset, draws=DEFAULT_DRAWS, seed=0, workers=1) -> ExpectedDeaths:
    """Expected deaths for explicit design rows (``X``, ``offset``) of ``window``."""
    if draws < 1:
        raise DrawCountTooSmall(f"draws must be at least 1, got {draws}")
    if draws < 100:
        warnings.warn(f"only {draws} Monte Carlo draws; percentile intervals will be unstable", DrawCountWarning)
    X = np.ascontiguousarray(X, dtype=np.float64)
    offset = np.ascontiguousarray(offset, dtype=np.float64)
    mean = np.zeros((1, len(offset)))
    kernels.simulate_grouped(
        X, offset, np.ascontiguousarray(fit.coefficients[None, :]), np.empty((0, 0)), 0.0,
        np.arange(len(offset), dtype=np.int64), mean,
    )
    return ExpectedDeaths(
        fit, window, np.asarray(months), np.asarray(strata), X, offset, mean[0], int(draws), int(seed), workers
    )


# -- reports --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExcessRow:
    key: object
    actual: int
    expected_mean: float
    expected_lo: float
    expected_hi: float
    excess: float
    excess_lo: float
    excess_hi: float
    excess_pct: float
    excess_pct_lo: float
    excess_pct_hi: float

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


@dataclass(frozen=True)
class ExcessReport:
    aggregation: str
    rows: tuple
    window: MonthRange
    seed: int
    draws: int
    months: tuple = field(default=())

    def row(self, key) -> ExcessRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)

    @property
    def keys(self) -> list:
        return [r.key for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "window": [month_label(self.window.start), month_label(self.window.end)],
            "seed": self.seed,
            "draws": self.draws,
            "rows": [dict(zip(REPORT_COLUMNS, r.values())) for r in self.rows],
        }


def _grouping(expected: ExpectedDeaths, aggregation: str, months=None):
    """Group id per cell and the key for each group."""
    if aggregation not in AGGREGATIONS:
        raise AggregationMismatch(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")
    cell_months = expected.months
    if aggregation in ("age_band", "sex") and not expected.fit.spec.stratified:
        raise AggregationMismatch(f"aggregation {aggregation!r} needs an age/sex stratified model")
    if aggregation == "total":
        ids, keys = np.zeros(len(cell_months), dtype=np.int64), ["total"]
    elif aggregation == "year":
        years = sorted({month_year(int(m)) for m in cell_months})
        ids = np.array([years.index(month_year(int(m))) for m in cell_months], dtype=np.int64)
        keys = years
    elif aggregation == "month":
        ids = (cell_months - cell_months[0]).astype(np.int64)
        keys = [month_label(int(m)) for m in expected.window.months]
    elif aggregation == "age_band":
        ids = (expected.strata // len(SEXES)).astype(np.int64)
        keys = list(AGE_BANDS)
    else:
        ids = (expected.strata % len(SEXES)).astype(np.int64)
        keys = list(SEXES)
    if months is not None:
        mask = np.isin(cell_months, np.asarray(list(months)))
        ids = np.where(mask, ids, -1)
        if aggregation in ("year", "month"):
            used = sorted(set(ids[mask].tolist()))
            remap = {old: new for new, old in enumerate(used)}
            ids = np.array([remap[i] if i >= 0 else -1 for i in ids], dtype=np.int64)
            keys = [keys[i] for i in used]
    return ids, keys


def excess_report(actual: DeathsSeries, expected: ExpectedDeaths, aggregation: str = "total", months=None) -> ExcessReport:
    """Actual vs expected deaths aggregated by ``aggregation``.

    ``months`` optionally restricts the report to a subset of the window's
    months (e.g. one calendar year) while reusing the same draws.
    """
    window = expected.window
    if not actual.covers(window):
        raise WindowNotCovered(f"deaths ({actual.range}) do not cover window {window}")
    ids, keys = _grouping(expected, aggregation, months)
    n_groups = len(keys)
    mean, draws = expected.aggregate(ids, n_groups)

    observed = cell_values(expected.fit.spec, actual.window(window)).astype(np.float64)
    totals = np.zeros(n_groups)
    np.add.at(totals, ids[ids >= 0], observed[ids >= 0])

    lo, hi = np.percentile(draws, CI_PERCENTILES, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pct_draws = 100.0 * (totals - draws) / draws
        pct_lo, pct_hi = np.percentile(pct_draws, CI_PERCENTILES, axis=0)
        pct = 100.0 * (totals - mean) / mean
    rows = tuple(
        ExcessRow(
            key=keys[g],
            actual=int(totals[g]),
            expected_mean=float(mean[g]),
            expected_lo=float(lo[g]),
            expected_hi=float(hi[g]),
            excess=float(totals[g] - mean[g]),
            excess_lo=float(totals[g] - hi[g]),
            excess_hi=float(totals[g] - lo[g]),
            excess_pct=float(pct[g]),
            excess_pct_lo=float(pct_lo[g]),
            excess_pct_hi=float(pct_hi[g]),
        )
        for g in range(n_groups)
    )
    used_months = tuple(int(m) for m in (window.months if months is None else sorted(months)))
    return ExcessReport(aggregation, rows, window, expected.seed, expected.draws, used_months)


# -- covid comparison -----------------------------------------------------------------

@dataclass(frozen=True)
class CovidJoinRow:
    key: object
    covid_deaths: int | None
    excess: float
    excess_lo: float
    excess_hi: float


def covid_comparison(report: ExcessReport, covid: CovidDeathsSeries, aggregation: str | None = None) -> list:
    aggregation = aggregation or report.aggregation
    if aggregation != report.aggregation:
        raise AggregationMismatch(f"report is aggregated by {report.aggregation!r}, join requested by {aggregation!r}")
    if not covid.has_granularity(aggregation):
        raise GranularityUnavailable(f"covid deaths file has no breakdown by {aggregation}")
    missing = [m for m in report.months if m not in covid.totals]
    if missing:
        raise WindowNotCovered(
            f"covid deaths file lacks {len(missing)} report months (first {month_label(missing[0])})"
        )

    def count(key):
        if aggregation == "total":
            return sum(covid.totals[m] for m in report.months)
        if aggregation == "year":
            return sum(covid.totals[m] for m in report.months if month_year(m) == key)
        if aggregation == "month":
            return next(covid.totals[m] for m in report.months if month_label(m) == key)
        if aggregation == "age_band":
            values = [covid.age_count(m, AGE_BANDS.index(key)) for m in report.months]
        else:
            values = [covid.sex_count(m, SEXES.index(key)) for m in report.months]
        return None if any(v is None for v in values) else sum(values)

    return [CovidJoinRow(r.key, count(r.key), r.excess, r.excess_lo, r.excess_hi) for r in report.rows]


# -- pipeline helpers -------------------------------------------------------------------

def analysis_range(spec: ModelSpec, window: MonthRange) -> MonthRange:
    base = spec.baseline_window
    return MonthRange(min(base.start, window.start), max(base.end, window.end))


def run_qpr(
    spec: ModelSpec,
    deaths: DeathsSeries,
    population: PopulationSeries,
    window: MonthRange,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    exposure: MonthlyExposure | None = None,
    workers: int = 1,
):
    """Fit on the baseline and project over ``window``: ``(fit, expected, exposure)``."""
    if exposure is None:
        exposure = monthly_exposure(population, analysis_range(spec, window))
    fit = fit_model(spec, deaths, exposure)
    return fit, expected_deaths(fit, exposure, window, draws, seed, workers), exposure


@dataclass(frozen=True)
class SweepRow:
    baseline: tuple
    window: tuple
    qpr_mean: float
    qpr_lo: float
    qpr_hi: float
    smrlr: float
    error: str | None = None

    @property
    def baseline_label(self) -> str:
        return f"{self.baseline[0]}-{self.baseline[1]}"


def baseline_sweep(
    template: ModelSpec,
    deaths: DeathsSeries,
    exposure: MonthlyExposure,
    weights,
    windows,
    lengths=range(4, 11),
    end_year: int = 2019,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    workers: int = 1,
) -> list:
    """One independent fit + report per (baseline length, window).

    ``weights`` is the standard population used for the SMR-LR column.
    A failing row carries its error message and NaN values; other rows are
    unaffected.
    """
    from dataclasses import replace

    from .standardization import fit_smr_lr, smr_lr_excess, standardized_rates

    jobs = [(n, tuple(w)) for w in windows for n in lengths]

    def run(job):
        n, (w0, w1) = job
        baseline = (end_year - n + 1, end_year)
        try:
            spec = replace(template, baseline=baseline)
            window = year_months(w0, w1)
            fit = fit_model(spec, deaths, exposure)
            expected = expected_deaths(fit, exposure, window, draws, seed)
            total = excess_report(deaths, expected, "total").rows[0]
            years = list(range(baseline[0], w1 + 1))
            rates = standardized_rates(deaths, exposure, weights, years)
            smr = fit_smr_lr(rates, list(range(baseline[0], baseline[1] + 1)))
            smr_total = smr_lr_excess(smr, rates, deaths, list(range(w0, w1 + 1))).cumulative
            return SweepRow(baseline, (w0, w1), total.excess, total.excess_lo, total.excess_hi, smr_total)
        except ExcessMortError as exc:
            nan = float("nan")
            return SweepRow(baseline, (w0, w1), nan, nan, nan, nan, f"baseline {baseline[0]}-{baseline[1]}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]

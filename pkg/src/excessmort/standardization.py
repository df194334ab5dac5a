"""Direct age/sex standardization and the linear-trend comparator on standardized rates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import N_STRATA, STRATA, DeathsSeries, MonthlyExposure, PopulationSeries, quarter_label, year_months
from .errors import (
    InsufficientYears,
    QuarterNotFound,
    WindowNotCovered,
    ZeroExposure,
    ZeroExposureWarning,
    ZeroObservedRate,
)

PER = 1000.0


@dataclass(frozen=True, eq=False)
class StandardWeights:
    weights: np.ndarray  # (N_STRATA,), sums to 1
    label: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (N_STRATA,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("standard weights must be non-negative over every stratum and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class StandardizedRateSeries:
    years: tuple
    rates: tuple  # deaths per 1000 person-years

    def rate(self, year: int) -> float:
        return self.rates[self.years.index(year)]


@dataclass(frozen=True)
class SmrLrFit:
    intercept: float
    slope: float
    years: tuple
    residuals: tuple

    def predict(self, year) -> float:
        return self.intercept + self.slope * year


@dataclass(frozen=True)
class SmrLrYear:
    year: int
    actual_deaths: int
    observed_rate: float
    predicted_rate: float
    expected_deaths: float
    excess: float


@dataclass(frozen=True)
class SmrLrExcess:
    years: tuple  # of SmrLrYear

    @property
    def cumulative(self) -> float:
        return float(sum(y.excess for y in self.years))


def standard_weights(pop: PopulationSeries, quarter: int) -> StandardWeights:
    """Stratum shares of the population in ``quarter`` (a quarter index)."""
    if not pop.has_quarter(quarter):
        raise QuarterNotFound(f"standard quarter {quarter_label(quarter)} not in {pop.vintage} population series")
    counts = pop.row(quarter)
    total = counts.sum()
    if total <= 0:
        raise ZeroExposure(f"population in {quarter_label(quarter)} sums to zero")
    return StandardWeights(counts / total, f"ERP {quarter_label(quarter)} ({pop.vintage})")


def _year_totals(deaths: DeathsSeries, exposure: MonthlyExposure, year: int):
    window = year_months(year, year)
    if not deaths.covers(window) or not exposure.covers(window):
        raise WindowNotCovered(f"year {year} not fully covered by deaths and exposure")
    return deaths.window(window).sum(axis=0), exposure.window(window).sum(axis=0)


def weighted_rate(deaths_by_stratum, person_years, weights: StandardWeights) -> float:
    """``1000 * sum_g w_g * D_g / PY_g`` with the zero-exposure rules applied."""
    d = np.asarray(deaths_by_stratum, dtype=np.float64)
    py = np.asarray(person_years, dtype=np.float64)
    zero = py <= 0
    if np.any(zero & (d > 0)):
        bad = [STRATA[j].label for j in np.flatnonzero(zero & (d > 0))]
        raise ZeroExposure(f"deaths recorded against zero person-years in {', '.join(bad)}")
    if np.any(zero):
        warnings.warn("strata with zero person-years and zero deaths contribute nothing", ZeroExposureWarning)
    rates = np.divide(d, py, out=np.zeros_like(d), where=~zero)
    return float(PER * np.sum(weights.weights * rates))


def standardized_rate(deaths: DeathsSeries, exposure: MonthlyExposure, weights: StandardWeights, year: int) -> float:
    d, py = _year_totals(deaths, exposure, year)
    return weighted_rate(d, py, weights)


def standardized_rates(deaths, exposure, weights, years) -> StandardizedRateSeries:
    years = tuple(int(y) for y in years)
    return StandardizedRateSeries(years, tuple(standardized_rate(deaths, exposure, weights, y) for y in years))


def fit_smr_lr(rates: StandardizedRateSeries, baseline_years) -> SmrLrFit:
    """Ordinary least squares of standardized rate on calendar year."""
    years = tuple(int(y) for y in baseline_years)
    if len(set(years)) < 2:
        raise InsufficientYears(f"need at least 2 baseline years, got {len(set(years))}")
    x = np.array(years, dtype=np.float64)
    r = np.array([rates.rate(y) for y in years])
    xc = x - x.mean()
    slope = float(np.sum(xc * (r - r.mean())) / np.sum(xc * xc))
    intercept = float(r.mean() - slope * x.mean())
    residuals = tuple(float(v) for v in r - (intercept + slope * x))
    return SmrLrFit(intercept, slope, years, residuals)


def smr_lr_excess(fit: SmrLrFit, rates: StandardizedRateSeries, deaths: DeathsSeries, window_years) -> SmrLrExcess:
    """Point excess per window year with expected = actual * predicted rate / observed rate."""
    rows = []
    for year in window_years:
        if year not in rates.years or not deaths.covers(year_months(year, year)):
            raise WindowNotCovered(f"window year {year} lacks an observed rate or deaths")
        d = int(deaths.window(year_months(year, year)).sum())
        observed = rates.rate(year)
        predicted = fit.predict(year)
        if observed == 0:
            if d > 0:
                raise ZeroObservedRate(f"zero standardized rate with {d} deaths in {year}")
            expected = 0.0
        else:
            expected = d * predicted / observed
        rows.append(SmrLrYear(year, d, observed, predicted, expected, d - expected))
    return SmrLrExcess(tuple(rows))

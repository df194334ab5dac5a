"""Synthetic populations and deaths from a known log-linear Poisson generator.

Used by the test-suite and benchmarks, and handy for trying the CLI
without real data. Magnitudes are loosely modelled on a country of about
five million people.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .data import (
    AGE_BANDS,
    DAYS_PER_YEAR,
    N_STRATA,
    SEXES,
    CovidDeathsSeries,
    DeathsSeries,
    MonthRange,
    PopulationSeries,
    month_midpoint,
    monthly_exposure,
    parse_quarter,
    quarter_anchor,
    write_covid_deaths,
    write_deaths,
    write_population,
    year_months,
)

# per band, both sexes, at the start of 2010
BASE_POPULATION = np.array([610e3, 600e3, 620e3, 560e3, 610e3, 560e3, 420e3, 250e3, 130e3, 25e3])
# annual log growth per band
BASE_GROWTH = np.array([0.005, 0.004, 0.015, 0.012, 0.0, 0.012, 0.025, 0.035, 0.025, 0.04])
# annual deaths per person, female; males are scaled by MALE_RATIO
BASE_RATES = np.array([6e-4, 2.5e-4, 5e-4, 7e-4, 1.6e-3, 3.8e-3, 8.5e-3, 2.2e-2, 6.8e-2, 0.19])
MALE_RATIO = 1.3
REFERENCE_ORDINAL = float(date(2010, 1, 1).toordinal())


@dataclass(frozen=True)
class Generator:
    """Parameters of the synthetic world.

    ``aging`` adds an accelerating growth term to the oldest bands so the
    age structure shifts faster over time than a log-linear extrapolation
    of crude rates would predict.
    """

    rate_trend: float = -0.01
    seasonal_amplitude: float = 0.12
    seasonal_peak_month: int = 7
    aging: float = 0.0
    population_scale: float = 1.0
    shock: dict = field(default_factory=dict)  # year -> multiplicative effect on rates

    def population(self, first="2010-Q1", last="2023-Q4", vintage="synthetic") -> PopulationSeries:
        q0, q1 = parse_quarter(first), parse_quarter(last)
        quarters = np.arange(q0, q1 + 1)
        t = np.array([(quarter_anchor(int(q)) - REFERENCE_ORDINAL) / DAYS_PER_YEAR for q in quarters])
        accel = np.array([0, 0, 0, 0, 0, 0, 0.2, 0.6, 1.0, 1.5]) * self.aging
        log_growth = BASE_GROWTH[None, :] * t[:, None] + 0.5 * accel[None, :] * t[:, None] ** 2
        bands = self.population_scale * BASE_POPULATION[None, :] * np.exp(log_growth)
        female_share = np.array([0.487, 0.487, 0.49, 0.505, 0.515, 0.51, 0.51, 0.52, 0.56, 0.66])
        counts = np.empty((len(quarters), N_STRATA))
        counts[:, 0::2] = bands * female_share
        counts[:, 1::2] = bands * (1 - female_share)
        return PopulationSeries(vintage, quarters, np.round(counts))

    def log_rates(self, months: np.ndarray) -> np.ndarray:
        """Log deaths per person-year, shape ``(len(months), N_STRATA)``."""
        months = np.asarray(months)
        t = np.array([(month_midpoint(int(m)) - REFERENCE_ORDINAL) / DAYS_PER_YEAR for m in months])
        phase = 2 * np.pi * ((months % 12) + 0.5 - (self.seasonal_peak_month - 0.5)) / 12
        season = self.seasonal_amplitude * np.cos(phase)
        base = np.log(np.repeat(BASE_RATES, len(SEXES)) * np.tile([1.0, MALE_RATIO], len(AGE_BANDS)))
        shock = np.array([np.log(self.shock.get(int(m) // 12, 1.0)) for m in months])
        return base[None, :] + (self.rate_trend * t + season + shock)[:, None]

    def expected(self, pop: PopulationSeries, window: MonthRange) -> np.ndarray:
        exposure = monthly_exposure(pop, window)
        return exposure.person_years * np.exp(self.log_rates(window.months))

    def deaths(self, pop: PopulationSeries, window: MonthRange, rng) -> DeathsSeries:
        return DeathsSeries(window.months, rng.poisson(self.expected(pop, window)))


def covid_series(deaths: DeathsSeries, start_year=2020, fraction=0.02, rng=None, by_age=True) -> CovidDeathsSeries:
    """A Covid-attributed series: a fixed fraction of deaths from ``start_year`` on."""
    rng = rng or np.random.default_rng(0)
    months = [int(m) for m in deaths.months if m // 12 >= start_year]
    totals, ages = {}, {}
    for m in months:
        row = deaths.counts[m - int(deaths.months[0])]
        per_age = row.reshape(len(AGE_BANDS), len(SEXES)).sum(axis=1)
        counts = rng.binomial(per_age, fraction)
        if by_age:
            ages.update({(m, a): int(c) for a, c in enumerate(counts)})
        totals[m] = int(counts.sum())
    return CovidDeathsSeries(tuple(months), totals, ages, {}, {})


def write_dataset(directory, seed: int = 1, generator: Generator | None = None, shock=None) -> dict:
    """Write a complete synthetic input set (two vintages, deaths, covid) to ``directory``."""
    gen = generator or Generator(shock=shock or {2022: 1.03, 2023: 1.02})
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pop_old = gen.population(vintage="2018-base")
    counts = pop_old.counts.copy()
    revised = pop_old.quarters >= parse_quarter("2018-Q3")
    ramp = np.clip((pop_old.quarters - parse_quarter("2018-Q2")) / 20.0, 0, 1)
    shrink = 1 - 0.009 * ramp[:, None] * np.linspace(0.5, 2.5, N_STRATA)[None, :]
    counts[revised] = np.round(counts[revised] * shrink[revised])
    pop_new = PopulationSeries("2023-base", pop_old.quarters, counts)
    deaths = gen.deaths(pop_new, year_months(2010, 2023), rng)
    covid = covid_series(deaths, rng=rng)
    paths = {
        "population_old": directory / "population_2018base.csv",
        "population": directory / "population_2023base.csv",
        "deaths": directory / "deaths.csv",
        "covid": directory / "covid_deaths.csv",
    }
    write_population(pop_old, paths["population_old"])
    write_population(pop_new, paths["population"])
    write_deaths(deaths, paths["deaths"])
    write_covid_deaths(covid, paths["covid"])
    return paths

"""Excess mortality estimation from stratified monthly deaths and quarterly population."""

__version__ = "0.1.0"

from .data import (
    AGE_BANDS,
    SEXES,
    STRATA,
    CovidDeathsSeries,
    DeathsSeries,
    MonthlyExposure,
    MonthRange,
    PopulationSeries,
    StratumKey,
    ingest_covid_deaths,
    ingest_deaths,
    ingest_population,
    monthly_exposure,
    year_months,
)
from .excess import ExcessReport, baseline_sweep, covid_comparison, excess_report, expected_deaths
from .glm import ModelFit, ModelSpec, build_design, fit_irls, pearson_dispersion
from .rebase import excess_sensitivity, rebase_diff
from .standardization import fit_smr_lr, smr_lr_excess, standard_weights, standardized_rate

__all__ = [
    "AGE_BANDS", "SEXES", "STRATA", "CovidDeathsSeries", "DeathsSeries", "MonthlyExposure", "MonthRange",
    "PopulationSeries", "StratumKey", "ingest_covid_deaths", "ingest_deaths", "ingest_population",
    "monthly_exposure", "year_months", "ExcessReport", "baseline_sweep", "covid_comparison", "excess_report",
    "expected_deaths", "ModelFit", "ModelSpec", "build_design", "fit_irls", "pearson_dispersion",
    "excess_sensitivity", "rebase_diff", "fit_smr_lr", "smr_lr_excess", "standard_weights", "standardized_rate",
]

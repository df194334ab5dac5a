"""Command-line front end.

Every subcommand writes plot-ready data files into the output directory.
Exit codes: 0 success, 2 input/validation error, 3 numerical/model error;
on failure a JSON error object is printed to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, glm
from .config import RunConfig, load
from .data import (
    N_STRATA,
    MonthRange,
    ingest_covid_deaths,
    ingest_deaths,
    ingest_population,
    month_year,
    monthly_exposure,
    parse_quarter,
    population_months,
    quarter_label,
    year_months,
)
from .errors import ConfigError, ExcessMortError, InputError
from .excess import REPORT_COLUMNS, analysis_range, baseline_sweep, covid_comparison, excess_report, expected_deaths
from .rebase import DIFF_COLUMNS, excess_sensitivity, rebase_diff
from .standardization import fit_smr_lr, smr_lr_excess, standard_weights, standardized_rates


def fmt(x, places=3) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if not np.isfinite(x):
        return "NA"
    s = f"{x:.{places}f}"
    return "0" + s[2:] if s.startswith("-0") and float(s) == 0 else s


class Writer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    @property
    def provenance(self) -> dict:
        return {
            "tool": f"excessmort {__version__}",
            "seed": self.cfg.seed,
            "draws": self.cfg.draws,
            "config": self.cfg.digest(),
        }

    def header(self) -> str:
        p = self.provenance
        return f"# {p['tool']} seed={p['seed']} draws={p['draws']} config={p['config']}\n"

    def table(self, stem: str, columns, rows, force_csv=False) -> Path:
        rows = [[fmt(v) if not isinstance(v, str) else v for v in row] for row in rows]
        if self.cfg.format == "json" and not force_csv:
            path = self.out / f"{stem}.json"
            doc = {"provenance": self.provenance, "columns": list(columns), "rows": [dict(zip(columns, r)) for r in rows]}
            path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        else:
            path = self.out / f"{stem}.csv"
            lines = [self.header(), ",".join(columns) + "\n"] + [",".join(r) + "\n" for r in rows]
            path.write_text("".join(lines), encoding="utf-8")
        self.written.append(path)
        return path

    def json(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text + "\n", encoding="utf-8")
        self.written.append(path)
        return path


def _report_rows(report):
    return [[str(r.key)] + [fmt(v, 4 if "pct" in c else 3) for c, v in zip(REPORT_COLUMNS[1:], r.values()[1:])] for r in report.rows]


def _window(years) -> MonthRange:
    return year_months(*years)


class Session:
    """Loaded inputs shared by subcommands within one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.writer = Writer(cfg)
        self._cache = {}

    def _get(self, key, loader):
        if key not in self._cache:
            self._cache[key] = loader()
        return self._cache[key]

    @property
    def deaths(self):
        self.cfg.require("deaths")
        return self._get("deaths", lambda: ingest_deaths(self.cfg.deaths))

    @property
    def population(self):
        self.cfg.require("population")
        return self._get("population", lambda: ingest_population(self.cfg.population, "current"))

    @property
    def population_old(self):
        self.cfg.require("population_old")
        return self._get("population_old", lambda: ingest_population(self.cfg.population_old, "previous"))

    @property
    def covid(self):
        if self.cfg.covid is None:
            return None
        self.cfg.require("covid")
        return self._get("covid", lambda: ingest_covid_deaths(self.cfg.covid))

    def exposure(self, window: MonthRange):
        return monthly_exposure(self.population, window)

    def full_range(self) -> MonthRange:
        d, p = self.deaths.range, population_months(self.population)
        return MonthRange(max(d.start, p.start), min(d.end, p.end))

    @property
    def fit(self):
        def run():
            exposure = self.exposure(self.full_range())
            return glm.fit_model(self.cfg.spec, self.deaths, exposure)

        return self._get("fit", run)

    @property
    def weights(self):
        try:
            q = parse_quarter(self.cfg.standard_quarter)
        except ValueError:
            raise ConfigError(f"invalid standard quarter {self.cfg.standard_quarter!r}") from None
        return standard_weights(self.population, q)

    def full_years(self) -> list[int]:
        r = self.full_range()
        first = month_year(r.start) + (r.start % 12 != 0)
        last = month_year(r.end) - (r.end % 12 != 11)
        return list(range(first, last + 1))


# -- subcommands ------------------------------------------------------------------------

def cmd_fit(s: Session):
    """Fit the baseline model; write fit.json and the fitted monthly series."""
    cfg = s.cfg
    fit = s.fit
    s.writer.json("fit.json", fit.to_json(provenance=s.writer.provenance))
    span = s.full_range()
    expected = expected_deaths(fit, s.exposure(span), span, cfg.draws, cfg.seed, cfg.workers)
    report = excess_report(s.deaths, expected, "month")
    rows = [[r.key, fmt(r.actual), fmt(r.expected_mean), fmt(r.expected_lo), fmt(r.expected_hi)] for r in report.rows]
    s.writer.table("fig_s3", ("month", "actual", "fitted_mean", "lo95", "hi95"), rows)


def cmd_excess(s: Session):
    """Project the baseline into the window and report excess deaths."""
    cfg = s.cfg
    window = _window(cfg.window)
    exposure = s.exposure(analysis_range(cfg.spec, window))
    expected = expected_deaths(s.fit, exposure, window, cfg.draws, cfg.seed, cfg.workers)
    reports = {}
    for agg in cfg.aggregations:
        reports[agg] = excess_report(s.deaths, expected, agg)
        s.writer.table(f"excess_{agg}", REPORT_COLUMNS, _report_rows(reports[agg]))

    covid = s.covid
    if covid is None:
        return
    yearly = reports.get("year") or excess_report(s.deaths, expected, "year")
    smr = _smrlr(s, window)
    smr_by_year = {y.year: y.excess for y in smr.years}
    rows = [
        [str(j.key), fmt(j.covid_deaths), fmt(j.excess), fmt(j.excess_lo), fmt(j.excess_hi), fmt(smr_by_year.get(j.key))]
        for j in covid_comparison(yearly, covid)
    ]
    s.writer.table("fig_s5", ("year", "covid_deaths", "qpr_excess", "qpr_lo", "qpr_hi", "smrlr_excess"), rows)
    monthly = reports.get("month") or excess_report(s.deaths, expected, "month")
    rows = [[j.key, fmt(j.covid_deaths), fmt(j.excess), fmt(j.excess_lo), fmt(j.excess_hi)] for j in covid_comparison(monthly, covid)]
    s.writer.table("fig_s5_monthly", ("month", "covid_deaths", "qpr_excess", "qpr_lo", "qpr_hi"), rows)

    if not cfg.spec.stratified:
        return
    rows = []
    for agg in ("age_band", "sex"):
        if not covid.has_granularity(agg):
            print(f"warning: covid deaths have no {agg} breakdown; fig_s6 omits it", file=sys.stderr)
            continue
        for year in cfg.figure_years:
            months = [m for m in window.months if month_year(int(m)) == year]
            if not months:
                continue
            report = excess_report(s.deaths, expected, agg, months=months)
            for j in covid_comparison(report, covid):
                rows.append([str(year), agg, str(j.key), fmt(j.covid_deaths), fmt(j.excess), fmt(j.excess_lo), fmt(j.excess_hi)])
    s.writer.table("fig_s6", ("year", "aggregation", "group", "covid_deaths", "qpr_excess", "qpr_lo", "qpr_hi"), rows)


def _smrlr(s: Session, window: MonthRange, baseline=None):
    baseline = baseline or s.cfg.baseline
    years = list(range(baseline[0], month_year(window.end) + 1))
    exposure = s.exposure(MonthRange(year_months(years[0], years[0]).start, window.end))
    rates = standardized_rates(s.deaths, exposure, s.weights, years)
    fit = fit_smr_lr(rates, range(baseline[0], baseline[1] + 1))
    return smr_lr_excess(fit, rates, s.deaths, range(month_year(window.start), month_year(window.end) + 1))


def cmd_sweep(s: Session):
    """Excess over the window for each baseline length."""
    cfg = s.cfg
    lo, hi = cfg.sweep_lengths
    first = min(cfg.sweep_end - hi + 1, *(w[0] for w in cfg.windows))
    last = max(w[1] for w in cfg.windows)
    exposure = s.exposure(year_months(first, last))
    rows = baseline_sweep(
        cfg.spec, s.deaths, exposure, s.weights, cfg.windows, range(lo, hi + 1), cfg.sweep_end, cfg.draws, cfg.seed, cfg.workers
    )
    for w in cfg.windows:
        table = [r for r in rows if r.window == tuple(w)]
        for r in table:
            if r.error:
                print(f"warning: {r.error}", file=sys.stderr)
        s.writer.table(
            f"sweep_{w[0]}_{w[1]}",
            ("baseline", "qpr_mean", "qpr_lo", "qpr_hi", "smrlr"),
            [[r.baseline_label, fmt(r.qpr_mean), fmt(r.qpr_lo), fmt(r.qpr_hi), fmt(r.smrlr)] for r in table],
        )


def cmd_standardize(s: Session):
    """Yearly standardized rates and the linear-trend comparator."""
    cfg = s.cfg
    weights = s.weights
    years = s.full_years()
    span = year_months(years[0], years[-1])
    exposure = s.exposure(span)
    rates = standardized_rates(s.deaths, exposure, weights, years)
    baseline_years = range(cfg.baseline[0], cfg.baseline[1] + 1)
    smr = fit_smr_lr(rates, baseline_years)
    window = _window(cfg.window)
    smr_excess = smr_lr_excess(smr, rates, s.deaths, range(month_year(window.start), month_year(window.end) + 1))

    s.writer.table("standardized_rates", ("year", "rate_per_1000"), [[str(y), fmt(r, 2)] for y, r in zip(rates.years, rates.rates)])
    rows = [[str(y.year), str(y.actual_deaths), fmt(y.expected_deaths), fmt(y.excess)] for y in smr_excess.years]
    rows.append(["total", str(sum(y.actual_deaths for y in smr_excess.years)),
                 fmt(sum(y.expected_deaths for y in smr_excess.years)), fmt(smr_excess.cumulative)])
    s.writer.table("smrlr", ("year", "actual_deaths", "expected_deaths", "excess"), rows)

    qpr = {}
    if cfg.spec.stratified:
        expected = expected_deaths(s.fit, exposure, span, cfg.draws, cfg.seed, cfg.workers)
        year_idx = np.array([month_year(int(m)) - years[0] for m in expected.months])
        groups = year_idx * N_STRATA + expected.strata
        mean, draws = expected.aggregate(groups, len(years) * N_STRATA)
        py = np.stack([exposure.window(year_months(y, y)).sum(axis=0) for y in years])
        w = weights.weights
        rate_mean = 1000.0 * (mean.reshape(len(years), N_STRATA) / py) @ w
        rate_draws = 1000.0 * (draws.reshape(-1, len(years), N_STRATA) / py[None]) @ w
        lo, hi = np.percentile(rate_draws, (2.5, 97.5), axis=0)
        qpr = {y: (rate_mean[i], lo[i], hi[i]) for i, y in enumerate(years)}
    rows = []
    for y, r in zip(rates.years, rates.rates):
        m, l, h = qpr.get(y, (None, None, None))
        rows.append([str(y), fmt(r, 2), fmt(smr.predict(y), 2), fmt(m, 2), fmt(l, 2), fmt(h, 2)])
    s.writer.table("fig_s4", ("year", "rate_per_1000", "smrlr_rate", "qpr_rate_mean", "qpr_rate_lo", "qpr_rate_hi"), rows)


def cmd_rebase_diff(s: Session):
    """Compare two population vintages and their effect on excess."""
    cfg = s.cfg
    old, new = s.population_old, s.population
    diff = rebase_diff(old, new)
    rows = [
        [quarter_label(r.quarter), r.age_band, fmt(r.old, 0), fmt(r.new, 0), fmt(r.abs_diff, 0),
         "undefined" if r.rel_diff_pct is None else fmt(r.rel_diff_pct, 4)]
        for r in diff.rows
    ]
    s.writer.table("rebase_diff", DIFF_COLUMNS, rows)

    window = _window(cfg.window)
    sens = excess_sensitivity(s.deaths, old, new, cfg.spec, window, cfg.draws, cfg.seed, workers=cfg.workers)
    rows = []
    for label, report in (("previous", sens.old), ("current", sens.new)):
        rows += [[label] + r for r in _report_rows(report)]
    for d in sens.delta:
        blanks = ["NA"] * 4
        rows.append(["delta", str(d.key), *blanks, fmt(d.excess), "NA", "NA", fmt(d.excess_pct, 4), "NA", "NA"])
    s.writer.table("sensitivity", ("vintage",) + REPORT_COLUMNS, rows)


def cmd_figures(s: Session):
    """Run every subcommand."""
    cmd_fit(s)
    cmd_excess(s)
    cmd_sweep(s)
    cmd_standardize(s)
    if s.cfg.population_old is not None:
        cmd_rebase_diff(s)


COMMANDS = {
    "fit": cmd_fit,
    "excess": cmd_excess,
    "sweep": cmd_sweep,
    "standardize": cmd_standardize,
    "rebase-diff": cmd_rebase_diff,
    "figures": cmd_figures,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--draws", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--deaths")
    common.add_argument("--population", help="current population vintage")
    common.add_argument("--population-old", dest="population_old", help="previous population vintage")
    common.add_argument("--covid")
    common.add_argument("--baseline", help="YYYY-YYYY")
    common.add_argument("--window", dest="windows", action="append", help="YYYY-YYYY; repeatable")
    common.add_argument("--aggregation", dest="aggregations", action="append", help="repeatable")
    common.add_argument("--stratification", choices=("age_sex", "none"))
    common.add_argument("--harmonics", type=int)
    common.add_argument("--standard-quarter", dest="standard_quarter")
    common.add_argument("--workers", type=int)

    parser = argparse.ArgumentParser(
        prog="excessmort", description="Excess mortality from stratified deaths and population estimates.", parents=[common]
    )
    parser.add_argument("--version", action="version", version=f"excessmort {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip() or None)
    return parser


def _fail(exc: ExcessMortError) -> int:
    code = 2 if isinstance(exc, InputError) else 3
    print(json.dumps({**exc.to_dict(), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        cfg = load(config_path, {k.replace("-", "_"): v for k, v in args.items()})
        COMMANDS[command](Session(cfg))
    except ExcessMortError as exc:
        return _fail(exc)
    except (OSError, UnicodeDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 3}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

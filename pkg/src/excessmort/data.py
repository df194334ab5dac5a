"""Domain types, CSV ingestion and the quarterly-to-monthly population bridge.

Periods are carried as integer indices so arithmetic on them is trivial:

* month index  ``year * 12 + (month - 1)``
* quarter index ``year * 4 + (quarter - 1)``

A quarter's population is anchored at the instant the quarter ends
(midnight after 31 Mar / 30 Jun / 30 Sep / 31 Dec). A month is represented
by its midpoint. Times are float day ordinals (``date.toordinal``).
"""

from __future__ import annotations

import calendar
import csv
import io
import math
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DuplicateRow,
    MalformedRow,
    MissingStratum,
    NegativeCount,
    NonContiguousMonths,
    NonContiguousQuarters,
    NonIntegerCount,
    WindowOutOfRange,
)

AGE_BANDS = ("0-9", "10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89", "90+")
SEXES = ("F", "M")
DAYS_PER_YEAR = 365.25

POPULATION_HEADER = ("quarter", "age_band", "sex", "population")
DEATHS_HEADER = ("month", "age_band", "sex", "deaths")


@dataclass(frozen=True, order=True)
class StratumKey:
    """One (age band, sex) cell. Ordering follows age band, then sex."""

    age_index: int
    sex_index: int

    @property
    def age_band(self) -> str:
        return AGE_BANDS[self.age_index]

    @property
    def sex(self) -> str:
        return SEXES[self.sex_index]

    @property
    def index(self) -> int:
        return self.age_index * len(SEXES) + self.sex_index

    @property
    def label(self) -> str:
        return f"{self.age_band}:{self.sex}"

    @classmethod
    def parse(cls, age_band: str, sex: str) -> "StratumKey":
        return cls(AGE_BANDS.index(age_band), SEXES.index(sex))


STRATA = tuple(StratumKey(a, s) for a in range(len(AGE_BANDS)) for s in range(len(SEXES)))
N_STRATA = len(STRATA)


# -- period tokens ----------------------------------------------------------------

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_QUARTER_RE = re.compile(r"^(\d{4})-Q(\d)$")


def month_index(year: int, month: int) -> int:
    return year * 12 + month - 1


def month_year(m: int) -> int:
    return m // 12


def month_label(m: int) -> str:
    return f"{m // 12:04d}-{m % 12 + 1:02d}"


def parse_month(token: str) -> int:
    match = _MONTH_RE.match(token.strip())
    if not match:
        raise ValueError(f"invalid month token {token!r}")
    year, month = int(match.group(1)), int(match.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"invalid month token {token!r}")
    return month_index(year, month)


def quarter_label(q: int) -> str:
    return f"{q // 4:04d}-Q{q % 4 + 1}"


def parse_quarter(token: str) -> int:
    match = _QUARTER_RE.match(token.strip())
    if not match:
        raise ValueError(f"invalid quarter token {token!r}")
    year, quarter = int(match.group(1)), int(match.group(2))
    if not 1 <= quarter <= 4:
        raise ValueError(f"invalid quarter token {token!r}")
    return year * 4 + quarter - 1


def days_in_month(m: int) -> int:
    return calendar.monthrange(m // 12, m % 12 + 1)[1]


def month_start(m: int) -> float:
    return float(date(m // 12, m % 12 + 1, 1).toordinal())


def month_midpoint(m: int) -> float:
    return month_start(m) + days_in_month(m) / 2.0


def quarter_anchor(q: int) -> float:
    """Day ordinal of the instant quarter ``q`` ends (start of the next quarter)."""
    nxt = q + 1
    return float(date(nxt // 4, 3 * (nxt % 4) + 1, 1).toordinal())


def year_months(start_year: int, end_year: int) -> "MonthRange":
    return MonthRange(month_index(start_year, 1), month_index(end_year, 12))


@dataclass(frozen=True)
class MonthRange:
    """Inclusive range of month indices."""

    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"empty month range {month_label(self.start)}..{month_label(self.end)}")

    @property
    def months(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1)

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, m: int) -> bool:
        return self.start <= m <= self.end

    def __str__(self) -> str:
        return f"{month_label(self.start)}..{month_label(self.end)}"

    @property
    def years(self) -> list[int]:
        return list(range(month_year(self.start), month_year(self.end) + 1))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


# -- series types -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PopulationSeries:
    vintage: str
    quarters: np.ndarray  # (nq,) contiguous quarter indices
    counts: np.ndarray  # (nq, N_STRATA) float64

    def __post_init__(self):
        quarters = np.asarray(self.quarters, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.shape != (len(quarters), N_STRATA):
            raise MissingStratum(f"population counts have shape {counts.shape}, expected ({len(quarters)}, {N_STRATA})")
        if len(quarters) == 0:
            raise NonContiguousQuarters("population series has no quarters")
        gaps = np.nonzero(np.diff(quarters) != 1)[0]
        if len(gaps):
            i = gaps[0]
            raise NonContiguousQuarters(
                f"quarters not contiguous: {quarter_label(quarters[i])} followed by {quarter_label(quarters[i + 1])}"
            )
        if not np.all(np.isfinite(counts)):
            raise MalformedRow("population counts must be finite")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise NegativeCount(f"negative population at {quarter_label(quarters[i])} {STRATA[j].label}")
        object.__setattr__(self, "quarters", _frozen(quarters))
        object.__setattr__(self, "counts", _frozen(counts))

    def row(self, q: int) -> np.ndarray:
        i = q - int(self.quarters[0])
        if not 0 <= i < len(self.quarters):
            raise KeyError(quarter_label(q))
        return self.counts[i]

    def has_quarter(self, q: int) -> bool:
        return int(self.quarters[0]) <= q <= int(self.quarters[-1])

    def scaled(self, factor) -> "PopulationSeries":
        return PopulationSeries(self.vintage, self.quarters, self.counts * factor)

    def with_counts(self, counts, vintage: str | None = None) -> "PopulationSeries":
        return PopulationSeries(vintage or self.vintage, self.quarters, counts)


@dataclass(frozen=True, eq=False)
class DeathsSeries:
    months: np.ndarray  # (nm,) contiguous month indices
    counts: np.ndarray  # (nm, N_STRATA) int64

    def __post_init__(self):
        months = np.asarray(self.months, dtype=np.int64)
        counts = np.asarray(self.counts)
        if counts.shape != (len(months), N_STRATA):
            raise MissingStratum(f"death counts have shape {counts.shape}, expected ({len(months)}, {N_STRATA})")
        if len(months) == 0:
            raise NonContiguousMonths("deaths series has no months")
        gaps = np.nonzero(np.diff(months) != 1)[0]
        if len(gaps):
            i = gaps[0]
            raise NonContiguousMonths(
                f"months not contiguous: {month_label(months[i])} followed by {month_label(months[i + 1])}"
            )
        if counts.dtype.kind == "f":
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise NonIntegerCount("death counts must be integers")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise NegativeCount(f"negative deaths at {month_label(months[i])} {STRATA[j].label}")
        object.__setattr__(self, "months", _frozen(months))
        object.__setattr__(self, "counts", _frozen(counts.astype(np.int64)))

    @property
    def range(self) -> MonthRange:
        return MonthRange(int(self.months[0]), int(self.months[-1]))

    def covers(self, window: MonthRange) -> bool:
        return self.months[0] <= window.start and window.end <= self.months[-1]

    def window(self, window: MonthRange) -> np.ndarray:
        """Counts for the months in ``window`` (shape ``(len(window), N_STRATA)``)."""
        i = window.start - int(self.months[0])
        return self.counts[i : i + len(window)]

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True, eq=False)
class MonthlyExposure:
    months: np.ndarray  # (nm,)
    population: np.ndarray  # (nm, N_STRATA) interpolated mid-month population
    person_years: np.ndarray  # (nm, N_STRATA)

    def __post_init__(self):
        object.__setattr__(self, "months", _frozen(np.asarray(self.months, dtype=np.int64)))
        object.__setattr__(self, "population", _frozen(np.asarray(self.population, dtype=np.float64)))
        object.__setattr__(self, "person_years", _frozen(np.asarray(self.person_years, dtype=np.float64)))

    @property
    def range(self) -> MonthRange:
        return MonthRange(int(self.months[0]), int(self.months[-1]))

    def covers(self, window: MonthRange) -> bool:
        return self.months[0] <= window.start and window.end <= self.months[-1]

    def window(self, window: MonthRange) -> np.ndarray:
        i = window.start - int(self.months[0])
        return self.person_years[i : i + len(window)]


@dataclass(frozen=True, eq=False)
class CovidDeathsSeries:
    """Covid-attributed deaths: a total per month plus optional breakdowns.

    Breakdown dicts are keyed by ``(month, index)`` where index is an age
    band index, a sex index or a stratum index. Keys that were not supplied
    are simply absent.
    """

    months: tuple
    totals: dict
    by_age: dict
    by_sex: dict
    by_stratum: dict

    def has_granularity(self, aggregation: str) -> bool:
        if aggregation in ("total", "year", "month"):
            return True
        if aggregation == "age_band":
            return bool(self.by_age) or bool(self.by_stratum)
        if aggregation == "sex":
            return bool(self.by_sex) or bool(self.by_stratum)
        return False

    def age_count(self, m: int, age: int):
        if (m, age) in self.by_age:
            return self.by_age[(m, age)]
        cells = [self.by_stratum.get((m, age * len(SEXES) + s)) for s in range(len(SEXES))]
        if any(c is None for c in cells):
            return None
        return sum(cells)

    def sex_count(self, m: int, sex: int):
        if (m, sex) in self.by_sex:
            return self.by_sex[(m, sex)]
        cells = [self.by_stratum.get((m, a * len(SEXES) + sex)) for a in range(len(AGE_BANDS))]
        if any(c is None for c in cells):
            return None
        return sum(cells)


# -- ingestion ----------------------------------------------------------------------

def _rows(path, header):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if line.strip() and not line.startswith("#")]
    if not lines:
        raise MalformedRow(f"{path}: empty file")
    reader = csv.reader(io.StringIO("".join(line for _, line in lines)))
    first = next(reader)
    if tuple(c.strip() for c in first) != header:
        raise MalformedRow(f"{path}: line {lines[0][0]}: header {first!r} does not match {','.join(header)}")
    for (lineno, _), row in zip(lines[1:], reader):
        if len(row) != len(header):
            raise MalformedRow(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row]


def _stratum(path, lineno, age, sex) -> int:
    try:
        return StratumKey.parse(age, sex).index
    except ValueError:
        raise MalformedRow(f"{path}: line {lineno}: unknown stratum ({age!r}, {sex!r})") from None


def _int_count(path, lineno, token) -> int:
    try:
        value = int(token)
    except ValueError:
        try:
            float(token)
        except ValueError:
            raise MalformedRow(f"{path}: line {lineno}: count {token!r} is not a number") from None
        raise NonIntegerCount(f"{path}: line {lineno}: count {token!r} is not an integer") from None
    if value < 0:
        raise NegativeCount(f"{path}: line {lineno}: negative count {token!r}")
    return value


def _assemble(path, cells, label):
    """Turn ``{period: {stratum: value}}`` into sorted periods and a dense array."""
    periods = sorted(cells)
    for p in periods:
        missing = [STRATA[j].label for j in range(N_STRATA) if j not in cells[p]]
        if missing:
            raise MissingStratum(f"{path}: {label(p)} lacks strata {', '.join(missing)}")
    dense = [[cells[p][j] for j in range(N_STRATA)] for p in periods]
    return periods, dense


def ingest_population(path, vintage: str) -> PopulationSeries:
    cells: dict[int, dict[int, float]] = {}
    for lineno, (qtok, age, sex, value) in _rows(path, POPULATION_HEADER):
        try:
            q = parse_quarter(qtok)
        except ValueError:
            raise MalformedRow(f"{path}: line {lineno}: invalid quarter {qtok!r}") from None
        j = _stratum(path, lineno, age, sex)
        try:
            count = float(value)
        except ValueError:
            raise MalformedRow(f"{path}: line {lineno}: population {value!r} is not a number") from None
        if not math.isfinite(count):
            raise MalformedRow(f"{path}: line {lineno}: population {value!r} is not finite")
        if count < 0:
            raise NegativeCount(f"{path}: line {lineno}: negative population {value!r}")
        row = cells.setdefault(q, {})
        if j in row:
            raise DuplicateRow(f"{path}: line {lineno}: duplicate row for {qtok} {age} {sex}")
        row[j] = count
    quarters, dense = _assemble(path, cells, quarter_label)
    for a, b in zip(quarters, quarters[1:]):
        if b != a + 1:
            raise NonContiguousQuarters(f"{path}: quarter {quarter_label(a + 1)} missing (after {quarter_label(a)})")
    return PopulationSeries(vintage, np.array(quarters), np.array(dense, dtype=np.float64))


def ingest_deaths(path) -> DeathsSeries:
    cells: dict[int, dict[int, int]] = {}
    for lineno, (mtok, age, sex, value) in _rows(path, DEATHS_HEADER):
        try:
            m = parse_month(mtok)
        except ValueError:
            raise MalformedRow(f"{path}: line {lineno}: invalid month {mtok!r}") from None
        j = _stratum(path, lineno, age, sex)
        count = _int_count(path, lineno, value)
        row = cells.setdefault(m, {})
        if j in row:
            raise DuplicateRow(f"{path}: line {lineno}: duplicate row for {mtok} {age} {sex}")
        row[j] = count
    months, dense = _assemble(path, cells, month_label)
    for a, b in zip(months, months[1:]):
        if b != a + 1:
            raise NonContiguousMonths(f"{path}: month {month_label(a + 1)} missing (after {month_label(a)})")
    return DeathsSeries(np.array(months), np.array(dense, dtype=np.int64))


def ingest_covid_deaths(path) -> CovidDeathsSeries:
    totals, by_age, by_sex, by_stratum = {}, {}, {}, {}
    for lineno, (mtok, age, sex, value) in _rows(path, DEATHS_HEADER):
        try:
            m = parse_month(mtok)
        except ValueError:
            raise MalformedRow(f"{path}: line {lineno}: invalid month {mtok!r}") from None
        count = _int_count(path, lineno, value)
        if age == "*" and sex == "*":
            target, key = totals, m
        elif sex == "*":
            if age not in AGE_BANDS:
                raise MalformedRow(f"{path}: line {lineno}: unknown age band {age!r}")
            target, key = by_age, (m, AGE_BANDS.index(age))
        elif age == "*":
            if sex not in SEXES:
                raise MalformedRow(f"{path}: line {lineno}: unknown sex {sex!r}")
            target, key = by_sex, (m, SEXES.index(sex))
        else:
            target, key = by_stratum, (m, _stratum(path, lineno, age, sex))
        if key in target:
            raise DuplicateRow(f"{path}: line {lineno}: duplicate row for {mtok} {age} {sex}")
        target[key] = count

    months = sorted({m for m in totals} | {k[0] for d in (by_age, by_sex, by_stratum) for k in d})
    for m in months:
        breakdowns = [
            ([by_age.get((m, a)) for a in range(len(AGE_BANDS))], "age"),
            ([by_sex.get((m, s)) for s in range(len(SEXES))], "sex"),
            ([by_stratum.get((m, j)) for j in range(N_STRATA)], "age/sex"),
        ]
        if m not in totals:
            complete = [vals for vals, _ in breakdowns if all(v is not None for v in vals)]
            if not complete:
                raise MalformedRow(f"{path}: {month_label(m)} has no total row and no complete breakdown")
            totals[m] = sum(complete[0])
        for vals, name in breakdowns:
            given = [v for v in vals if v is not None]
            if not given:
                continue
            if len(given) == len(vals) and sum(given) != totals[m]:
                raise MalformedRow(
                    f"{path}: {month_label(m)} {name} breakdown sums to {sum(given)}, total is {totals[m]}"
                )
            if sum(given) > totals[m]:
                raise MalformedRow(
                    f"{path}: {month_label(m)} {name} breakdown sums to {sum(given)}, exceeding total {totals[m]}"
                )
    return CovidDeathsSeries(tuple(months), totals, by_age, by_sex, by_stratum)


# -- serialization ------------------------------------------------------------------

def format_count(x) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def _write(path, header, rows: Iterable):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_population(series: PopulationSeries, path) -> None:
    _write(
        path,
        POPULATION_HEADER,
        (
            (quarter_label(int(q)), k.age_band, k.sex, format_count(series.counts[i, k.index]))
            for i, q in enumerate(series.quarters)
            for k in STRATA
        ),
    )


def write_deaths(series: DeathsSeries, path) -> None:
    _write(
        path,
        DEATHS_HEADER,
        (
            (month_label(int(m)), k.age_band, k.sex, str(int(series.counts[i, k.index])))
            for i, m in enumerate(series.months)
            for k in STRATA
        ),
    )


def write_covid_deaths(series: CovidDeathsSeries, path) -> None:
    rows = []
    for m in series.months:
        tok = month_label(m)
        rows.append((tok, "*", "*", str(series.totals[m])))
        rows += [(tok, AGE_BANDS[a], "*", str(c)) for (mm, a), c in sorted(series.by_age.items()) if mm == m]
        rows += [(tok, "*", SEXES[s], str(c)) for (mm, s), c in sorted(series.by_sex.items()) if mm == m]
        rows += [
            (tok, STRATA[j].age_band, STRATA[j].sex, str(c))
            for (mm, j), c in sorted(series.by_stratum.items())
            if mm == m
        ]
    _write(path, DEATHS_HEADER, rows)


# -- quarterly -> monthly bridge ----------------------------------------------------

def interpolate_population(pop: PopulationSeries, times: np.ndarray) -> np.ndarray:
    """Piecewise-linear population at day ordinals ``times``, per stratum.

    Interior points interpolate between the bracketing anchors; points
    outside the anchor span extrapolate along the nearest two anchors.
    """
    times = np.asarray(times, dtype=np.float64)
    anchors = np.array([quarter_anchor(int(q)) for q in pop.quarters])
    counts = pop.counts
    if len(anchors) == 1:
        return np.repeat(counts[:1], len(times), axis=0)
    hi = np.clip(np.searchsorted(anchors, times, side="left"), 1, len(anchors) - 1)
    lo = hi - 1
    frac = (times - anchors[lo]) / (anchors[hi] - anchors[lo])
    values = counts[lo] + (counts[hi] - counts[lo]) * frac[:, None]
    return np.maximum(values, 0.0)


def monthly_exposure(pop: PopulationSeries, window: MonthRange) -> MonthlyExposure:
    first = quarter_anchor(int(pop.quarters[0]) - 1)
    last = quarter_anchor(int(pop.quarters[-1]) + 1)
    months = window.months
    mids = np.array([month_midpoint(int(m)) for m in months])
    if mids[0] < first or mids[-1] > last:
        raise WindowOutOfRange(
            f"window {window} extends beyond one quarter either side of the population series "
            f"({quarter_label(int(pop.quarters[0]))}..{quarter_label(int(pop.quarters[-1]))})"
        )
    population = interpolate_population(pop, mids)
    lengths = np.array([days_in_month(int(m)) for m in months], dtype=np.float64)
    person_years = population * (lengths / DAYS_PER_YEAR)[:, None]
    return MonthlyExposure(months, population, person_years)


def population_months(pop: PopulationSeries) -> MonthRange:
    """Widest month window :func:`monthly_exposure` accepts for ``pop``."""
    first = quarter_anchor(int(pop.quarters[0]) - 1)
    last = quarter_anchor(int(pop.quarters[-1]) + 1)
    d = date.fromordinal(int(first))
    m = month_index(d.year, d.month)
    while month_midpoint(m) < first:
        m += 1
    start = m
    while month_midpoint(m + 1) <= last:
        m += 1
    return MonthRange(start, m)

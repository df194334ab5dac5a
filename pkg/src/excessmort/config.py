"""Run configuration: an INI-style file plus command-line overrides.

Grammar (all keys optional unless a subcommand needs them)::

    [data]
    deaths = deaths.csv              ; paths relative to the config file
    population = erp_2023base.csv    ; current vintage
    population_old = erp_2018base.csv
    covid = covid_deaths.csv

    [model]
    baseline = 2014-2019
    stratification = age_sex         ; or none
    harmonics = 2

    [run]
    windows = 2020-2023, 2020-2022   ; the first window drives fit/excess/standardize
    aggregations = total, year, month, age_band, sex
    standard_quarter = 2021-Q1
    figure_years = 2022, 2023
    sweep_lengths = 4-10
    sweep_end = 2019
    draws = 10000
    seed = 1
    workers = 1
    out = results
    format = csv                     ; or json
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .excess import AGGREGATIONS, DEFAULT_DRAWS
from .glm import ModelSpec

PATH_KEYS = ("deaths", "population", "population_old", "covid")


def _year_range(text: str) -> tuple[int, int]:
    parts = text.replace(":", "-").split("-")
    try:
        if len(parts) == 1:
            y = int(parts[0])
            return y, y
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"invalid year range {text!r}; expected YYYY-YYYY")


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int(text, key) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {text!r}") from None


@dataclass
class RunConfig:
    deaths: Path | None = None
    population: Path | None = None
    population_old: Path | None = None
    covid: Path | None = None
    baseline: tuple = (2014, 2019)
    stratification: str = "age_sex"
    harmonics: int = 2
    windows: list = field(default_factory=lambda: [(2020, 2023), (2020, 2022)])
    aggregations: list = field(default_factory=lambda: list(AGGREGATIONS))
    standard_quarter: str = "2021-Q1"
    figure_years: list = field(default_factory=lambda: [2022, 2023])
    sweep_lengths: tuple = (4, 10)
    sweep_end: int = 2019
    draws: int = DEFAULT_DRAWS
    seed: int = 1
    workers: int = 1
    out: Path = Path("results")
    format: str = "csv"

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(tuple(self.baseline), self.stratification, self.harmonics)

    @property
    def window(self) -> tuple:
        return self.windows[0]

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def require(self, *keys) -> None:
        for key in keys:
            path = getattr(self, key)
            if path is None:
                raise ConfigError(f"missing required input {key!r}")
            if not Path(path).is_file():
                raise ConfigError(f"{key} file not found: {path}")

    def validate(self) -> None:
        self.spec  # raises InvalidSpec
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.draws < 1:
            raise ConfigError("draws must be at least 1")
        unknown = [a for a in self.aggregations if a not in AGGREGATIONS]
        if unknown:
            raise ConfigError(f"unknown aggregations {unknown}; expected some of {AGGREGATIONS}")
        if not self.windows:
            raise ConfigError("at least one window is required")
        lo, hi = self.sweep_lengths
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid sweep lengths {lo}-{hi}")


def load(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.parent
        values = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                values[key] = value
        for key in PATH_KEYS:
            if key in values:
                p = Path(values.pop(key))
                setattr(cfg, key, p if p.is_absolute() else base / p)
        if "out" in values:
            p = Path(values.pop("out"))
            cfg.out = p if p.is_absolute() else base / p
        _apply(cfg, values)
    if overrides:
        overrides = dict(overrides)
        for key in PATH_KEYS + ("out",):
            if overrides.get(key) is not None:
                setattr(cfg, key, Path(overrides.pop(key)))
        _apply(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _apply(cfg: RunConfig, values: dict) -> None:
    for key, value in values.items():
        if key == "baseline":
            cfg.baseline = _year_range(value)
        elif key == "stratification":
            cfg.stratification = value.strip()
        elif key in ("harmonics", "draws", "seed", "workers", "sweep_end"):
            setattr(cfg, key, _int(value, key))
        elif key == "windows":
            items = value if isinstance(value, list) else _list(value)
            cfg.windows = [_year_range(w) for w in items]
        elif key == "aggregations":
            cfg.aggregations = value if isinstance(value, list) else _list(value)
        elif key == "standard_quarter":
            cfg.standard_quarter = value.strip()
        elif key == "figure_years":
            cfg.figure_years = [_int(y, key) for y in (value if isinstance(value, list) else _list(value))]
        elif key == "sweep_lengths":
            cfg.sweep_lengths = _year_range(value)
        elif key == "format":
            cfg.format = value.strip()
        else:
            raise ConfigError(f"unknown configuration key {key!r}")

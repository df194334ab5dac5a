"""Quasi-Poisson log-linear model for monthly stratified deaths.

Linear predictor for month ``m`` and stratum ``g``::

    log E[y] = log(person-years) + intercept + stratum effect[g]
               + slope * t(m) + sum_k (a_k sin(2 pi k s(m)) + b_k cos(2 pi k s(m)))

``t`` is time in years from the middle of the baseline and ``s`` is the
month's position in the calendar year. Variance is ``dispersion * mean``.
The covariate set is a reconstruction: stratum intercepts, one shared
log-linear trend and annual Fourier seasonality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date

import numpy as np
from scipy import linalg

from .data import (
    DAYS_PER_YEAR,
    N_STRATA,
    STRATA,
    DeathsSeries,
    MonthlyExposure,
    MonthRange,
    month_midpoint,
    year_months,
)
from .errors import (
    DegenerateDoF,
    EmptyBaseline,
    InvalidSpec,
    NonConvergence,
    SingularDesign,
    StrataMismatch,
    ZeroExposure,
)

STRATIFICATIONS = ("age_sex", "none")
MIN_BASELINE_YEARS = 4
MAX_BASELINE_YEARS = 10
MAX_HARMONICS = 3

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class ModelSpec:
    baseline: tuple[int, int] = (2014, 2019)
    stratification: str = "age_sex"
    harmonics: int = 2
    trend: str = "shared-linear"

    def __post_init__(self):
        object.__setattr__(self, "baseline", tuple(int(y) for y in self.baseline))
        start, end = self.baseline
        years = end - start + 1
        if not MIN_BASELINE_YEARS <= years <= MAX_BASELINE_YEARS:
            raise InvalidSpec(
                f"baseline {start}-{end} spans {years} years; must be {MIN_BASELINE_YEARS} to {MAX_BASELINE_YEARS}"
            )
        if self.stratification not in STRATIFICATIONS:
            raise InvalidSpec(f"stratification must be one of {STRATIFICATIONS}, got {self.stratification!r}")
        if not (isinstance(self.harmonics, int) and 0 <= self.harmonics <= MAX_HARMONICS):
            raise InvalidSpec(f"harmonics must be an integer in 0..{MAX_HARMONICS}, got {self.harmonics!r}")
        if self.trend != "shared-linear":
            raise InvalidSpec(f"unsupported trend {self.trend!r}")

    @property
    def baseline_window(self) -> MonthRange:
        return year_months(*self.baseline)

    @property
    def time_origin(self) -> float:
        """Day ordinal of the baseline midpoint."""
        start, end = self.baseline
        return (date(start, 1, 1).toordinal() + date(end + 1, 1, 1).toordinal()) / 2.0

    @property
    def stratified(self) -> bool:
        return self.stratification == "age_sex"

    def column_labels(self) -> list[str]:
        labels = ["intercept"]
        if self.stratified:
            labels += [f"stratum[{k.label}]" for k in STRATA[1:]]
        labels.append("time_years")
        for k in range(1, self.harmonics + 1):
            labels += [f"sin{k}", f"cos{k}"]
        return labels

    def to_dict(self) -> dict:
        return {
            "baseline": list(self.baseline),
            "stratification": self.stratification,
            "harmonics": self.harmonics,
            "trend": self.trend,
        }

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        return cls(tuple(d["baseline"]), d["stratification"], int(d["harmonics"]), d.get("trend", "shared-linear"))


def design_matrix(spec: ModelSpec, months: np.ndarray, strata: np.ndarray) -> np.ndarray:
    """Covariate rows for (month, stratum) pairs; ``strata`` is -1 for pooled rows."""
    months = np.asarray(months, dtype=np.int64)
    strata = np.asarray(strata, dtype=np.int64)
    cols = [np.ones(len(months))]
    if spec.stratified:
        for j in range(1, N_STRATA):
            cols.append((strata == j).astype(np.float64))
    mids = np.array([month_midpoint(int(m)) for m in months])
    cols.append((mids - spec.time_origin) / DAYS_PER_YEAR)
    phase = 2.0 * np.pi * ((months % 12) + 0.5) / 12.0
    for k in range(1, spec.harmonics + 1):
        cols.append(np.sin(k * phase))
        cols.append(np.cos(k * phase))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class DesignBundle:
    spec: ModelSpec
    y: np.ndarray
    offset: np.ndarray
    X: np.ndarray
    columns: list
    months: np.ndarray
    strata: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def take(self, index) -> "DesignBundle":
        """Row subset or permutation."""
        index = np.asarray(index)
        return DesignBundle(
            self.spec,
            self.y[index],
            self.offset[index],
            self.X[index],
            list(self.columns),
            self.months[index],
            self.strata[index],
        )


def cell_layout(spec: ModelSpec, window: MonthRange):
    """Row index (months, strata) used for ``window``: month-major, strata in canonical order."""
    months = window.months
    if spec.stratified:
        return np.repeat(months, N_STRATA), np.tile(np.arange(N_STRATA), len(months))
    return months.copy(), np.full(len(months), -1, dtype=np.int64)


def cell_values(spec: ModelSpec, table: np.ndarray) -> np.ndarray:
    """Flatten a (months, strata) table to the layout of :func:`cell_layout`."""
    table = np.asarray(table)
    if spec.stratified:
        return table.reshape(-1)
    return table.sum(axis=1)


def log_exposure(person_years: np.ndarray) -> np.ndarray:
    if np.any(person_years <= 0):
        raise ZeroExposure("non-positive person-years in a modelled cell")
    return np.log(person_years)


def build_design(spec: ModelSpec, deaths: DeathsSeries, exposure: MonthlyExposure) -> DesignBundle:
    window = spec.baseline_window
    if deaths.counts.shape[1] != exposure.person_years.shape[1]:
        raise StrataMismatch("deaths and exposure have different strata")
    if not deaths.covers(window) or not exposure.covers(window):
        raise EmptyBaseline(
            f"baseline {window} not covered by deaths ({deaths.range}) and exposure ({exposure.range})"
        )
    months, strata = cell_layout(spec, window)
    y = cell_values(spec, deaths.window(window)).astype(np.float64)
    offset = log_exposure(cell_values(spec, exposure.window(window)))
    X = design_matrix(spec, months, strata)
    return DesignBundle(spec, y, offset, X, spec.column_labels(), months, strata)


# -- fitting --------------------------------------------------------------------------

def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def pearson_dispersion(y, mu, p: int, *, floored: bool = True) -> float:
    """Pearson estimate of the quasi-Poisson dispersion, floored at 1 by default."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n = len(y)
    if len(mu) != n:
        raise ValueError("y and mu differ in length")
    if n <= p:
        raise DegenerateDoF(f"{n} observations with {p} parameters leaves no residual degrees of freedom")
    if np.any(mu <= 0):
        raise ValueError("fitted means must be positive")
    raw = float(np.sum((y - mu) ** 2 / mu) / (n - p))
    return max(raw, 1.0) if floored else raw


def _weighted_qr(X, w, columns):
    A = X * np.sqrt(w)[:, None]
    Q, R, perm = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < A.shape[1]:
        bad = columns[perm[rank]]
        raise SingularDesign(f"design matrix is rank deficient (rank {rank} < {A.shape[1]}); column {bad!r} is collinear", column=bad)
    return Q, R, perm


def _unscaled_covariance(R, perm):
    p = R.shape[0]
    Rinv = linalg.solve_triangular(R, np.eye(p))
    inner = Rinv @ Rinv.T
    cov = np.empty_like(inner)
    cov[np.ix_(perm, perm)] = inner
    return (cov + cov.T) / 2.0


@dataclass(frozen=True, eq=False)
class ModelFit:
    spec: ModelSpec
    columns: list
    coefficients: np.ndarray
    covariance: np.ndarray
    dispersion: float
    dispersion_raw: float
    n: int
    converged: bool
    iterations: int
    deviance: float
    deviance_change: float
    deviance_trace: list = field(default_factory=list)
    fitted_total: float = float("nan")
    observed_total: float = float("nan")

    @property
    def p(self) -> int:
        return len(self.coefficients)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.columns.index(label)])

    def linear_predictor(self, X, offset) -> np.ndarray:
        return offset + X @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "coefficients": {c: float(b) for c, b in zip(self.columns, self.coefficients)},
            "standard_errors": {c: float(s) for c, s in zip(self.columns, self.standard_errors)},
            "covariance": [float(v) for v in self.covariance.reshape(-1)],
            "dispersion": self.dispersion,
            "dispersion_raw": self.dispersion_raw,
            "design": {
                "columns": list(self.columns),
                "reference_stratum": STRATA[0].label if self.spec.stratified else None,
                "time_origin": date.fromordinal(int(self.spec.time_origin)).isoformat()
                + ("T12:00" if self.spec.time_origin % 1 else "T00:00"),
                "time_unit": "years",
                "n_rows": self.n,
                "n_columns": self.p,
            },
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "deviance": self.deviance,
                "relative_deviance_change": self.deviance_change,
                "deviance_trace": list(self.deviance_trace),
            },
            "mass_balance": {"observed": self.observed_total, "fitted": self.fitted_total},
        }

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d) -> "ModelFit":
        spec = ModelSpec.from_dict(d["spec"])
        columns = list(d["design"]["columns"])
        p = len(columns)
        conv = d["convergence"]
        return cls(
            spec=spec,
            columns=columns,
            coefficients=np.array([d["coefficients"][c] for c in columns]),
            covariance=np.array(d["covariance"], dtype=np.float64).reshape(p, p),
            dispersion=float(d["dispersion"]),
            dispersion_raw=float(d["dispersion_raw"]),
            n=int(d["design"]["n_rows"]),
            converged=bool(conv["converged"]),
            iterations=int(conv["iterations"]),
            deviance=float(conv["deviance"]),
            deviance_change=float(conv["relative_deviance_change"]),
            deviance_trace=list(conv["deviance_trace"]),
            fitted_total=float(d["mass_balance"]["fitted"]),
            observed_total=float(d["mass_balance"]["observed"]),
        )


def fit_irls(bundle: DesignBundle, tolerance: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> ModelFit:
    """Maximum-likelihood Poisson fit with offset by iteratively reweighted least squares.

    Each step solves the weighted normal equations through a column-pivoted
    QR factorisation; a rank-deficient design raises :class:`SingularDesign`
    naming the first collinear column. A step that would increase the
    deviance is halved until it does not. Convergence is declared when
    ``|D_new - D_old| / (|D_new| + 0.1) < tolerance``.
    """
    y, offset, X = bundle.y, bundle.offset, bundle.X
    columns = bundle.columns
    if bundle.n == 0:
        raise EmptyBaseline("design has no rows")
    if np.any(y < 0):
        raise ValueError("responses must be non-negative")
    if not np.all(np.isfinite(offset)):
        raise ValueError("offsets must be finite")
    total = float(np.sum(y))
    if total <= 0:
        raise NonConvergence("no deaths in the fitting sample; the Poisson MLE does not exist")

    beta = np.zeros(bundle.p)
    if "intercept" in columns:
        beta[columns.index("intercept")] = math.log(total / float(np.sum(np.exp(offset))))
    eta = offset + X @ beta
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    trace = [dev]
    change = float("inf")
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        z = (eta - offset) + (y - mu) / mu
        Q, R, perm = _weighted_qr(X, mu, columns)
        rhs = Q.T @ (z * np.sqrt(mu))
        step = np.empty(bundle.p)
        step[perm] = linalg.solve_triangular(R, rhs)

        candidate = step
        for _ in range(30):
            eta_new = offset + X @ candidate
            mu_new = np.exp(eta_new)
            dev_new = poisson_deviance(y, mu_new)
            if np.isfinite(dev_new) and np.all(np.isfinite(mu_new)) and dev_new <= dev * (1 + 1e-12) + 1e-12:
                break
            candidate = (beta + candidate) / 2.0
        else:
            raise NonConvergence(
                "step halving failed to reduce the deviance",
                diagnostics={"iterations": iterations, "deviance_trace": trace},
            )

        change = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        beta, eta, mu, dev = candidate, eta_new, mu_new, dev_new
        trace.append(dev)
        if change < tolerance:
            converged = True
            break

    if not converged:
        raise NonConvergence(
            f"IRLS did not converge in {max_iter} iterations (relative deviance change {change:.3g})",
            diagnostics={"iterations": iterations, "relative_deviance_change": change, "deviance_trace": trace},
        )

    _, R, perm = _weighted_qr(X, mu, columns)
    unscaled = _unscaled_covariance(R, perm)
    if bundle.n > bundle.p:
        raw = pearson_dispersion(y, mu, bundle.p, floored=False)
        phi = max(raw, 1.0)
    else:  # saturated: no residual degrees of freedom
        raw, phi = float("nan"), 1.0
    return ModelFit(
        spec=bundle.spec,
        columns=list(columns),
        coefficients=beta,
        covariance=phi * unscaled,
        dispersion=phi,
        dispersion_raw=raw,
        n=bundle.n,
        converged=True,
        iterations=iterations,
        deviance=dev,
        deviance_change=change,
        deviance_trace=trace,
        fitted_total=float(np.sum(mu)),
        observed_total=total,
    )


def fit_model(spec: ModelSpec, deaths: DeathsSeries, exposure: MonthlyExposure, **kwargs) -> ModelFit:
    return fit_irls(build_design(spec, deaths, exposure), **kwargs)


def fitted_means(fit: ModelFit, bundle: DesignBundle) -> np.ndarray:
    return np.exp(fit.linear_predictor(bundle.X, bundle.offset))


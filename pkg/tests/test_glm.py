import json

import numpy as np
import pytest
from scipy import optimize

from excessmort.data import month_index, year_months
from excessmort.errors import DegenerateDoF, EmptyBaseline, InvalidSpec, NonConvergence, SingularDesign
from excessmort.glm import (
    DesignBundle,
    ModelFit,
    ModelSpec,
    build_design,
    fit_irls,
    fitted_means,
    pearson_dispersion,
    poisson_deviance,
)


def bundle(X, y, exposure, columns=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(y)
    return DesignBundle(
        ModelSpec(),
        np.asarray(y, dtype=float),
        np.log(np.asarray(exposure, dtype=float)),
        X,
        columns or ["intercept"] + [f"x{i}" for i in range(1, X.shape[1])],
        np.zeros(n, dtype=int),
        np.zeros(n, dtype=int),
    )


# -- spec and design -----------------------------------------------------------------------

def test_spec_validation():
    ModelSpec(baseline=(2016, 2019))
    ModelSpec(baseline=(2010, 2019), harmonics=3)
    for kwargs in ({"baseline": (2017, 2019)}, {"baseline": (2009, 2019)}, {"harmonics": 4}, {"stratification": "age"}):
        with pytest.raises(InvalidSpec):
            ModelSpec(**kwargs)


def test_design_dimensions(world):
    b = build_design(ModelSpec(harmonics=2), world.deaths, world.exposure)
    assert b.p == 1 + 19 + 1 + 4 == 25
    assert b.n == 72 * 20 == 1440
    assert b.columns[0] == "intercept" and b.columns[20] == "time_years"
    pooled = build_design(ModelSpec(stratification="none", harmonics=0), world.deaths, world.exposure)
    assert pooled.p == 2 and pooled.n == 72
    np.testing.assert_array_equal(pooled.y, world.deaths.window(year_months(2014, 2019)).sum(axis=1))


def test_time_is_centred_on_the_baseline(world):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    t = b.X[:, b.columns.index("time_years")]
    assert abs(t.mean()) < 2 / 365.25
    # 2014-01-16 12:00 against the midpoint of 2014..2019 (2191 days)
    assert t.min() == pytest.approx((15.5 - 2191 / 2) / 365.25, abs=1e-12)


def test_design_needs_the_baseline_covered(world):
    with pytest.raises(EmptyBaseline):
        build_design(ModelSpec(baseline=(2006, 2012)), world.deaths, world.exposure)


# -- closed forms ----------------------------------------------------------------------

def test_intercept_only_closed_form():
    fit = fit_irls(bundle(np.ones(3), [3, 5, 4], [1, 1, 1]))
    assert fit.coefficients[0] == pytest.approx(np.log(4.0), abs=1e-10)
    np.testing.assert_allclose(np.exp(fit.coefficients[0]) * np.ones(3), 4.0, atol=1e-10)


def test_saturated_two_group_model():
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    fit = fit_irls(bundle(X, [10, 30], [100, 200]))
    rates = np.exp([fit.coefficients[0], fit.coefficients.sum()])
    np.testing.assert_allclose(rates, [0.10, 0.15], rtol=0, atol=1e-10)
    assert fit.dispersion == 1.0 and np.isnan(fit.dispersion_raw)


def test_matches_direct_likelihood_maximisation():
    rng = np.random.default_rng(3)
    n = 200
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.uniform(-1, 1, size=n)])
    exposure = rng.uniform(50, 150, size=n)
    y = rng.poisson(exposure * np.exp(X @ [-3.0, 0.3, -0.5]))
    fit = fit_irls(bundle(X, y, exposure))

    def nll(beta):
        eta = np.log(exposure) + X @ beta
        return np.sum(np.exp(eta) - y * eta)

    def grad(beta):
        return X.T @ (np.exp(np.log(exposure) + X @ beta) - y)

    ref = optimize.minimize(nll, np.zeros(3), jac=grad, method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(fit.coefficients, ref.x, atol=1e-6)


def test_synthetic_recovery_of_known_coefficients(world):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    rng = np.random.default_rng(20240601)
    beta_true = np.zeros(b.p)
    beta_true[0] = np.log(6e-4)
    beta_true[1:20] = np.linspace(-0.5, 6.0, 19)
    beta_true[20] = -0.012
    beta_true[21:] = [0.05, -0.1, 0.02, 0.01]
    y = rng.poisson(np.exp(b.offset + b.X @ beta_true)).astype(float)
    fit = fit_irls(DesignBundle(b.spec, y, b.offset, b.X, b.columns, b.months, b.strata))
    z = np.abs(fit.coefficients - beta_true) / fit.standard_errors
    assert np.all(z < 3), z
    assert 0.85 <= fit.dispersion_raw <= 1.15


# -- dispersion ----------------------------------------------------------------------

def test_dispersion_floor():
    assert pearson_dispersion([1, 2, 3, 4], [1, 2, 3, 4], 1) == 1.0
    assert pearson_dispersion([1, 2, 3, 4], [1, 2, 3, 4], 1, floored=False) == 0.0


def test_dispersion_arithmetic():
    assert pearson_dispersion([2, 8], [5, 5], 1) == pytest.approx(3.6, abs=1e-12)


def test_dispersion_needs_residual_dof():
    with pytest.raises(DegenerateDoF):
        pearson_dispersion([1, 2], [1, 2], 2)


def test_dispersion_of_large_poisson_sample():
    rng = np.random.default_rng(9)
    mu = rng.uniform(2, 50, size=10_000)
    y = rng.poisson(mu)
    assert 0.9 <= pearson_dispersion(y, mu, 0, floored=False) <= 1.1


# -- invariants ---------------------------------------------------------------------------

def test_mass_balance(world, fit):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    mu = fitted_means(fit, b)
    assert np.sum(mu) == pytest.approx(np.sum(b.y), rel=1e-6)
    assert np.all(mu > 0) and np.all(np.isfinite(mu))


def test_offset_equivariance(world, fit):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    c = 3.7
    scaled = DesignBundle(b.spec, b.y, b.offset + np.log(c), b.X, b.columns, b.months, b.strata)
    refit = fit_irls(scaled)
    assert refit.coefficients[0] == pytest.approx(fit.coefficients[0] - np.log(c), abs=1e-8)
    np.testing.assert_allclose(refit.coefficients[1:], fit.coefficients[1:], rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fitted_means(refit, scaled), fitted_means(fit, b), rtol=1e-8)


def test_permutation_invariance(world, fit):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    perm = np.random.default_rng(1).permutation(b.n)
    refit = fit_irls(b.take(perm))
    np.testing.assert_allclose(refit.coefficients, fit.coefficients, rtol=1e-10, atol=1e-10)


def test_deviance_is_monotone(world):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    # a poor start value makes several steps necessary
    fit = fit_irls(b)
    trace = np.array(fit.deviance_trace)
    assert len(trace) >= 3
    assert np.all(np.diff(trace[1:]) <= 1e-12 * trace[1:-1])
    assert poisson_deviance(b.y, fitted_means(fit, b)) == pytest.approx(fit.deviance, rel=1e-12)


def test_covariance_is_symmetric_psd(fit):
    cov = fit.covariance
    np.testing.assert_allclose(cov, cov.T, rtol=1e-12)
    eig = np.linalg.eigvalsh(cov)
    assert eig.min() >= -1e-8 * eig.max()


def test_covariance_shrinks_like_one_over_n(world):
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    one = fit_irls(b)
    two = fit_irls(b.take(np.r_[np.arange(b.n), np.arange(b.n)]))
    unscaled_one = np.diag(one.covariance) / one.dispersion
    unscaled_two = np.diag(two.covariance) / two.dispersion
    np.testing.assert_allclose(unscaled_two, unscaled_one / 2, rtol=0.05)


def test_matches_statsmodels(world, fit):
    sm = pytest.importorskip("statsmodels.api")
    b = build_design(ModelSpec(), world.deaths, world.exposure)
    ref = sm.GLM(b.y, b.X, family=sm.families.Poisson(), offset=b.offset).fit(scale="X2", tol=1e-12)
    np.testing.assert_allclose(fit.coefficients, ref.params, rtol=1e-7, atol=1e-9)
    assert fit.dispersion_raw == pytest.approx(ref.scale, rel=1e-6)
    np.testing.assert_allclose(fit.covariance / fit.dispersion * fit.dispersion_raw, ref.cov_params(), rtol=1e-5)


# -- errors and serialisation ---------------------------------------------------------------------

def test_duplicated_column_is_singular():
    X = np.column_stack([np.ones(10), np.arange(10.0), np.arange(10.0)])
    with pytest.raises(SingularDesign) as info:
        fit_irls(bundle(X, np.arange(1, 11), np.ones(10), ["intercept", "trend", "trend_copy"]))
    assert info.value.column in ("trend", "trend_copy")
    assert info.value.column in str(info.value)


def test_non_convergence_reports_diagnostics():
    X = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
    with pytest.raises(NonConvergence) as info:
        fit_irls(bundle(X, [5, 6, 4, 0, 0, 0], np.ones(6)), max_iter=3)
    assert info.value.diagnostics["iterations"] == 3


def test_no_deaths_cannot_be_fitted():
    with pytest.raises(NonConvergence):
        fit_irls(bundle(np.ones(4), [0, 0, 0, 0], np.ones(4)))


def test_json_round_trip(fit):
    doc = json.loads(fit.to_json())
    assert list(doc["coefficients"]) == fit.columns
    assert len(doc["covariance"]) == fit.p**2
    assert doc["design"]["reference_stratum"] == "0-9:F"
    assert doc["convergence"]["converged"] is True
    back = ModelFit.from_dict(doc)
    np.testing.assert_array_equal(back.coefficients, fit.coefficients)
    np.testing.assert_array_equal(back.covariance, fit.covariance)
    assert back.spec == fit.spec


def test_fit_window_months(world):
    b = build_design(ModelSpec(baseline=(2016, 2019)), world.deaths, world.exposure)
    assert b.months[0] == month_index(2016, 1) and b.months[-1] == month_index(2019, 12)

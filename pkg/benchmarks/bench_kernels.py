"""Time the Monte Carlo projection kernel on each available backend.

Run with ``python3 benchmarks/bench_kernels.py [--draws N] [--repeat R]``.
The workload is the default projection: 48 window months x 20 strata,
25 coefficients, grouped by calendar year.
"""

import argparse
import time

import numpy as np

from excessmort import kernels
from excessmort.data import monthly_exposure, year_months
from excessmort.excess import covariance_factor
from excessmort.glm import ModelSpec, cell_layout, cell_values, design_matrix, fit_model, log_exposure
from excessmort.synthetic import Generator


def workload(draws):
    gen = Generator()
    pop = gen.population()
    span = year_months(2010, 2023)
    exposure = monthly_exposure(pop, span)
    fit = fit_model(ModelSpec(), gen.deaths(pop, span, np.random.default_rng(0)), exposure)
    window = year_months(2020, 2023)
    months, strata = cell_layout(fit.spec, window)
    X = design_matrix(fit.spec, months, strata)
    offset = log_exposure(cell_values(fit.spec, exposure.window(window)))
    rng = np.random.default_rng(1)
    beta = fit.coefficients + rng.standard_normal((draws, len(fit.coefficients))) @ covariance_factor(fit.covariance).T
    z = rng.standard_normal((draws, len(months)))
    groups = (months // 12 - 2020).astype(np.int64)
    return X, offset, beta, z, fit.dispersion, groups, 4


def time_backend(module, args, repeat):
    X, offset, beta, z, phi, groups, n_groups = args
    best = np.inf
    for _ in range(repeat):
        out = np.zeros((beta.shape[0], n_groups))
        start = time.perf_counter()
        module.simulate_grouped(X, offset, beta, z, phi, groups, out)
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--draws", type=int, default=10_000)
    parser.add_argument("--repeat", type=int, default=5)
    opts = parser.parse_args()
    args = workload(opts.draws)
    cells = args[0].shape[0]
    print(f"{opts.draws} draws x {cells} cells x {args[0].shape[1]} coefficients (best of {opts.repeat})")
    results = {}
    for name, module in sorted(kernels.BACKENDS.items()):
        seconds, out = time_backend(module, args, opts.repeat)
        results[name] = out
        rate = opts.draws * cells / seconds / 1e6
        print(f"  {name:<7} {seconds * 1e3:8.1f} ms  {rate:7.1f} M cells/s")
    if len(results) > 1:
        a, b = results.values()
        print(f"  max relative difference {np.max(np.abs(a - b) / np.abs(b)):.1e}")
    print(f"default backend: {kernels.BACKEND}")


if __name__ == "__main__":
    main()

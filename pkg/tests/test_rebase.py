import numpy as np
import pytest

from conftest import constant_population
from excessmort.data import AGE_BANDS, PopulationSeries, year_months
from types import SimpleNamespace

from excessmort.errors import InputError, NoOverlap, StrataMismatch
from excessmort.glm import ModelSpec
from excessmort.rebase import excess_sensitivity, rebase_diff, relative_diff_pct


def random_population(seed, first=2015 * 4, last=2019 * 4 + 3, vintage="v"):
    rng = np.random.default_rng(seed)
    quarters = np.arange(first, last + 1)
    return PopulationSeries(vintage, quarters, rng.integers(0, 50_000, size=(len(quarters), 20)).astype(float))


def test_identical_series():
    pop = random_population(1)
    diff = rebase_diff(pop, pop)
    assert np.all(diff.absolute == 0)
    assert all(r.abs_diff == 0 and r.rel_diff_pct == 0 for r in diff.rows)
    assert len(diff.rows) == len(pop.quarters) * (len(AGE_BANDS) + 1)


def test_one_percent_drop():
    old = constant_population(50.0)
    counts = old.counts.copy()
    counts[0, 0] = 49.0  # band 0-9 = 100 -> 99
    diff = rebase_diff(old, old.with_counts(counts))
    row = diff.rows[0]
    assert (row.quarter, row.age_band, row.old, row.new) == (old.quarters[0], "0-9", 100.0, 99.0)
    assert row.rel_diff_pct == pytest.approx(-1.0, abs=1e-12)


def test_relative_diff_rules():
    assert relative_diff_pct(0, 0) == 0.0
    assert relative_diff_pct(0, 5) is None
    assert relative_diff_pct(200, 150) == -25.0


def test_antisymmetry():
    a, b = random_population(2), random_population(3)
    np.testing.assert_array_equal(rebase_diff(a, b).absolute, -rebase_diff(b, a).absolute)


def test_band_totals_are_exact_sums():
    pop = random_population(4)
    diff = rebase_diff(pop, random_population(5))
    np.testing.assert_array_equal(diff.old_bands, pop.counts[:, 0::2] + pop.counts[:, 1::2])
    q = int(pop.quarters[3])
    assert diff.total(q).old == pop.row(q).sum()


def test_restricted_to_overlap():
    old = random_population(6, 2010 * 4, 2019 * 4)
    new = random_population(7, 2018 * 4 + 2, 2023 * 4)
    diff = rebase_diff(old, new)
    assert diff.quarters[0] == 2018 * 4 + 2 and diff.quarters[-1] == 2019 * 4


def test_no_overlap_and_strata_mismatch():
    with pytest.raises(NoOverlap):
        rebase_diff(random_population(1, 2010 * 4, 2011 * 4), random_population(2, 2012 * 4, 2013 * 4))
    narrow = SimpleNamespace(vintage="n", quarters=np.arange(2010 * 4, 2011 * 4), counts=np.ones((4, 10)))
    with pytest.raises(StrataMismatch):
        rebase_diff(random_population(1, 2010 * 4, 2011 * 4), narrow)


WINDOW = year_months(2020, 2023)


def test_identical_vintages_give_a_bitwise_zero_delta(world):
    out = excess_sensitivity(world.deaths, world.pop, world.pop, ModelSpec(), WINDOW, draws=500, seed=3, aggregation="year")
    assert all(d.excess == 0.0 and d.excess_pct == 0.0 for d in out.delta)
    assert [d.key for d in out.delta] == [2020, 2021, 2022, 2023]


def test_smaller_oldest_population_raises_excess(world):
    counts = world.pop.counts.copy()
    rows = np.array([q // 4 >= 2020 for q in world.pop.quarters])
    counts[np.ix_(rows, [18, 19])] *= 0.95
    new = world.pop.with_counts(counts)
    out = excess_sensitivity(world.deaths, world.pop, new, ModelSpec(), WINDOW, draws=500, seed=3)
    assert out.new.rows[0].excess > out.old.rows[0].excess
    assert out.delta[0].excess > 0


def test_errors_are_labelled_by_vintage(world):
    short = PopulationSeries("shortvintage", world.pop.quarters[:40], world.pop.counts[:40])
    with pytest.raises(InputError, match=r"\[shortvintage\]"):
        excess_sensitivity(world.deaths, world.pop, short, ModelSpec(), WINDOW, draws=200)


def test_concurrent_runs_match_serial(world):
    a = excess_sensitivity(world.deaths, world.pop, world.pop.scaled(1.01), ModelSpec(), WINDOW, draws=300, seed=1)
    b = excess_sensitivity(world.deaths, world.pop, world.pop.scaled(1.01), ModelSpec(), WINDOW, draws=300, seed=1, workers=2)
    assert a == b

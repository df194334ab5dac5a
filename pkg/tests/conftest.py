import numpy as np
import pytest

from excessmort.data import DeathsSeries, PopulationSeries, monthly_exposure, parse_quarter, year_months
from excessmort.glm import ModelSpec, fit_model
from excessmort.synthetic import Generator


class World:
    """A synthetic dataset with its generator, shared across tests."""

    def __init__(self, generator, seed, span=(2010, 2023)):
        self.gen = generator
        self.pop = generator.population()
        self.span = year_months(*span)
        self.exposure = monthly_exposure(self.pop, self.span)
        self.deaths = generator.deaths(self.pop, self.span, np.random.default_rng(seed))


@pytest.fixture(scope="session")
def world():
    return World(Generator(shock={2022: 1.03, 2023: 1.02}), seed=5)


@pytest.fixture(scope="session")
def fit(world):
    return fit_model(ModelSpec(), world.deaths, world.exposure)


def constant_population(value=1000.0, first="2010-Q1", last="2011-Q4"):
    q0, q1 = parse_quarter(first), parse_quarter(last)
    quarters = np.arange(q0, q1 + 1)
    return PopulationSeries("const", quarters, np.full((len(quarters), 20), value))


def deaths_table(months, counts):
    return DeathsSeries(np.asarray(months), np.asarray(counts, dtype=np.int64))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

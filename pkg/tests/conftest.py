import numpy as np
import pytest

from defaultbsde.filtering import HiddenRegimeSpec
from defaultbsde.market import ModelSpec, simulate_paths

BENCH = dict(mu=0.05, sigma=0.2, beta=-0.5, lam=0.1, gamma=0.5, T=1.0)


def bench_spec(lam=BENCH["lam"], beta=BENCH["beta"], mu=BENCH["mu"]):
    return ModelSpec(horizon=1.0, s0=[1.0], mu=[mu], sigma=[[BENCH["sigma"]]], beta=[[beta]], lam=[lam])


def two_regime_model():
    return HiddenRegimeSpec(q_matrix=[[-1.0, 1.0], [1.0, -1.0]], mu_by_regime=[[0.3], [-0.2]],
                            lambda_by_regime=[[0.05], [0.5]], initial_dist=[0.5, 0.5])


def two_regime_spec():
    return ModelSpec(horizon=1.0, s0=[1.0], mu=None, sigma=[[0.2]], beta=[[-0.3]], lam=None,
                     regime_model=two_regime_model())


@pytest.fixture(scope="session")
def spec():
    return bench_spec()


@pytest.fixture(scope="session")
def small_paths(spec):
    return simulate_paths(spec, 20, 4000, 11)


@pytest.fixture(scope="session")
def regime_spec():
    return two_regime_spec()


@pytest.fixture(scope="session")
def regime_paths(regime_spec):
    from defaultbsde.filtering import filter_paths

    paths = simulate_paths(regime_spec, 25, 20000, 5)
    return paths.with_filter(filter_paths(regime_spec, paths))


def within(x, target, se, n_se=3.0):
    return abs(x - target) <= n_se * se


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import csv
import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bench_spec, two_regime_model, within
from defaultbsde.errors import ModelError
from defaultbsde.filtering import HiddenRegimeSpec, filter_paths, observed_innovation
from defaultbsde.market import ModelSpec, simulate_paths
from defaultbsde.oracles import bootstrap_particle_filter


def regime_spec(q, mu, lam, init, beta=-0.3):
    return ModelSpec(horizon=1.0, s0=[1.0], mu=None, sigma=[[0.2]], beta=[[beta]], lam=None,
                     regime_model=HiddenRegimeSpec(q, mu, lam, init))


@pytest.mark.parametrize("kwargs, msg", [
    (dict(q_matrix=[[-1, 1]], mu_by_regime=[[0]], lambda_by_regime=[[0]], initial_dist=[1]), "square"),
    (dict(q_matrix=[[1, -1], [1, -1]], mu_by_regime=[[0], [0]], lambda_by_regime=[[0], [0]],
          initial_dist=[0.5, 0.5]), "nonnegative"),
    (dict(q_matrix=[[-1, 0.5], [1, -1]], mu_by_regime=[[0], [0]], lambda_by_regime=[[0], [0]],
          initial_dist=[0.5, 0.5]), "sum to zero"),
    (dict(q_matrix=[[0.0]], mu_by_regime=[[0]], lambda_by_regime=[[-0.1]], initial_dist=[1]), "intensities"),
    (dict(q_matrix=[[0.0]], mu_by_regime=[[0]], lambda_by_regime=[[0.1]], initial_dist=[0.9]), "probability"),
])
def test_regime_spec_validation(kwargs, msg):
    with pytest.raises(ModelError, match=msg):
        HiddenRegimeSpec(**kwargs)


def test_observed_innovation_is_dW_plus_rho_dt():
    spec = bench_spec()
    paths = simulate_paths(spec, 20, 500, 3)
    rho = 0.05 / 0.2
    assert np.allclose(observed_innovation(paths), paths.dW + rho * paths.dt, atol=1e-12)


@pytest.mark.parametrize("as_regime", [False, True])
def test_single_regime_reduces_to_full_information(as_regime):
    if as_regime:
        spec = regime_spec([[0.0]], [[0.05]], [[0.1]], [1.0], beta=-0.5)
    else:
        spec = bench_spec()
    paths = simulate_paths(spec, 20, 2000, 4)
    f = filter_paths(spec, paths)
    assert np.all(f.posterior == 1.0)
    assert np.allclose(f.mu_tilde, paths.mu, atol=1e-14)
    assert np.allclose(f.lambda_tilde, paths.lam, atol=1e-14)
    assert np.allclose(f.dW_bar, paths.dW, atol=1e-12)
    assert np.allclose(f.M_bar, paths.M, atol=1e-12)
    assert np.allclose(f.xi, f.L, rtol=1e-10)


def test_uninformative_observations_keep_the_prior():
    spec = regime_spec([[0.0, 0.0], [0.0, 0.0]], [[0.1], [0.1]], [[0.2], [0.2]], [0.3, 0.7])
    paths = simulate_paths(spec, 15, 1000, 8)
    f = filter_paths(spec, paths)
    assert np.allclose(f.posterior, [0.3, 0.7], atol=1e-13)


def test_zero_risk_premium_gives_unit_densities():
    spec = regime_spec([[-1.0, 1.0], [2.0, -2.0]], [[0.0], [0.0]], [[0.1], [0.6]], [0.5, 0.5])
    paths = simulate_paths(spec, 15, 1000, 9)
    f = filter_paths(spec, paths)
    assert np.array_equal(f.L, np.ones_like(f.L))
    assert np.array_equal(f.Lambda_tilde, np.ones_like(f.Lambda_tilde))


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.0, 5.0), b=st.floats(0.0, 5.0), mu0=st.floats(-1, 1), mu1=st.floats(-1, 1),
       l0=st.floats(0.0, 3.0), l1=st.floats(0.0, 3.0), p0=st.floats(0.0, 1.0), seed=st.integers(0, 100))
def test_posterior_stays_on_the_simplex(a, b, mu0, mu1, l0, l1, p0, seed):
    spec = regime_spec([[-a, a], [b, -b]], [[mu0], [mu1]], [[l0], [l1]], [p0, 1 - p0])
    paths = simulate_paths(spec, 10, 200, seed)
    f = filter_paths(spec, paths)
    assert np.all(f.posterior >= 0)
    assert np.allclose(f.posterior.sum(axis=-1), 1.0, atol=1e-12)
    lo, hi = min(mu0, mu1), max(mu0, mu1)
    assert np.all((f.mu_tilde >= lo - 1e-12) & (f.mu_tilde <= hi + 1e-12))


def test_filter_never_reads_the_hidden_regime(regime_spec, regime_paths):
    scrambled = dataclasses.replace(regime_paths, regime=np.zeros_like(regime_paths.regime), filter=None)
    f = filter_paths(regime_spec, scrambled)
    assert np.array_equal(f.posterior, regime_paths.filter.posterior)


def test_innovations_are_centred(regime_paths):
    f = regime_paths.filter
    for arr in (f.W_bar[:, -1, 0], f.M_bar[:, -1, 0]):
        se = arr.std() / math.sqrt(arr.size)
        # left-point compensation carries an O(dt) bias in M-bar, so allow 4 SE here
        assert abs(arr.mean()) <= 4 * se


def test_innovation_quadratic_variation(regime_paths):
    f = regime_paths.filter
    qv = np.sum(f.dW_bar[..., 0] ** 2, axis=1)
    # sum of squared increments = T + sum (rho - rho_tilde)^2 dt^2 + noise; the second term is O(dt)
    rho = regime_paths.mu[:, :-1, 0] / 0.2
    drift_sq = np.sum((rho - f.rho_tilde[:, :-1, 0]) ** 2, axis=1) * regime_paths.dt ** 2
    assert abs(qv.mean() - drift_sq.mean() - 1.0) < 0.01


def test_filtered_intensity_matches_true_on_average(regime_paths):
    f = regime_paths.filter
    for i in (0, 10, 24):
        diff = f.lambda_tilde[:, i, 0] - regime_paths.lam[:, i, 0]
        assert within(diff.mean(), 0.0, diff.std() / math.sqrt(diff.size))
        dm = f.mu_tilde[:, i, 0] - regime_paths.mu[:, i, 0]
        assert within(dm.mean(), 0.0, dm.std() / math.sqrt(dm.size))


def test_filter_tracks_particle_filter(regime_spec, regime_paths):
    rm = two_regime_model()
    sub = slice(0, 6)
    logret = np.diff(np.log(regime_paths.S[sub, :, 0]), axis=1)
    pf = bootstrap_particle_filter(logret, regime_paths.dN[sub, :, 0], 0.2, -0.3, rm.mu_by_regime,
                                   rm.lambda_by_regime, rm.q_matrix, rm.initial_dist, regime_paths.dt,
                                   n_particles=20000, seed=1)
    rmse = np.sqrt(np.mean((regime_paths.filter.mu_tilde[sub, :, 0] - pf) ** 2))
    assert rmse < 0.01


def test_impossible_observation_is_floored_with_warning(caplog):
    truth = regime_spec([[-1.0, 1.0], [1.0, -1.0]], [[0.1], [0.0]], [[2.0], [2.0]], [0.5, 0.5])
    paths = simulate_paths(truth, 10, 300, 2)
    assert paths.N[:, -1, 0].any()
    blind = regime_spec([[-1.0, 1.0], [1.0, -1.0]], [[0.1], [0.0]], [[0.0], [0.0]], [0.5, 0.5])
    with caplog.at_level(logging.WARNING, logger="defaultbsde.filtering"):
        f = filter_paths(blind, paths)
    assert f.floored_steps
    assert "zero likelihood" in caplog.text
    assert np.all(np.isfinite(f.posterior))
    assert np.allclose(f.posterior.sum(axis=-1), 1.0)


def test_trace_csv(tmp_path, regime_paths):
    target = tmp_path / "trace.csv"
    regime_paths.filter.write_trace_csv(target, max_paths=3)
    rows = list(csv.reader(open(target)))
    assert rows[0] == ["path_id", "step", "posterior_1", "posterior_2", "mu_tilde_1", "lambda_tilde_1"]
    assert len(rows) == 1 + 3 * (regime_paths.m_steps + 1)
    assert float(rows[1][2]) == 0.5

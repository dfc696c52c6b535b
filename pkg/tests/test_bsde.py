import csv
import math

import numpy as np
import pytest

from conftest import BENCH, bench_spec, within
from defaultbsde.bsde import (Basis, GeneratorSpec, design_matrix, fit_group, information_view,
                              least_squares_projection, power_generator, probe_lipschitz, solve_bsde,
                              solve_linear_bsde_for_strategy, solve_power_bsde)
from defaultbsde.drivers import StrategyBound, power_value_bound
from defaultbsde.errors import DivergenceError, RegressionError
from defaultbsde.market import simulate_paths, wealth_path
from defaultbsde.oracles import power_constant_oracle

B = BENCH


def zero_driver(c, y, z, u):
    return np.zeros_like(y), None


def ones(paths):
    return np.ones(paths.n_paths)


def test_constant_terminal_zero_driver(small_paths):
    sol = solve_bsde(GeneratorSpec(zero_driver, ones, 0.0), small_paths)
    assert np.max(np.abs(sol.Y - 1.0)) < 1e-12
    assert np.max(np.abs(sol.Z)) < 1e-13 and np.max(np.abs(sol.U)) < 1e-13
    assert abs(sol.Y0 - 1.0) < 1e-12 and sol.argopt is None


def test_terminal_exactness(small_paths):
    xi = lambda p: np.log(p.S[:, -1, 0]) + p.N[:, -1, 0]
    sol = solve_bsde(GeneratorSpec(zero_driver, xi, 0.0), small_paths)
    assert np.array_equal(sol.Y[:, -1], xi(small_paths))


def test_martingale_terminal_recovers_mean(small_paths):
    # Y_t = E[S_T | F_t] for a zero driver; E[S_T] = e^{mu T} (1 + beta P(default by T))
    sol = solve_bsde(GeneratorSpec(zero_driver, lambda p: p.S[:, -1, 0], 0.0), small_paths)
    se = small_paths.S[:, -1, 0].std() / math.sqrt(small_paths.n_paths)
    dt = 1.0 / small_paths.m_steps
    p_def = 1 - math.exp(-B["lam"] * dt * small_paths.m_steps)
    assert within(sol.Y0, math.exp(B["mu"]) * (1 + B["beta"] * p_def), se)


def test_linear_zero_strategy_is_one(spec, small_paths):
    sol = solve_linear_bsde_for_strategy(0.0, spec, small_paths, B["gamma"])
    assert np.allclose(sol.Y, 1.0, atol=1e-12)


@pytest.mark.parametrize("pi", [0.5, -0.8])
def test_linear_bsde_vs_closed_form(spec, pi):
    paths = simulate_paths(spec, 25, 20000, 21)
    sol = solve_linear_bsde_for_strategy(pi, spec, paths, B["gamma"])
    oracle = power_constant_oracle(pi, B["mu"], B["sigma"], B["beta"], B["lam"], B["gamma"], B["T"])
    assert abs(sol.Y0 / oracle - 1) < 0.01


def test_linear_bsde_vs_forward_mc_on_fresh_paths(spec):
    # non-constant strategy: fraction depends on the default state
    def strategy(paths):
        return np.where(paths.N[:, :-1] == 1, 1.2, 0.4)

    paths = simulate_paths(spec, 25, 20000, 1)
    sol = solve_linear_bsde_for_strategy(strategy(paths), spec, paths, B["gamma"])
    fresh = simulate_paths(spec, 25, 100000, 2)
    v = wealth_path(fresh, strategy(fresh)).X[:, -1] ** B["gamma"]
    se = math.hypot(v.std() / math.sqrt(v.size), sol.Y0_se)
    assert within(sol.Y0, v.mean(), se)


def test_bound_enforced_and_positive(spec):
    paths = simulate_paths(spec, 20, 5000, 3)
    sol = solve_power_bsde(spec, paths, StrategyBound(2.0), B["gamma"])
    C = power_value_bound(2.0, B["gamma"], *[spec.sup_norms()[i] for i in (0, 1, 2)], 1.0)
    assert np.all(sol.Y > 0) and np.all(sol.Y <= C)
    assert sol.argopt.shape == (paths.n_paths, paths.m_steps, 1)
    assert np.all(np.abs(sol.argopt) <= 2.0 + 1e-12)
    assert np.all(1 + sol.argopt[..., 0] * B["beta"] >= 0)


def test_design_matrix_columns():
    x = np.random.default_rng(0).normal(size=(100, 2))
    assert design_matrix(x, 2).shape == (100, 6)
    assert design_matrix(x, 1).shape == (100, 3)
    assert design_matrix(x, 0).shape == (100, 1)
    const = np.column_stack([x[:, 0], np.full(100, 3.0)])
    assert design_matrix(const, 2).shape == (100, 3)


def test_normal_equation_residual():
    g = np.random.default_rng(1)
    x = g.normal(size=(5000, 2))
    A = design_matrix(x, 2)
    b = np.sin(x[:, 0]) + x[:, 1] ** 3 + g.normal(size=5000)
    coef, G, rhs, shift = fit_group(A, b, 1e-8)
    resid = (G + np.diag(shift)) @ coef - rhs
    assert shift[0] == 0.0 and np.all(shift[1:] > 0)
    assert np.max(np.abs(resid)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))
    # the ridge only perturbs the unregularised solution at the ridge scale
    plain = np.linalg.solve(G, rhs)
    assert np.max(np.abs(plain - coef)) < 1e-6


def test_projection_per_group():
    g = np.random.default_rng(2)
    x = g.normal(size=(4000, 1))
    groups = (g.random(4000) < 0.3).astype(int)
    y = np.where(groups == 1, 5.0, -1.0) + 2 * x[:, 0]
    proj = least_squares_projection(x, groups, y[:, None], Basis())
    assert np.allclose(proj.fitted[:, 0], y, atol=1e-6)
    assert proj.r2 > 0.999999


def test_small_groups_lower_the_degree():
    g = np.random.default_rng(3)
    x = g.normal(size=(1000, 2))
    groups = np.zeros(1000, dtype=int)
    groups[:25] = 1
    proj = least_squares_projection(x, groups, g.normal(size=(1000, 1)), Basis())
    assert proj.degrees == {0: 2, 1: 0}


def test_rank_deficiency_is_reported():
    x = np.random.default_rng(4).normal(size=(1000, 1))
    x = np.column_stack([x[:, 0], x[:, 0] * (1 + 1e-9)])
    with pytest.raises(RegressionError) as exc:
        least_squares_projection(x, np.zeros(1000, dtype=int), x[:, :1], Basis(), step=7)
    assert exc.value.step == 7 and exc.value.condition > 1e13


def test_divergence_is_reported(small_paths):
    def explode(c, y, z, u):
        return 1e4 * (1 + np.abs(y)), None

    gen = GeneratorSpec(explode, ones, 1e4, upper_bound=None)
    gen_bounded = GeneratorSpec(explode, ones, 1e4, upper_bound=2.0, lower_bound=0.0)
    with pytest.raises(DivergenceError) as exc:
        solve_bsde(gen_bounded, small_paths)
    assert exc.value.step == small_paths.m_steps - 1
    with pytest.raises(DivergenceError):
        solve_bsde(GeneratorSpec(lambda c, y, z, u: (np.full_like(y, np.inf), None), ones, 0.0), small_paths)
    assert np.isfinite(solve_bsde(gen, small_paths).Y0)


def test_declared_lipschitz_bound_is_consistent(spec, small_paths):
    gen = power_generator(spec, StrategyBound(2.0), B["gamma"])
    view = information_view(small_paths)
    assert probe_lipschitz(gen, view) <= 1.05 * gen.lipschitz_bound


def test_grid_refinement_monotone(spec):
    # power value with k = 2 against a fine reference from the same solver
    vals = {}
    for m in (25, 50, 100):
        paths = simulate_paths(spec, m, 40000, 5)
        vals[m] = solve_power_bsde(spec, paths, StrategyBound(2.0), B["gamma"]).Y0
    ref = 1.0014705856  # frozen fine-grid value of the deterministic pre/post-default ODE
    errs = [abs(vals[m] - ref) for m in (25, 50, 100)]
    assert errs[0] > errs[1] > errs[2] or errs[2] < 5e-5


def test_full_information_groups_include_regime(regime_paths):
    full = information_view(regime_paths, "full")
    assert set(np.unique(full.groups)) <= {0, 1, 2, 3}
    part = information_view(regime_paths, "partial")
    assert np.array_equal(part.groups, regime_paths.N[..., 0])
    assert part.features.shape[-1] == 2
    with pytest.raises(ValueError):
        information_view(simulate_paths(bench_spec(), 5, 10, 0), "partial")
    with pytest.raises(ValueError):
        information_view(regime_paths, "oracle")


def test_solution_csv(tmp_path, spec, small_paths):
    sol = solve_power_bsde(spec, small_paths, StrategyBound(1.0), B["gamma"])
    target = tmp_path / "sol.csv"
    sol.write_csv(target)
    rows = list(csv.reader(open(target)))
    assert rows[0] == ["step", "t", "Y_mean", "Y_sd", "Z_mean_1", "U_mean_1", "argopt_mean_1", "R2"]
    assert len(rows) == small_paths.m_steps + 2
    assert float(rows[-1][2]) == 1.0

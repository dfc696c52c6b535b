import csv
import json
import math

import numpy as np
import pytest

from conftest import BENCH, bench_spec
from defaultbsde.drivers import StrategyBound
from defaultbsde.errors import ModelError
from defaultbsde.filtering import filter_paths
from defaultbsde.market import simulate_paths
from defaultbsde.oracles import exp_constant_oracle, golden_section
from defaultbsde.pricing import (CLAIMS, ClaimSpec, constant_claim, defaultable_bond, exp_value, hodges_price,
                                 information_price, make_claim, put, zero_claim)

GAMMA = 1.0


@pytest.fixture(scope="module")
def price_paths(spec):
    return simulate_paths(spec, 20, 20000, 17)


def test_claim_catalogue(small_paths):
    assert set(CLAIMS) == {"zero", "constant", "defaultable_bond", "put"}
    assert np.array_equal(zero_claim().evaluate(small_paths), np.zeros(small_paths.n_paths))
    assert np.all(make_claim("constant", value=0.5).evaluate(small_paths) == 0.5)
    bond = defaultable_bond().evaluate(small_paths)
    assert np.array_equal(bond, (small_paths.N[:, -1, 0] == 0).astype(float))
    p = put(1.0).evaluate(small_paths)
    assert np.all(p >= 0) and np.allclose(p, np.maximum(1 - small_paths.S[:, -1, 0], 0))
    with pytest.raises(ModelError, match="unknown claim"):
        make_claim("swaption")
    with pytest.raises(ModelError, match="nonnegative"):
        defaultable_bond(-1.0)


def test_claim_lower_bound_is_enforced(small_paths):
    lying = ClaimSpec("lying", lambda p: np.full(p.n_paths, -1.0), 0.0)
    with pytest.raises(ModelError, match="lower bound"):
        lying.evaluate(small_paths)
    nan = ClaimSpec("nan", lambda p: np.full(p.n_paths, np.nan), 0.0)
    with pytest.raises(ModelError, match="non-finite"):
        nan.evaluate(small_paths)


def test_no_trading_no_claim_is_one(spec, small_paths):
    sol = exp_value(None, "full", StrategyBound(0.0, admissibility="exponential"), spec, small_paths, GAMMA)
    assert abs(sol.Y0 - 1.0) < 1e-12
    assert np.max(np.abs(sol.Y - 1.0)) < 1e-12


def test_value_bounded_and_below_constant_strategy_oracle(spec, price_paths):
    sol = exp_value(None, "full", StrategyBound(2.0, admissibility="exponential"), spec, price_paths, GAMMA)
    assert np.all((sol.Y > 0) & (sol.Y <= 1.0))
    f = lambda phi: exp_constant_oracle(phi, BENCH["mu"], BENCH["sigma"], BENCH["beta"], BENCH["lam"], GAMMA, 1.0)
    _, best = golden_section(f, -2.0, 2.0, maximize=False)
    assert sol.Y0 <= best * 1.02
    assert abs(sol.Y0 / best - 1) < 0.05


def test_value_nonincreasing_in_k(spec, price_paths):
    vals = [exp_value(None, "full", StrategyBound(k, admissibility="exponential"), spec, price_paths, GAMMA)
            for k in (0.0, 0.25, 0.5, 1.0)]
    for a, b in zip(vals, vals[1:]):
        assert b.Y0 <= a.Y0 + 2 * math.hypot(a.Y0_se, b.Y0_se)


def test_zero_claim_has_zero_price(spec, price_paths):
    hp = hodges_price(zero_claim(), spec, price_paths, GAMMA, [0.5, 1.0])
    assert hp.prices == (0.0, 0.0)


@pytest.mark.parametrize("c", [-0.5, 0.5, 1.0])
def test_cash_invariance(spec, price_paths, c):
    hp = hodges_price(constant_claim(c), spec, price_paths, GAMMA, [1.0])
    assert abs(hp.prices[0] - c) < 1e-6


def test_bond_price_between_zero_and_notional(spec, price_paths):
    hp = hodges_price(defaultable_bond(), spec, price_paths, GAMMA, [1.0])
    assert 0 < hp.prices[0] < 1
    safe = bench_spec(lam=0.0)
    hp0 = hodges_price(defaultable_bond(), safe, simulate_paths(safe, 20, 5000, 3), GAMMA, [1.0])
    assert abs(hp0.prices[0] - 1.0) < 1e-2


def test_put_price_nonnegative(spec, price_paths):
    hp = hodges_price(put(1.0), spec, price_paths, GAMMA, [1.0])
    assert hp.prices[0] >= 0
    assert hp.price_se[0] > 0


def test_information_price_report(tmp_path):
    spec = bench_spec()
    paths = simulate_paths(spec, 15, 4000, 6)
    with pytest.raises(ValueError, match="FilterOutput"):
        information_price(defaultable_bond(), spec, paths, GAMMA, [1.0])
    paths = paths.with_filter(filter_paths(spec, paths))
    rep = information_price(defaultable_bond(), spec, paths, GAMMA, [0.5, 1.0, 2.0], metadata={"seed": 6})
    assert rep.d_k == tuple(a - b for a, b in zip(rep.p_bar_k, rep.p_k))
    # one regime: the filter is exact, so both information levels coincide
    assert max(abs(d) for d in rep.d_k) < 1e-9
    assert set(rep.limits()) == {"p_bar", "p", "d"}

    rep.write_json(tmp_path / "r.json")
    doc = json.load(open(tmp_path / "r.json"))
    assert doc["claim"] == "defaultable_bond" and doc["k"] == [0.5, 1.0, 2.0]
    assert doc["metadata"] == {"seed": 6}
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["k", "p_bar_k", "p_k", "d_k", "p_bar_se", "p_se", "d_se"]
    assert len(rows) == 4
    assert float(rows[1][3]) == rep.d_k[0]

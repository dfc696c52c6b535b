"""Utility maximisation and indifference pricing with defaultable assets,
solved by regression Monte Carlo for BSDEs with jumps."""

from .bsde import Basis, GeneratorSpec, information_view, solve_bsde, solve_linear_bsde_for_strategy, solve_power_bsde
from .drivers import StrategyBound, UtilitySpec, exp_inf, k_limit, power_sup
from .filtering import FilterOutput, HiddenRegimeSpec, filter_paths, measure_change
from .market import ModelSpec, PathBundle, simulate_paths, wealth_path
from .pricing import ClaimSpec, PriceReport, exp_value, hodges_price, information_price, make_claim
from .strategies import log_optimal_strategy, log_value

__all__ = [
    "Basis", "GeneratorSpec", "information_view", "solve_bsde", "solve_linear_bsde_for_strategy",
    "solve_power_bsde", "StrategyBound", "UtilitySpec", "exp_inf", "k_limit", "power_sup",
    "FilterOutput", "HiddenRegimeSpec", "filter_paths", "measure_change", "ModelSpec", "PathBundle",
    "simulate_paths", "wealth_path", "ClaimSpec", "PriceReport", "exp_value", "hodges_price",
    "information_price", "make_claim", "log_optimal_strategy", "log_value",
]

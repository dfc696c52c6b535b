"""Exponential-utility indifference prices and the value of insider information.

For a claim ``zeta`` held by the buyer,

    J^zeta(0) = inf_phi E[exp(-gamma (X_T^phi + zeta))]     (X_0 = 0)

is the value of the k-bounded exponential BSDE with terminal ``exp(-gamma zeta)``.
The buying price is ``(1/gamma) ln(J^0(0) / J^zeta(0))``.  Computing it once
with the filtered coefficients and innovations, and once with the true ones,
gives the partial- and full-information prices; their difference is the
information price.  All runs share the same simulated paths.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import drivers
from .bsde import Basis, BsdeSolution, GeneratorSpec, InformationView, information_view, solve_bsde
from .drivers import StrategyBound, k_limit
from .errors import DivergenceError, ModelError


@dataclass(frozen=True)
class ClaimSpec:
    """A terminal payoff ``payoff(paths) -> (P,)`` bounded below by ``lower_bound``."""

    name: str
    payoff: Callable
    lower_bound: float
    params: dict = field(default_factory=dict)

    def evaluate(self, paths):
        v = np.asarray(self.payoff(paths), dtype=float).reshape(paths.n_paths)
        if not np.all(np.isfinite(v)):
            raise ModelError(f"claim {self.name!r} produced non-finite payoffs")
        if np.any(v < self.lower_bound - 1e-12):
            raise ModelError(f"claim {self.name!r} falls below its declared lower bound {self.lower_bound}")
        return v


def zero_claim():
    return ClaimSpec("zero", lambda paths: np.zeros(paths.n_paths), 0.0)


def constant_claim(value):
    value = float(value)
    return ClaimSpec("constant", lambda paths: np.full(paths.n_paths, value), value, {"value": value})


def defaultable_bond(notional=1.0, default=0):
    """Pays ``notional`` at T if default ``default`` has not occurred."""
    notional = float(notional)
    if notional < 0:
        raise ModelError("bond notional must be nonnegative")

    def payoff(paths):
        return notional * (paths.N[:, -1, default] == 0)

    return ClaimSpec("defaultable_bond", payoff, 0.0, {"notional": notional, "default": int(default)})


def put(strike, asset=0):
    strike = float(strike)

    def payoff(paths):
        return np.maximum(strike - paths.S[:, -1, asset], 0.0)

    return ClaimSpec("put", payoff, 0.0, {"strike": strike, "asset": int(asset)})


CLAIMS = {"zero": zero_claim, "constant": constant_claim, "defaultable_bond": defaultable_bond, "put": put}


def make_claim(claim_id, **params) -> ClaimSpec:
    try:
        factory = CLAIMS[claim_id]
    except KeyError:
        raise ModelError(f"unknown claim {claim_id!r}; choose from {sorted(CLAIMS)}") from None
    return factory(**params)


# --------------------------------------------------------------------------
# value functions
# --------------------------------------------------------------------------

def exp_generator(spec, claim: ClaimSpec | None, bound: StrategyBound, gamma) -> GeneratorSpec:
    claim = claim or zero_claim()
    mu_s, sig_s, beta_s, lam_s = spec.sup_norms()
    ceiling = math.exp(-gamma * claim.lower_bound)
    if not math.isfinite(ceiling):
        raise ModelError("exp(-gamma * lower_bound) overflows; the claim is too negative for this gamma")

    def terminal(paths):
        return np.exp(-gamma * claim.evaluate(paths))

    return GeneratorSpec(
        driver=drivers.exp_driver(bound, gamma),
        terminal=terminal,
        lipschitz_bound=drivers.exp_lipschitz_bound(bound.k, gamma, mu_s, sig_s, beta_s, lam_s, spec.n_defaults),
        upper_bound=ceiling,
        lower_bound=0.0,
        name=f"exponential {claim.name}, k={bound.k}, gamma={gamma}",
    )


def exp_value(claim, info, bound: StrategyBound, spec, paths, gamma, basis: Basis = Basis()) -> BsdeSolution:
    """Solve the k-bounded exponential BSDE; ``.Y0`` is J(0)."""
    if not gamma > 0:
        raise ValueError("exponential utility needs gamma > 0")
    view = paths if isinstance(paths, InformationView) else information_view(paths, info)
    sol = solve_bsde(exp_generator(spec, claim, bound, gamma), view, basis)
    if not sol.Y0 > 0:
        raise DivergenceError(f"non-positive exponential value {sol.Y0}", step=0)
    return sol


# --------------------------------------------------------------------------
# prices
# --------------------------------------------------------------------------

def _influence(sol: BsdeSolution):
    return sol.y0_samples / sol.Y0


def _se(x):
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass(frozen=True)
class HodgesPrices:
    """Per-k buying prices under one information level."""

    info: str
    gamma: float
    ks: tuple
    J0: tuple
    J_claim: tuple
    J0_se: tuple
    J_claim_se: tuple
    prices: tuple
    price_se: tuple
    influence: tuple = field(repr=False, default=())

    def limit(self):
        if len(self.ks) < 3:
            return None
        return k_limit(list(zip(self.ks, self.prices, self.price_se)), direction="none")


def hodges_price(claim: ClaimSpec, spec, paths, gamma, ks, info="full", basis: Basis = Basis()) -> HodgesPrices:
    """Buying price ``(1/gamma) ln(J^0 / J^zeta)`` for every k, on common paths."""
    view = paths if isinstance(paths, InformationView) else information_view(paths, info)
    J0, Jc, s0, sc, prices, pse, infl = [], [], [], [], [], [], []
    for k in ks:
        bound = StrategyBound(float(k), admissibility="exponential")
        a = exp_value(None, view.info, bound, spec, view, gamma, basis)
        b = a if claim is None or claim.name == "zero" else exp_value(claim, view.info, bound, spec, view, gamma, basis)
        J0.append(a.Y0)
        Jc.append(b.Y0)
        s0.append(a.Y0_se)
        sc.append(b.Y0_se)
        prices.append(math.log(a.Y0 / b.Y0) / gamma)
        f = (_influence(a) - _influence(b)) / gamma
        infl.append(f)
        pse.append(_se(f))
    return HodgesPrices(info=view.info, gamma=float(gamma), ks=tuple(float(k) for k in ks), J0=tuple(J0),
                        J_claim=tuple(Jc), J0_se=tuple(s0), J_claim_se=tuple(sc), prices=tuple(prices),
                        price_se=tuple(pse), influence=tuple(infl))


@dataclass(frozen=True)
class PriceReport:
    """Partial- and full-information prices and their difference, per k."""

    claim: str
    gamma: float
    ks: tuple
    J_bar0: tuple
    J_bar_claim: tuple
    J0: tuple
    J_claim: tuple
    p_bar_k: tuple
    p_k: tuple
    d_k: tuple
    p_bar_se: tuple
    p_se: tuple
    d_se: tuple
    metadata: dict = field(default_factory=dict)

    def limits(self):
        if len(self.ks) < 3:
            return {"p_bar": None, "p": None, "d": None}
        out = {}
        for name, v, s in (("p_bar", self.p_bar_k, self.p_bar_se), ("p", self.p_k, self.p_se),
                           ("d", self.d_k, self.d_se)):
            out[name] = k_limit(list(zip(self.ks, v, s)), direction="none").as_dict()
        return out

    def as_dict(self):
        return {"claim": self.claim, "gamma": self.gamma, "k": list(self.ks),
                "J_bar_0": list(self.J_bar0), "J_bar_claim": list(self.J_bar_claim),
                "J_0": list(self.J0), "J_claim": list(self.J_claim),
                "p_bar_k": list(self.p_bar_k), "p_k": list(self.p_k), "d_k": list(self.d_k),
                "p_bar_se": list(self.p_bar_se), "p_se": list(self.p_se), "d_se": list(self.d_se),
                "limits": self.limits(), "metadata": self.metadata}

    def write_json(self, target):
        with open(target, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, target):
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "p_bar_k", "p_k", "d_k", "p_bar_se", "p_se", "d_se"])
            for row in zip(self.ks, self.p_bar_k, self.p_k, self.d_k, self.p_bar_se, self.p_se, self.d_se):
                w.writerow([repr(float(v)) for v in row])


def information_price(claim: ClaimSpec, spec, paths, gamma, ks, basis: Basis = Basis(), metadata=None) -> PriceReport:
    """Run both information levels on the same paths and form ``d^k = p_bar^k - p^k``.

    ``paths`` must carry a filter output (see ``PathBundle.with_filter``).
    """
    if paths.filter is None:
        raise ValueError("information_price needs a FilterOutput attached to the paths")
    partial = hodges_price(claim, spec, paths, gamma, ks, "partial", basis)
    full = hodges_price(claim, spec, paths, gamma, ks, "full", basis)
    d = tuple(a - b for a, b in zip(partial.prices, full.prices))
    d_se = tuple(_se(fa - fb) for fa, fb in zip(partial.influence, full.influence))
    return PriceReport(claim=claim.name, gamma=float(gamma), ks=partial.ks,
                       J_bar0=partial.J0, J_bar_claim=partial.J_claim, J0=full.J0, J_claim=full.J_claim,
                       p_bar_k=partial.prices, p_k=full.prices, d_k=d,
                       p_bar_se=partial.price_se, p_se=full.price_se, d_se=d_se,
                       metadata=dict(metadata or {}))

"""Closed-form log-utility strategy for one asset and one default.

Before default the optimal fraction maximises the pointwise objective

    f(pi) = pi mu - pi^2 sigma^2 / 2 + lambda log(1 + pi beta)

over ``1 + pi beta > 0``; after default (or when beta = 0) it is the Merton
fraction ``mu / sigma^2``.  Under partial information the same formulas are
evaluated with the filtered drift and intensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import ModelSpec, PathBundle

BETA_EPS = 1e-8


def log_objective(pi, mu, sigma, beta, lam):
    """Pointwise objective f(pi); -inf outside the jump constraint."""
    pi, mu, sigma, beta, lam = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (pi, mu, sigma, beta, lam)))
    base = pi * mu - 0.5 * (pi * sigma) ** 2
    arg = 1.0 + pi * beta
    with np.errstate(divide="ignore", invalid="ignore"):
        jump = np.where(lam > 0, lam * np.log(np.where(arg > 0, arg, 1.0)), 0.0)
    out = base + jump
    return np.where((arg > 0) | (lam == 0), out, -np.inf)


def log_objective_derivative(pi, mu, sigma, beta, lam):
    return mu - pi * sigma ** 2 + lam * beta / (1.0 + pi * beta)


def log_optimal_strategy(mu, sigma, beta, lam, pre_default=True):
    """Optimal log-utility fraction, vectorised over its arguments.

    Uses the rationalised form ``mu/sigma^2 + 2 lambda beta / (R + a)`` with
    ``a = mu beta + sigma^2`` and ``R = hypot(a, 2 beta sigma sqrt(lambda))``
    when ``a >= 0``, which avoids cancellation for small ``|beta|``; for
    ``|beta| < 1e-8`` the no-jump branch is used.
    """
    mu, sigma, beta, lam, pre = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (mu, sigma, beta, lam)), np.asarray(pre_default, dtype=bool))
    if np.any(sigma == 0):
        raise ValueError("sigma must be nonzero")
    if np.any(lam < 0):
        raise ValueError("intensity must be nonnegative")
    s2 = sigma ** 2
    merton = mu / s2
    jump_branch = pre & (np.abs(beta) >= BETA_EPS)
    a = mu * beta + s2
    R = np.hypot(a, 2.0 * beta * sigma * np.sqrt(lam))
    safe_beta = np.where(jump_branch, beta, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rational = merton + 2.0 * lam * beta / (R + a)
        direct = (mu * safe_beta - s2 + R) / (2.0 * safe_beta * s2)
    pi = np.where(jump_branch, np.where(a >= 0, rational, direct), merton)
    if np.any(jump_branch & (1.0 + pi * beta <= 0)):
        raise ValueError("supremum not attained: the Merton fraction violates 1 + pi beta > 0 with zero intensity")
    return pi[()] if pi.ndim == 0 else pi


@dataclass(frozen=True, eq=False)
class LogSolution:
    pi_hat: np.ndarray
    epsilon: np.ndarray
    value_V: float
    std_error: float
    x0: float
    grid: np.ndarray

    def summary_rows(self):
        """(t, mean pi_hat, mean epsilon, V, SE) per grid point."""
        pm = self.pi_hat.mean(axis=0)
        em = self.epsilon.mean(axis=0)
        return [(float(t), float(a), float(b), self.value_V, self.std_error)
                for t, a, b in zip(self.grid, pm, em)]


def log_value(spec: ModelSpec, paths: PathBundle, x0: float = 1.0, coeff_source: str = "exact") -> LogSolution:
    """Monte Carlo estimate of the optimal expected log-utility.

    The bracket ``pi mu - (pi sigma)^2/2 + lambda log(1 + pi beta)`` is evaluated
    along each path with the optimal fraction, integrated with the trapezoid
    rule and averaged across paths.
    """
    if spec.n_assets != 1 or spec.n_defaults != 1:
        raise ValueError("closed-form log strategy requires one asset and one default")
    if x0 <= 0:
        raise ValueError("initial capital must be positive")
    if coeff_source == "exact":
        mu, lam = paths.mu[..., 0], paths.lam[..., 0]
    elif coeff_source == "filtered":
        if paths.filter is None:
            raise ValueError("coeff_source='filtered' needs a FilterOutput attached to the paths")
        mu, lam = paths.filter.mu_tilde[..., 0], paths.filter.lambda_tilde[..., 0]
    else:
        raise ValueError(f"unknown coefficient source {coeff_source!r}")
    sigma = paths.sigma[..., 0, 0]
    beta = spec.beta[0, 0]
    pre = paths.N[..., 0] == 0
    pi_hat = log_optimal_strategy(mu, sigma, beta, lam, pre)
    eps = mu / sigma ** 2 - pi_hat
    integrand = log_objective(pi_hat, mu, sigma, beta, np.where(pre, lam, 0.0))
    per_path = np.trapezoid(integrand, paths.grid, axis=1)
    value = float(np.log(x0) + per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    return LogSolution(pi_hat=pi_hat, epsilon=eps, value_V=value, std_error=se, x0=float(x0), grid=paths.grid)

"""Independent reference computations used to check the solvers.

Nothing here imports from the solver modules.  The closed forms assume
constant coefficients, one asset and one default, with the default clock
independent of the Brownian motion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def power_constant_oracle(pi, mu, sigma, beta, lam, gamma, T):
    """E[(X_T)^gamma] for a constant fraction pi and unit initial wealth."""
    jump = 1.0 + pi * beta
    if np.any(np.asarray(jump) < 0):
        raise ValueError("1 + pi beta must be nonnegative")
    q = math.exp(-lam * T)
    return np.exp((gamma * pi * mu + 0.5 * gamma * (gamma - 1.0) * pi ** 2 * sigma ** 2) * T) \
        * (q + (1.0 - q) * jump ** gamma)


def exp_constant_oracle(phi, mu, sigma, beta, lam, gamma, T):
    """E[exp(-gamma X_T)] for a constant amount phi and zero initial wealth."""
    q = math.exp(-lam * T)
    return np.exp((-gamma * phi * mu + 0.5 * gamma ** 2 * phi ** 2 * sigma ** 2) * T) \
        * (q + (1.0 - q) * np.exp(-gamma * phi * beta))


def _terminal_draws(mu, sigma, lam, T, n_paths, seed):
    g = np.random.default_rng(seed)
    w = g.standard_normal(n_paths) * math.sqrt(T)
    defaulted = g.standard_exponential(n_paths) <= lam * T
    return w, defaulted


def forward_mc_power(pi, mu, sigma, beta, lam, gamma, T, n_paths=10**6, seed=0):
    """Monte Carlo (mean, standard error) of (X_T)^gamma for a constant fraction."""
    w, defaulted = _terminal_draws(mu, sigma, lam, T, n_paths, seed)
    x = np.exp((pi * mu - 0.5 * (pi * sigma) ** 2) * T + pi * sigma * w) * np.where(defaulted, 1.0 + pi * beta, 1.0)
    v = x ** gamma
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_paths))


def forward_mc_exp(phi, mu, sigma, beta, lam, gamma, T, n_paths=10**6, seed=0):
    """Monte Carlo (mean, standard error) of exp(-gamma X_T) for a constant amount."""
    w, defaulted = _terminal_draws(mu, sigma, lam, T, n_paths, seed)
    x = phi * mu * T + phi * sigma * w + np.where(defaulted, phi * beta, 0.0)
    v = np.exp(-gamma * x)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_paths))


def golden_section(f, a, b, tol=1e-12, maximize=True, max_iter=200):
    """Golden-section search for the extremum of a unimodal f on [a, b]."""
    sign = -1.0 if maximize else 1.0
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = sign * f(x1), sign * f(x2)
    it = 0
    while abs(b - a) > tol and it < max_iter:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = sign * f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = sign * f(x2)
        it += 1
    x = 0.5 * (a + b)
    return x, f(x)


def grid_argopt(objective, interval, tol=1e-9, n_grid=100_001, maximize=True):
    """Brute-force optimiser: dense grid followed by golden-section polish.

    ``objective`` must accept numpy arrays.  Returns ``(arg, value)``.
    """
    lo, hi = float(interval[0]), float(interval[1])
    x = np.linspace(lo, hi, n_grid)
    v = np.asarray(objective(x), dtype=float)
    v = np.where(np.isnan(v), -np.inf if maximize else np.inf, v)
    i = int(np.argmax(v) if maximize else np.argmin(v))
    a, b = x[max(i - 1, 0)], x[min(i + 1, n_grid - 1)]
    scalar = lambda z: float(np.asarray(objective(np.array([z])), dtype=float)[0])
    arg, val = golden_section(scalar, a, b, tol=tol, maximize=maximize)
    # keep the grid point if polishing did not improve (flat or boundary optimum)
    if (maximize and v[i] >= val) or (not maximize and v[i] <= val):
        return float(x[i]), float(v[i])
    return float(arg), float(val)


def lattice_argmax(objective, lower, upper, points_per_axis=41):
    """Best point of a regular lattice on a box; ``objective`` maps (K, n) -> (K,)."""
    axes = [np.linspace(l, u, points_per_axis) for l, u in zip(lower, upper)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    v = np.asarray(objective(mesh), dtype=float)
    v = np.where(np.isnan(v), -np.inf, v)
    i = int(np.argmax(v))
    return mesh[i], float(v[i])


def bootstrap_particle_filter(log_returns, dN, sigma, beta, mu_by_regime, lam_by_regime,
                              q_matrix, initial_dist, dt, n_particles=10_000, seed=0):
    """Bootstrap particle filter for a regime-modulated drift and intensity.

    One asset, one default, constant sigma and beta.  The regime is constant
    within each cell and switches at grid points with probabilities exp(Q dt).
    Returns the filtered drift at every grid point, shape (P, m + 1), where the
    value at t_i uses observations up to t_i only.
    """
    log_returns = np.atleast_2d(log_returns)
    dN = np.atleast_2d(dN)
    P, m = log_returns.shape
    mu_r = np.asarray(mu_by_regime, dtype=float).ravel()
    lam_r = np.asarray(lam_by_regime, dtype=float).ravel()
    trans = expm(np.asarray(q_matrix, dtype=float) * dt)
    trans = np.clip(trans, 0, None)
    cum_trans = np.cumsum(trans / trans.sum(axis=1, keepdims=True), axis=1)
    init_cum = np.cumsum(np.asarray(initial_dist, dtype=float))
    g = np.random.default_rng(seed)
    var = sigma ** 2 * dt
    out = np.empty((P, m + 1))
    with np.errstate(divide="ignore"):
        log_hit = np.log(-np.expm1(-lam_r * dt))
    for k in range(P):
        particles = np.searchsorted(init_cum, g.random(n_particles), side="right")
        particles = np.minimum(particles, mu_r.size - 1)
        alive = True
        for i in range(m):
            out[k, i] = mu_r[particles].mean()
            jumped = dN[k, i] > 0
            mean = (mu_r - 0.5 * sigma ** 2) * dt + (math.log1p(beta) if jumped else 0.0)
            ll = -0.5 * (log_returns[k, i] - mean) ** 2 / var
            if alive:
                ll = ll + (log_hit if jumped else -lam_r * dt)
            lw = ll[particles]
            top = lw.max()
            if not np.isfinite(top):
                w = np.full(n_particles, 1.0 / n_particles)
            else:
                w = np.exp(lw - top)
                w /= w.sum()
            # systematic resampling
            u = (g.random() + np.arange(n_particles)) / n_particles
            idx = np.minimum(np.searchsorted(np.cumsum(w), u), n_particles - 1)
            particles = particles[idx]
            u2 = g.random(n_particles)
            particles = np.minimum((u2[:, None] >= cum_trans[particles][:, :-1]).sum(axis=1), mu_r.size - 1)
            if jumped:
                alive = False
        out[k, m] = mu_r[particles].mean()
    return out

"""Defaultable jump-diffusion market: model coefficients, path simulation and wealth.

Prices follow ``dS = diag(S)(mu dt + sigma dW + beta dN)`` where each
component of ``N`` is a single-jump default indicator driven by an intensity
``lambda``.  Drift and intensity may be modulated by a finite-state Markov
chain (see :class:`defaultbsde.filtering.HiddenRegimeSpec`); volatility is a
function of observable quantities only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy.linalg import expm

from . import rng
from .errors import AdmissibilityError, ModelError


# --------------------------------------------------------------------------
# volatility families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantVolatility:
    """sigma(t, S, h) = matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=float)))

    def __call__(self, t, S, N):
        return np.broadcast_to(self.matrix, (S.shape[0],) + self.matrix.shape)

    def sup_norm(self):
        return float(np.linalg.norm(self.matrix, 2))


@dataclass(frozen=True)
class PriceDependentVolatility:
    """sigma(t, S, h) = diag(scale(S, h)) @ matrix.

    ``scale_i = clip((S_i / s_ref_i) ** elasticity, floor, cap)``, multiplied by
    ``post_default_scale`` once any default has occurred.  The clipping keeps
    the family uniformly elliptic and bounded.
    """

    matrix: np.ndarray
    s_ref: np.ndarray
    elasticity: float = 0.0
    floor: float = 0.5
    cap: float = 2.0
    post_default_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=float)))
        object.__setattr__(self, "s_ref", np.atleast_1d(np.asarray(self.s_ref, dtype=float)))
        if not 0 < self.floor <= self.cap:
            raise ModelError("volatility scale bounds must satisfy 0 < floor <= cap")
        if self.post_default_scale <= 0:
            raise ModelError("post_default_scale must be positive")

    def __call__(self, t, S, N):
        scale = np.clip((S / self.s_ref) ** self.elasticity, self.floor, self.cap)
        defaulted = np.any(N > 0, axis=-1, keepdims=True)
        scale = np.where(defaulted, scale * self.post_default_scale, scale)
        return scale[..., :, None] * self.matrix

    def sup_norm(self):
        return float(np.linalg.norm(self.matrix, 2) * self.cap * max(1.0, self.post_default_scale))


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the defaultable market.

    Parameters
    ----------
    horizon : float
        Terminal time T in years.
    s0 : array (n,)
        Initial prices.
    mu : array (n,)
        Drift when no regime model is attached.
    sigma : volatility family or array (n, n)
    beta : array (n, p)
        Relative price jump of asset i at default j; must exceed -1.
    lam : array (p,)
        Default intensities (per year) when no regime model is attached.
    regime_model : HiddenRegimeSpec, optional
        Markov chain modulating drift and intensity.  Overrides ``mu``/``lam``.
    ellipticity : (eps, K)
        Required bounds on the eigenvalues of sigma sigma'.
    coefficient_bound : float
        Uniform bound on |mu|, |beta| and lambda.
    """

    horizon: float
    s0: Any
    mu: Any
    sigma: Any
    beta: Any
    lam: Any
    regime_model: Any = None
    ellipticity: tuple = (1e-8, 1e8)
    coefficient_bound: float = 1e3

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        n = s0.size
        sigma = self.sigma
        if not callable(sigma):
            sigma = ConstantVolatility(sigma)
        beta = np.asarray(self.beta, dtype=float).reshape(n, -1)
        p = beta.shape[1]
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)) if self.mu is not None else np.zeros(n)
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float)) if self.lam is not None else np.zeros(p)
        for name, value in (("horizon", self.horizon),):
            if not np.isfinite(value) or value <= 0:
                raise ModelError(f"{name} must be positive, got {value}")
        if np.any(s0 <= 0):
            raise ModelError("initial prices must be positive")
        if mu.shape != (n,) or lam.shape != (p,):
            raise ModelError(f"mu must have shape ({n},) and lam shape ({p},)")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)

        if np.any(beta <= -1):
            raise ModelError("beta must exceed -1 so that prices stay positive")
        if np.any(self.lam_table < 0):
            raise ModelError("intensity must be nonnegative")
        if self.mu_table.shape != (self.n_regimes, n) or self.lam_table.shape != (self.n_regimes, p):
            raise ModelError("regime coefficients do not match asset/default dimensions")
        bound = self.coefficient_bound
        for name, arr in (("mu", self.mu_table), ("beta", beta), ("lambda", self.lam_table)):
            if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > bound:
                raise ModelError(f"{name} exceeds the coefficient bound {bound}")
        eps, K = self.ellipticity
        if not 0 < eps < K:
            raise ModelError("ellipticity bounds must satisfy 0 < eps < K")
        # probe sigma at the initial state
        check_ellipticity(self.sigma(0.0, s0[None, :], np.zeros((1, p))), eps, K, step=0)

    @property
    def n_assets(self):
        return self.s0.size

    @property
    def n_defaults(self):
        return self.beta.shape[1]

    @property
    def n_regimes(self):
        return 1 if self.regime_model is None else self.regime_model.n_regimes

    @property
    def mu_table(self):
        """Drift per regime, shape (R, n)."""
        if self.regime_model is None:
            return self.mu[None, :]
        return np.asarray(self.regime_model.mu_by_regime, dtype=float).reshape(self.n_regimes, -1)

    @property
    def lam_table(self):
        """Intensity per regime, shape (R, p)."""
        if self.regime_model is None:
            return self.lam[None, :]
        return np.asarray(self.regime_model.lambda_by_regime, dtype=float).reshape(self.n_regimes, -1)

    def sup_norms(self):
        """Uniform bounds (|mu|, |sigma|, |beta|, |lambda|) used by the bound formulas."""
        return (float(np.max(np.linalg.norm(self.mu_table, axis=1))),
                self.sigma.sup_norm(),
                float(np.max(np.abs(self.beta))),
                float(np.max(self.lam_table)))


def risk_premium(mu, sigma):
    """theta = sigma' (sigma sigma')^{-1} mu, batched over leading axes."""
    sst = sigma @ np.swapaxes(sigma, -1, -2)
    return np.einsum("...ji,...j->...i", sigma, np.linalg.solve(sst, mu[..., None])[..., 0])


def check_ellipticity(sig, eps, K, step):
    if sig.shape[-1] == 1:
        ev = sig[..., 0, 0] ** 2
        lo, hi = ev, ev
    else:
        ev = np.linalg.eigvalsh(sig @ np.swapaxes(sig, -1, -2))
        lo, hi = ev[..., 0], ev[..., -1]
    bad = ~((lo >= eps) & (hi <= K))
    if np.any(bad):
        path = int(np.flatnonzero(bad)[0])
        raise ModelError(
            f"sigma sigma' not within [{eps}, {K}] at path {path}, step {step} "
            f"(eigenvalues {float(np.ravel(lo)[path]):.3g}..{float(np.ravel(hi)[path]):.3g})")


# --------------------------------------------------------------------------
# paths
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated trajectories on a uniform grid.

    Arrays are indexed ``[path, step, ...]``.  Grid-point arrays have
    ``m + 1`` steps, increments have ``m``.  Coefficients are recorded at every
    grid point; cell ``i`` uses the value at its left endpoint.  ``lam`` is the
    effective intensity, zero once the corresponding default has occurred.
    """

    spec: ModelSpec
    grid: np.ndarray
    seed: int
    dW: np.ndarray
    N: np.ndarray
    M: np.ndarray
    S: np.ndarray
    regime: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    default_step: np.ndarray
    filter: Any = field(default=None)

    @property
    def n_paths(self):
        return self.S.shape[0]

    @property
    def m_steps(self):
        return self.grid.size - 1

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def beta(self):
        return self.spec.beta

    @property
    def dN(self):
        return np.diff(self.N, axis=1)

    def with_filter(self, filter_output):
        return replace(self, filter=filter_output)

    def arrays(self):
        """Named raw arrays, for hashing and byte-level comparisons."""
        return {"dW": self.dW, "N": self.N, "M": self.M, "S": self.S, "regime": self.regime}


def simulate_paths(spec: ModelSpec, m_steps: int, n_paths: int, seed: int) -> PathBundle:
    """Simulate prices, defaults and (optionally) the hidden regime.

    Defaults use the exponential clock: default ``j`` occurs at the right end of
    the first cell in which the left-point cumulative hazard reaches an
    independent unit exponential.  Prices move by the exact log-normal step
    with multiplicative jump factors ``1 + beta``.  The output is a pure
    function of ``(spec, m_steps, n_paths, seed)``.
    """
    if m_steps < 2:
        raise ModelError("m_steps must be at least 2")
    if n_paths < 1:
        raise ModelError("n_paths must be at least 1")
    dt = spec.horizon / m_steps
    if not dt > 0:
        raise ModelError("time step must be positive")

    n, p, R = spec.n_assets, spec.n_defaults, spec.n_regimes
    P, m = n_paths, m_steps
    grid = np.linspace(0.0, spec.horizon, m + 1)
    dW = rng.standard_normal(seed, rng.NORMAL, P, (m, n)) * np.sqrt(dt)
    clocks = rng.standard_exponential(seed, rng.EXPONENTIAL, P, (p,))

    regime = np.zeros((P, m + 1), dtype=np.int64)
    if R > 1:
        rm = spec.regime_model
        u0 = rng.uniform(seed, rng.INITIAL, P, ())
        regime[:, 0] = _categorical(np.cumsum(rm.initial_dist), u0)
        u = rng.uniform(seed, rng.UNIFORM, P, (m,))
        cum = np.cumsum(transition_matrix(rm.q_matrix, dt), axis=1)
        for i in range(m):
            regime[:, i + 1] = _categorical(cum[regime[:, i]], u[:, i])

    mu_tab, lam_tab = spec.mu_table, spec.lam_table
    eps, K = spec.ellipticity
    S = np.empty((P, m + 1, n))
    N = np.zeros((P, m + 1, p), dtype=np.int8)
    mu = mu_tab[regime]
    lam = np.empty((P, m + 1, p))
    sig_list = []
    S[:, 0] = spec.s0
    hazard = np.zeros((P, p))
    default_step = np.full((P, p), -1, dtype=np.int64)
    for i in range(m + 1):
        t = grid[i]
        lam[:, i] = lam_tab[regime[:, i]] * (1 - N[:, i])
        sig = spec.sigma(t, S[:, i], N[:, i])
        check_ellipticity(sig, eps, K, step=i)
        sig_list.append(sig)
        if i == m:
            break
        new_hazard = hazard + lam[:, i] * dt
        jump = (hazard < clocks) & (new_hazard >= clocks) & (N[:, i] == 0)
        hazard = new_hazard
        N[:, i + 1] = N[:, i] | jump
        default_step[jump] = i
        var = np.sum(sig ** 2, axis=-1)
        log_ret = (mu[:, i] - 0.5 * var) * dt + np.einsum("pij,pj->pi", sig, dW[:, i])
        jump_factor = np.prod(1.0 + spec.beta[None, :, :] * jump[:, None, :], axis=-1)
        S[:, i + 1] = S[:, i] * np.exp(log_ret) * jump_factor

    if isinstance(spec.sigma, ConstantVolatility):
        sigma = np.broadcast_to(spec.sigma.matrix, (P, m + 1, n, n))
    else:
        sigma = np.stack(sig_list, axis=1)
    compensator = np.concatenate([np.zeros((P, 1, p)), np.cumsum(lam[:, :-1] * dt, axis=1)], axis=1)
    M = N - compensator
    if R == 1:
        mu = np.broadcast_to(mu_tab[0], (P, m + 1, n))
    return PathBundle(spec=spec, grid=grid, seed=int(seed), dW=dW, N=N, M=M, S=S,
                      regime=regime, mu=mu, sigma=sigma, lam=lam, default_step=default_step)


def transition_matrix(q_matrix, dt):
    """One-cell transition probabilities exp(Q dt), clipped and renormalised."""
    P = expm(np.asarray(q_matrix, dtype=float) * dt)
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def _categorical(cum, u):
    cum = np.broadcast_to(cum, (u.shape[0], np.shape(cum)[-1]))
    return np.sum(u[:, None] >= cum[:, :-1], axis=1).astype(np.int64)


def simultaneous_default_frequency(paths: PathBundle) -> float:
    """Fraction of paths on which two defaults land in the same cell."""
    if paths.spec.n_defaults < 2:
        return 0.0
    ds = paths.default_step
    hits = np.zeros(paths.n_paths, dtype=bool)
    for a in range(ds.shape[1]):
        for b in range(a + 1, ds.shape[1]):
            hits |= (ds[:, a] >= 0) & (ds[:, a] == ds[:, b])
    return float(hits.mean())


# --------------------------------------------------------------------------
# wealth
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WealthPath:
    x0: float
    strategy_kind: str
    controls: np.ndarray
    X: np.ndarray


def as_controls(controls, n_paths, m_steps, n_assets):
    """Broadcast a strategy to shape (P, m, n)."""
    arr = np.asarray(controls, dtype=float)
    if n_assets == 1 and arr.ndim == 2 and arr.shape == (n_paths, m_steps):
        arr = arr[..., None]
    return np.broadcast_to(arr, (n_paths, m_steps, n_assets))


def wealth_path(paths: PathBundle, controls, kind: str = "proportional", x0: float = 1.0) -> WealthPath:
    """Wealth of a self-financing strategy along simulated paths.

    ``controls`` is either array-like broadcastable to (P, m, n) or a callable
    ``controls(i, paths, X_i) -> (P, n)`` giving the position held over cell
    ``i``.  For ``kind="proportional"`` the control is the fraction of wealth
    and wealth uses the exact product form; for ``kind="amount"`` it is the
    currency amount and wealth accumulates arithmetically.
    """
    if kind not in ("proportional", "amount"):
        raise ValueError(f"unknown strategy kind {kind!r}")
    P, m, n = paths.n_paths, paths.m_steps, paths.spec.n_assets
    dt = paths.dt
    beta = paths.beta
    dN = paths.dN
    X = np.empty((P, m + 1))
    X[:, 0] = x0
    feedback = callable(controls)
    used = np.empty((P, m, n)) if feedback else as_controls(controls, P, m, n)
    if not np.all(np.isfinite(used)):
        raise ValueError("controls contain NaN or infinite values")

    for i in range(m):
        c = np.asarray(controls(i, paths, X[:, i]), dtype=float).reshape(P, n) if feedback else used[:, i]
        if feedback:
            if not np.all(np.isfinite(c)):
                raise ValueError(f"controls contain NaN at step {i}")
            used[:, i] = c
        mu, sig = paths.mu[:, i], paths.sigma[:, i]
        exposure = np.einsum("pi,pij->pj", c, sig)
        if kind == "proportional":
            jump_size = c @ beta  # (P, p)
            landing = dN[:, i] > 0
            bad = landing & (1.0 + jump_size < 0)
            if np.any(bad):
                path = int(np.flatnonzero(bad.any(axis=1))[0])
                raise AdmissibilityError(
                    f"1 + pi'beta < 0 at a default: path {path}, step {i}", path=path, step=i)
            drift = np.sum(c * mu, axis=1) - 0.5 * np.sum(exposure ** 2, axis=1)
            diffusion = np.sum(exposure * paths.dW[:, i], axis=1)
            factor = np.prod(np.where(landing, 1.0 + jump_size, 1.0), axis=1)
            X[:, i + 1] = X[:, i] * np.exp(drift * dt + diffusion) * factor
        else:
            gain = np.sum(c * mu, axis=1) * dt + np.sum(exposure * paths.dW[:, i], axis=1) \
                + np.sum((c @ beta) * dN[:, i], axis=1)
            X[:, i + 1] = X[:, i] + gain
    if np.any(np.isnan(X)):
        raise ValueError("wealth became NaN")
    return WealthPath(x0=float(x0), strategy_kind=kind, controls=used, X=X)


def write_paths_csv(paths: PathBundle, target, wealth: WealthPath | None = None, max_paths: int | None = None):
    """Columnar export: path_id, step, t, S_1..S_n, N_1..N_p[, X]."""
    n, p = paths.spec.n_assets, paths.spec.n_defaults
    count = paths.n_paths if max_paths is None else min(max_paths, paths.n_paths)
    header = ["path_id", "step", "t"] + [f"S_{i + 1}" for i in range(n)] + [f"N_{j + 1}" for j in range(p)]
    if wealth is not None:
        header.append("X")
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(count):
            for i, t in enumerate(paths.grid):
                row = [k, i, repr(float(t))] + [repr(float(s)) for s in paths.S[k, i]] \
                    + [int(v) for v in paths.N[k, i]]
                if wealth is not None:
                    row.append(repr(float(wealth.X[k, i])))
                w.writerow(row)
    finally:
        if own:
            fh.close()

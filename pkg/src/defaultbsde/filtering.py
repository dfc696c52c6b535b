"""Hidden-regime filter for the drift and default intensities.

The investor sees prices and defaults only.  A finite Markov chain drives
``mu`` and ``lambda``; its posterior is propagated cell by cell:

    posterior(t_i) --update with cell i observations--> filtered
                   --exp(Q dt) prediction-------------> posterior(t_{i+1})

The value at ``t_i`` therefore uses observations up to ``t_i`` only.  The
recursion reads ``S`` and ``N`` (and the known sigma, beta); the true regime
path stored on the bundle is never touched.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ModelError
from .market import PathBundle, transition_matrix

log = logging.getLogger(__name__)

LOG_FLOOR = -690.0  # about log(1e-300)


@dataclass(frozen=True)
class HiddenRegimeSpec:
    """Finite-state Markov chain modulating drift and intensities.

    ``mu_by_regime`` is (R, n) and ``lambda_by_regime`` is (R, p), both per year.
    """

    q_matrix: object
    mu_by_regime: object
    lambda_by_regime: object
    initial_dist: object

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_matrix, dtype=float))
        R = q.shape[0]
        if q.shape != (R, R) or R < 1:
            raise ModelError(f"q_matrix must be square, got shape {q.shape}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ModelError("off-diagonal transition rates must be nonnegative")
        if np.any(np.abs(q.sum(axis=1)) > 1e-10 * max(1.0, np.abs(q).max())):
            raise ModelError("rows of q_matrix must sum to zero")
        mu = np.asarray(self.mu_by_regime, dtype=float).reshape(R, -1)
        lam = np.asarray(self.lambda_by_regime, dtype=float).reshape(R, -1)
        if np.any(lam < 0):
            raise ModelError("intensities must be nonnegative")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lam))):
            raise ModelError("regime coefficients must be finite")
        init = np.asarray(self.initial_dist, dtype=float).ravel()
        if init.size != R or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise ModelError("initial_dist must be a probability vector over the regimes")
        object.__setattr__(self, "q_matrix", q)
        object.__setattr__(self, "mu_by_regime", mu)
        object.__setattr__(self, "lambda_by_regime", lam)
        object.__setattr__(self, "initial_dist", init)

    @property
    def n_regimes(self):
        return self.q_matrix.shape[0]


@dataclass(frozen=True, eq=False)
class FilterOutput:
    posterior: np.ndarray     # (P, m+1, R)
    mu_tilde: np.ndarray      # (P, m+1, n)
    lambda_tilde: np.ndarray  # (P, m+1, p), zero after the matching default
    rho_tilde: np.ndarray     # (P, m+1, n)
    dW_tilde: np.ndarray      # (P, m, n) observed innovation dW + rho dt
    dW_bar: np.ndarray        # (P, m, n)
    W_bar: np.ndarray         # (P, m+1, n)
    M_bar: np.ndarray         # (P, m+1, p)
    L: np.ndarray             # (P, m+1)
    Lambda_tilde: np.ndarray  # (P, m+1)
    floored_steps: tuple = ()

    @property
    def xi(self):
        return 1.0 / self.Lambda_tilde

    def write_trace_csv(self, target, max_paths=None):
        """Columns: path_id, step, posterior_1..R, mu_tilde_1..n, lambda_tilde_1..p."""
        P, m1, R = self.posterior.shape
        n, p = self.mu_tilde.shape[2], self.lambda_tilde.shape[2]
        upto = P if max_paths is None else min(P, max_paths)
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "step"] + [f"posterior_{r + 1}" for r in range(R)]
                       + [f"mu_tilde_{i + 1}" for i in range(n)] + [f"lambda_tilde_{j + 1}" for j in range(p)])
            for k in range(upto):
                for i in range(m1):
                    w.writerow([k, i] + [repr(float(v)) for v in self.posterior[k, i]]
                               + [repr(float(v)) for v in self.mu_tilde[k, i]]
                               + [repr(float(v)) for v in self.lambda_tilde[k, i]])


def observed_innovation(paths: PathBundle):
    """sigma^{-1}(dlog S - log(1 + beta dN) + diag(sigma sigma') dt / 2), i.e. dW + rho dt."""
    dt = paths.dt
    dlog = np.diff(np.log(paths.S), axis=1)
    dN = paths.dN.astype(float)
    jump_log = np.einsum("ij,pmj->pmi", np.log1p(paths.beta), dN)
    sig = paths.sigma[:, :-1]
    half_var = 0.5 * np.sum(sig ** 2, axis=-1) * dt
    return np.linalg.solve(sig, (dlog - jump_log + half_var)[..., None])[..., 0]


def _regime_rho(sig, mu_table):
    """sigma^{-1} mu_r for every regime: (P, n, n), (R, n) -> (P, R, n)."""
    P, n = sig.shape[0], sig.shape[1]
    rhs = np.broadcast_to(mu_table.T[None], (P, n, mu_table.shape[0]))
    return np.swapaxes(np.linalg.solve(sig, rhs), 1, 2)


def filter_paths(spec, paths: PathBundle) -> FilterOutput:
    """Run the regime filter on every path and assemble innovations and densities."""
    rm = spec.regime_model
    P, m, dt = paths.n_paths, paths.m_steps, paths.dt
    n, p = spec.n_assets, spec.n_defaults
    mu_tab, lam_tab = spec.mu_table, spec.lam_table
    R = mu_tab.shape[0]
    if rm is None:
        q, init = np.zeros((1, 1)), np.ones(1)
    else:
        q, init = np.asarray(rm.q_matrix, dtype=float), np.asarray(rm.initial_dist, dtype=float)
    trans = transition_matrix(q, dt)

    dW_tilde = observed_innovation(paths)
    dN = paths.dN
    alive = paths.N[:, :-1] == 0                                       # (P, m, p)
    with np.errstate(divide="ignore"):
        log_hit = np.log(-np.expm1(-lam_tab * dt))                     # (R, p)

    posterior = np.empty((P, m + 1, R))
    rho_tilde = np.empty((P, m + 1, n))
    post = np.broadcast_to(init, (P, R)).copy()
    floored = []
    for i in range(m + 1):
        posterior[:, i] = post
        rho_r = _regime_rho(paths.sigma[:, i], mu_tab)                 # (P, R, n)
        rho_tilde[:, i] = np.einsum("pr,prn->pn", post, rho_r)
        if i == m:
            break
        x = dW_tilde[:, i]
        ll = np.einsum("prn,pn->pr", rho_r, x) - 0.5 * np.sum(rho_r ** 2, axis=-1) * dt
        hit = (dN[:, i] > 0)[:, None, :]
        jump_ll = np.where(hit, log_hit[None], -lam_tab[None] * dt)    # (P, R, p)
        ll = ll + np.sum(np.where(alive[:, i][:, None, :], jump_ll, 0.0), axis=-1)
        with np.errstate(divide="ignore"):
            lp = np.log(post) + ll
        top = lp.max(axis=1, keepdims=True)
        dead = ~np.isfinite(top[:, 0])
        if np.any(dead):
            floored.append(i)
            log.warning("all regimes have zero likelihood on %d paths at step %d; posterior reset to uniform",
                        int(dead.sum()), i)
            lp[dead] = 0.0
        lp = np.maximum(lp - logsumexp(lp, axis=1, keepdims=True), LOG_FLOOR)
        filt = np.exp(lp)
        filt /= filt.sum(axis=1, keepdims=True)
        post = filt @ trans
        post /= post.sum(axis=1, keepdims=True)

    mu_tilde = posterior @ mu_tab
    lambda_tilde = (posterior @ lam_tab) * (1 - paths.N)
    dW_bar = dW_tilde - rho_tilde[:, :-1] * dt
    W_bar = np.concatenate([np.zeros((P, 1, n)), np.cumsum(dW_bar, axis=1)], axis=1)
    M_bar = paths.N - np.concatenate([np.zeros((P, 1, p)), np.cumsum(lambda_tilde[:, :-1] * dt, axis=1)], axis=1)
    out = FilterOutput(posterior=posterior, mu_tilde=mu_tilde, lambda_tilde=lambda_tilde, rho_tilde=rho_tilde,
                       dW_tilde=dW_tilde, dW_bar=dW_bar, W_bar=W_bar, M_bar=M_bar,
                       L=np.ones((P, m + 1)), Lambda_tilde=np.ones((P, m + 1)), floored_steps=tuple(floored))
    L, Lam = measure_change(paths, out)
    return FilterOutput(**{**out.__dict__, "L": L, "Lambda_tilde": Lam})


def _stochastic_exponential(rho, dW, dt):
    """exp(sum rho.dW - 1/2 sum |rho|^2 dt), left-point, with a leading 1."""
    inc = np.sum(rho * dW, axis=-1) - 0.5 * np.sum(rho ** 2, axis=-1) * dt
    if not np.all(np.isfinite(inc)):
        raise ModelError("non-finite integrand in the density process")
    P = inc.shape[0]
    return np.exp(np.concatenate([np.zeros((P, 1)), np.cumsum(inc, axis=1)], axis=1))


def measure_change(paths: PathBundle, filt: FilterOutput):
    """Density processes ``L = E(-rho . W)`` and ``Lambda_tilde = E(rho_tilde . W_tilde)``."""
    dt = paths.dt
    rho = np.linalg.solve(paths.sigma, paths.mu[..., None])[..., 0]
    L = _stochastic_exponential(-rho[:, :-1], paths.dW, dt)
    Lam = _stochastic_exponential(filt.rho_tilde[:, :-1], filt.dW_tilde, dt)
    return L, Lam

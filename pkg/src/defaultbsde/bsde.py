"""Backward regression solver for BSDEs driven by a Brownian motion and default martingales.

Solves ``-dY = g(t, Y, Z, U) dt - Z dW - U dM`` with ``Y_T = xi`` on a set of
simulated paths.  Conditional expectations given the information at ``t_i``
are least-squares projections on polynomials of the observable state,
computed separately for each default pattern (and, under full information,
each regime), because Y jumps at defaults.

    Y_i = E_i[Y_{i+1}] + g(t_i, Y_i, Z_i, U_i) dt        (one Picard pass)
    Z_i = E_i[(Y_{i+1} - E_i[Y_{i+1}]) dW_i] / dt
    U_i = E_i[(Y_{i+1} - E_i[Y_{i+1}]) dM_i] / (lambda_i dt)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import drivers
from .drivers import StepCoefficients, StrategyBound
from .errors import DivergenceError, RegressionError
from .market import PathBundle, as_controls

log = logging.getLogger(__name__)

JUMP_CELL_EPS = 1e-12


@dataclass(frozen=True)
class GeneratorSpec:
    """A BSDE generator with its terminal condition.

    ``driver(coeffs, y, z, u)`` returns ``(rate, arg)`` arrays over paths, where
    ``arg`` is the pointwise optimiser (or the strategy for linear drivers) and
    may be ``None``.  ``terminal(paths)`` returns xi per path.  When
    ``upper_bound`` (and/or ``lower_bound``) is set, Y is truncated to it.
    """

    driver: Callable
    terminal: Callable
    lipschitz_bound: float
    upper_bound: float | None = None
    lower_bound: float | None = None
    name: str = ""


@dataclass(frozen=True)
class Basis:
    """Regression basis: polynomials of total degree <= ``degree`` in the
    standardised continuous state, fitted separately per discrete state."""

    degree: int = 2
    ridge: float = 1e-8
    min_paths_per_column: int = 10
    max_condition: float = 1e13

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be nonnegative")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True, eq=False)
class InformationView:
    """Everything the solver may use under one information structure."""

    info: str
    grid: np.ndarray
    dW: np.ndarray        # (P, m, n) driving Brownian increments (W or W-bar)
    dM: np.ndarray        # (P, m, p) compensated default increments (M or M-bar)
    mu: np.ndarray        # (P, m+1, n)
    sigma: np.ndarray     # (P, m+1, n, n)
    beta: np.ndarray      # (n, p)
    lam: np.ndarray       # (P, m+1, p)
    groups: np.ndarray    # (P, m+1) discrete state label
    features: np.ndarray  # (P, m+1, d) continuous regressors
    paths: PathBundle

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    def coefficients(self, i):
        return StepCoefficients(step=i, t=float(self.grid[i]), mu=self.mu[:, i], sigma=self.sigma[:, i],
                                beta=self.beta, lam=self.lam[:, i])


def _default_pattern(N):
    weights = 2 ** np.arange(N.shape[-1], dtype=np.int64)
    return (N.astype(np.int64) * weights).sum(axis=-1)


def information_view(paths: PathBundle, info: str = "full") -> InformationView:
    """Assemble solver inputs for ``info="full"`` (W, M, mu, lambda, regime
    observed) or ``info="partial"`` (innovations and filtered coefficients)."""
    pattern = _default_pattern(paths.N)
    logS = np.log(paths.S)
    if info == "full":
        R = paths.spec.n_regimes
        groups = pattern * R + paths.regime if R > 1 else pattern
        return InformationView(info="full", grid=paths.grid, dW=paths.dW, dM=np.diff(paths.M, axis=1),
                               mu=paths.mu, sigma=paths.sigma, beta=paths.beta, lam=paths.lam,
                               groups=groups, features=logS, paths=paths)
    if info == "partial":
        f = paths.filter
        if f is None:
            raise ValueError("partial information requires a FilterOutput attached to the paths")
        post = f.posterior[..., :-1]
        return InformationView(info="partial", grid=paths.grid, dW=f.dW_bar, dM=np.diff(f.M_bar, axis=1),
                               mu=f.mu_tilde, sigma=paths.sigma, beta=paths.beta, lam=f.lambda_tilde,
                               groups=pattern, features=np.concatenate([logS, post], axis=-1), paths=paths)
    raise ValueError(f"unknown information level {info!r}")


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------

def design_matrix(x, degree):
    """Constant, linear and higher total-degree monomials of standardised x."""
    n_rows = x.shape[0]
    if x.shape[1] == 0 or degree == 0:
        return np.ones((n_rows, 1))
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    xs = (x[:, keep] - mean[keep]) / std[keep]
    cols = [np.ones(n_rows)]
    d = xs.shape[1]
    if d:
        cols.extend(xs[:, j] for j in range(d))
        if degree >= 2:
            for a in range(d):
                for b in range(a, d):
                    cols.append(xs[:, a] * xs[:, b])
        if degree >= 3:
            for a in range(d):
                cols.append(xs[:, a] ** 3)
    return np.column_stack(cols)


def fit_group(A, b, ridge):
    """Ridge-regularised normal equations (G + D) c = A'b / n with
    D = r tr(G)/q on every column except the leading constant.

    The intercept is left unpenalised so constants are reproduced exactly.
    Returns ``(coef, G, rhs, shift)``, ``shift`` being the diagonal of D.
    """
    n_rows, q = A.shape
    G = A.T @ A / n_rows
    rhs = A.T @ b / n_rows
    shift = np.full(q, ridge * np.trace(G) / q)
    shift[0] = 0.0
    coef = np.linalg.solve(G + np.diag(shift), rhs)
    return coef, G, rhs, shift


@dataclass
class Projection:
    fitted: np.ndarray
    r2: float
    condition: float
    degrees: dict = field(default_factory=dict)


def least_squares_projection(features, groups, targets, basis: Basis, step=None) -> Projection:
    """Project each target column on the basis, separately per group label."""
    fitted = np.empty_like(targets)
    worst = 1.0
    degrees = {}
    labels = np.unique(groups)
    for g in labels:
        idx = np.flatnonzero(groups == g) if labels.size > 1 else slice(None)
        x = features[idx]
        count = x.shape[0]
        deg = basis.degree
        while deg > 0 and _n_columns(x.shape[1], deg) * basis.min_paths_per_column > count:
            deg -= 1
        A = design_matrix(x, deg)
        coef, G, _, _ = fit_group(A, targets[idx], basis.ridge)
        cond = float(np.linalg.cond(G)) if G.shape[0] > 1 else 1.0
        if not np.isfinite(cond) or cond > basis.max_condition:
            raise RegressionError(
                f"rank-deficient regression at step {step} (group {int(g)}, condition {cond:.3g})",
                step=step, condition=cond)
        worst = max(worst, cond)
        degrees[int(g)] = deg
        fitted[idx] = A @ coef
    y = targets[:, 0]
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - fitted[:, 0]) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return Projection(fitted=fitted, r2=r2, condition=worst, degrees=degrees)


def _n_columns(d, degree):
    if d == 0 or degree == 0:
        return 1
    return 1 + d + (d * (d + 1) // 2 if degree >= 2 else 0) + (d if degree >= 3 else 0)


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BsdeSolution:
    grid: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    Y0: float
    Y0_se: float
    y0_samples: np.ndarray
    argopt: np.ndarray | None
    r2: np.ndarray
    condition: np.ndarray
    info: str = "full"
    name: str = ""

    def summary_rows(self):
        """(step, t, Y_mean, Y_sd, Z_mean..., U_mean..., argopt_mean..., R2) per step."""
        m = self.grid.size - 1
        rows = []
        for i in range(m + 1):
            y = self.Y[:, i]
            zi = self.Z[:, min(i, m - 1)].mean(axis=0) if i < m else np.full(self.Z.shape[2], np.nan)
            ui = self.U[:, i].mean(axis=0) if i < m else np.full(self.U.shape[2], np.nan)
            if self.argopt is not None:
                ai = self.argopt[:, i].mean(axis=0) if i < m else np.full(self.argopt.shape[2], np.nan)
            else:
                ai = np.array([np.nan])
            r2 = self.r2[i] if i < m else np.nan
            rows.append([i, float(self.grid[i]), float(y.mean()), float(y.std())] + [float(v) for v in zi]
                        + [float(v) for v in ui] + [float(v) for v in ai] + [float(r2)])
        return rows

    def header(self):
        n, p = self.Z.shape[2], self.U.shape[2]
        na = 1 if self.argopt is None else self.argopt.shape[2]
        return (["step", "t", "Y_mean", "Y_sd"] + [f"Z_mean_{i + 1}" for i in range(n)]
                + [f"U_mean_{j + 1}" for j in range(p)] + [f"argopt_mean_{i + 1}" for i in range(na)] + ["R2"])

    def write_csv(self, target):
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.summary_rows():
                w.writerow([v if isinstance(v, int) else repr(v) for v in row])


def solve_bsde(gen: GeneratorSpec, paths, basis: Basis = Basis(), picard: int = 1) -> BsdeSolution:
    """Backward Euler + regression Monte Carlo.

    ``paths`` is a :class:`PathBundle` (full information) or an
    :class:`InformationView`.
    """
    view = paths if isinstance(paths, InformationView) else information_view(paths, "full")
    bundle = view.paths
    P = view.dW.shape[0]
    m = view.grid.size - 1
    n, p = view.dW.shape[2], view.dM.shape[2]
    dt = view.dt

    xi = np.asarray(gen.terminal(bundle), dtype=float).reshape(P)
    if not np.all(np.isfinite(xi)):
        raise DivergenceError("terminal condition is not finite", step=m)
    Y = np.empty((P, m + 1))
    Y[:, m] = xi
    Z = np.zeros((P, m, n))
    U = np.zeros((P, m, p))
    argopt = None
    r2 = np.empty(m)
    cond = np.empty(m)
    y0_samples = None
    bound = gen.upper_bound
    for i in range(m - 1, -1, -1):
        yn = Y[:, i + 1]
        feats, grp = view.features[:, i], view.groups[:, i]
        proj = least_squares_projection(feats, grp, yn[:, None], basis, step=i)
        r2[i], cond[i] = proj.r2, proj.condition
        ey = proj.fitted[:, 0]
        # centring at E_i[Y_{i+1}] leaves the projections unbiased and removes most of their noise
        dy = yn - ey
        incr = least_squares_projection(feats, grp, np.column_stack([dy[:, None] * view.dW[:, i],
                                                                     dy[:, None] * view.dM[:, i]]), basis, step=i)
        Z[:, i] = incr.fitted[:, :n] / dt
        lam_dt = view.lam[:, i] * dt
        live = lam_dt >= JUMP_CELL_EPS
        U[:, i] = np.where(live, incr.fitted[:, n:] / np.where(live, lam_dt, 1.0), 0.0)

        c = view.coefficients(i)
        y = ey
        for _ in range(1 + max(0, picard)):
            rate, arg = gen.driver(c, _truncate(y, gen), Z[:, i], U[:, i])
            y = ey + rate * dt
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite value at step {i}", step=i)
        if bound is not None and np.max(np.abs(y)) > 10.0 * bound:
            raise DivergenceError(f"|Y| exceeds ten times the declared bound at step {i}", step=i)
        Y[:, i] = _truncate(y, gen)
        if arg is not None:
            if argopt is None:
                argopt = np.empty((P, m, np.shape(arg)[-1]))
            argopt[:, i] = np.asarray(arg).reshape(P, -1)
        if i == 0:
            y0_samples = _truncate(yn + rate * dt, gen)

    Y0 = float(Y[:, 0].mean())
    se = float(y0_samples.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return BsdeSolution(grid=view.grid, Y=Y, Z=Z, U=U, Y0=Y0, Y0_se=se, y0_samples=y0_samples,
                        argopt=argopt, r2=r2, condition=cond, info=view.info, name=gen.name)


def _truncate(y, gen):
    if gen.lower_bound is not None or gen.upper_bound is not None:
        return np.clip(y, gen.lower_bound, gen.upper_bound)
    return y


# --------------------------------------------------------------------------
# power-utility instances
# --------------------------------------------------------------------------

def _unit_terminal(paths):
    return np.ones(paths.n_paths)


def solve_linear_bsde_for_strategy(pi, spec, paths, gamma, basis: Basis = Basis(), info="full") -> BsdeSolution:
    """Y_t estimates E[(X_T^{t,pi})^gamma | F_t] for a fixed bounded strategy.

    ``pi`` is broadcastable to (P, m, n) (fraction of wealth).
    """
    bundle = paths.paths if isinstance(paths, InformationView) else paths
    pi_arr = np.ascontiguousarray(as_controls(pi, bundle.n_paths, bundle.m_steps, spec.n_assets))
    if not np.all(np.isfinite(pi_arr)):
        raise ValueError("strategy contains NaN")
    k = float(np.max(np.abs(pi_arr))) if pi_arr.size else 0.0
    mu_s, sig_s, beta_s, lam_s = spec.sup_norms()
    gen = GeneratorSpec(
        driver=drivers.linear_power_driver(pi_arr, gamma),
        terminal=_unit_terminal,
        lipschitz_bound=drivers.power_lipschitz_bound(k, gamma, mu_s, sig_s, beta_s, lam_s, spec.n_defaults),
        upper_bound=drivers.power_value_bound(k, gamma, mu_s, sig_s, beta_s, spec.horizon, spec.n_defaults),
        lower_bound=0.0,
        name=f"linear power, gamma={gamma}",
    )
    view = paths if isinstance(paths, InformationView) else information_view(paths, info)
    return solve_bsde(gen, view, basis)


def power_generator(spec, bound: StrategyBound, gamma) -> GeneratorSpec:
    mu_s, sig_s, beta_s, lam_s = spec.sup_norms()
    return GeneratorSpec(
        driver=drivers.power_driver(bound, gamma),
        terminal=_unit_terminal,
        lipschitz_bound=drivers.power_lipschitz_bound(bound.k, gamma, mu_s, sig_s, beta_s, lam_s, spec.n_defaults),
        upper_bound=drivers.power_value_bound(bound.k, gamma, mu_s, sig_s, beta_s, spec.horizon, spec.n_defaults),
        lower_bound=0.0,
        name=f"power k={bound.k}, gamma={gamma}",
    )


def solve_power_bsde(spec, paths, bound: StrategyBound, gamma, basis: Basis = Basis(), info="full") -> BsdeSolution:
    """k-bounded power-utility value process J^k and its optimiser path."""
    view = paths if isinstance(paths, InformationView) else information_view(paths, info)
    return solve_bsde(power_generator(spec, bound, gamma), view, basis)


def probe_lipschitz(gen: GeneratorSpec, view: InformationView, n_probes=200, seed=0, y_range=(0.1, 2.0)):
    """Largest sampled difference quotient of the driver in (y, z, u), max-norm.

    Used to check that the declared Lipschitz bound is consistent.
    """
    g = np.random.default_rng(seed)
    m = view.grid.size - 1
    P = view.dW.shape[0]
    n, p = view.dW.shape[2], view.dM.shape[2]
    worst = 0.0
    for _ in range(n_probes // 20 + 1):
        i = int(g.integers(0, m))
        c = view.coefficients(i)
        y1, y2 = g.uniform(*y_range, P), g.uniform(*y_range, P)
        z1, z2 = g.normal(0, 0.3, (P, n)), g.normal(0, 0.3, (P, n))
        u1 = -g.uniform(0, 0.5, (P, p)) * y1[:, None]
        u2 = -g.uniform(0, 0.5, (P, p)) * y2[:, None]
        r1, _ = gen.driver(c, y1, z1, u1)
        r2, _ = gen.driver(c, y2, z2, u2)
        dist = np.maximum.reduce([np.abs(y1 - y2), np.max(np.abs(z1 - z2), axis=1), np.max(np.abs(u1 - u2), axis=1)])
        worst = max(worst, float(np.max(np.abs(r1 - r2) / dist)))
    return worst

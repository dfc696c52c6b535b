"""Optimising BSDE generators over bounded strategy sets.

Power utility (fraction of wealth ``pi``)::

    h(pi) = gamma pi'(y mu + sigma z) + gamma (gamma - 1)/2 |pi' sigma|^2 y
            + sum_j lambda_j ((1 + pi' beta_j)^gamma - 1)(y + u_j)

maximised over ``|pi_i| <= k`` and ``1 + pi' beta_j >= delta`` for every
default still alive.  Exponential utility (amount ``phi``)::

    g(phi) = gamma^2/2 |phi' sigma|^2 y - gamma phi'(y mu + sigma z)
             - sum_j (1 - exp(-gamma phi' beta_j))(y lambda_j + lambda_j u_j)

minimised over ``|phi_i| <= k``.  Both are concave (resp. convex) whenever
``y > 0`` and ``y + u_j >= 0``; otherwise a grid search takes over.

All optimisers are vectorised over a leading batch axis (one entry per path).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import OptimizerError

log = logging.getLogger(__name__)

JUMP_DELTA = 1e-12
FALLBACK_GRID = 2001
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class StrategyBound:
    """Strategy set A^k: every component bounded by ``k``.

    ``admissibility`` is ``"power"`` (adds ``1 + pi'beta_j >= delta`` for live
    defaults) or ``"exponential"`` (box only).
    """

    k: float
    admissibility: str = "power"
    delta: float = JUMP_DELTA

    def __post_init__(self):
        if not self.k >= 0 or not math.isfinite(self.k):
            raise OptimizerError(f"strategy bound must be a nonnegative finite number, got {self.k}")
        if self.admissibility not in ("power", "exponential"):
            raise OptimizerError(f"unknown admissibility mode {self.admissibility!r}")


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    gamma: float
    claim: object = None

    def __post_init__(self):
        if self.kind == "power":
            if not 0 < self.gamma < 1:
                raise ValueError(f"power utility needs gamma in (0, 1), got {self.gamma}")
        elif self.kind == "exponential":
            if not self.gamma > 0:
                raise ValueError(f"exponential utility needs gamma > 0, got {self.gamma}")
        elif self.kind != "log":
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.claim is not None and self.kind != "exponential":
            raise ValueError("claims are only supported with exponential utility")


class StepCoefficients(NamedTuple):
    """Coefficients seen by a generator on one grid cell, batched over paths."""

    step: int
    t: float
    mu: np.ndarray      # (P, n)
    sigma: np.ndarray   # (P, n, n)
    beta: np.ndarray    # (n, p)
    lam: np.ndarray     # (P, p), zero for defaults already observed


# --------------------------------------------------------------------------
# objectives, scalar strategy (one asset, any number of defaults)
# --------------------------------------------------------------------------

def _scalar_parts(mu, sigma, beta, lam, y, z, u):
    """Broadcast scalar-strategy inputs: mu, sigma, y, z -> (B,); beta, lam, u -> (B, p).

    The number of defaults p is read from ``beta`` (scalar: p = 1).  One-dimensional
    ``lam``/``u`` are per-path when p = 1 and per-default otherwise.
    """
    beta = np.asarray(beta, dtype=float)
    p = 1 if beta.ndim == 0 else beta.shape[-1]

    def per_default(a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 2:
            return a
        if p == 1:
            return a.reshape(-1, 1)
        return np.broadcast_to(a, (p,)).reshape(1, p)

    def per_batch(a):
        return np.asarray(a, dtype=float).reshape(-1)

    mu, sigma, y, z = (per_batch(a) for a in (mu, sigma, y, z))
    beta, lam, u = (per_default(a) for a in (beta, lam, u))
    B = np.broadcast_shapes(*[(a.shape[0],) for a in (mu, sigma, y, z, beta, lam, u)])[0]
    mu, sigma, y, z = (np.broadcast_to(a, (B,)) for a in (mu, sigma, y, z))
    beta, lam, u = (np.broadcast_to(a, (B, p)) for a in (beta, lam, u))
    parts = (mu, sigma, beta, lam, y, z, u)
    if any(np.any(np.isnan(a)) for a in parts):
        raise OptimizerError("NaN in optimiser inputs")
    return parts


class _PowerScalar:
    def __init__(self, gamma, mu, sigma, beta, lam, y, z, u):
        self.g = gamma
        self.lin = gamma * (mu * y + sigma * z)
        self.quad = gamma * (gamma - 1.0) * sigma ** 2 * y
        self.beta, self.lam, self.yu = beta, lam, y[:, None] + u

    def value(self, x, s=slice(None)):
        x = np.asarray(x)
        jb = 1.0 + x[..., None] * self.beta[s]
        jump = np.sum(self.lam[s] * (np.maximum(jb, 0.0) ** self.g - 1.0) * self.yu[s], axis=-1)
        return self.lin[s] * x + 0.5 * self.quad[s] * x ** 2 + jump

    def d1(self, x, s=slice(None)):
        jb = np.maximum(1.0 + x[..., None] * self.beta[s], JUMP_DELTA)
        active = self.lam[s] > 0
        t = np.where(active, self.lam[s] * self.g * self.beta[s] * jb ** (self.g - 1.0) * self.yu[s], 0.0)
        return self.lin[s] + self.quad[s] * x + t.sum(axis=-1)

    def d2(self, x, s=slice(None)):
        jb = np.maximum(1.0 + x[..., None] * self.beta[s], JUMP_DELTA)
        active = self.lam[s] > 0
        t = np.where(active, self.lam[s] * self.g * (self.g - 1.0) * self.beta[s] ** 2 * jb ** (self.g - 2.0) * self.yu[s], 0.0)
        return self.quad[s] + t.sum(axis=-1)


class _ExpScalar:
    """Negated exponential generator, so that both cases are maximisations."""

    def __init__(self, gamma, mu, sigma, beta, lam, y, z, u):
        self.g = gamma
        self.lin = gamma * (y * mu + sigma * z)
        self.quad = gamma ** 2 * sigma ** 2 * y
        self.beta, self.lam, self.yu = beta, lam, y[:, None] + u

    def value(self, x, s=slice(None)):
        x = np.asarray(x)
        e = -np.expm1(-self.g * x[..., None] * self.beta[s])
        return -(0.5 * self.quad[s] * x ** 2 - self.lin[s] * x - np.sum(e * self.lam[s] * self.yu[s], axis=-1))

    def d1(self, x, s=slice(None)):
        e = np.exp(-self.g * x[..., None] * self.beta[s])
        return -(self.quad[s] * x - self.lin[s] - np.sum(self.g * self.beta[s] * e * self.lam[s] * self.yu[s], axis=-1))

    def d2(self, x, s=slice(None)):
        e = np.exp(-self.g * x[..., None] * self.beta[s])
        return -(self.quad[s] + np.sum(self.g ** 2 * self.beta[s] ** 2 * e * self.lam[s] * self.yu[s], axis=-1))


def _maximize_scalar(obj, lo, hi, concave):
    """Maximise a batch of 1-d objectives on [lo, hi].

    Concave entries use a bracketed Newton iteration on the derivative;
    the rest use a dense grid followed by golden-section polish.  Among equal
    maxima the point of smallest magnitude is returned.
    """
    B = lo.shape[0]
    arg = np.empty(B)
    idx = np.flatnonzero(concave)
    if idx.size:
        arg[idx] = _newton_bracketed(obj, lo[idx], hi[idx], idx)
    rest = np.flatnonzero(~concave)
    if rest.size:
        arg[rest] = _grid_golden(obj, lo[rest], hi[rest], rest)
    return arg


def _newton_bracketed(obj, lo, hi, sel, max_iter=100):
    x0 = np.clip(0.0, lo, hi)
    g0 = obj.d1(x0, sel)
    g_lo = obj.d1(lo, sel)
    g_hi = obj.d1(hi, sel)
    out = x0.copy()
    left = g0 < 0
    right = g0 > 0
    out[left & (g_lo <= 0)] = lo[left & (g_lo <= 0)]
    out[right & (g_hi >= 0)] = hi[right & (g_hi >= 0)]
    open_ = (left & (g_lo > 0)) | (right & (g_hi < 0))
    if not np.any(open_):
        return out
    j = np.flatnonzero(open_)
    s = sel[j]
    a = np.where(left[j], lo[j], x0[j])
    b = np.where(left[j], x0[j], hi[j])
    x = 0.5 * (a + b)
    active = np.ones(j.size, dtype=bool)
    for _ in range(max_iter):
        k = np.flatnonzero(active)
        if k.size == 0:
            break
        xs, sk = x[k], s[k]
        g = obj.d1(xs, sk)
        h = obj.d2(xs, sk)
        pos = g > 0
        a[k] = np.where(pos, xs, a[k])
        b[k] = np.where(pos, b[k], xs)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xs - g / h
        bad = ~np.isfinite(xn) | (xn < a[k]) | (xn > b[k])
        xn = np.where(bad, 0.5 * (a[k] + b[k]), xn)
        root = g == 0
        xn = np.where(root, xs, xn)
        x[k] = xn
        width = b[k] - a[k]
        done = root | (width <= 4e-16 * np.maximum(1.0, np.abs(xn))) | (np.abs(xn - xs) <= 1e-15 * np.maximum(1.0, np.abs(xn)))
        active[k[done]] = False
    out[j] = x
    return out


def _grid_golden(obj, lo, hi, sel, n_grid=FALLBACK_GRID, chunk=256):
    out = np.empty(lo.shape[0])
    for c0 in range(0, lo.shape[0], chunk):
        c = slice(c0, min(c0 + chunk, lo.shape[0]))
        s = sel[c]
        grid = lo[c, None] + (hi[c] - lo[c])[:, None] * np.linspace(0.0, 1.0, n_grid)[None, :]
        # exact endpoints: near the 1 + pi beta = delta cusp a rounding error in pi is amplified
        grid[:, 0], grid[:, -1] = lo[c], hi[c]
        v = obj.value(grid, (s[:, None]))
        v = np.where(np.isnan(v), -np.inf, v)
        best = v.max(axis=1, keepdims=True)
        ties = v >= best - 1e-14 * np.maximum(1.0, np.abs(best))
        mag = np.where(ties, np.abs(grid), np.inf)
        i = np.argmin(mag, axis=1)
        rows = np.arange(grid.shape[0])
        x_best, v_best = grid[rows, i], v[rows, i]
        a = grid[rows, np.maximum(i - 1, 0)]
        b = grid[rows, np.minimum(i + 1, n_grid - 1)]
        x_pol = _golden_batch(obj, a, b, s)
        v_pol = obj.value(x_pol, s)
        out[c] = np.where(v_pol > v_best, x_pol, x_best)
    return out


def _golden_batch(obj, a, b, sel, tol=1e-13, max_iter=120):
    a, b = a.copy(), b.copy()
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = obj.value(x1, sel), obj.value(x2, sel)
    for _ in range(max_iter):
        if np.all(b - a <= tol):
            break
        move_left = f1 > f2
        b = np.where(move_left, x2, b)
        a = np.where(move_left, a, x1)
        nx1 = np.where(move_left, b - INV_PHI * (b - a), x2)
        nx2 = np.where(move_left, x1, a + INV_PHI * (b - a))
        nf1 = np.where(move_left, obj.value(b - INV_PHI * (b - a), sel), f2)
        nf2 = np.where(move_left, f1, obj.value(a + INV_PHI * (b - a), sel))
        x1, x2, f1, f2 = nx1, nx2, nf1, nf2
    return 0.5 * (a + b)


def _power_interval(beta, lam, k, delta):
    lo = np.full(beta.shape[0], -float(k))
    hi = np.full(beta.shape[0], float(k))
    live = lam > 0
    with np.errstate(divide="ignore", over="ignore"):
        cut = (delta - 1.0) / beta
    lo = np.maximum(lo, np.max(np.where(live & (beta > 0), cut, -np.inf), axis=1))
    hi = np.minimum(hi, np.min(np.where(live & (beta < 0), cut, np.inf), axis=1))
    if np.any(lo > hi):
        raise OptimizerError("empty feasible set")
    return lo, hi


def power_sup(mu, sigma, beta, lam, y, z, u, bound: StrategyBound, gamma: float):
    """Maximum and maximiser of the power generator for one asset.

    Inputs broadcast over a batch; ``beta``, ``lam`` and ``u`` may carry a
    trailing default axis.  Returns ``(value, argmax)`` arrays.
    """
    mu, sigma, beta, lam, y, z, u = _scalar_parts(mu, sigma, beta, lam, y, z, u)
    obj = _PowerScalar(gamma, mu, sigma, beta, lam, y, z, u)
    lo, hi = _power_interval(beta, lam, bound.k, bound.delta)
    concave = (y > 0) & np.all((lam == 0) | (obj.yu >= 0), axis=1)
    arg = _maximize_scalar(obj, lo, hi, concave)
    return obj.value(arg), arg


def exp_inf(mu, sigma, beta, lam, y, z, u, bound: StrategyBound, gamma: float):
    """Minimum and minimiser of the exponential generator for one asset."""
    mu, sigma, beta, lam, y, z, u = _scalar_parts(mu, sigma, beta, lam, y, z, u)
    obj = _ExpScalar(gamma, mu, sigma, beta, lam, y, z, u)
    k = float(bound.k)
    lo = np.full(y.shape[0], -k)
    hi = np.full(y.shape[0], k)
    concave = (y > 0) & np.all((lam == 0) | (obj.yu >= 0), axis=1)
    arg = _maximize_scalar(obj, lo, hi, concave)
    return -obj.value(arg), arg


def power_objective(pi, mu, sigma, beta, lam, y, z, u, gamma):
    """h(pi) for one asset, for use by tests and oracles."""
    mu, sigma, beta, lam, y, z, u = _scalar_parts(mu, sigma, beta, lam, y, z, u)
    return _PowerScalar(gamma, mu, sigma, beta, lam, y, z, u).value(np.asarray(pi, dtype=float))


def exp_objective(phi, mu, sigma, beta, lam, y, z, u, gamma):
    mu, sigma, beta, lam, y, z, u = _scalar_parts(mu, sigma, beta, lam, y, z, u)
    return -_ExpScalar(gamma, mu, sigma, beta, lam, y, z, u).value(np.asarray(phi, dtype=float))


# --------------------------------------------------------------------------
# vector strategies (several assets and defaults)
# --------------------------------------------------------------------------

class _VectorObjective:
    """Concave objective in a strategy vector, batched: x has shape (B, n)."""

    def __init__(self, kind, gamma, mu, sigma, beta, lam, y, z, u):
        self.kind, self.g = kind, gamma
        self.sigma, self.beta, self.lam = sigma, beta, lam
        self.y = y
        self.yu = y[:, None] + u
        self.lin = y[:, None] * mu + np.einsum("bij,bj->bi", sigma, z)
        self.cov = sigma @ np.swapaxes(sigma, -1, -2)

    def value(self, x):
        g = self.g
        quad = np.einsum("bi,bij,bj->b", x, self.cov, x)
        jb = np.einsum("bi,bij->bj", x, self.beta)
        if self.kind == "power":
            jump = np.sum(np.where(self.lam > 0, self.lam * (np.maximum(1.0 + jb, 0.0) ** g - 1.0) * self.yu, 0.0), axis=1)
            return g * np.sum(x * self.lin, axis=1) + 0.5 * g * (g - 1.0) * quad * self.y + jump
        jump = np.sum(-np.expm1(-g * jb) * self.lam * self.yu, axis=1)
        return -(0.5 * g ** 2 * quad * self.y - g * np.sum(x * self.lin, axis=1) - jump)

    def grad(self, x):
        g = self.g
        cx = np.einsum("bij,bj->bi", self.cov, x)
        jb = np.einsum("bi,bij->bj", x, self.beta)
        if self.kind == "power":
            w = np.where(self.lam > 0, self.lam * g * np.maximum(1.0 + jb, JUMP_DELTA) ** (g - 1.0) * self.yu, 0.0)
            return g * self.lin + g * (g - 1.0) * cx * self.y[:, None] + np.einsum("bij,bj->bi", self.beta, w)
        w = g * np.exp(-g * jb) * self.lam * self.yu
        return -(g ** 2 * cx * self.y[:, None] - g * self.lin - np.einsum("bij,bj->bi", self.beta, w))


class _Polytope:
    """Box [-k, k]^n intersected with half-spaces a_j'x >= c_j (per batch entry)."""

    def __init__(self, k, normals=None, offsets=None, active=None):
        self.k = float(k)
        self.normals, self.offsets, self.active = normals, offsets, active

    def project(self, x, max_iter=500, tol=1e-14):
        if self.normals is None or not np.any(self.active):
            return np.clip(x, -self.k, self.k)
        # Dykstra's alternating projections; one correction term per set
        m = self.normals.shape[2]
        sets = m + 1
        corr = np.zeros((sets,) + x.shape)
        cur = x.copy()
        for _ in range(max_iter):
            prev = cur.copy()
            y = cur + corr[0]
            cur = np.clip(y, -self.k, self.k)
            corr[0] = y - cur
            for j in range(m):
                a = self.normals[:, :, j]
                y = cur + corr[j + 1]
                viol = self.offsets[:, j] - np.sum(a * y, axis=1)
                nn = np.maximum(np.sum(a * a, axis=1), 1e-300)
                shift = np.where(self.active[:, j] & (viol > 0), viol / nn, 0.0)
                cur = y + shift[:, None] * a
                corr[j + 1] = y - cur
            if np.max(np.abs(cur - prev)) <= tol:
                break
        return cur

    def feasible(self, x, slack=1e-10):
        ok = np.all(np.abs(x) <= self.k + slack, axis=1)
        if self.normals is not None:
            lhs = np.einsum("bi,bij->bj", x, self.normals)
            ok &= np.all(~self.active | (lhs >= self.offsets - slack), axis=1)
        return ok


def _projected_ascent(obj, poly, x0, max_iter=2000, tol=1e-13):
    x = poly.project(x0)
    f = obj.value(x)
    t = np.full(x.shape[0], 1.0)
    for _ in range(max_iter):
        g = obj.grad(x)
        accepted = np.zeros(x.shape[0], dtype=bool)
        xn, fn = x.copy(), f.copy()
        for _ in range(60):
            todo = ~accepted
            if not np.any(todo):
                break
            cand = poly.project(x + t[:, None] * g)
            fc = obj.value(cand)
            d = cand - x
            ok = fc >= f + np.sum(g * d, axis=1) - np.sum(d * d, axis=1) / (2.0 * t) - 1e-15 * np.abs(f)
            ok |= np.max(np.abs(d), axis=1) <= tol
            take = todo & ok
            xn[take], fn[take] = cand[take], fc[take]
            accepted |= take
            t = np.where(todo & ~ok, 0.5 * t, t)
        step = np.max(np.abs(xn - x), axis=1)
        x, f = xn, fn
        t = np.minimum(t * 2.0, 1e6)
        if np.all(step <= tol):
            break
    return x, f


def _vector_opt(kind, mu, sigma, beta, lam, y, z, u, bound, gamma, n_random_starts, seed, tol):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    B, n = mu.shape
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (B, n, n))
    beta = np.asarray(beta, dtype=float)
    p = beta.shape[-1]
    beta = np.broadcast_to(beta, (B, n, p))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B, p))
    y = np.broadcast_to(np.asarray(y, dtype=float), (B,))
    z = np.broadcast_to(np.asarray(z, dtype=float), (B, n))
    u = np.broadcast_to(np.asarray(u, dtype=float), (B, p))
    for a in (mu, sigma, beta, lam, y, z, u):
        if np.any(np.isnan(a)):
            raise OptimizerError("NaN in optimiser inputs")
    obj = _VectorObjective(kind, gamma, mu, sigma, beta, lam, y, z, u)
    if kind == "power":
        poly = _Polytope(bound.k, beta, np.full((B, p), bound.delta - 1.0), lam > 0)
    else:
        poly = _Polytope(bound.k)

    g = np.random.default_rng(seed)
    corners = g.choice([-1.0, 1.0], size=(n_random_starts, n)) * bound.k
    starts = np.vstack([np.zeros((1, n)), corners])
    S = starts.shape[0]
    xs = np.repeat(starts[None, :, :], B, axis=0).reshape(B * S, n)
    rep = lambda a: np.repeat(a, S, axis=0)
    obj_r = _VectorObjective(kind, gamma, rep(mu), rep(sigma), rep(beta), rep(lam), rep(y), rep(z), rep(u))
    poly_r = _Polytope(bound.k, rep(beta), np.full((B * S, p), bound.delta - 1.0), rep(lam > 0)) if kind == "power" else _Polytope(bound.k)
    x_end, f_end = _projected_ascent(obj_r, poly_r, xs)
    x_end = x_end.reshape(B, S, n)
    f_end = f_end.reshape(B, S)

    best = f_end.max(axis=1)
    close = f_end >= best[:, None] - tol * np.maximum(1.0, np.abs(best[:, None]))
    norms = np.where(close, np.linalg.norm(x_end, axis=2), np.inf)
    pick = np.argmin(norms, axis=1)
    arg = x_end[np.arange(B), pick]
    certified = close.sum(axis=1) >= 2
    if not np.all(certified):
        bad = np.flatnonzero(~certified)
        log.warning("multistart disagreement on %d of %d instances; using lattice fallback", bad.size, B)
        arg[bad] = _lattice_polish(obj, poly, bad, n, bound.k)
    value = obj.value(arg)
    return value, arg, certified


def _lattice_polish(obj, poly, rows, n, k):
    per_axis = {1: 2001, 2: 41, 3: 21}.get(n, 11)
    axes = np.linspace(-k, k, per_axis)
    mesh = np.stack(np.meshgrid(*([axes] * n), indexing="ij"), axis=-1).reshape(-1, n)
    out = np.empty((rows.size, n))
    for r_i, r in enumerate(rows):
        sub = _VectorObjective.__new__(_VectorObjective)
        sub.kind, sub.g = obj.kind, obj.g
        for name in ("sigma", "beta", "lam", "y", "yu", "lin", "cov"):
            arr = getattr(obj, name)
            setattr(sub, name, np.repeat(arr[r:r + 1], mesh.shape[0], axis=0))
        sub_poly = _Polytope(poly.k, None if poly.normals is None else np.repeat(poly.normals[r:r + 1], mesh.shape[0], axis=0),
                             None if poly.offsets is None else np.repeat(poly.offsets[r:r + 1], mesh.shape[0], axis=0),
                             None if poly.active is None else np.repeat(poly.active[r:r + 1], mesh.shape[0], axis=0))
        v = np.where(sub_poly.feasible(mesh), sub.value(mesh), -np.inf)
        start = mesh[int(np.argmax(v))][None, :]
        one = _VectorObjective.__new__(_VectorObjective)
        one.kind, one.g = obj.kind, obj.g
        for name in ("sigma", "beta", "lam", "y", "yu", "lin", "cov"):
            setattr(one, name, getattr(obj, name)[r:r + 1])
        one_poly = _Polytope(poly.k, None if poly.normals is None else poly.normals[r:r + 1],
                             None if poly.offsets is None else poly.offsets[r:r + 1],
                             None if poly.active is None else poly.active[r:r + 1])
        out[r_i] = _projected_ascent(one, one_poly, start)[0][0]
    return out


def power_sup_vector(mu, sigma, beta, lam, y, z, u, bound: StrategyBound, gamma: float,
                     n_random_starts=8, seed=0, tol=1e-6):
    """Vector power generator: returns ``(value, argmax, certified)``.

    Projected-gradient ascent from the origin and ``n_random_starts`` random
    corners of the box; an instance is certified when at least two starts
    reach the best value within ``tol``.  Uncertified instances are re-solved
    from the best point of a coarse lattice.
    """
    if np.shape(mu)[-1] > 4:
        raise OptimizerError("vector optimiser supports at most 4 assets")
    return _vector_opt("power", mu, sigma, beta, lam, y, z, u, bound, gamma, n_random_starts, seed, tol)


def exp_inf_vector(mu, sigma, beta, lam, y, z, u, bound: StrategyBound, gamma: float,
                   n_random_starts=8, seed=0, tol=1e-6):
    """Vector exponential generator: returns ``(value, argmin, certified)``."""
    if np.shape(mu)[-1] > 4:
        raise OptimizerError("vector optimiser supports at most 4 assets")
    value, arg, cert = _vector_opt("exp", mu, sigma, beta, lam, y, z, u, bound, gamma, n_random_starts, seed, tol)
    return -value, arg, cert


def power_objective_vector(pi, mu, sigma, beta, lam, y, z, u, gamma):
    pi = np.atleast_2d(pi)
    B, n = pi.shape
    obj = _VectorObjective("power", gamma, np.broadcast_to(mu, (B, n)), np.broadcast_to(sigma, (B, n, n)),
                           np.broadcast_to(beta, (B, n, np.shape(beta)[-1])), np.broadcast_to(lam, (B, np.shape(beta)[-1])),
                           np.broadcast_to(y, (B,)), np.broadcast_to(z, (B, n)), np.broadcast_to(u, (B, np.shape(beta)[-1])))
    return obj.value(pi)


# --------------------------------------------------------------------------
# generators for the backward solver
# --------------------------------------------------------------------------

def linear_power_driver(pi, gamma):
    """f^pi for a fixed strategy given as a (P, m, n) array."""
    pi_arr = np.asarray(pi, dtype=float)

    def driver(c: StepCoefficients, y, z, u):
        p_i = pi_arr[:, c.step]
        exposure = np.einsum("pi,pij->pj", p_i, c.sigma)
        jb = p_i @ c.beta
        rate = gamma * (np.sum(p_i * c.mu, axis=1) * y + np.sum(exposure * z, axis=1)) \
            + 0.5 * gamma * (gamma - 1.0) * np.sum(exposure ** 2, axis=1) * y \
            + np.sum(c.lam * (np.maximum(1.0 + jb, 0.0) ** gamma - 1.0) * (y[:, None] + u), axis=1)
        return rate, p_i

    return driver


def power_driver(bound: StrategyBound, gamma: float):
    """Generator of the k-bounded power-utility value BSDE."""

    def driver(c: StepCoefficients, y, z, u):
        n = c.mu.shape[1]
        if n == 1:
            value, arg = power_sup(c.mu[:, 0], c.sigma[:, 0, 0], c.beta[0], c.lam, y, z[:, 0], u, bound, gamma)
            return value, arg[:, None]
        value, arg, _ = power_sup_vector(c.mu, c.sigma, c.beta, c.lam, y, z, u, bound, gamma)
        return value, arg

    return driver


def exp_driver(bound: StrategyBound, gamma: float):
    """Generator of the k-bounded exponential-utility value BSDE."""

    def driver(c: StepCoefficients, y, z, u):
        n = c.mu.shape[1]
        if n == 1:
            value, arg = exp_inf(c.mu[:, 0], c.sigma[:, 0, 0], c.beta[0], c.lam, y, z[:, 0], u, bound, gamma)
            return value, arg[:, None]
        value, arg, _ = exp_inf_vector(c.mu, c.sigma, c.beta, c.lam, y, z, u, bound, gamma)
        return value, arg

    return driver


def power_value_bound(k, gamma, mu_sup, sigma_sup, beta_sup, T, n_defaults=1):
    """Uniform bound on J^pi over strategies bounded by k."""
    return (1.0 + k * beta_sup) ** (gamma * n_defaults) \
        * math.exp((gamma * k * mu_sup + gamma ** 2 * (k * sigma_sup) ** 2 / 2.0) * T)


def power_lipschitz_bound(k, gamma, mu_sup, sigma_sup, beta_sup, lam_sup, n_defaults=1):
    """Lipschitz constant of the power generator in (y, z, u), max-norm."""
    jump = max(1.0, (1.0 + k * beta_sup) ** gamma - 1.0)
    ly = gamma * k * mu_sup + 0.5 * gamma * (1.0 - gamma) * (k * sigma_sup) ** 2 + n_defaults * lam_sup * jump
    lz = gamma * k * sigma_sup
    lu = n_defaults * lam_sup * jump
    return ly + lz + lu


def exp_lipschitz_bound(k, gamma, mu_sup, sigma_sup, beta_sup, lam_sup, n_defaults=1):
    jump = math.expm1(gamma * k * beta_sup)
    ly = 0.5 * (gamma * k * sigma_sup) ** 2 + gamma * k * mu_sup + n_defaults * lam_sup * jump
    lz = gamma * k * sigma_sup
    lu = n_defaults * lam_sup * jump
    return ly + lz + lu


# --------------------------------------------------------------------------
# limits in k
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KLimitReport:
    ks: tuple
    values: tuple
    increments: tuple
    limit: float
    monotone: bool
    violations: tuple
    direction: str

    def as_dict(self):
        return {"k": list(self.ks), "values": list(self.values), "increments": list(self.increments),
                "limit": self.limit, "monotone": self.monotone, "violations": list(self.violations),
                "direction": self.direction}


def k_limit(values, direction="nondecreasing", tolerance_se=2.0) -> KLimitReport:
    """Summarise a family of k-bounded values as k grows.

    ``values`` holds ``(k, value)`` or ``(k, value, standard_error)`` tuples.
    Monotonicity in ``direction`` (``"nondecreasing"``, ``"nonincreasing"`` or
    ``"none"``) is checked with slack ``tolerance_se`` combined standard errors.
    The limit estimate is the value at the largest k; no extrapolation.
    """
    rows = sorted((tuple(v) + (0.0,))[:3] for v in values)
    if len(rows) < 3:
        raise ValueError("k_limit needs at least three k values")
    ks = tuple(float(r[0]) for r in rows)
    if len(set(ks)) != len(ks):
        raise ValueError("k values must be distinct")
    vals = tuple(float(r[1]) for r in rows)
    ses = [float(r[2]) for r in rows]
    inc = tuple(b - a for a, b in zip(vals, vals[1:]))
    sign = {"nondecreasing": 1.0, "nonincreasing": -1.0, "none": 0.0}[direction]
    violations = []
    for i, d in enumerate(inc):
        slack = tolerance_se * math.hypot(ses[i], ses[i + 1])
        if sign and sign * d < -slack:
            violations.append((ks[i], ks[i + 1], d))
    if violations:
        log.warning("k-family not %s beyond tolerance: %s", direction, violations)
    return KLimitReport(ks=ks, values=vals, increments=inc, limit=vals[-1], monotone=not violations,
                        violations=tuple(violations), direction=direction)

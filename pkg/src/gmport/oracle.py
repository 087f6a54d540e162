"""Brute-force and Monte Carlo reference computations for the test suite.

Nothing in the solvers imports this module. Monte Carlo estimates carry a
standard error and comparisons against them should use ``3 * std_error``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp
from scipy.stats import binom

from . import model as gm
from .egm import EgmProblem
from .evar import EvarProblem
from .model import GmModel


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    count: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.std_error


def _portfolio_returns(model: GmModel, w: ArrayLike, count: int, seed, shards: int) -> NDArray:
    w = np.asarray(w, dtype=float)
    if shards <= 1:
        return gm.sample(model, count, seed) @ w
    seeds = np.random.SeedSequence(seed).spawn(shards)
    sizes = [count // shards + (i < count % shards) for i in range(shards)]
    return np.concatenate([gm.sample(model, s, np.random.default_rng(ss)) @ w for s, ss in zip(sizes, seeds)])


def mc_expected_utility(model: GmModel, w: ArrayLike, gamma: float, count: int = 10**6,
                        seed=0, shards: int = 1) -> McEstimate:
    """Sample mean of ``1 - exp(-gamma R)`` with its standard error."""
    if count < 10**4:
        raise ValueError("count must be at least 1e4")
    R = _portfolio_returns(model, w, count, seed, shards)
    u = -np.expm1(-gamma * R)
    return McEstimate(float(u.mean()), float(u.std(ddof=1) / math.sqrt(count)), count)


def _bootstrap_order_stat(sorted_x: NDArray, j: int, resamples: int, rng) -> NDArray:
    # The j-th smallest value of a bootstrap resample is sorted_x[J - 1] with
    # P(J <= m) = P(Binomial(N, m/N) >= j); draw J from that law directly.
    N = sorted_x.shape[0]
    spread = int(12 * math.sqrt(N * (j / N) * (1 - j / N)) + 20)
    m = np.arange(max(1, j - spread), min(N, j + spread) + 1)
    cdf = binom.sf(j - 1, N, m / N)
    u = rng.random(resamples)
    J = m[np.minimum(np.searchsorted(cdf, u), m.size - 1)]
    return sorted_x[J - 1]


def mc_quantile(model: GmModel, w: ArrayLike, alpha: float, count: int = 10**6, seed=0,
                resamples: int = 200, shards: int = 1) -> McEstimate:
    """Monte Carlo ``VaR_alpha``: minus the lower empirical alpha-quantile of ``R``.

    The lower quantile ``inf{x : F_N(x) >= alpha}`` is used. The standard error
    is the spread of the same statistic over ``resamples`` bootstrap replicates.
    """
    if count * alpha < 100:
        raise ValueError("count * alpha must be at least 100")
    R = np.sort(_portfolio_returns(model, w, count, seed, shards))
    j = max(1, math.ceil(alpha * count - 1e-9))
    q = R[j - 1]
    boot = _bootstrap_order_stat(R, j, resamples, np.random.default_rng([int(seed or 0), 1]))
    return McEstimate(float(-q), float(np.std(-boot, ddof=1)), count)


def _simplex_grid(n: int, resolution: float, lower: NDArray, upper: NDArray, span, max_points: int):
    # the budget caps each weight by what the other bounds leave over
    with np.errstate(invalid="ignore"):
        cap = 1.0 - (lower.sum() - lower)
        floor = 1.0 - (upper.sum() - upper)
    lo = np.where(np.isfinite(lower), lower, np.where(np.isfinite(floor), np.maximum(floor, span[0]), span[0]))
    hi = np.where(np.isfinite(upper), upper, span[1])
    hi = np.where(np.isfinite(cap), np.minimum(hi, cap), hi)
    axes = [np.arange(lo[i], hi[i] + resolution / 2, resolution) for i in range(n - 1)]
    total = math.prod(a.size for a in axes) if axes else 1
    if total > max_points:
        raise ValueError(f"grid would have {total} points; tighten bounds or coarsen resolution")
    if n == 1:
        return np.ones((1, 1))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    last = 1.0 - mesh.sum(axis=1)
    W = np.column_stack([mesh, last])
    ok = np.all((W >= lower - 1e-12) & (W <= upper + 1e-12), axis=1)
    return W[ok]


def _grid_cgf(model: GmModel, W: NDArray, t: float | NDArray) -> NDArray:
    # K(w, t) for each row of W (and each t, broadcast on a trailing axis)
    nus = W @ model.means.T
    s2 = np.einsum("pi,kij,pj->pk", W, model.covariances, W)
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return logsumexp(np.log(model.weights) + t * nus + 0.5 * t * t * s2, axis=1)
    terms = (np.log(model.weights)[None, None, :] + t[None, :, None] * nus[:, None, :]
             + 0.5 * (t * t)[None, :, None] * s2[:, None, :])
    return logsumexp(terms, axis=2)


def _check_n(n: int, resolution: float):
    if n > 3:
        raise ValueError("grid oracles support at most 3 assets")
    if resolution > 1e-2:
        raise ValueError("resolution must be at most 1e-2")


def grid_search_egm(problem: EgmProblem, resolution: float = 1e-3, span=(-10.0, 10.0),
                    max_points: int = 20_000_000):
    """Exhaustive search of ``K(w, -gamma)`` over the discretized feasible set.

    Unbounded coordinates are searched over ``span``.
    """
    n = problem.model.n
    _check_n(n, resolution)
    lo, hi = problem.feasible.bounds(n)
    W = _simplex_grid(n, resolution, lo, hi, span, max_points)
    best_val, best_w = math.inf, None
    for chunk in np.array_split(W, max(1, W.shape[0] // 200_000)):
        vals = _grid_cgf(problem.model, chunk, -problem.gamma)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_w = float(vals[i]), chunk[i].copy()
    return best_w, best_val


def grid_search_evar(problem: EvarProblem, resolution: float = 1e-3, span=(-10.0, 10.0),
                     delta_range=(1e-3, 1e3), n_delta: int = 1200, max_points: int = 20_000_000):
    """Exhaustive search of ``delta K(w/delta, -1) - delta log alpha`` over a
    weight grid times a log-spaced ``delta`` grid."""
    n = problem.model.n
    _check_n(n, resolution)
    lo, hi = problem.feasible.bounds(n)
    W = _simplex_grid(n, resolution, lo, hi, span, max_points)
    deltas = np.geomspace(delta_range[0], delta_range[1], n_delta)
    log_alpha = math.log(problem.alpha)
    best = (math.inf, None, None)
    rows = max(1, 2_000_000 // (n_delta * problem.model.k))
    for start in range(0, W.shape[0], rows):
        chunk = W[start:start + rows]
        vals = deltas[None, :] * (_grid_cgf(problem.model, chunk, -1.0 / deltas) - log_alpha)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if vals[i, j] < best[0]:
            best = (float(vals[i, j]), chunk[i].copy(), float(deltas[j]))
    return best[1], best[2], best[0]


def finite_difference_gradient(fn: Callable[[NDArray], float], x: ArrayLike, step: float = 1e-6) -> NDArray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return g


def finite_difference_hessian(grad: Callable[[NDArray], NDArray], x: ArrayLike, step: float = 1e-5) -> NDArray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((grad(x + e) - grad(x - e)) / (2 * step))
    H = np.column_stack(cols)
    return 0.5 * (H + H.T)

"""Gaussian mixture return model.

A return vector ``r`` is drawn by first picking component ``i`` with
probability ``pi_i`` and then sampling ``N(mu_i, Sigma_i)``. For a fixed
portfolio ``w`` the scalar return ``R = w @ r`` is again a mixture, with
component means ``nu_i = w @ mu_i`` and variances ``sigma_i^2 = w @ Sigma_i @ w``,
so its CDF, MGF and CGF are available in closed form.

Covariances only need to be positive *semi*definite. The finite-values case
(every ``Sigma_i == 0``) is a scenario distribution and is handled exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, ndtr

WEIGHT_SUM_TOL = 1e-9
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
VARIANCE_CLIP_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed or inconsistent mixture parameters."""


class MgfOverflowWarning(RuntimeWarning):
    pass


class DegenerateComponentWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GmModel:
    """Mixture parameters ``{pi_i, mu_i, Sigma_i}``.

    Build instances through :func:`validate` (or :meth:`from_arrays`), which
    enforces the invariants; the arrays are made read-only afterwards.
    """

    weights: NDArray[np.float64]
    means: NDArray[np.float64]
    covariances: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def is_finite_values(self) -> bool:
        return bool(np.all(self.covariances == 0.0))

    @classmethod
    def from_arrays(cls, weights: ArrayLike, means: ArrayLike, covariances: ArrayLike) -> "GmModel":
        return validate(weights, means, covariances)

    @classmethod
    def finite_values(cls, weights: ArrayLike, values: ArrayLike) -> "GmModel":
        """Scenario distribution: ``r = values[i]`` with probability ``weights[i]``."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        k, n = values.shape
        return validate(weights, values, np.zeros((k, n, n)))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmModel":
        try:
            model = validate(data["weights"], data["means"], data["covariances"])
        except KeyError as exc:
            raise ModelError(f"model file is missing field {exc.args[0]!r}") from None
        for key in ("n", "k"):
            if key in data and int(data[key]) != getattr(model, key):
                raise ModelError(f"declared {key}={data[key]} disagrees with array shapes ({getattr(model, key)})")
        return model


@dataclass(frozen=True)
class ComponentProjection:
    """Per-component mean ``nu_i`` and variance ``sigma_i^2`` of ``R = w @ r``."""

    nus: NDArray[np.float64]
    sigmas2: NDArray[np.float64] = field(repr=False)

    @property
    def sigmas(self) -> NDArray[np.float64]:
        return np.sqrt(self.sigmas2)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def validate(weights: ArrayLike, means: ArrayLike, covariances: ArrayLike) -> GmModel:
    """Check and normalize raw mixture parameters.

    Weights within ``1e-9`` of summing to one are renormalized; covariances
    are symmetrized as ``(S + S.T) / 2`` after checking they are symmetric to
    ``1e-10`` and have no eigenvalue below ``-1e-10``.
    """
    pi = np.atleast_1d(np.asarray(weights, dtype=float))
    mu = np.asarray(means, dtype=float)
    cov = np.asarray(covariances, dtype=float)

    if pi.ndim != 1:
        raise ModelError("weights must be a vector")
    k = pi.shape[0]
    if mu.ndim == 1 and k == 1:
        mu = mu[None, :]
    if mu.ndim != 2 or mu.shape[0] != k:
        raise ModelError(f"means must have shape (k, n) with k={k}, got {mu.shape}")
    n = mu.shape[1]
    if cov.ndim == 2 and k == 1:
        cov = cov[None, :, :]
    if cov.shape != (k, n, n):
        raise ModelError(f"covariances must have shape ({k}, {n}, {n}), got {cov.shape}")
    if n < 1 or k < 1:
        raise ModelError("need at least one asset and one component")
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
        raise ModelError("parameters must be finite")
    if np.any(pi <= 0):
        raise ModelError("component probabilities must be positive")
    total = pi.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ModelError(f"component probabilities sum to {total!r}, not 1")
    pi = pi / total

    asym = np.max(np.abs(cov - np.swapaxes(cov, 1, 2)))
    if asym > SYMMETRY_TOL:
        raise ModelError(f"covariance matrices are not symmetric (max deviation {asym:.3g})")
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    for i in range(k):
        if not np.any(cov[i]):
            continue
        lam_min = np.linalg.eigvalsh(cov[i])[0]
        if lam_min < -PSD_TOL:
            raise ModelError(f"covariance {i} is not positive semidefinite (eigenvalue {lam_min:.3g})")

    return GmModel(_readonly(pi), _readonly(mu), _readonly(cov))


def project(model: GmModel, w: ArrayLike) -> ComponentProjection:
    w = np.asarray(w, dtype=float)
    if w.shape != (model.n,):
        raise ModelError(f"weight vector must have length {model.n}, got shape {w.shape}")
    nus = model.means @ w
    sigmas2 = np.einsum("i,kij,j->k", w, model.covariances, w)
    if np.any(sigmas2 < -VARIANCE_CLIP_TOL * max(1.0, float(w @ w))):
        raise ModelError("negative portfolio variance; covariance is not PSD")
    return ComponentProjection(nus, np.maximum(sigmas2, 0.0))


def cdf(model: GmModel, w: ArrayLike, a: float | ArrayLike) -> float | NDArray[np.float64]:
    """``P(w @ r <= a)``; zero-variance components contribute an exact step."""
    proj = project(model, w)
    a_arr = np.asarray(a, dtype=float)
    diff = a_arr[..., None] - proj.nus
    sig = proj.sigmas
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sig > 0, diff / np.where(sig > 0, sig, 1.0), 0.0)
    terms = np.where(sig > 0, ndtr(z), (diff >= 0).astype(float))
    out = np.clip(terms @ model.weights, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _cgf_terms(model: GmModel, proj: ComponentProjection, t: float) -> NDArray[np.float64]:
    return np.log(model.weights) + t * proj.nus + 0.5 * t * t * proj.sigmas2


def cgf(model: GmModel, w: ArrayLike, t: float) -> float:
    """Cumulant generating function ``K(w, t) = log E exp(t w @ r)``."""
    proj = project(model, w)
    return float(logsumexp(_cgf_terms(model, proj, float(t))))


def mgf(model: GmModel, w: ArrayLike, t: float, *, return_overflow: bool = False):
    """Moment generating function ``M(w, t) = E exp(t w @ r)``.

    Evaluated as ``exp(cgf)``. When that overflows the result is ``inf`` and
    an :class:`MgfOverflowWarning` is emitted; pass ``return_overflow=True``
    to get ``(value, overflowed)`` instead of relying on the warning.
    """
    if t == 0:
        value, overflowed = 1.0, False
    else:
        k_val = cgf(model, w, t)
        overflowed = k_val > math.log(np.finfo(float).max)
        value = math.inf if overflowed else math.exp(k_val)
    if overflowed and not return_overflow:
        warnings.warn(f"MGF overflows at t={t}", MgfOverflowWarning, stacklevel=2)
    return (value, overflowed) if return_overflow else value


def mixture_moments(model: GmModel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Overall mean and covariance of ``r``."""
    mu = model.weights @ model.means
    dev = model.means - mu
    cov = np.einsum("k,kij->ij", model.weights, model.covariances)
    cov = cov + np.einsum("k,ki,kj->ij", model.weights, dev, dev)
    return mu, 0.5 * (cov + cov.T)


def _sqrt_factors(model: GmModel) -> NDArray[np.float64]:
    # symmetric square roots; eigenvalues within the PSD tolerance are clipped
    out = np.zeros_like(model.covariances)
    for i, c in enumerate(model.covariances):
        if np.any(c):
            lam, vec = np.linalg.eigh(c)
            out[i] = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
    return out


def sample(model: GmModel, count: int, seed=None) -> NDArray[np.float64]:
    """Draw ``count`` return vectors. ``seed`` may be an int or a Generator."""
    rng = np.random.default_rng(seed)
    comp = rng.choice(model.k, size=count, p=model.weights)
    roots = _sqrt_factors(model)
    eps = rng.standard_normal((count, model.n))
    out = model.means[comp].copy()
    for i in range(model.k):
        if not np.any(roots[i]):
            continue
        idx = comp == i
        out[idx] += eps[idx] @ roots[i]
    return out


def sample_components(model: GmModel, count: int, seed=None) -> NDArray[np.int64]:
    """Component labels as drawn by :func:`sample` with the same seed."""
    rng = np.random.default_rng(seed)
    return rng.choice(model.k, size=count, p=model.weights)


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------


@dataclass
class EmResult:
    model: GmModel
    log_likelihood: float
    history: list[float]
    iterations: int
    converged: bool
    dropped: int = 0


def _component_loglik(x: NDArray, pi: NDArray, mu: NDArray, cov: NDArray) -> NDArray:
    T, n = x.shape
    out = np.empty((T, pi.shape[0]))
    for i in range(pi.shape[0]):
        chol = np.linalg.cholesky(cov[i])
        sol = np.linalg.solve(chol, (x - mu[i]).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, i] = np.log(pi[i]) - 0.5 * (np.sum(sol * sol, axis=0) + logdet + n * math.log(2 * math.pi))
    return out


def _em_run(x, k, rng, ridge, tol, max_iter):
    T, n = x.shape
    lam = ridge * T
    pi = np.full(k, 1.0 / k)
    mu = x[rng.choice(T, size=k, replace=False)] if T >= k else x[rng.integers(T, size=k)]
    base = np.cov(x, rowvar=False, bias=True).reshape(n, n) + ridge * np.eye(n)
    cov = np.repeat(base[None], k, axis=0)

    def objective(ll_rows, cov):
        # penalized log-likelihood; EM with the ridge M-step is monotone in it
        pen = -0.5 * lam * sum(np.trace(np.linalg.inv(c)) for c in cov)
        return float(np.sum(logsumexp(ll_rows, axis=1))) + pen

    dropped = 0
    ll_rows = _component_loglik(x, pi, mu, cov)
    history = [objective(ll_rows, cov)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resp = np.exp(ll_rows - logsumexp(ll_rows, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        keep = nk / T >= 1e-8
        if not np.all(keep):
            dropped += int(np.sum(~keep))
            resp, nk = resp[:, keep], nk[keep]
            if resp.shape[1] == 0:
                raise ModelError("EM collapsed every component")
        pi = nk / T
        mu = (resp.T @ x) / nk[:, None]
        cov = np.empty((pi.shape[0], n, n))
        for i in range(pi.shape[0]):
            dev = x - mu[i]
            scatter = (resp[:, i, None] * dev).T @ dev
            cov[i] = (scatter + lam * np.eye(n)) / nk[i]
            cov[i] = 0.5 * (cov[i] + cov[i].T)
        ll_rows = _component_loglik(x, pi, mu, cov)
        history.append(objective(ll_rows, cov))
        if abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    loglik = float(np.sum(logsumexp(ll_rows, axis=1)))
    return pi, mu, cov, loglik, history, it, converged, dropped


def fit_em(
    returns: ArrayLike,
    k: int,
    seed=None,
    *,
    restarts: int = 5,
    ridge: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> EmResult:
    """Fit a ``k``-component mixture to a ``T x n`` matrix of returns by EM.

    Each covariance update adds a ridge ``ridge * I`` (default
    ``1e-6 * mean(diag(sample covariance))``); this is the exact M-step of a
    penalized likelihood whose value is recorded in ``history`` and never
    decreases. The best of ``restarts`` random initializations is returned.
    Components whose probability falls below ``1e-8`` are dropped with a
    :class:`DegenerateComponentWarning`.
    """
    x = np.asarray(returns, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ModelError("returns must be a non-empty T x n matrix")
    if not np.all(np.isfinite(x)):
        raise ModelError("returns contain non-finite values")
    if k < 1:
        raise ModelError("k must be at least 1")
    T, n = x.shape
    if T < k:
        raise ModelError(f"need at least k={k} observations, got {T}")
    if ridge is None:
        scale = float(np.mean(np.diag(np.cov(x, rowvar=False, bias=True).reshape(n, n))))
        ridge = 1e-6 * (scale if scale > 0 else 1.0)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts) if k > 1 else 1):
        run = _em_run(x, k, rng, ridge, tol, max_iter)
        if best is None or run[3] > best[3]:
            best = run
    pi, mu, cov, loglik, history, it, converged, dropped = best
    if dropped:
        warnings.warn(f"dropped {dropped} degenerate component(s)", DegenerateComponentWarning, stacklevel=2)
    model = validate(pi / pi.sum(), mu, cov)
    return EmResult(model, loglik, history, it, converged, dropped)


def log_likelihood(model: GmModel, returns: ArrayLike) -> float:
    x = np.atleast_2d(np.asarray(returns, dtype=float))
    cov = np.array(model.covariances)
    return float(np.sum(logsumexp(_component_loglik(x, model.weights, model.means, cov), axis=1)))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def save_model(model: GmModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> GmModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return GmModel.from_dict(data)

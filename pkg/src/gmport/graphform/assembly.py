"""Graph form of the EVaR perspective ``delta K(w / delta, -1)`` for a mixture model.

Each component term ``g_i(w) = log pi_i - mu_i @ w + w @ Sigma_i @ w / 2`` is
built from the quadratic atom, the log-sum-exp atom combines them, and the
perspective rule adds ``delta``. Two ways of building ``g_i`` are available:

``"inverse"``
    ``|A_i w + b_i|^2 - mu_i' Sigma_i^{-1} mu_i / 2 + log pi_i`` with
    ``A_i = Sigma_i^{1/2} / sqrt 2`` and ``b_i = -Sigma_i^{-1/2} mu_i / sqrt 2``,
    after a ridge of ``1e-9 trace(Sigma_i) / n``. Needs an invertible covariance.
``"linear"``
    ``|A_i w|^2`` followed by adding the linear part ``-mu_i @ w + log pi_i``
    on the ``t`` side. Exact for any PSD covariance, including zero.

``"auto"`` uses ``"inverse"`` where the ridged covariance is well conditioned
and ``"linear"`` otherwise. Both give the same row count per component.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

from ..model import GmModel, ModelError
from .calculus import GraphForm, gf_add_linear, gf_affine_post, gf_affine_pre, gf_compose, gf_lse, gf_perspective, gf_quad

RIDGE_SCALE = 1e-9
MAX_CONDITION = 1e8
ROUTES = ("auto", "inverse", "linear")


def ridge(cov: NDArray) -> float:
    n = cov.shape[0]
    return RIDGE_SCALE * float(np.trace(cov)) / n


def _eig(cov: NDArray) -> tuple[NDArray, NDArray]:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return np.clip(vals, 0.0, None), vecs


def component_route(cov: NDArray, route: str = "auto") -> str:
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}, got {route!r}")
    if route == "linear":
        return "linear"
    vals, _ = _eig(cov + ridge(cov) * np.eye(cov.shape[0]))
    ok = vals.min() > 0 and vals.max() <= MAX_CONDITION * vals.min()
    if route == "inverse" and not ok:
        raise ModelError("covariance is singular after the ridge; use route='linear'")
    return "inverse" if ok else "linear"


def component_form(weight: float, mean: NDArray, cov: NDArray, route: str = "auto") -> GraphForm:
    """Graph form of ``log weight - mean @ w + w @ cov @ w / 2``."""
    n = mean.shape[0]
    which = component_route(cov, route)
    quad = gf_quad(n)
    if which == "inverse":
        vals, vecs = _eig(cov + ridge(cov) * np.eye(n))
        A = (vecs * np.sqrt(vals)) @ vecs.T / math.sqrt(2.0)
        inv_root = (vecs / np.sqrt(vals)) @ vecs.T
        b = -(math.sqrt(2.0) / 2.0) * inv_root @ mean
        offset = math.log(weight) - 0.5 * float(mean @ inv_root @ inv_root @ mean)
        return gf_affine_post(gf_affine_pre(quad, A, b), 1.0, offset)
    vals, vecs = _eig(cov)
    A = (vecs * np.sqrt(vals)) @ vecs.T / math.sqrt(2.0)
    return gf_add_linear(gf_affine_pre(quad, A, None), -mean, math.log(weight))


def assemble_cgf_graphform(model: GmModel, route: str = "auto") -> GraphForm:
    """Graph form of ``w -> K(w, -1)``; auxiliaries ``(u_1..u_k, t_1..t_k)``."""
    inners = [component_form(model.weights[i], model.means[i], model.covariances[i], route) for i in range(model.k)]
    return gf_compose(gf_lse(model.k), inners)


def assemble_evar_graphform(model: GmModel, route: str = "auto") -> GraphForm:
    """Graph form over ``(w, delta)`` with ``(w, delta, t)`` a member iff
    ``delta K(w / delta, -1) <= t``.

    Rows: ``3k + 1`` for log-sum-exp, then ``n + 2`` per component. The
    ``-delta log alpha`` term belongs to the objective, not the form.
    """
    return gf_perspective(assemble_cgf_graphform(model, route))


def expected_rows(n: int, k: int) -> int:
    return 3 * k + 1 + k * (n + 2)

"""Expected exponential utility (EGM) portfolio construction.

Maximizing ``E[1 - exp(-gamma R)]`` is the same as minimizing the cumulant
generating function ``K(w, -gamma)``, a log-sum-exp of convex quadratics in
``w``. The per-component arguments

    u_i(w) = log pi_i - gamma mu_i @ w + gamma^2 / 2 w @ Sigma_i @ w

are exposed as ``per_component`` in reports; ``max_i u_i <= K <= max_i u_i + log k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, softmax

from . import model as gm
from .feasible import FeasibleSet, projected_newton
from .model import GmModel


@dataclass(frozen=True)
class EgmProblem:
    model: GmModel
    gamma: float
    feasible: FeasibleSet = field(default_factory=FeasibleSet)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"risk aversion must be positive, got {self.gamma}")
        self.feasible.check(self.model.n)


@dataclass
class SolveOptions:
    tol: float = 1e-8
    ftol: float = 1e-12
    max_iter: int = 1000
    x0: NDArray[np.float64] | None = None


@dataclass
class SolveReport:
    weights: NDArray[np.float64]
    objective: float
    per_component: NDArray[np.float64]
    iterations: int
    converged: bool
    kkt_residual: float
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "weights": np.asarray(self.weights).tolist(),
            "objective": self.objective,
            "per_component": np.asarray(self.per_component).tolist(),
            "diagnostics": {
                "iterations": self.iterations,
                "converged": self.converged,
                "kkt_residual": self.kkt_residual,
                "message": self.message,
                **self.diagnostics,
            },
        }


def component_terms(problem: EgmProblem, w: ArrayLike) -> NDArray[np.float64]:
    m = problem.model
    proj = gm.project(m, w)
    g = problem.gamma
    return np.log(m.weights) - g * proj.nus + 0.5 * g * g * proj.sigmas2


def egm_objective(problem: EgmProblem, w: ArrayLike) -> float:
    """``K(w, -gamma)`` by stabilized log-sum-exp."""
    return float(logsumexp(component_terms(problem, w)))


def _component_gradients(problem: EgmProblem, w: NDArray) -> NDArray:
    m = problem.model
    g = problem.gamma
    return -g * m.means + g * g * np.einsum("kij,j->ki", m.covariances, w)


def egm_gradient(problem: EgmProblem, w: ArrayLike) -> NDArray[np.float64]:
    w = np.asarray(w, dtype=float)
    p = softmax(component_terms(problem, w))
    return p @ _component_gradients(problem, w)


def egm_hessian(problem: EgmProblem, w: ArrayLike) -> NDArray[np.float64]:
    """``sum_i p_i (gamma^2 Sigma_i + g_i g_i') - g g'`` with softmax weights ``p``."""
    w = np.asarray(w, dtype=float)
    p = softmax(component_terms(problem, w))
    gi = _component_gradients(problem, w)
    gbar = p @ gi
    H = problem.gamma**2 * np.einsum("k,kij->ij", p, problem.model.covariances)
    H += np.einsum("k,ki,kj->ij", p, gi, gi) - np.outer(gbar, gbar)
    return 0.5 * (H + H.T)


def egm_limit_objective(problem: EgmProblem, w: ArrayLike, mode: str) -> float:
    """Large- or small-``gamma`` surrogate of ``K(w, -gamma) / gamma``.

    ``"high"``: worst component's negative risk-adjusted return,
    ``max_i(-mu_i @ w + gamma/2 w @ Sigma_i @ w)``.
    ``"low"``: the same quantity for the mixture's overall mean and covariance.
    """
    w = np.asarray(w, dtype=float)
    g = problem.gamma
    if mode == "high":
        proj = gm.project(problem.model, w)
        return float(np.max(-proj.nus + 0.5 * g * proj.sigmas2))
    if mode == "low":
        mu, cov = gm.mixture_moments(problem.model)
        return float(-mu @ w + 0.5 * g * w @ cov @ w)
    raise ValueError(f"mode must be 'high' or 'low', got {mode!r}")


def _start(feasible: FeasibleSet, n: int, x0) -> NDArray:
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    lo, hi = feasible.bounds(n)
    return np.clip(np.full(n, 1.0 / n), lo, hi)


def _newton(fun, grad, hess, feasible: FeasibleSet, n: int, opts: SolveOptions):
    lo, hi = feasible.bounds(n)
    return projected_newton(
        fun, grad, hess, _start(feasible, n, opts.x0), np.ones(n), 1.0, lo, hi,
        tol=opts.tol, ftol=opts.ftol, max_iter=opts.max_iter,
    )


def _vertex_check(fun, feasible: FeasibleSet, n: int, value: float) -> bool:
    # sanity probe only; vertices exist only when the box is bounded
    verts = feasible.vertices(n) if n <= 12 else []
    return all(value <= fun(v) + 1e-9 * max(1.0, abs(value)) for v in verts)


def solve_egm(problem: EgmProblem, options: SolveOptions | None = None) -> SolveReport:
    """Minimize ``K(w, -gamma)`` over the feasible set by projected Newton."""
    opts = options or SolveOptions()
    n = problem.model.n
    # K / gamma^2 has Hessian on the scale of the covariances for every gamma,
    # so the absolute stopping tolerances mean the same thing at low and high gamma
    scale = 1.0 / problem.gamma**2
    res = _newton(
        lambda w: scale * egm_objective(problem, w),
        lambda w: scale * egm_gradient(problem, w),
        lambda w: scale * egm_hessian(problem, w),
        problem.feasible, n, opts,
    )
    obj = egm_objective(problem, res.x)
    terms = component_terms(problem, res.x)
    diag = {
        "gamma": problem.gamma,
        "vertex_check": _vertex_check(lambda w: egm_objective(problem, w), problem.feasible, n, obj),
        "softmax_lower": float(np.max(terms)),
        "softmax_upper": float(np.max(terms) + math.log(problem.model.k)),
        "expected_utility": float(-math.expm1(obj)) if obj < 700 else -math.inf,
    }
    return SolveReport(res.x, obj, terms, res.iterations, res.converged, res.kkt_residual, res.message, diag)


def markowitz_objective(mu, Sigma, gamma, w) -> float:
    """Negative risk-adjusted return ``-mu @ w + gamma/2 w @ Sigma @ w``."""
    w = np.asarray(w, dtype=float)
    return float(-np.asarray(mu) @ w + 0.5 * gamma * w @ np.asarray(Sigma) @ w)


def markowitz_solve(
    mu: ArrayLike,
    Sigma: ArrayLike,
    gamma: float,
    feasible: FeasibleSet | None = None,
    options: SolveOptions | None = None,
) -> SolveReport:
    """Maximize ``mu @ w - gamma/2 w @ Sigma @ w`` over the feasible set.

    ``objective`` in the report is the minimized negative risk-adjusted return.
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if not gamma > 0:
        raise ValueError(f"risk aversion must be positive, got {gamma}")
    feasible = feasible or FeasibleSet()
    n = mu.shape[0]
    feasible.check(n)
    # solved as (-mu @ w) / gamma + w @ Sigma @ w / 2, same argmin, gamma-free conditioning
    H = 0.5 * (Sigma + Sigma.T)
    opts = options or SolveOptions()
    res = _newton(
        lambda w: markowitz_objective(mu, Sigma, gamma, w) / gamma,
        lambda w: -mu / gamma + H @ w,
        lambda w: H,
        feasible, n, opts,
    )
    obj = markowitz_objective(mu, Sigma, gamma, res.x)
    diag = {
        "gamma": gamma,
        "vertex_check": _vertex_check(lambda w: markowitz_objective(mu, Sigma, gamma, w), feasible, n, obj),
    }
    return SolveReport(res.x, obj, np.array([obj]), res.iterations, res.converged, res.kkt_residual, res.message, diag)


def markowitz_budget_closed_form(mu: ArrayLike, Sigma: ArrayLike, gamma: float) -> NDArray[np.float64]:
    """KKT solution of the budget-only Markowitz problem."""
    mu = np.asarray(mu, dtype=float)
    n = mu.shape[0]
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = gamma * np.asarray(Sigma, dtype=float)
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    return np.linalg.solve(K, np.concatenate([mu, [1.0]]))[:n]

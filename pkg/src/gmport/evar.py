"""Minimum entropic value at risk portfolios.

With ``delta = 1 / lambda`` the EVaR problem becomes

    minimize  phi(w, delta) = delta * K(w / delta, -1) - delta * log(alpha)

which is the perspective of ``K(., -1)`` plus a linear term, hence jointly
convex. Three solution routes live here: alternating between an EGM solve in
``w`` and a scalar search in ``delta``; the max-of-quadratic-over-linear
surrogate obtained from the soft-max lower bound (optionally polished by a
joint Newton method on ``phi``); and, for a single Gaussian, the reduced
mean/standard-deviation problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, softmax

from . import model as gm
from .egm import EgmProblem, SolveOptions, egm_gradient, egm_hessian, solve_egm
from .feasible import FeasibleSet, projected_newton
from .model import GmModel

DELTA_MIN = 1e-10


@dataclass(frozen=True)
class EvarProblem:
    model: GmModel
    alpha: float
    feasible: FeasibleSet = field(default_factory=FeasibleSet)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        self.feasible.check(self.model.n)


@dataclass
class EvarOptions:
    tol: float = 1e-8
    max_iter: int = 1000
    max_outer: int = 100
    outer_tol: float = 1e-14
    delta_min: float = DELTA_MIN
    temperature: float = 1e-4
    polish: bool = False
    bound: str = "auto"
    x0: NDArray[np.float64] | None = None


@dataclass
class EvarReport:
    weights: NDArray[np.float64]
    delta: float
    evar_value: float
    method: str
    alpha: float
    converged: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def lam(self) -> float:
        """Implied risk aversion ``1 / delta``."""
        return math.inf if self.delta <= 0 else 1.0 / self.delta

    def to_dict(self) -> dict:
        return {
            "weights": np.asarray(self.weights).tolist(),
            "objective": self.evar_value,
            "evar_value": self.evar_value,
            "delta": self.delta,
            "lambda": self.lam,
            "alpha": self.alpha,
            "method": self.method,
            "diagnostics": {"converged": self.converged, "iterations": self.iterations, **self.diagnostics},
        }


def _log_terms(problem: EvarProblem, w: NDArray, delta: float) -> NDArray:
    proj = gm.project(problem.model, w)
    return np.log(problem.model.weights) - proj.nus / delta + proj.sigmas2 / (2.0 * delta * delta)


def evar_objective(problem: EvarProblem, w: ArrayLike, delta: float) -> float:
    """``delta K(w/delta, -1) - delta log(alpha)``; ``+inf`` for ``delta <= 0``."""
    if not delta > 0:
        return math.inf
    w = np.asarray(w, dtype=float)
    return float(delta * (logsumexp(_log_terms(problem, w, delta)) - math.log(problem.alpha)))


def _evar_grad_hess(problem: EvarProblem, w: NDArray, delta: float):
    # perspective calculus with y = w / delta and K1 = K(., -1)
    unit = EgmProblem(problem.model, 1.0, FeasibleSet())
    y = w / delta
    k1 = float(logsumexp(_log_terms(problem, w, delta)))
    g1 = egm_gradient(unit, y)
    H1 = egm_hessian(unit, y)
    n = w.shape[0]
    grad = np.empty(n + 1)
    grad[:n] = g1
    grad[n] = k1 - y @ g1 - math.log(problem.alpha)
    H = np.empty((n + 1, n + 1))
    H[:n, :n] = H1 / delta
    Hy = H1 @ y
    H[:n, n] = H[n, :n] = -Hy / delta
    H[n, n] = y @ Hy / delta
    return grad, H


def _gaussian_delta(sigma2: float, alpha: float) -> float:
    return math.sqrt(max(sigma2, 0.0) / (-2.0 * math.log(alpha)))


def initial_delta(problem: EvarProblem, w: ArrayLike) -> float:
    """Closed-form Gaussian ``delta`` from the mixture's overall covariance."""
    w = np.asarray(w, dtype=float)
    _, cov = gm.mixture_moments(problem.model)
    d0 = _gaussian_delta(float(w @ cov @ w), problem.alpha)
    return d0 if d0 > 0 else 1.0


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section search for the minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f(d)
    return c if fc <= fd else d


def optimal_delta(problem: EvarProblem, w: ArrayLike, delta0: float | None = None, delta_min: float = DELTA_MIN):
    """Golden-section minimization of ``phi(w, .)`` on an auto-expanded bracket.

    Returns ``(delta, value, at_floor)``; ``at_floor`` flags that the infimum
    is approached as ``delta -> 0`` and was clipped at ``delta_min``.
    """
    w = np.asarray(w, dtype=float)
    d0 = delta0 if delta0 and delta0 > delta_min else initial_delta(problem, w)
    d0 = max(d0, delta_min)

    def f(log_d):
        return evar_objective(problem, w, math.exp(log_d))

    # bracket the minimum in log(delta), where the objective stays unimodal
    floor = math.log(delta_min)
    mid = math.log(d0)
    f_mid = f(mid)
    step = 0.5
    direction = 1.0 if f(mid + step) < f_mid else -1.0
    if direction < 0 and not f(mid - step) < f_mid:
        lo, hi = mid - step, mid + step
    else:
        prev = mid
        while True:
            nxt = mid + direction * step
            if nxt <= floor:
                if f(floor) <= f_mid:
                    return delta_min, f(floor), True
                nxt = floor
            f_nxt = f(nxt)
            if f_nxt >= f_mid:
                lo, hi = sorted((prev, nxt))
                break
            prev, mid, f_mid = mid, nxt, f_nxt
            step *= 1.6
            if step > 1e3:
                raise RuntimeError("could not bracket the optimal delta")
    d = math.exp(_golden(f, lo, hi))
    return d, evar_objective(problem, w, d), d <= delta_min * (1 + 1e-9)


def evar_value(problem: EvarProblem, w: ArrayLike) -> float:
    """``EVaR_alpha(w @ r)`` for a fixed portfolio."""
    return optimal_delta(problem, w)[1]


def _solve_joint(problem: EvarProblem, fun, grad_hess, x0: NDArray, opts: EvarOptions):
    n = problem.model.n
    lo, hi = problem.feasible.bounds(n)
    lo = np.append(lo, opts.delta_min)
    hi = np.append(hi, np.inf)
    a = np.append(np.ones(n), 0.0)
    cache = {}

    def gh(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = grad_hess(x[:n], x[n])
        return cache[key]

    return projected_newton(
        lambda x: fun(x[:n], x[n]), lambda x: gh(x)[0], lambda x: gh(x)[1],
        x0, a, 1.0, lo, hi, tol=opts.tol, max_iter=opts.max_iter,
    )


def _default_start(problem: EvarProblem, opts: EvarOptions) -> NDArray:
    n = problem.model.n
    if opts.x0 is not None:
        w0 = np.asarray(opts.x0, dtype=float)
    else:
        lo, hi = problem.feasible.bounds(n)
        w0 = np.clip(np.full(n, 1.0 / n), lo, hi)
    return np.append(w0, initial_delta(problem, w0))


SURROGATE_BOUNDS = ("auto", "lower", "upper")


def surrogate_bound(problem: EvarProblem, bound: str = "auto") -> str:
    """Which side of the soft-max sandwich the surrogate uses.

    The lower bound drops the ``delta log k`` term. If every ``pi_i < alpha``
    all its ``delta`` coefficients are negative and, with degenerate
    covariances, it is unbounded below as ``delta`` grows; ``"auto"`` then
    switches to the upper bound, which sits above the exact objective.
    """
    if bound not in SURROGATE_BOUNDS:
        raise ValueError(f"bound must be one of {SURROGATE_BOUNDS}, got {bound!r}")
    if bound == "auto":
        return "lower" if problem.model.weights.max() >= problem.alpha else "upper"
    return bound


def _surrogate_coefficients(problem: EvarProblem, bound: str) -> NDArray[np.float64]:
    c = np.log(problem.model.weights / problem.alpha)
    return c + math.log(problem.model.k) if surrogate_bound(problem, bound) == "upper" else c


def surrogate_terms(problem: EvarProblem, w: ArrayLike, delta: float, bound: str = "lower") -> NDArray[np.float64]:
    """``delta log(pi_i/alpha) - mu_i @ w + w @ Sigma_i @ w / (2 delta)`` per component,
    plus ``delta log k`` for the upper bound."""
    proj = gm.project(problem.model, w)
    c = _surrogate_coefficients(problem, bound)
    return delta * c - proj.nus + proj.sigmas2 / (2.0 * delta)


def solve_evar_approx(problem: EvarProblem, options: EvarOptions | None = None) -> EvarReport:
    """Minimize the max-of-surrogates bound, smoothed with temperature ``tau``.

    The smoothed objective ``tau * logsumexp(h / tau)`` overestimates the max
    by at most ``tau log k``. With ``options.polish`` the result seeds a joint
    Newton solve of the exact objective.
    """
    opts = options or EvarOptions()
    m = problem.model
    tau = opts.temperature
    bound = surrogate_bound(problem, opts.bound)
    c = _surrogate_coefficients(problem, bound)
    n = m.n

    def parts(w, d):
        proj = gm.project(m, w)
        h = d * c - proj.nus + proj.sigmas2 / (2.0 * d)
        return proj, h

    def fun(w, d):
        if not d > 0:
            return math.inf
        _, h = parts(w, d)
        return float(tau * logsumexp(h / tau)) if m.k > 1 else float(h[0])

    def grad_hess(w, d):
        proj, h = parts(w, d)
        p = softmax(h / tau) if m.k > 1 else np.ones(1)
        Sw = np.einsum("kij,j->ki", m.covariances, w)
        gi = np.empty((m.k, n + 1))
        gi[:, :n] = -m.means + Sw / d
        gi[:, n] = c - proj.sigmas2 / (2.0 * d * d)
        gbar = p @ gi
        H = np.zeros((n + 1, n + 1))
        for i in range(m.k):
            Hi = np.empty((n + 1, n + 1))
            Hi[:n, :n] = m.covariances[i] / d
            Hi[:n, n] = Hi[n, :n] = -Sw[i] / (d * d)
            Hi[n, n] = proj.sigmas2[i] / d**3
            H += p[i] * Hi
        if m.k > 1:
            H += (np.einsum("k,ki,kj->ij", p, gi, gi) - np.outer(gbar, gbar)) / tau
        return gbar, 0.5 * (H + H.T)

    res = _solve_joint(problem, fun, grad_hess, _default_start(problem, opts), opts)
    w, d = res.x[:n], float(res.x[n])
    diag = {
        "surrogate_value": float(np.max(surrogate_terms(problem, w, d, bound))),
        "surrogate_bound": bound,
        "temperature": tau,
        "kkt_residual": res.kkt_residual,
        "message": res.message,
        "polished": False,
    }
    converged, iterations = res.converged, res.iterations
    if opts.polish:
        pol = _solve_joint(problem, lambda w, d: evar_objective(problem, w, d),
                           lambda w, d: _evar_grad_hess(problem, w, d), res.x, opts)
        w, d = pol.x[:n], float(pol.x[n])
        diag.update(polished=True, kkt_residual=pol.kkt_residual, message=pol.message)
        converged, iterations = pol.converged, iterations + pol.iterations
    value = evar_objective(problem, w, d)
    diag["delta_at_floor"] = d <= opts.delta_min * (1 + 1e-9)
    return EvarReport(w, d, value, "approx", problem.alpha, converged, iterations, diag)


def solve_evar_alternating(problem: EvarProblem, options: EvarOptions | None = None) -> EvarReport:
    """Alternate an EGM solve at ``gamma = 1/delta`` with a scalar ``delta`` search.

    Starts from the surrogate solution; stops once an outer pass lowers the
    objective by less than ``outer_tol``.
    """
    opts = options or EvarOptions()
    start = solve_evar_approx(problem, EvarOptions(
        tol=opts.tol, max_iter=opts.max_iter, delta_min=opts.delta_min,
        temperature=opts.temperature, bound=opts.bound, x0=opts.x0,
    ))
    w, d = start.weights, start.delta
    d, obj, at_floor = optimal_delta(problem, w, d, opts.delta_min)
    history = [obj]
    converged = False
    egm_ok = True
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        rep = solve_egm(EgmProblem(problem.model, 1.0 / d, problem.feasible),
                        SolveOptions(tol=opts.tol, max_iter=opts.max_iter, x0=w))
        egm_ok = rep.converged
        w_new = rep.weights
        d_new, obj_new, at_floor = optimal_delta(problem, w_new, d, opts.delta_min)
        if obj_new <= obj:
            w, d = w_new, d_new
        decrease = obj - obj_new
        obj = min(obj, obj_new)
        history.append(obj)
        if decrease < opts.outer_tol:
            converged = egm_ok
            break
    diag = {"history": history, "delta_at_floor": at_floor, "egm_converged": egm_ok}
    return EvarReport(w, d, evar_objective(problem, w, d), "alternating", problem.alpha,
                      converged, outer, diag)


def evar_gaussian_reduced(
    mu: ArrayLike,
    Sigma: ArrayLike,
    alpha: float,
    feasible: FeasibleSet | None = None,
    options: EvarOptions | None = None,
) -> EvarReport:
    """Single-Gaussian EVaR: maximize ``mu @ w - sqrt(-2 log alpha) * sd(w)``.

    The implied ``delta`` comes from the closed form ``sd / sqrt(-2 log alpha)``.
    A riskless optimum leaves ``delta`` undefined; it is reported as 0 with
    ``diagnostics["degenerate"] = True``.
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = 0.5 * (np.asarray(Sigma, dtype=float) + np.asarray(Sigma, dtype=float).T)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    feasible = feasible or FeasibleSet()
    n = mu.shape[0]
    feasible.check(n)
    opts = options or EvarOptions()
    kappa = math.sqrt(-2.0 * math.log(alpha))

    def fun(w):
        return float(-mu @ w + kappa * math.sqrt(max(w @ Sigma @ w, 0.0)))

    def grad(w):
        Sw = Sigma @ w
        sd = math.sqrt(max(w @ Sw, 0.0))
        return -mu + (kappa * Sw / sd if sd > 0 else 0.0)

    def hess(w):
        Sw = Sigma @ w
        sd = max(math.sqrt(max(w @ Sw, 0.0)), 1e-12)
        return kappa * (Sigma / sd - np.outer(Sw, Sw) / sd**3)

    lo, hi = feasible.bounds(n)
    w0 = np.asarray(opts.x0, dtype=float) if opts.x0 is not None else np.clip(np.full(n, 1.0 / n), lo, hi)
    res = projected_newton(fun, grad, hess, w0, np.ones(n), 1.0, lo, hi, tol=opts.tol, max_iter=opts.max_iter)
    w = res.x
    sd = math.sqrt(max(w @ Sigma @ w, 0.0))
    degenerate = sd <= 1e-12 * max(1.0, float(np.abs(w).max()))
    delta = 0.0 if degenerate else sd / kappa
    value = fun(w)
    diag = {
        "degenerate": degenerate,
        "risk_coefficient": kappa,
        "implied_gamma": math.inf if degenerate else kappa / sd,
        "kkt_residual": res.kkt_residual,
        "message": res.message,
    }
    return EvarReport(w, delta, value, "gaussian", alpha, res.converged, res.iterations, diag)

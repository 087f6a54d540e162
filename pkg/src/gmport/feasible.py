"""Budget-plus-box feasible sets and the projected Newton solver built on them.

Every smooth problem in the package has the form

    minimize f(x)  subject to  a @ x = b,  lower <= x <= upper

with ``a`` a 0/1 mask (ones on the portfolio weights). Euclidean projection
onto that set is a one-dimensional root find on the budget multiplier, and
each Newton subproblem is a small box QP solved exactly by an active-set
method, so iterates stay feasible throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

FEAS_TOL = 1e-8


class InfeasibleError(ValueError):
    """The budget and box constraints admit no point."""


@dataclass(frozen=True)
class FeasibleSet:
    """``{w : sum(w) == 1, lower <= w <= upper}``; ``None`` means unbounded."""

    lower: NDArray[np.float64] | None = None
    upper: NDArray[np.float64] | None = None

    def __post_init__(self):
        for name in ("lower", "upper"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @classmethod
    def long_only(cls, n: int) -> "FeasibleSet":
        return cls(np.zeros(n), None)

    def bounds(self, n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        lo = np.full(n, -np.inf) if self.lower is None else np.broadcast_to(self.lower, (n,)).astype(float)
        hi = np.full(n, np.inf) if self.upper is None else np.broadcast_to(self.upper, (n,)).astype(float)
        return lo, hi

    def check(self, n: int) -> None:
        for name in ("lower", "upper"):
            val = getattr(self, name)
            if val is not None and val.shape not in ((), (1,), (n,)):
                raise ValueError(f"{name} bounds have shape {val.shape}, expected ({n},)")
        lo, hi = self.bounds(n)
        if np.any(lo > hi):
            raise InfeasibleError("lower bound exceeds upper bound")
        if lo.sum() > 1.0 + FEAS_TOL or hi.sum() < 1.0 - FEAS_TOL:
            raise InfeasibleError(f"budget infeasible: sum(lower)={lo.sum():.6g}, sum(upper)={hi.sum():.6g}")

    def contains(self, w: ArrayLike, tol: float = FEAS_TOL) -> bool:
        w = np.asarray(w, dtype=float)
        lo, hi = self.bounds(w.shape[0])
        return bool(abs(w.sum() - 1.0) <= tol and np.all(w >= lo - tol) and np.all(w <= hi + tol))

    def vertices(self, n: int) -> list[NDArray[np.float64]]:
        """Basic feasible points: all but one weight at a finite bound."""
        lo, hi = self.bounds(n)
        out = []
        for free in range(n):
            others = [j for j in range(n) if j != free]
            for mask in range(1 << len(others)):
                w = np.empty(n)
                ok = True
                for bit, j in enumerate(others):
                    val = hi[j] if mask >> bit & 1 else lo[j]
                    if not np.isfinite(val):
                        ok = False
                        break
                    w[j] = val
                if not ok:
                    continue
                w[free] = 1.0 - w[others].sum()
                if lo[free] - FEAS_TOL <= w[free] <= hi[free] + FEAS_TOL:
                    out.append(w)
        return out


def project(v: NDArray, a: NDArray, b: float, lower: NDArray, upper: NDArray) -> NDArray:
    """Euclidean projection onto ``{a @ x == b, lower <= x <= upper}``."""
    v = np.asarray(v, dtype=float)
    on = a != 0

    def x_of(lam):
        return np.clip(v - lam * a, lower, upper)

    def excess(lam):
        return float(a @ x_of(lam)) - b

    if not np.any(on):
        return np.clip(v, lower, upper)
    unbounded = np.isinf(lower[on]) & np.isinf(upper[on])
    if np.all(unbounded):
        return np.clip(v - (a @ v - b) / (a @ a) * a, lower, upper)
    step = max(1.0, float(np.max(np.abs(v[on]))))
    lo_lam, hi_lam = -step, step
    while excess(lo_lam) < 0:
        lo_lam *= 2.0
    while excess(hi_lam) > 0:
        hi_lam *= 2.0
    if excess(lo_lam) == 0:
        return x_of(lo_lam)
    if excess(hi_lam) == 0:
        return x_of(hi_lam)
    lam = brentq(excess, lo_lam, hi_lam, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    x = x_of(lam)
    # distribute the rounding residue over coordinates strictly inside their box
    free = on & (x > lower) & (x < upper)
    if np.any(free):
        x[free] -= (a @ x - b) / a[free].sum()
    return x


def _kkt_solve(H, g, a):
    """Solve ``[H a; a' 0] [p; nu] = [-g; 0]``; ``a`` may be all zero."""
    m = H.shape[0]
    if not np.any(a):
        return np.linalg.lstsq(H, -g, rcond=None)[0], None
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = H
    K[:m, m] = a
    K[m, :m] = a
    rhs = np.concatenate([-g, [0.0]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:m], sol[m]


def solve_box_qp(
    H: NDArray,
    c: NDArray,
    a: NDArray,
    b: float,
    lower: NDArray,
    upper: NDArray,
    x0: NDArray,
    max_iter: int | None = None,
) -> NDArray:
    """Primal active-set method for ``min 1/2 x'Hx + c'x`` over budget and box.

    ``x0`` must be feasible. ``H`` must be PSD; a tiny diagonal shift keeps the
    reduced KKT systems nonsingular.
    """
    m = H.shape[0]
    shift = 1e-12 * (1.0 + float(np.max(np.abs(np.diag(H))))) if m else 0.0
    Hs = H + shift * np.eye(m)
    x = x0.astype(float).copy()
    tol_b = 1e-12
    at_lo = x <= lower + tol_b
    at_hi = x >= upper - tol_b
    x[at_lo] = lower[at_lo]
    x[at_hi] = upper[at_hi]
    fixed = at_lo | at_hi
    max_iter = max_iter or 10 * m + 50
    for _ in range(max_iter):
        grad = Hs @ x + c
        free = ~fixed
        idx = np.flatnonzero(free)
        if idx.size:
            p_f, nu = _kkt_solve(Hs[np.ix_(idx, idx)], grad[idx], a[idx])
        else:
            p_f, nu = np.zeros(0), None
        scale = 1.0 + float(np.max(np.abs(x)))
        if idx.size and np.max(np.abs(p_f)) > 1e-13 * scale:
            # ratio test against the bounds of the free variables
            alpha = 1.0
            block = -1
            for j, pj in zip(idx, p_f):
                if pj < 0 and np.isfinite(lower[j]):
                    r = (lower[j] - x[j]) / pj
                elif pj > 0 and np.isfinite(upper[j]):
                    r = (upper[j] - x[j]) / pj
                else:
                    continue
                if r < alpha:
                    alpha, block = max(r, 0.0), j
            x[idx] += alpha * p_f
            if block >= 0:
                x[block] = lower[block] if p_f[list(idx).index(block)] < 0 else upper[block]
                fixed[block] = True
            continue
        # stationary on the working set: check the bound multipliers
        fixed_idx = np.flatnonzero(fixed)
        if fixed_idx.size == 0:
            break
        g_fix = grad[fixed_idx]
        is_lo = x[fixed_idx] <= lower[fixed_idx]
        if nu is None or not (idx.size and np.any(a[idx])):
            # budget multiplier not pinned by free variables: pick it from the
            # interval that makes every bound multiplier nonnegative, if any
            has_a = a[fixed_idx] != 0
            lo_nu = np.max(-g_fix[is_lo & has_a], initial=-np.inf)
            hi_nu = np.min(-g_fix[~is_lo & has_a], initial=np.inf)
            nu = 0.0 if lo_nu <= 0.0 <= hi_nu else (lo_nu if np.isfinite(lo_nu) else hi_nu)
            if not np.isfinite(nu):
                nu = 0.0
        mult = g_fix + nu * a[fixed_idx]
        # lower-bound multipliers must be >= 0, upper-bound ones <= 0
        viol = np.where(is_lo, -mult, mult)
        worst = int(np.argmax(viol))
        if viol[worst] <= 1e-12 * (1.0 + float(np.max(np.abs(grad)))):
            break
        fixed[fixed_idx[worst]] = False
    return x


@dataclass
class NewtonResult:
    x: NDArray[np.float64]
    fun: float
    iterations: int
    converged: bool
    kkt_residual: float
    message: str
    history: list[float] = field(default_factory=list)


def projected_newton(
    fun: Callable[[NDArray], float],
    grad: Callable[[NDArray], NDArray],
    hess: Callable[[NDArray], NDArray],
    x0: NDArray,
    a: NDArray,
    b: float,
    lower: NDArray,
    upper: NDArray,
    *,
    tol: float = 1e-8,
    ftol: float = 1e-12,
    max_iter: int = 1000,
    armijo: float = 1e-4,
    shrink: float = 0.5,
    divergence: float = 1e10,
) -> NewtonResult:
    """Feasible-point Newton method with backtracking along the QP step.

    Stops when the projected-gradient norm ``|x - P(x - grad)|`` drops below
    ``tol`` or an accepted step lowers ``f`` by less than
    ``ftol * max(1, |f|)``. Hitting ``max_iter`` or ``|x| > divergence``
    returns ``converged=False``.
    """
    x = project(x0, a, b, lower, upper)
    f = fun(x)
    history = [f]
    g = grad(x)
    res = float(np.linalg.norm(x - project(x - g, a, b, lower, upper)))
    it = 0
    message = "max_iter reached"
    converged = False
    while it < max_iter:
        if res < tol:
            converged, message = True, "projected gradient below tol"
            break
        it += 1
        H = hess(x)
        y = solve_box_qp(H, g - H @ x, a, b, lower, upper, x)
        d = y - x
        slope = float(g @ d)
        curv = float(d @ H @ d)
        if not slope < 0 or not np.all(np.isfinite(d)) or curv < -1e-12 * float(d @ d):
            d = project(x - g, a, b, lower, upper) - x
            slope = float(g @ d)
        if not slope < 0:
            converged, message = True, "no descent direction"
            break
        s = 1.0
        while True:
            x_new = x + s * d
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + armijo * s * slope:
                break
            s *= shrink
            if s < 1e-20:
                break
        if s < 1e-20:
            # only rounding noise left if the first-order residual is already small
            converged, message = res < 1e-6, "line search stalled"
            break
        x_new = project(x_new, a, b, lower, upper)
        f_new = fun(x_new)
        decrease = f - f_new
        x, f = x_new, f_new
        history.append(f)
        g = grad(x)
        res = float(np.linalg.norm(x - project(x - g, a, b, lower, upper)))
        if np.max(np.abs(x)) > divergence:
            message = "iterates diverging; problem looks unbounded"
            break
        if 0 <= decrease < ftol * max(1.0, abs(f)):
            converged, message = True, "objective decrease below ftol"
            break
    else:
        if res < tol:
            converged, message = True, "projected gradient below tol"
    return NewtonResult(x, f, it, converged, res, message, history)

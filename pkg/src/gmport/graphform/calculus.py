"""Graph-form representations of convex functions and the rules that combine them.

A graph form describes the epigraph of ``f`` as

    f(x) <= t   iff   there is z with  F x + G z + t d + e  in  C

for a product ``C`` of standard cones. Every form built here also carries the
function it represents (``func``) and, where one is known in closed form, a
map ``witness(x, t) -> z`` producing a certificate for members. Both propagate
through the rules, so any composed form can be checked against direct
evaluation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize
from scipy.special import logsumexp

from .cones import NONNEGATIVE, NONPOSITIVE, SECOND_ORDER, Cone, distance, exp_cones, project_product

Func = Callable[[NDArray], float]
Witness = Callable[[NDArray, float], NDArray]


@dataclass(frozen=True)
class GraphForm:
    F: NDArray[np.float64]
    G: NDArray[np.float64]
    d: NDArray[np.float64]
    e: NDArray[np.float64]
    cones: tuple[Cone, ...]
    labels: tuple[str, ...] = ()
    func: Func | None = field(default=None, compare=False, repr=False)
    witness: Witness | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        F = np.atleast_2d(np.array(self.F, dtype=float))
        p = F.shape[0]
        G = np.array(self.G, dtype=float).reshape(p, -1) if np.size(self.G) else np.zeros((p, 0))
        d = np.array(self.d, dtype=float).reshape(-1)
        e = np.array(self.e, dtype=float).reshape(-1)
        cones = tuple(self.cones)
        if G.shape[0] != p or d.shape != (p,) or e.shape != (p,):
            raise ValueError(f"row counts differ: F {F.shape}, G {G.shape}, d {d.shape}, e {e.shape}")
        if sum(c.dim for c in cones) != p:
            raise ValueError(f"cone dimensions sum to {sum(c.dim for c in cones)}, expected {p}")
        labels = tuple(self.labels) or tuple(f"row{i}" for i in range(p))
        if len(labels) != p:
            raise ValueError("one label per row is required")
        for arr in (F, G, d, e):
            arr.setflags(write=False)
        for name, val in (("F", F), ("G", G), ("d", d), ("e", e), ("cones", cones), ("labels", labels)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.F.shape[0]

    def rows(self, x: ArrayLike, z: ArrayLike, t: float) -> NDArray[np.float64]:
        """``F x + G z + t d + e``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        z = np.asarray(z, dtype=float).reshape(-1)
        return self.F @ x + self.G @ z + t * self.d + self.e

    def evaluate(self, x: ArrayLike) -> float:
        if self.func is None:
            raise ValueError("this graph form carries no function")
        return float(self.func(np.asarray(x, dtype=float)))


def _relabel(labels, prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}.{lab}" for lab in labels)


# atoms

def gf_lse(k: int) -> GraphForm:
    """Log-sum-exp: ``sum(u) <= 1`` and ``(x_i - t, 1, u_i)`` in the exponential cone."""
    if k < 1:
        raise ValueError("log-sum-exp needs at least one argument")
    p = 3 * k + 1
    F = np.zeros((p, k))
    G = np.zeros((p, k))
    d = np.zeros(p)
    e = np.zeros(p)
    G[0, :] = 1.0
    e[0] = -1.0
    labels = ["sum_u"]
    for i in range(k):
        r = 1 + 3 * i
        F[r, i] = 1.0
        d[r] = -1.0
        e[r + 1] = 1.0
        G[r + 2, i] = 1.0
        labels += [f"exp{i}.arg", f"exp{i}.one", f"exp{i}.u"]

    def func(x):
        return float(logsumexp(np.asarray(x, dtype=float)))

    def witness(x, t):
        return np.exp(np.asarray(x, dtype=float) - t)

    return GraphForm(F, G, d, e, (Cone(NONPOSITIVE, 1), *exp_cones(k)), tuple(labels), func, witness)


def gf_quad(n: int) -> GraphForm:
    """``x @ x <= t`` as ``|(x, (t - 1)/2)| <= (t + 1)/2``; the cone scalar is the last row."""
    if n < 1:
        raise ValueError("quadratic needs at least one argument")
    F = np.vstack([np.eye(n), np.zeros((2, n))])
    d = np.concatenate([np.zeros(n), [0.5, 0.5]])
    e = np.concatenate([np.zeros(n), [-0.5, 0.5]])
    labels = [f"x{i}" for i in range(n)] + ["half_t_minus", "half_t_plus"]

    def func(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x)

    def witness(x, t):
        return np.zeros(0)

    return GraphForm(F, np.zeros((n + 2, 0)), d, e, (Cone(SECOND_ORDER, n + 2),), tuple(labels), func, witness)


def gf_affine(c: ArrayLike, c0: float = 0.0) -> GraphForm:
    """``c @ x + c0 <= t`` as a single nonnegative row."""
    c = np.atleast_1d(np.asarray(c, dtype=float))

    def func(x):
        return float(c @ np.asarray(x, dtype=float) + c0)

    def witness(x, t):
        return np.zeros(0)

    return GraphForm(-c[None, :], np.zeros((1, 0)), [1.0], [-float(c0)], (Cone(NONNEGATIVE, 1),), ("slack",), func, witness)


# rules

def gf_affine_pre(gf: GraphForm, A: ArrayLike, b: ArrayLike | None = None) -> GraphForm:
    """``g(x) = f(A x + b)``: ``F <- F A``, ``e <- F b + e``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != gf.n:
        raise ValueError(f"A has {A.shape[0]} rows, form input dimension is {gf.n}")
    b = np.zeros(gf.n) if b is None else np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (gf.n,):
        raise ValueError(f"b has shape {b.shape}, expected ({gf.n},)")
    f, wit = gf.func, gf.witness
    func = None if f is None else (lambda x: f(A @ np.asarray(x, dtype=float) + b))
    witness = None if wit is None else (lambda x, t: wit(A @ np.asarray(x, dtype=float) + b, t))
    return GraphForm(gf.F @ A, gf.G, gf.d, gf.F @ b + gf.e, gf.cones, gf.labels, func, witness)


def gf_affine_post(gf: GraphForm, a: float, b: float = 0.0) -> GraphForm:
    """``h(x) = a f(x) + b`` with ``a > 0``: ``d <- d / a``, ``e <- e - (b / a) d``."""
    if not a > 0:
        raise ValueError(f"post-composition scale must be positive, got {a}")
    f, wit = gf.func, gf.witness
    func = None if f is None else (lambda x: a * f(x) + b)
    witness = None if wit is None else (lambda x, t: wit(x, (t - b) / a))
    return GraphForm(gf.F, gf.G, gf.d / a, gf.e - (b / a) * gf.d, gf.cones, gf.labels, func, witness)


def gf_add_linear(gf: GraphForm, c: ArrayLike, c0: float = 0.0) -> GraphForm:
    """``h(x) = f(x) + c @ x + c0``: ``F <- F - d c'``, ``e <- e - c0 d``.

    Moves the affine part onto the ``t`` side, so no inverse of anything is needed.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape != (gf.n,):
        raise ValueError(f"c has shape {c.shape}, expected ({gf.n},)")
    f, wit = gf.func, gf.witness
    func = None if f is None else (lambda x: f(x) + float(c @ np.asarray(x, dtype=float)) + c0)
    witness = None if wit is None else (lambda x, t: wit(x, t - float(c @ np.asarray(x, dtype=float)) - c0))
    return GraphForm(gf.F - np.outer(gf.d, c), gf.G, gf.d, gf.e - c0 * gf.d, gf.cones, gf.labels, func, witness)


def gf_compose(outer: GraphForm, inners: list[GraphForm]) -> GraphForm:
    """``K(w) = S(g_1(w), ..., g_k(w))`` for ``S`` increasing in every argument.

    Auxiliary vector is ``(z_0, t_1, ..., t_k, z_1, ..., z_k)``; rows are the
    outer block followed by each inner block.
    """
    k = len(inners)
    if k == 0 or outer.n != k:
        raise ValueError(f"outer form takes {outer.n} arguments, got {k} inner forms")
    n = inners[0].n
    if any(g.n != n for g in inners):
        raise ValueError("inner forms must share an input dimension")
    m_in = [g.m for g in inners]
    m = outer.m + k + sum(m_in)
    p = outer.p + sum(g.p for g in inners)
    F = np.zeros((p, n))
    G = np.zeros((p, m))
    d = np.zeros(p)
    e = np.zeros(p)
    G[:outer.p, :outer.m] = outer.G
    G[:outer.p, outer.m:outer.m + k] = outer.F
    d[:outer.p] = outer.d
    e[:outer.p] = outer.e
    r, col = outer.p, outer.m + k
    for i, g in enumerate(inners):
        F[r:r + g.p] = g.F
        G[r:r + g.p, outer.m + i] = g.d
        G[r:r + g.p, col:col + g.m] = g.G
        e[r:r + g.p] = g.e
        r += g.p
        col += g.m
    cones = outer.cones + tuple(c for g in inners for c in g.cones)
    labels = _relabel(outer.labels, "outer") + tuple(lab for i, g in enumerate(inners) for lab in _relabel(g.labels, f"inner{i}"))

    func = witness = None
    if outer.func is not None and all(g.func is not None for g in inners):
        def func(w):
            return outer.func(np.array([g.func(w) for g in inners]))

        if outer.witness is not None and all(g.witness is not None for g in inners):
            def witness(w, t):
                ts = np.array([g.func(w) for g in inners])
                parts = [outer.witness(ts, t), ts] + [g.witness(w, ti) for g, ti in zip(inners, ts)]
                return np.concatenate([np.asarray(q, dtype=float).reshape(-1) for q in parts])

    return GraphForm(F, G, d, e, cones, labels, func, witness)


def gf_perspective(gf: GraphForm) -> GraphForm:
    """``p(x, s) = s f(x / s)``: ``F <- [F e]``, ``e <- 0``; input becomes ``(x, s)``.

    The form certifies ``s > 0`` and the conic closure; ``func`` follows the
    usual convention (``0`` at the origin, ``+inf`` elsewhere for ``s <= 0``).
    """
    f, wit = gf.func, gf.witness
    func = witness = None
    if f is not None:
        def func(xs):
            xs = np.asarray(xs, dtype=float)
            x, s = xs[:-1], float(xs[-1])
            if s > 0:
                return s * f(x / s)
            return 0.0 if s == 0 and not np.any(x) else math.inf

        if wit is not None:
            def witness(xs, t):
                xs = np.asarray(xs, dtype=float)
                x, s = xs[:-1], float(xs[-1])
                if s <= 0:
                    return np.zeros(gf.m)
                return s * np.asarray(wit(x / s, t / s), dtype=float)

    F = np.column_stack([gf.F, gf.e])
    return GraphForm(F, gf.G, gf.d, np.zeros(gf.p), gf.cones, gf.labels, func, witness)


# membership

class Membership(enum.Enum):
    MEMBER = "member"
    NON_MEMBER = "non-member"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class MembershipResult:
    verdict: Membership
    residual: float
    z: NDArray[np.float64]
    value: float | None
    worst_row: str | None = None


def cone_residual(gf: GraphForm, x: ArrayLike, z: ArrayLike, t: float) -> float:
    """Euclidean distance of ``F x + G z + t d + e`` to the cone product."""
    return distance(gf.cones, gf.rows(x, z, t))


def _worst_row(gf: GraphForm, y: NDArray) -> str | None:
    gap = np.abs(y - project_product(gf.cones, y))
    return gf.labels[int(np.argmax(gap))] if gap.size else None


def _min_violation(gf: GraphForm, x: NDArray, t: float, z0: NDArray) -> tuple[NDArray, float]:
    base = gf.F @ x + t * gf.d + gf.e
    if gf.m == 0:
        return z0, distance(gf.cones, base)

    def obj(z):
        y = base + gf.G @ z
        r = y - project_product(gf.cones, y)
        return 0.5 * float(r @ r), gf.G.T @ r

    res = minimize(obj, z0, jac=True, method="L-BFGS-B", options={"maxiter": 2000, "ftol": 1e-30, "gtol": 1e-14})
    return res.x, math.sqrt(2.0 * max(float(res.fun), 0.0))


def check_membership(gf: GraphForm, x: ArrayLike, t: float, tol: float = 1e-9, band: float = 1e-6) -> MembershipResult:
    """Decide whether some ``z`` puts ``(x, t)`` in the epigraph.

    The verdict comes from the cone rows alone: the known witness is tried
    first, then the total cone violation is minimized over ``z``. A residual
    ``<= tol`` is a member. Otherwise the point is a non-member, unless the
    represented function puts ``t`` within ``band`` of ``f(x)``, in which case
    the answer is indeterminate.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    t = float(t)
    value = gf.evaluate(x) if gf.func is not None else None
    z = np.zeros(gf.m)
    if gf.witness is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            zw = np.asarray(gf.witness(x, t), dtype=float).reshape(-1)
        if np.all(np.isfinite(zw)):
            z = zw
    residual = cone_residual(gf, x, z, t)
    if residual > tol:
        # start from the certificate of the nearest boundary point when there is one
        z0 = z
        if gf.witness is not None and value is not None and math.isfinite(value):
            with np.errstate(over="ignore", invalid="ignore"):
                zb = np.asarray(gf.witness(x, value), dtype=float).reshape(-1)
            if np.all(np.isfinite(zb)):
                z0 = zb
        z_opt, r_opt = _min_violation(gf, x, t, z0 if np.all(np.isfinite(z0)) else np.zeros(gf.m))
        if r_opt < residual:
            z, residual = z_opt, r_opt
    if residual <= tol:
        verdict = Membership.MEMBER
    elif value is not None and abs(value - t) <= band:
        verdict = Membership.INDETERMINATE
    else:
        verdict = Membership.NON_MEMBER
    worst = _worst_row(gf, gf.rows(x, z, t)) if verdict is not Membership.MEMBER else None
    return MembershipResult(verdict, residual, z, value, worst)


def direct_verdict(value: float, t: float, band: float = 1e-6) -> Membership:
    """What direct evaluation says about ``value <= t``, with the same band."""
    if abs(value - t) <= band:
        return Membership.INDETERMINATE
    return Membership.MEMBER if value <= t else Membership.NON_MEMBER


"""Cone definitions and Euclidean projections.

Conventions: the second-order cone puts its scalar last,
``{(x, s) : |x| <= s}``; the exponential cone is the closure of
``{(a, b, c) : b > 0, b exp(a / b) <= c}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

NONNEGATIVE = "nonnegative"
NONPOSITIVE = "nonpositive"
SECOND_ORDER = "second_order"
EXPONENTIAL = "exponential"
ZERO = "zero"
KINDS = (NONNEGATIVE, NONPOSITIVE, SECOND_ORDER, EXPONENTIAL, ZERO)


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be positive")
        if self.kind == EXPONENTIAL and self.dim != 3:
            raise ValueError("exponential cones have dimension 3")


def exp_cones(count: int) -> list[Cone]:
    return [Cone(EXPONENTIAL, 3) for _ in range(count)]


def in_exp_cone(v, tol: float = 0.0) -> bool:
    a, b, c = v
    if b > 0:
        # b exp(a / b) <= c + tol, compared in logs so large a / b cannot overflow
        return c + tol > 0 and math.log(b) + a / b <= math.log(c + tol)
    return b >= -tol and a <= tol and c >= -tol


def _in_exp_polar(v) -> bool:
    # polar cone = -(dual cone); dual = cl{(u, v, w) : u < 0, -u exp(v/u) <= e w}
    r, s, t = v
    if r > 0:
        return t < 0 and math.log(r) + s / r <= 1.0 + math.log(-t)
    return r == 0 and s <= 0 and t <= 0


# beyond this the ray point s (rho, 1, e^rho) is (0, 0, c) to double precision,
# which the face candidate already covers
_RHO_MAX = 800.0


def _times(a: float, e: float) -> float:
    # a * e with e an underflowed exponential and a possibly huge
    return 0.0 if e == 0.0 else a * e


def _q_exp(rho: float) -> float:
    """``(rho^2 - rho + 1) e^{-|rho|}`` without overflow."""
    ar = abs(rho)
    if ar > 1e100:
        log_q = 2.0 * math.log(ar) + math.log1p(-1.0 / rho + 1.0 / (rho * rho))
    else:
        log_q = math.log(rho * rho - rho + 1.0)
    return math.exp(log_q - ar)


def _scaled_root_fn(r0: float, s0: float, t0: float):
    # q(rho) e^{-|rho|} h(rho), where h is the monotone optimality condition in rho;
    # same sign as h and free of overflow
    def fn(rho):
        ray = (rho - 1.0) * r0 + s0
        normal = r0 - rho * s0
        if rho >= 0:
            return ray - _times(normal, math.exp(-2.0 * rho)) - t0 * _q_exp(rho)
        return _times(ray, math.exp(2.0 * rho)) - normal - t0 * _q_exp(rho)

    return fn


def project_exp_cone(v) -> NDArray[np.float64]:
    """Euclidean projection onto the exponential cone.

    Away from the trivial cases the projection lies on the boundary ray
    ``s (rho, 1, e^rho)`` and ``rho`` solves a scalar equation that is
    monotone between the points where the ray weight or the normal weight
    vanish.
    """
    r0, s0, t0 = (float(c) for c in v)
    if in_exp_cone((r0, s0, t0)):
        return np.array([r0, s0, t0])
    if _in_exp_polar((r0, s0, t0)):
        return np.zeros(3)
    face = (min(r0, 0.0), 0.0, max(t0, 0.0))
    if r0 <= 0 and s0 <= 0:
        return np.array(face)

    # valid rho: ray weight ((rho-1) r0 + s0) > 0 and normal weight (r0 - rho s0) > 0
    lo, hi = -math.inf, math.inf
    if r0 > 0:
        lo = max(lo, 1.0 - s0 / r0)
    elif r0 < 0:
        hi = min(hi, 1.0 - s0 / r0)
    if s0 > 0:
        hi = min(hi, r0 / s0)
    elif s0 < 0:
        lo = max(lo, r0 / s0)
    hi = min(hi, _RHO_MAX)
    fn = _scaled_root_fn(r0, s0, t0)
    step = 1.0
    while lo == -math.inf and step < 1e300:
        lo = min(hi, 0.0) - step
        if fn(lo) < 0:
            break
        hi, lo, step = lo, -math.inf, 2.0 * step

    # the face {a <= 0, b = 0, c >= 0} contains the origin, so its projection
    # is never farther than the origin
    best = face
    if lo < hi:
        flo, fhi = fn(lo), fn(hi)
        if flo >= 0:
            rho = lo
        elif fhi <= 0:
            rho = hi
        else:
            rho = brentq(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        q = rho * rho - rho + 1.0
        s = ((rho - 1.0) * r0 + s0) / q if math.isfinite(q) else r0 / rho
        if s > 0:
            if rho > 0:
                # s e^rho through the optimality condition; the direct product
                # inherits the cancellation in the ray weight
                c = t0 + (r0 - rho * s0) * math.exp(-rho) / q
                s = c * math.exp(-rho)
            else:
                c = s * math.exp(rho)
            if s > 0 and c >= 0 and math.isfinite(s * rho):
                ray = (s * rho, s, c)
                # |ray - v|^2 - |face - v|^2 as a sum of products, free of cancellation against |v|^2
                gain = sum((x - y) * (x + y - 2.0 * w) for x, y, w in zip(ray, face, (r0, s0, t0)))
                if gain < 0:
                    best = ray
    return np.array(best)


def project_soc(v) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=float)
    x, s = v[:-1], v[-1]
    nx = float(np.linalg.norm(x))
    if nx <= s:
        return v.copy()
    if nx <= -s:
        return np.zeros_like(v)
    scale = 0.5 * (nx + s)
    return np.append(scale * x / nx, scale)


def project_cone(cone: Cone, v) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=float)
    if cone.kind == NONNEGATIVE:
        return np.maximum(v, 0.0)
    if cone.kind == NONPOSITIVE:
        return np.minimum(v, 0.0)
    if cone.kind == ZERO:
        return np.zeros_like(v)
    if cone.kind == SECOND_ORDER:
        return project_soc(v)
    return project_exp_cone(v)


def project_product(cones, y) -> NDArray[np.float64]:
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    i = 0
    for cone in cones:
        out[i:i + cone.dim] = project_cone(cone, y[i:i + cone.dim])
        i += cone.dim
    return out


def block_distances(cones, y) -> NDArray[np.float64]:
    """Euclidean distance of each block of ``y`` to its cone."""
    y = np.asarray(y, dtype=float)
    out = np.empty(len(cones))
    i = 0
    for j, cone in enumerate(cones):
        block = y[i:i + cone.dim]
        if not np.all(np.isfinite(block)):
            out[j] = math.inf
        else:
            out[j] = float(np.linalg.norm(block - project_cone(cone, block)))
        i += cone.dim
    return out


def distance(cones, y) -> float:
    return float(np.linalg.norm(block_distances(cones, y)))

"""Random membership probes for graph forms, shared by the unit and acceptance suites.

Each case pairs a form with a sampler of inputs whose function values are
O(1) to O(10). Thresholds sit at ``f(x) +- 10^u`` with ``u`` uniform on
``[-6.5, 0]``: most probes land close to the boundary, some inside the
``1e-6`` indeterminate band where no verdict is expected.
"""

import math

import numpy as np

from gmport.graphform import (
    Membership,
    assemble_evar_graphform,
    check_membership,
    direct_verdict,
    gf_add_linear,
    gf_affine,
    gf_affine_post,
    gf_affine_pre,
    gf_compose,
    gf_lse,
    gf_perspective,
    gf_quad,
)
from gmport.model import GmModel


def _scaled_inner(rng, n):
    return gf_affine_post(gf_affine_pre(gf_quad(n), 0.5 * rng.normal(size=(n, n)), 0.5 * rng.normal(size=n)),
                          1.0, float(rng.normal()))


def _gm(rng):
    k, n = 3, 2
    L = rng.normal(0, 0.5, (k, n, n))
    covs = L @ L.transpose(0, 2, 1) + 0.05 * np.eye(n)
    return GmModel.from_arrays(rng.dirichlet(np.full(k, 2.0)), rng.normal(0, 0.5, (k, n)), covs)


def build_cases(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    cases = {}
    cases["lse atom"] = (gf_lse(3), lambda r: r.normal(0, 2, 3))
    cases["quadratic atom"] = (gf_quad(3), lambda r: r.normal(0, 1, 3))
    cases["affine atom"] = (gf_affine(rng.normal(size=3), 0.3), lambda r: r.normal(0, 1, 3))
    cases["pre: quadratic at 2x"] = (gf_affine_pre(gf_quad(2), 2 * np.eye(2)), lambda r: r.normal(0, 0.7, 2))
    A, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    cases["pre: lse at Ax+b"] = (gf_affine_pre(gf_lse(3), A, b), lambda r: r.normal(0, 1, 2))
    cases["post: 2 * quadratic"] = (gf_affine_post(gf_quad(2), 2.0), lambda r: r.normal(0, 1, 2))
    cases["post: quadratic - log pi"] = (gf_affine_post(gf_quad(2), 1.0, -math.log(0.2)), lambda r: r.normal(0, 1, 2))
    cases["add linear: quadratic + c'x"] = (gf_add_linear(gf_quad(2), rng.normal(size=2), -0.4),
                                           lambda r: r.normal(0, 1, 2))
    inners = [_scaled_inner(rng, 2) for _ in range(3)]
    compose = gf_compose(gf_lse(3), inners)
    cases["compose: lse of quadratics"] = (compose, lambda r: r.normal(0, 1, 2))
    cases["perspective: quadratic"] = (gf_perspective(gf_quad(2)),
                                       lambda r: np.append(r.normal(0, 1, 2), r.uniform(0.5, 2.0)))
    cases["perspective: lse"] = (gf_perspective(gf_lse(2)),
                                 lambda r: np.append(r.normal(0, 1, 2), r.uniform(0.5, 2.0)))
    cases["perspective: composed"] = (gf_perspective(compose),
                                      lambda r: np.append(r.normal(0, 1, 2), r.uniform(0.5, 2.0)))
    cases["assembled evar form"] = (assemble_evar_graphform(_gm(rng)),
                                    lambda r: np.append(r.normal(0, 1, 2), r.uniform(0.5, 2.0)))
    scen = GmModel.finite_values(np.full(5, 0.2), rng.normal(0, 0.5, (5, 2)))
    cases["assembled evar form, scenarios"] = (assemble_evar_graphform(scen),
                                              lambda r: np.append(r.normal(0, 1, 2), r.uniform(0.5, 2.0)))
    return cases


def run_probes(gf, sampler, count: int, seed: int = 1):
    """Returns (disagreements, indeterminate, decided) over ``count`` probes."""
    rng = np.random.default_rng(seed)
    bad, undecided = [], 0
    for _ in range(count):
        x = sampler(rng)
        v = gf.evaluate(x)
        t = v + rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-6.5, 0)
        got = check_membership(gf, x, t).verdict
        want = direct_verdict(v, t)
        if Membership.INDETERMINATE in (got, want):
            undecided += 1
            continue
        if got is not want:
            bad.append((x, t, v, got))
    return bad, undecided, count - undecided

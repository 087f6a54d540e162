import math
import re

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from gmport.evar import EvarProblem, evar_objective, solve_evar_alternating
from gmport.feasible import FeasibleSet
from gmport.graphform import (
    ClarabelAdapter,
    NullAdapter,
    export_cone_program,
    expected_rows,
    format_fixture,
    parse_fixture,
    read_fixture,
    solve_evar_conic,
    write_fixture,
)
from gmport.graphform.cones import EXPONENTIAL, SECOND_ORDER
from gmport.graphform.program import FixtureError
from gmport.model import GmModel

from _models import random_gm, random_scenarios

BOX = FeasibleSet(np.full(2, -1.0), np.full(2, 2.0))


@pytest.mark.parametrize("n,k", [(2, 1), (2, 3), (3, 2)])
def test_dimensions_and_ordering(rng, n, k):
    prog = export_cone_program(random_gm(rng, n, k), 0.05)
    assert prog.h.shape[0] == expected_rows(n, k)
    assert prog.names[:n + 2] == tuple(f"w[{i}]" for i in range(n)) + ("delta", "t")
    assert prog.c[prog.index("delta")] == pytest.approx(-math.log(0.05))
    assert prog.c[prog.index("t")] == 1.0
    assert np.count_nonzero(prog.c) == 2
    np.testing.assert_array_equal(prog.A_eq[0, :n], 1.0)
    assert prog.lower[prog.index("delta")] == 0.0
    assert all(cone.dim == 3 for cone in prog.cones if cone.kind == EXPONENTIAL)
    assert sum(cone.kind == SECOND_ORDER for cone in prog.cones) == k


def test_bounds_enter_variable_box(rng):
    fs = FeasibleSet(np.zeros(2), np.array([0.7, np.inf]))
    prog = export_cone_program(random_gm(rng, 2, 1), 0.1, fs)
    np.testing.assert_array_equal(prog.lower[:2], [0.0, 0.0])
    np.testing.assert_array_equal(prog.upper[:2], [0.7, np.inf])


def test_invalid_alpha(rng):
    with pytest.raises(ValueError):
        export_cone_program(random_gm(rng, 2, 1), 1.5)


def test_fixture_round_trip_and_determinism(rng, tmp_path):
    m = random_gm(rng, 2, 2)
    prog = export_cone_program(m, 0.05, BOX)
    path = tmp_path / "prog.txt"
    write_fixture(prog, path)
    back = read_fixture(path)
    assert back == prog
    again = tmp_path / "again.txt"
    write_fixture(export_cone_program(m, 0.05, BOX), again)
    assert path.read_bytes() == again.read_bytes()
    assert format_fixture(back) == path.read_text()


def test_fixture_sections(rng):
    text = format_fixture(export_cone_program(random_gm(rng, 2, 1), 0.05))
    heads = [ln.split()[0] for ln in text.splitlines() if re.fullmatch(r"[A-Z_]+", ln.split()[0])]
    assert heads == ["CONEPROGRAM", "VARS", "OBJ", "EQ", "EQ_ENTRIES", "CONES", "ROWS", "ENTRIES", "END"]


@pytest.mark.parametrize("mutate", [
    lambda s: s.replace("CONEPROGRAM 1", "CONEPROGRAM 2"),
    lambda s: s.replace("\nEND\n", "\n"),
    lambda s: s.replace("CONES ", "CONEZ "),
    lambda s: s.replace("exponential 3", "cubic 3"),
    lambda s: s.rsplit("\nEND", 1)[0].rsplit("\n", 3)[0] + "\nEND\n",
    lambda s: s.replace("OBJ 2\n", "OBJ 2\nbad line here\n"),
])
def test_malformed_fixtures(rng, mutate):
    text = format_fixture(export_cone_program(random_gm(rng, 2, 1), 0.05))
    with pytest.raises(FixtureError):
        parse_fixture(mutate(text))


def test_null_adapter_records_program(rng):
    p = EvarProblem(random_gm(rng, 2, 1), 0.05)
    adapter = NullAdapter()
    rep = solve_evar_conic(p, adapter)
    assert len(adapter.received) == 1
    assert not rep.converged and rep.diagnostics["status"] == "not_solved"
    assert np.all(np.isnan(rep.weights))


@pytest.mark.parametrize("kind,seed", [("gm", 0), ("gm", 1), ("scenarios", 2)])
def test_clarabel_matches_alternating(kind, seed):
    rng = np.random.default_rng(seed)
    m = random_gm(rng, 2, 3, mean_scale=0.3) if kind == "gm" else random_scenarios(rng, 2, 30)
    p = EvarProblem(m, 0.05, BOX)
    conic = solve_evar_conic(p, ClarabelAdapter())
    alt = solve_evar_alternating(p)
    assert conic.converged
    assert abs(conic.evar_value - alt.evar_value) <= 1e-5
    # the program value is attained by the returned point
    assert abs(conic.diagnostics["exact_objective"] - conic.evar_value) <= 1e-5


def test_fixture_solves_like_fresh_export(rng, tmp_path):
    p = EvarProblem(random_gm(rng, 2, 2), 0.1, BOX)
    path = tmp_path / "p.txt"
    write_fixture(export_cone_program(p.model, p.alpha, p.feasible), path)
    res = ClarabelAdapter().solve(read_fixture(path))
    assert abs(res.objective - solve_evar_alternating(p).evar_value) <= 1e-5


def test_identity_covariance_by_hand():
    # k = 1, Sigma = I: EVaR(w) = -mu @ w + kappa |w| with kappa = sqrt(-2 log alpha)
    mu = np.array([0.08, 0.03])
    alpha = 0.05
    kappa = math.sqrt(-2 * math.log(alpha))
    res = minimize_scalar(lambda s: -mu @ [s, 1 - s] + kappa * math.hypot(s, 1 - s), bounds=(-5, 5),
                          method="bounded", options={"xatol": 1e-12})
    m = GmModel.from_arrays([1.0], [mu], [np.eye(2)])
    conic = solve_evar_conic(EvarProblem(m, alpha), ClarabelAdapter())
    assert abs(conic.evar_value - res.fun) <= 1e-6
    assert abs(conic.weights[0] - res.x) <= 1e-4


def test_conic_point_is_exact_objective_feasible(rng):
    p = EvarProblem(random_gm(rng, 2, 2), 0.05, BOX)
    rep = solve_evar_conic(p, ClarabelAdapter())
    assert BOX.contains(rep.weights, 1e-8)
    assert evar_objective(p, rep.weights, rep.delta) <= rep.evar_value + 1e-6

"""Standard-form packaging of the EVaR graph form and solver adapters.

The program is

    minimize    c @ v
    subject to  A_eq v == b_eq
                M v + h  in  C          (cone rows, one label each)
                lower <= v <= upper

over ``v = (w_1..w_n, delta, t, z_1..z_m)`` with ``c`` picking out
``t - delta log alpha``. ``write_fixture`` and ``read_fixture`` map it to a
deterministic sectioned text format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from ..evar import EvarProblem, EvarReport, evar_objective
from ..feasible import FeasibleSet
from ..model import GmModel
from .assembly import assemble_evar_graphform
from .cones import KINDS, NONNEGATIVE, NONPOSITIVE, SECOND_ORDER, ZERO, Cone, EXPONENTIAL

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConeProgram:
    names: tuple[str, ...]
    c: NDArray[np.float64]
    A_eq: NDArray[np.float64]
    b_eq: NDArray[np.float64]
    M: NDArray[np.float64]
    h: NDArray[np.float64]
    cones: tuple[Cone, ...]
    row_labels: tuple[str, ...]
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nv = len(self.names)
        p = sum(cone.dim for cone in self.cones)
        if self.c.shape != (nv,) or self.lower.shape != (nv,) or self.upper.shape != (nv,):
            raise ValueError("objective and bounds must have one entry per variable")
        if self.A_eq.shape != (self.b_eq.shape[0], nv):
            raise ValueError(f"equality block has shape {self.A_eq.shape}")
        if self.M.shape != (p, nv) or self.h.shape != (p,) or len(self.row_labels) != p:
            raise ValueError(f"cone block has shape {self.M.shape}, cones cover {p} rows")

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def row_kinds(self) -> list[str]:
        return [cone.kind for cone in self.cones for _ in range(cone.dim)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConeProgram):
            return NotImplemented
        arrays = ("c", "A_eq", "b_eq", "M", "h", "lower", "upper")
        return (self.names == other.names and self.cones == other.cones and self.row_labels == other.row_labels
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def export_cone_program(model: GmModel, alpha: float, feasible: FeasibleSet | None = None,
                        route: str = "auto") -> ConeProgram:
    """Cone program whose optimum is the minimal EVaR over the feasible set."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    feasible = feasible or FeasibleSet()
    n = model.n
    feasible.check(n)
    gf = assemble_evar_graphform(model, route)
    m = gf.m
    names = tuple([f"w[{i}]" for i in range(n)] + ["delta", "t"] + [f"z[{j}]" for j in range(m)])
    nv = len(names)
    c = np.zeros(nv)
    c[n] = -math.log(alpha)
    c[n + 1] = 1.0
    A_eq = np.zeros((1, nv))
    A_eq[0, :n] = 1.0
    # gf input is (w, delta); the t column is d, auxiliaries follow
    M = np.column_stack([gf.F, gf.d, gf.G])
    lo, hi = feasible.bounds(n)
    lower = np.concatenate([lo, [0.0, -np.inf], np.full(m, -np.inf)])
    upper = np.concatenate([hi, [np.inf, np.inf], np.full(m, np.inf)])
    return ConeProgram(names, c, A_eq, np.array([1.0]), M, gf.e.copy(), gf.cones, gf.labels, lower, upper,
                       {"n": n, "k": model.k, "alpha": alpha})


# text fixture

def _fmt(x: float) -> str:
    return repr(float(x))


def _triplets(A: NDArray) -> list[tuple[int, int, float]]:
    rows, cols = np.nonzero(A)
    return [(int(i), int(j), float(A[i, j])) for i, j in zip(rows, cols)]


def format_fixture(prog: ConeProgram) -> str:
    lines = [f"CONEPROGRAM {FORMAT_VERSION}"]
    lines.append(f"VARS {prog.num_vars}")
    for j, name in enumerate(prog.names):
        lines.append(f"{j} {name} {_fmt(prog.lower[j])} {_fmt(prog.upper[j])}")
    obj = [(j, v) for j, v in enumerate(prog.c) if v != 0]
    lines.append(f"OBJ {len(obj)}")
    lines += [f"{j} {_fmt(v)}" for j, v in obj]
    lines.append(f"EQ {prog.A_eq.shape[0]}")
    lines += [f"{i} {_fmt(b)}" for i, b in enumerate(prog.b_eq)]
    trip = _triplets(prog.A_eq)
    lines.append(f"EQ_ENTRIES {len(trip)}")
    lines += [f"{i} {j} {_fmt(v)}" for i, j, v in trip]
    lines.append(f"CONES {len(prog.cones)}")
    lines += [f"{cone.kind} {cone.dim}" for cone in prog.cones]
    kinds = prog.row_kinds()
    lines.append(f"ROWS {prog.h.shape[0]}")
    lines += [f"{i} {kinds[i]} {prog.row_labels[i]} {_fmt(prog.h[i])}" for i in range(prog.h.shape[0])]
    trip = _triplets(prog.M)
    lines.append(f"ENTRIES {len(trip)}")
    lines += [f"{i} {j} {_fmt(v)}" for i, j, v in trip]
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_fixture(prog: ConeProgram, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_fixture(prog))


class FixtureError(ValueError):
    pass


def parse_fixture(text: str) -> ConeProgram:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    pos = 0

    def header(tag: str) -> int:
        nonlocal pos
        parts = lines[pos].split() if pos < len(lines) else []
        if len(parts) != 2 or parts[0] != tag:
            raise FixtureError(f"line {pos + 1}: expected '{tag} <count>'")
        pos += 1
        return int(parts[1])

    def body(count: int, width: int) -> list[list[str]]:
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                raise FixtureError("unexpected end of fixture")
            parts = lines[pos].split()
            if len(parts) != width:
                raise FixtureError(f"line {pos + 1}: expected {width} fields, got {len(parts)}")
            out.append(parts)
            pos += 1
        return out

    try:
        if header("CONEPROGRAM") != FORMAT_VERSION:
            raise FixtureError("unsupported fixture version")
        var_rows = body(header("VARS"), 4)
        nv = len(var_rows)
        names = tuple(r[1] for r in var_rows)
        lower = np.array([float(r[2]) for r in var_rows])
        upper = np.array([float(r[3]) for r in var_rows])
        c = np.zeros(nv)
        for j, v in body(header("OBJ"), 2):
            c[int(j)] = float(v)
        b_eq = np.array([float(r[1]) for r in body(header("EQ"), 2)])
        A_eq = np.zeros((b_eq.shape[0], nv))
        for i, j, v in body(header("EQ_ENTRIES"), 3):
            A_eq[int(i), int(j)] = float(v)
        cones = []
        for kind, dim in body(header("CONES"), 2):
            if kind not in KINDS:
                raise FixtureError(f"unknown cone kind {kind!r}")
            cones.append(Cone(kind, int(dim)))
        row_rows = body(header("ROWS"), 4)
        h = np.array([float(r[3]) for r in row_rows])
        labels = tuple(r[2] for r in row_rows)
        kinds = [cone.kind for cone in cones for _ in range(cone.dim)]
        if [r[1] for r in row_rows] != kinds:
            raise FixtureError("row kind tags disagree with the cone list")
        M = np.zeros((h.shape[0], nv))
        for i, j, v in body(header("ENTRIES"), 3):
            M[int(i), int(j)] = float(v)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FixtureError):
            raise
        raise FixtureError(str(exc)) from exc
    if pos >= len(lines) or lines[pos].strip() != "END":
        raise FixtureError("missing END marker")
    return ConeProgram(names, c, A_eq, b_eq, M, h, tuple(cones), labels, lower, upper)


def read_fixture(path) -> ConeProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_fixture(fh.read())


# adapters

@dataclass
class AdapterResult:
    x: NDArray[np.float64] | None
    status: str
    objective: float = math.nan
    iterations: int = 0


class SolverAdapter(Protocol):
    name: str

    def solve(self, prog: ConeProgram) -> AdapterResult: ...


class NullAdapter:
    """Records the programs it is given and solves nothing."""

    name = "null"

    def __init__(self):
        self.received: list[ConeProgram] = []

    def solve(self, prog: ConeProgram) -> AdapterResult:
        self.received.append(prog)
        return AdapterResult(None, "not_solved")


class ClarabelAdapter:
    """Interior-point solve through the ``clarabel`` package (optional dependency)."""

    name = "clarabel"

    def __init__(self, tol: float = 1e-10, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def _blocks(self, prog: ConeProgram):
        import clarabel

        # clarabel wants  A v + s = b  with s in its cones; our rows are M v + h in C
        blocks_A, blocks_b, cones = [prog.A_eq], [prog.b_eq], []
        if prog.A_eq.shape[0]:
            cones.append(clarabel.ZeroConeT(prog.A_eq.shape[0]))
        r = 0
        for cone in prog.cones:
            Mi, hi = prog.M[r:r + cone.dim], prog.h[r:r + cone.dim]
            r += cone.dim
            if cone.kind == NONNEGATIVE:
                blocks_A.append(-Mi); blocks_b.append(hi); cones.append(clarabel.NonnegativeConeT(cone.dim))
            elif cone.kind == NONPOSITIVE:
                blocks_A.append(Mi); blocks_b.append(-hi); cones.append(clarabel.NonnegativeConeT(cone.dim))
            elif cone.kind == ZERO:
                blocks_A.append(-Mi); blocks_b.append(hi); cones.append(clarabel.ZeroConeT(cone.dim))
            elif cone.kind == SECOND_ORDER:
                # clarabel puts the scalar first
                order = np.r_[cone.dim - 1, 0:cone.dim - 1]
                blocks_A.append(-Mi[order]); blocks_b.append(hi[order]); cones.append(clarabel.SecondOrderConeT(cone.dim))
            elif cone.kind == EXPONENTIAL:
                blocks_A.append(-Mi); blocks_b.append(hi); cones.append(clarabel.ExponentialConeT())
        nv = prog.num_vars
        lo = np.flatnonzero(np.isfinite(prog.lower))
        up = np.flatnonzero(np.isfinite(prog.upper))
        if lo.size:
            E = np.zeros((lo.size, nv)); E[np.arange(lo.size), lo] = -1.0
            blocks_A.append(E); blocks_b.append(-prog.lower[lo]); cones.append(clarabel.NonnegativeConeT(lo.size))
        if up.size:
            E = np.zeros((up.size, nv)); E[np.arange(up.size), up] = 1.0
            blocks_A.append(E); blocks_b.append(prog.upper[up]); cones.append(clarabel.NonnegativeConeT(up.size))
        return np.vstack(blocks_A), np.concatenate(blocks_b), cones

    def solve(self, prog: ConeProgram) -> AdapterResult:
        import clarabel
        from scipy import sparse

        A, b, cones = self._blocks(prog)
        nv = prog.num_vars
        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        solver = clarabel.DefaultSolver(sparse.csc_matrix((nv, nv)), prog.c, sparse.csc_matrix(A), b, cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        x = np.array(sol.x, dtype=float)
        ok = status in ("Solved", "AlmostSolved")
        return AdapterResult(x if ok else None, status, float(prog.c @ x) if ok else math.nan, int(sol.iterations))


def default_adapter() -> SolverAdapter:
    try:
        import clarabel  # noqa: F401
    except ImportError:
        return NullAdapter()
    return ClarabelAdapter()


def solve_evar_conic(problem: EvarProblem, adapter: SolverAdapter | None = None, route: str = "auto") -> EvarReport:
    """Minimize EVaR by exporting the cone program and handing it to ``adapter``."""
    adapter = adapter or default_adapter()
    prog = export_cone_program(problem.model, problem.alpha, problem.feasible, route)
    res = adapter.solve(prog)
    n = problem.model.n
    diag = {"adapter": adapter.name, "status": res.status, "rows": int(prog.h.shape[0]), "route": route}
    if res.x is None:
        return EvarReport(np.full(n, np.nan), math.nan, math.nan, "conic", problem.alpha, False, res.iterations, diag)
    w = res.x[:n].copy()
    delta = float(res.x[n])
    diag["program_objective"] = res.objective
    diag["exact_objective"] = evar_objective(problem, w, delta) if delta > 0 else math.nan
    return EvarReport(w, delta, res.objective, "conic", problem.alpha, True, res.iterations, diag)

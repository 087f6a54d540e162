"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver did not converge.
Reports are JSON (stdout unless ``--out``); curve data is CSV.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import model as gm
from .egm import EgmProblem, egm_limit_objective, markowitz_solve, solve_egm
from .evar import EvarProblem, solve_evar_alternating, solve_evar_approx
from .feasible import FeasibleSet, InfeasibleError
from .model import ModelError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_returns(path) -> tuple[list[str], np.ndarray]:
    """Parse a returns CSV: a header of asset names, then one row of floats per period."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        if not names or any(not h for h in names):
            raise DataError(f"{path}: line 1: header must name every column")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise DataError(f"{path}: line {line}: expected {len(names)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {line}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return names, np.array(rows)


def parse_bounds(text: str | None, n: int) -> FeasibleSet:
    """``"lo:hi"`` broadcast to every asset, or one ``lo:hi`` per asset separated by commas.
    Either side may be empty for unbounded."""
    if text is None:
        return FeasibleSet()
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * n
    if len(parts) != n:
        raise UsageError(f"--bounds lists {len(parts)} pairs for {n} assets")
    lo, hi = np.empty(n), np.empty(n)
    for i, p in enumerate(parts):
        if p.count(":") != 1:
            raise UsageError(f"--bounds entry {p!r} is not 'lower:upper'")
        a, b = p.split(":")
        try:
            lo[i] = float(a) if a.strip() else -np.inf
            hi[i] = float(b) if b.strip() else np.inf
        except ValueError:
            raise UsageError(f"--bounds entry {p!r} is not numeric") from None
    return FeasibleSet(lo, hi)


def parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError("--grid must be 'start:stop:steps'")
    try:
        start, stop, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError("--grid must be 'start:stop:steps'") from None
    if steps < 2 or not stop > start:
        raise UsageError("--grid needs stop > start and at least 2 steps")
    return np.linspace(start, stop, steps)


def parse_weights(text: str, n: int) -> np.ndarray:
    try:
        w = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise UsageError("--weights must be comma-separated numbers") from None
    if w.shape != (n,):
        raise UsageError(f"--weights has {w.size} entries, model has {n} assets")
    return w


def _load_model(args) -> gm.GmModel:
    if not args.model:
        raise UsageError("--model is required")
    try:
        return gm.load_model(args.model)
    except OSError as exc:
        raise DataError(f"{args.model}: {exc.strerror}") from None
    except (ModelError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.model}: {exc}") from None


def _emit(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def cmd_fit(args) -> int:
    names, x = read_returns(_require(args.returns, "--returns"))
    k = _require(args.k, "--k")
    if k < 1:
        raise UsageError("--k must be at least 1")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", gm.DegenerateComponentWarning)
        try:
            res = gm.fit_em(x, k, args.seed)
        except ModelError as exc:
            raise DataError(str(exc)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = args.out or "model.json"
    gm.save_model(res.model, out)
    print(f"log-likelihood {res.log_likelihood:.10g}  ({res.iterations} iterations, assets {', '.join(names)})")
    for i in range(res.model.k):
        mean = ", ".join(f"{v:.6g}" for v in res.model.means[i])
        vol = ", ".join(f"{v:.6g}" for v in np.sqrt(np.diag(res.model.covariances[i])))
        print(f"component {i}: weight {res.model.weights[i]:.6g}  mean [{mean}]  vol [{vol}]")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve_egm(args) -> int:
    model = _load_model(args)
    gamma = _require(args.gamma, "--gamma")
    if not gamma > 0:
        raise UsageError("--gamma must be positive")
    problem = EgmProblem(model, gamma, parse_bounds(args.bounds, model.n))
    rep = solve_egm(problem)
    payload = rep.to_dict()
    payload["diagnostics"]["limits"] = {
        "scaled_objective": rep.objective / gamma,
        "high": egm_limit_objective(problem, rep.weights, "high"),
        "low": egm_limit_objective(problem, rep.weights, "low"),
    }
    _emit(args, payload)
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_solve_markowitz(args) -> int:
    model = _load_model(args)
    gamma = _require(args.gamma, "--gamma")
    if not gamma > 0:
        raise UsageError("--gamma must be positive")
    mu, cov = gm.mixture_moments(model)
    rep = markowitz_solve(mu, cov, gamma, parse_bounds(args.bounds, model.n))
    _emit(args, rep.to_dict())
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_solve_evar(args) -> int:
    model = _load_model(args)
    alpha = _require(args.alpha, "--alpha")
    if not 0 < alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    problem = EvarProblem(model, alpha, parse_bounds(args.bounds, model.n))
    method = args.method or "alternating"
    if method == "alternating":
        rep = solve_evar_alternating(problem)
    elif method == "approx":
        rep = solve_evar_approx(problem)
    elif method == "conic":
        from .graphform.program import solve_evar_conic

        rep = solve_evar_conic(problem)
    else:
        raise UsageError(f"--method must be alternating, approx or conic, got {method!r}")
    _emit(args, rep.to_dict())
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_cdf(args) -> int:
    model = _load_model(args)
    w = parse_weights(_require(args.weights, "--weights"), model.n)
    grid = parse_grid(_require(args.grid, "--grid"))
    values = np.asarray(gm.cdf(model, w, grid), dtype=float)
    lines = ["a,cdf"] + [f"{a!r},{v!r}" for a, v in zip(grid.tolist(), values.tolist())]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evar_export(args) -> int:
    from .graphform.program import export_cone_program, format_fixture

    model = _load_model(args)
    alpha = _require(args.alpha, "--alpha")
    if not 0 < alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    try:
        prog = export_cone_program(model, alpha, parse_bounds(args.bounds, model.n))
    except ModelError as exc:
        raise DataError(str(exc)) from None
    text = format_fixture(prog)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "solve-egm": cmd_solve_egm,
    "solve-evar": cmd_solve_evar,
    "solve-markowitz": cmd_solve_markowitz,
    "cdf": cmd_cdf,
    "evar-export": cmd_evar_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmport", description="Portfolio construction under Gaussian-mixture returns.")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--model", help="model JSON file")
    parser.add_argument("--returns", help="returns CSV (header of asset names)")
    parser.add_argument("--gamma", type=float, help="risk aversion")
    parser.add_argument("--alpha", type=float, help="EVaR level in (0, 1)")
    parser.add_argument("--k", type=int, help="mixture components to fit")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--bounds", help="'lo:hi' for all assets or 'lo:hi,lo:hi,...'")
    parser.add_argument("--method", help="EVaR method: alternating (default), approx or conic")
    parser.add_argument("--weights", help="comma-separated portfolio weights (cdf)")
    parser.add_argument("--grid", help="'start:stop:steps' evaluation grid (cdf)")
    parser.add_argument("--out", help="output path")
    return parser


_VALUE_FLAGS = ("--bounds", "--grid", "--weights")


def _glue_values(argv: list[str]) -> list[str]:
    # "--bounds -1:2" would otherwise read "-1:2" as a flag
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_glue_values(argv))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gmport: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InfeasibleError) as exc:
        print(f"gmport: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

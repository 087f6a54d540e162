"""Build the cone program for EVaR minimization, write it as a text
fixture, read it back and solve it."""

import sys
import tempfile
from pathlib import Path

import numpy as np

from gmport.evar import EvarProblem, solve_evar_alternating
from gmport.graphform import (
    ClarabelAdapter,
    check_membership,
    export_cone_program,
    gf_lse,
    read_fixture,
    write_fixture,
)
from gmport.model import GmModel


def main():
    gf = gf_lse(2)
    for t in (0.69, 0.7):
        print(f"log(e^0 + e^0) <= {t}: {check_membership(gf, [0.0, 0.0], t).verdict.name}")

    m = GmModel.from_arrays([0.7, 0.3], [[0.05, 0.02], [-0.1, 0.01]],
                            [np.diag([0.04, 0.01]), np.diag([0.2, 0.02])])
    prog = export_cone_program(m, 0.05)
    print(f"\n{prog.num_vars} variables, {prog.h.shape[0]} cone rows in {len(prog.cones)} cones")
    path = Path(tempfile.mkdtemp()) / "evar.txt"
    write_fixture(prog, path)
    print(f"fixture written to {path}")
    res = ClarabelAdapter().solve(read_fixture(path))
    alt = solve_evar_alternating(EvarProblem(m, 0.05))
    print(f"conic optimum {res.objective:.8f} ({res.status}), alternating {alt.evar_value:.8f}")
    sys.stdout.writelines(path.read_text().splitlines(keepends=True)[:12])


if __name__ == "__main__":
    main()

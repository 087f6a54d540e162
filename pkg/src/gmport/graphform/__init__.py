"""Cone-represented epigraphs, the rules combining them, and the EVaR cone program."""

from .assembly import assemble_cgf_graphform, assemble_evar_graphform, expected_rows
from .calculus import (
    GraphForm,
    Membership,
    check_membership,
    cone_residual,
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
from .cones import Cone, project_exp_cone, project_soc
from .program import (
    ClarabelAdapter,
    ConeProgram,
    NullAdapter,
    default_adapter,
    export_cone_program,
    format_fixture,
    parse_fixture,
    read_fixture,
    solve_evar_conic,
    write_fixture,
)

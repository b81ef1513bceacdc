"""
Grid commands - Davies-Gaffney bounds and multiplicative perturbations
"""

import logging
from typing import List, Tuple

import click
import numpy as np
from scipy import linalg

from artifacts import matrix_rows, write_csv
from commands.common import TaskContext, node_vector, operator_bundle, require_grid, task_command
from services.assoc_op import self_adjoint_defect
from services.elliptic_assembly import (
    GridForm, assemble_form, conservation_check, davies_gaffney_check, multiplicative_ops,
    multiplicative_triple, nodes_in_box, tail_mass_check,
)
from services.errors import SchemaError
from services.invariance import ConvexSetDescriptor, dynamic_invariance_check
from settings import MARKOV_TIMES

logger = logging.getLogger(__name__)


def _box(value, gf: GridForm, default: Tuple[float, float]) -> np.ndarray:
    """Nodes of a box [lower, upper]; 1D boxes are [a, b], the default spans the other directions."""
    lengths = np.asarray(gf.problem.lengths)
    if value is None:
        lower, upper = np.zeros_like(lengths), lengths.copy()
        lower[0], upper[0] = default[0] * lengths[0], default[1] * lengths[0]
    else:
        corners = np.asarray(value, dtype=float).reshape(2, -1)
        if corners.shape[1] != gf.problem.dim:
            raise SchemaError(f"Boxes need {gf.problem.dim} coordinates per corner.")
        lower, upper = corners
    nodes = nodes_in_box(gf, lower, upper)
    if nodes.size == 0:
        raise SchemaError(f"The box {lower.tolist()}..{upper.tolist()} holds no nodes.")
    return nodes


@task_command("gaffney", "Davies-Gaffney off-diagonal bound and tail mass.")
def gaffney(ctx: TaskContext) -> List[str]:
    p = require_grid(ctx)
    gf = assemble_form(p)
    bundle = operator_bundle(p, ctx.tol)
    omega1 = _box(ctx.param("omega1"), gf, (0.0, 0.2))
    omega2 = _box(ctx.param("omega2"), gf, (0.8, 1.0))
    report = davies_gaffney_check(p, omega1, omega2, ctx.time_grid("1e-3:0.1:log20"), bundle=bundle)
    paths = [write_csv(ctx.path("gaffney.csv"), ["t", "lhs", "bound", "ratio"], report.rows())]

    if "R" in ctx.params:
        u = node_vector(ctx.param("u"), gf, None)
        if u is None:
            u = np.zeros(gf.free.size)
            u[gf.free.size // 2] = 1.0
        t = float(np.max(ctx.time_grid("1e-3:0.1:log20")))
        tail = tail_mass_check(p, u, t, ctx.params["R"], ctx.param("center"), bundle=bundle)
        rows = [[float(r), float(m), float(e)] for r, m, e in zip(tail.radii, tail.tails, tail.envelope)]
        paths.append(write_csv(ctx.path("tail.csv"), ["R", "tail", "envelope"], rows))
        click.echo(f"tail: c_hat={tail.c_hat:.4g} slope={tail.slope:.4g} (reference {tail.reference_slope:.4g})")

    if p.bc.kind == "neumann":
        defects = conservation_check(p)
        logger.info("conservation: mass %.3e, constants %.3e", defects["mass_defect"], defects["constant_defect"])

    click.echo(f"M={report.M:g} d={report.distance:g} max ratio={np.max(report.ratios):.4g} passes={report.passes()}")
    return paths


@task_command("multiplicative", "Operators m D m, rho D and D rho.")
def multiplicative(ctx: TaskContext) -> List[str]:
    p = require_grid(ctx)
    gf = assemble_form(p)
    mode = ctx.param("mode", "mDm")
    weight = node_vector(ctx.param("weight"), gf, 1.0 + gf.free_coords[:, 0] / p.lengths[0])
    triple = multiplicative_triple(p, mode, weight)
    bundle = multiplicative_ops(p, mode, weight)

    rows = [
        ["self_adjoint_defect", self_adjoint_defect(bundle.A, triple.H.gram)],
        ["lowest_eigenvalue", float(np.min(linalg.eigvals(bundle.A).real))],
    ]
    if mode == "mDm":
        cset = ConvexSetDescriptor.weighted_box(weight, np.real(np.diag(triple.H.gram)))
        times = ctx.time_grid("0.01:1:log3") if "t" in ctx.params else MARKOV_TIMES
        dynamic = dynamic_invariance_check(bundle.A, cset, times, rng=ctx.rng)
        rows.append(["weighted_box_distance", dynamic["worst_distance"]])

    paths = [
        write_csv(ctx.path("operator.csv"), ["i", "j", "re", "im"], matrix_rows(bundle.A)),
        write_csv(ctx.path("multiplicative.csv"), ["check", "residual"], rows),
    ]
    click.echo(f"{mode}: " + " ".join(f"{name}={value:.4g}" for name, value in rows))
    return paths

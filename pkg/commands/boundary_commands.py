"""
Boundary commands - Dirichlet-to-Neumann and Wentzell operators
"""

import logging
from typing import List

import click

from artifacts import matrix_rows, write_csv
from commands.common import TaskContext, require_grid, task_command
from services.assoc_op import relative_error
from services.boundary_ops import (
    DtnProblem, WentzellProblem, dtn_assemble, dtn_monotonicity_log, dtn_oracle_interval, dtn_schur_complement,
    wentzell_assemble, wentzell_h1_realization, wentzell_positivity_check,
)
from services.errors import OnDirichletSpectrum

logger = logging.getLogger(__name__)


@task_command("dtn", "Dirichlet-to-Neumann operator at a spectral shift.")
def dtn(ctx: TaskContext) -> List[str]:
    grid = require_grid(ctx)
    p = DtnProblem(grid, float(ctx.param("lambda", 0.0)))
    bundle = dtn_assemble(p)
    path = write_csv(ctx.path("dtn.csv"), ["i", "j", "re", "im"], matrix_rows(bundle.A))

    summary = f"lambda={p.lam:g} schur_drift={relative_error(bundle.A, dtn_schur_complement(p)):.3e}"
    if grid.dim == 1:
        try:
            oracle = dtn_oracle_interval(p.lam, grid.lengths[0])
            summary += f" interval_error={relative_error(bundle.A, oracle):.3e}"
        except OnDirichletSpectrum as e:
            logger.info("no closed form: %s", e.message)
    lambdas = ctx.param("monotonicity_lambdas")
    if lambdas:
        dtn_monotonicity_log(grid, [float(lam) for lam in lambdas])
    click.echo(summary)
    return [path]


@task_command("wentzell", "Wentzell operator, its domain identities and positivity.")
def wentzell(ctx: TaskContext) -> List[str]:
    p = WentzellProblem.from_grid(require_grid(ctx))
    op = wentzell_assemble(p)
    realization = wentzell_h1_realization(p, op)
    positivity = wentzell_positivity_check(p, samples=int(ctx.param("samples", 50)), rng=ctx.rng, op=op)

    rows = [
        ["domain", op.domain_residual],
        ["h1_interior", realization["interior_residual"]],
        ["h1_boundary", realization["boundary_residual"]],
        ["h1_operator", realization["operator_gap"]],
        ["h1_spectrum", realization["spectrum_gap"]],
        ["lattice_vs_positive", 0.0 if positivity["agree"] else 1.0],
        ["sup_bound", positivity["sup_bound"]],
    ]
    path = write_csv(ctx.path("wentzell.csv"), ["check", "residual"], rows)
    click.echo(f"omega={op.certificate['omega']:g} lattice={positivity['lattice']} positive={positivity['positive']}")
    return [path]

"""
Analysis commands - sector certificates and operator extraction
"""

import logging
from typing import List

import click

from artifacts import encode_array, matrix_rows, write_csv, write_json
from commands.common import TaskContext, operator_bundle, task_command
from services.assoc_op import numerical_range_margin, regular_part
from services.errors import NotElliptic, SchemaError
from services.form_core import (
    FormTriple, SeminormedFormData, continuity_constant, kernel_and_Va, quotient_completion, sector_fit,
)
from settings import DEFAULT_SAMPLES

logger = logging.getLogger(__name__)


@task_command("analyze", "Sector certificate and j-ellipticity of a form.")
def analyze(ctx: TaskContext) -> List[str]:
    problem = ctx.problem
    extra = {}
    if isinstance(problem, SeminormedFormData):
        triple, _ = quotient_completion(problem, ctx.tol)
        extra["completion_dim"] = triple.V.dim
        try:
            _, c = regular_part(problem, ctx.tol)
            extra["regular_part_c"] = c
        except NotElliptic as e:
            logger.info("no regular part: %s", e.message)
    elif isinstance(problem, FormTriple):
        triple = problem
    else:
        raise SchemaError("analyze needs a form or seminormed problem.")

    cert = sector_fit(triple, ctx.tol)
    decomposition = kernel_and_Va(triple, ctx.tol)
    doc = cert.as_dict()
    doc.update(extra)
    doc.update({
        "continuity": continuity_constant(triple),
        "dim_ker_j": int(decomposition.ker_basis.shape[1]),
        "dim_va": int(decomposition.va_basis.shape[1]),
        "direct_sum": decomposition.direct_sum,
        "condition": decomposition.condition,
        "angle_witness": None if cert.angle_witness is None else encode_array(cert.angle_witness),
        "vertex_witness": None if cert.vertex_witness is None else encode_array(cert.vertex_witness),
    })
    path = write_json(ctx.path("certificate.json"), doc)
    click.echo(f"gamma={cert.vertex:g} tan(theta)={cert.tan_theta:g}")
    return [path]


@task_command("extract", "Operator associated with a form.")
def extract(ctx: TaskContext) -> List[str]:
    bundle = operator_bundle(ctx.problem, ctx.tol)
    path = write_csv(ctx.path("operator.csv"), ["i", "j", "re", "im"], matrix_rows(bundle.A))
    margin = numerical_range_margin(bundle, int(ctx.param("samples", DEFAULT_SAMPLES)), ctx.rng)
    click.echo(f"dim={bundle.A.shape[0]} omega={bundle.omega:g} mu={bundle.mu:.6g} sector_margin={margin:.3e}")
    return [path]

"""
Evolution commands - trajectories, regularization sweeps and invariance
"""

import logging
from typing import List

import click
import numpy as np

from artifacts import decode_array, write_csv
from commands.common import TaskContext, as_vector, bump, node_vector, operator_bundle, require_grid, task_command
from services.elliptic_assembly import GridProblem, assemble_form, multiplicative_ops, multiplicative_triple
from services.errors import SchemaError
from services.evolution import trajectory
from services.form_core import FormTriple, sector_fit
from services.invariance import (
    SET_KINDS, ConvexSetDescriptor, criterion_check, dynamic_invariance_check, markov_suite,
)
from services.regularization import convergence_sweep, dyadic
from settings import DEFAULT_N_MAX, DEFAULT_SAMPLES, MARKOV_TIMES

logger = logging.getLogger(__name__)

FUNCTIONALS = ["mass", "l1", "sup", "l2"]

# degenerate half-interval benchmark shift
GRID_LAMBDA = 50.0


@task_command("evolve", "Trajectory of the semigroup on a time grid.")
def evolve(ctx: TaskContext) -> List[str]:
    bundle = operator_bundle(ctx.problem, ctx.tol)
    n = bundle.A.shape[0]
    if isinstance(ctx.problem, GridProblem):
        gf = assemble_form(ctx.problem)
        x0 = node_vector(ctx.param("x0"), gf, bump(gf))
    else:
        x0 = as_vector(ctx.param("x0"), n, np.ones(n))

    functionals = ctx.param("functionals", FUNCTIONALS)
    unknown = set(functionals) - set(FUNCTIONALS)
    if unknown:
        raise SchemaError(f"Unknown functionals: {sorted(unknown)}.")

    weights = np.real(np.diag(bundle.gram_h))
    table = trajectory(bundle.A, x0, ctx.time_grid("0:1:11"), functionals, weights, bundle.gram_h)
    path = write_csv(ctx.path("trajectory.csv"), table.header, table.rows())
    click.echo(f"{len(table.times)} times, dim={n}")
    return [path]


@task_command("regularize", "Resolvent convergence of a + (1/n) b.")
def regularize(ctx: TaskContext) -> List[str]:
    problem = ctx.problem
    if isinstance(problem, GridProblem):
        gf = assemble_form(problem)
        a = gf.triple
        b = gf.laplacian[np.ix_(gf.free, gf.free)]
        f = node_vector(ctx.param("f"), gf, bump(gf))
        lam = float(ctx.param("lambda", GRID_LAMBDA))
    else:
        if "b" not in ctx.params:
            raise SchemaError("regularize on a form problem needs params.b.")
        a = problem
        b = decode_array(ctx.params["b"], 2)
        n = problem.form.shape[0]
        gamma = sector_fit(problem, ctx.tol).vertex if isinstance(problem, FormTriple) else problem.gamma
        f = as_vector(ctx.param("f"), problem.jmap.shape[0], np.ones(problem.jmap.shape[0]))
        lam = float(ctx.param("lambda", max(-gamma, 0.0) + 1.0))
        logger.debug("form of dimension %d, gamma=%g", n, gamma)

    report = convergence_sweep(a, b, lam, f, dyadic(int(ctx.param("n_max", DEFAULT_N_MAX))))
    path = write_csv(ctx.path("convergence.csv"), ["n", "strong_error", "norm_error"], report.rows())
    click.echo(f"lambda={lam:g} monotone={report.monotone()} norm decay={report.decay('norm'):.3e}")
    return [path]


def _box_sets(ctx: TaskContext, n: int, weights: np.ndarray) -> List[ConvexSetDescriptor]:
    sets = []
    for kind in ctx.param("sets", list(SET_KINDS)):
        if kind == "weighted_box":
            continue
        if kind not in SET_KINDS:
            raise SchemaError(f"Unknown convex set '{kind}'.")
        bound = np.full(n, float(ctx.param("bound", 1.0))) if kind == "upper_box" else None
        sets.append(ConvexSetDescriptor(kind, bound, weights))
    return sets


@task_command("invariance", "Invariance of convex sets and the Markov properties.")
def invariance(ctx: TaskContext) -> List[str]:
    p = require_grid(ctx)
    gf = assemble_form(p)
    n = gf.free.size
    weights = np.real(np.diag(gf.triple.H.gram))
    A = operator_bundle(p, ctx.tol).A
    samples = int(ctx.param("samples", DEFAULT_SAMPLES))
    times = ctx.time_grid("0.01:1:log3") if "t" in ctx.params else MARKOV_TIMES

    rows = []
    for cset in _box_sets(ctx, n, weights):
        criterion = criterion_check(gf.triple, cset, samples=samples, rng=ctx.rng)
        dynamic = dynamic_invariance_check(A, cset, times, samples=min(samples, 100), rng=ctx.rng)
        rows.append([f"criterion_{cset.kind}", criterion["worst_margin"], criterion["passes"]])
        rows.append([f"dynamic_{cset.kind}", dynamic["worst_distance"], dynamic["passes"]])

    if "weighted_box" in ctx.param("sets", list(SET_KINDS)):
        m = node_vector(ctx.param("weight"), gf, 1.0 + gf.free_coords[:, 0] / p.lengths[0])
        triple = multiplicative_triple(p, "mDm", m)
        cset = ConvexSetDescriptor.weighted_box(m, weights)
        criterion = criterion_check(triple, cset, lift=lambda u: np.minimum(np.real(u), 1.0),
                                    samples=samples, rng=ctx.rng)
        dynamic = dynamic_invariance_check(multiplicative_ops(p, "mDm", m).A, cset, times,
                                           samples=min(samples, 100), rng=ctx.rng)
        rows.append(["criterion_weighted_box", criterion["worst_margin"], criterion["passes"]])
        rows.append(["dynamic_weighted_box", dynamic["worst_distance"], dynamic["passes"]])

    for name, flag in markov_suite(A, weights, times).items():
        rows.append([f"markov_{name}", float("nan"), flag])

    path = write_csv(ctx.path("invariance.csv"), ["check", "worst_margin", "pass"], rows)
    failed = [row[0] for row in rows if not row[2]]
    click.echo("all checks pass" if not failed else f"failed: {', '.join(failed)}")
    return [path]

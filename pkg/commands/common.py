"""
Shared command plumbing - options, task registry and the run loop
"""

import logging
import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import click
import numpy as np

import settings
from artifacts import (
    build_manifest, load_document, parse_time_grid, problem_from_document, random_generator,
    refusal_document, validate_run_config, write_json,
)
from services.assoc_op import OperatorBundle, extract_incomplete, extract_operator
from services.elliptic_assembly import GridForm, GridProblem, assemble_form
from services.errors import RefusalError, SchemaError
from services.form_core import SeminormedFormData

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INTERNAL, EXIT_SCHEMA, EXIT_REFUSAL = 0, 1, 2, 3


@dataclass
class TaskContext:
    """Everything a task handler needs for one run."""

    task: str
    problem: object
    params: Dict
    out: str
    rng: np.random.Generator
    seed: int
    tol: float

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def param(self, key: str, default=None):
        return self.params.get(key, default)

    def time_grid(self, default: str) -> np.ndarray:
        value = self.params.get("t", default)
        if isinstance(value, str):
            return parse_time_grid(value)
        return np.asarray(value, dtype=float)


Handler = Callable[[TaskContext], List[str]]
HANDLERS: Dict[str, Handler] = {}


def _overrides(options: Dict) -> Dict:
    mapping = {"lam": "lambda", "t_spec": "t", "n_max": "n_max", "samples": "samples", "seed": "seed", "tol": "tol"}
    return {mapping[k]: v for k, v in options.items() if k in mapping and v is not None}


def execute(task: Optional[str], config_path: str, out: Optional[str], options: Dict) -> int:
    """
    Run one task from a configuration file.

    Returns:
        int: process exit code (0 ok, 1 internal, 2 schema, 3 refusal)
    """
    start = time.perf_counter()
    out_dir = out
    try:
        doc = load_document(config_path)
        ok, msg = validate_run_config(doc)
        if not ok:
            raise SchemaError(msg)
        if task is None:
            task = doc.get("task")
            if task is None:
                raise SchemaError("The configuration does not name a task.")
        elif "task" in doc and doc["task"] != task:
            raise SchemaError(f"Command '{task}' does not match configuration task '{doc['task']}'.")

        params = dict(doc.get("params", {}))
        params.update(_overrides(options))
        seed = int(params.get("seed", doc.get("seed", settings.DEFAULT_SEED)))
        tol = float(params.get("tol", settings.RANK_TOL))
        out_dir = out or doc.get("output", "out")
        os.makedirs(out_dir, exist_ok=True)

        ctx = TaskContext(task, problem_from_document(doc["problem"]), params, out_dir, random_generator(seed), seed, tol)
        logger.info("running %s (seed %d) -> %s", task, seed, out_dir)
        artifacts = HANDLERS[task](ctx)

        manifest = build_manifest(task, doc, seed, time.perf_counter() - start, artifacts, tol)
        write_json(os.path.join(out_dir, "manifest.json"), manifest)
        logger.info("finished %s: %s", task, ", ".join(os.path.basename(a) for a in artifacts))
        return EXIT_OK

    except SchemaError as e:
        logger.error("invalid configuration: %s", e.message)
        click.echo(f"error: {e.message}", err=True)
        return EXIT_SCHEMA

    except RefusalError as e:
        logger.error("refused: %s: %s", type(e).__name__, e.message)
        click.echo(f"refused: {type(e).__name__}: {e.message}", err=True)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            write_json(os.path.join(out_dir, "refusal.json"), refusal_document(e))
        return EXIT_REFUSAL

    except Exception as e:
        logger.error("internal error: %s: %s", type(e).__name__, e)
        click.echo(f"internal error: {e}", err=True)
        return EXIT_INTERNAL


def task_options(f):
    """Flags shared by every task command."""
    options = [
        click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
                     help="Run configuration (JSON)."),
        click.option("--out", default=None, type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", type=int, default=None, help="Seed for all sampling."),
        click.option("--tol", type=float, default=None, help="Rank tolerance."),
        click.option("--lambda", "lam", type=float, default=None, help="Spectral shift."),
        click.option("--t", "t_spec", default=None, help="Time grid A:B:logN or A:B:N."),
        click.option("--n-max", "n_max", type=int, default=None, help="Largest regularization index."),
        click.option("--samples", type=int, default=None, help="Sample count for sampled checks."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def task_command(name: str, help_text: str):
    """Register handler under name and wrap it in a click command."""
    def decorator(handler: Handler) -> click.Command:
        HANDLERS[name] = handler

        @click.command(name=name, help=help_text)
        @task_options
        @click.pass_context
        def command(ctx, config_path, out, **options):
            ctx.exit(execute(name, config_path, out, options))

        return command
    return decorator


@click.command(name="run", help="Run the task named in the configuration.")
@task_options
@click.pass_context
def run_command(ctx, config_path, out, **options):
    ctx.exit(execute(None, config_path, out, options))


def as_vector(value, size: int, default) -> np.ndarray:
    """Decode an optional vector parameter; scalars broadcast."""
    if value is None:
        return default
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.ndim == 2 and arr.shape[-1] == 2:
        arr = arr[:, 0] + 1j * arr[:, 1]
    if arr.ndim != 1 or arr.shape[0] != size:
        raise SchemaError(f"Expected a vector with {size} entries, got shape {arr.shape}.")
    return arr


def node_vector(value, gf: GridForm, default: np.ndarray) -> np.ndarray:
    """Vector on the free nodes; values given on all nodes are restricted."""
    if value is not None and gf.free.size != gf.problem.n_nodes and np.size(value) == gf.problem.n_nodes:
        return as_vector(value, gf.problem.n_nodes, None)[gf.free]
    return as_vector(value, gf.free.size, default)


def bump(gf: GridForm, width: float = 0.05) -> np.ndarray:
    """Gaussian bump at a quarter of the first length, centred in the other directions."""
    lengths = np.asarray(gf.problem.lengths)
    center = lengths / 2
    center[0] = lengths[0] / 4
    X = gf.free_coords
    return np.exp(-np.sum((X - center) ** 2, axis=1) / (2 * width ** 2))


def operator_bundle(problem, rank_tol: float) -> OperatorBundle:
    """Extract the operator of any supported problem type."""
    if isinstance(problem, GridProblem):
        return extract_operator(assemble_form(problem).triple, rank_tol)
    if isinstance(problem, SeminormedFormData):
        return extract_incomplete(problem, rank_tol)
    return extract_operator(problem, rank_tol)


def require_grid(ctx: TaskContext) -> GridProblem:
    if not isinstance(ctx.problem, GridProblem):
        raise SchemaError(f"Task '{ctx.task}' needs a grid problem.")
    return ctx.problem

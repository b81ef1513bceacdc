"""
Artifacts module for Sectoria
Handles problem documents, CSV/JSON outputs, manifests and refusal records
"""

import csv
import hashlib
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import settings
from services.elliptic_assembly import BC_KINDS, BoundaryCondition, GridProblem, coefficient_field
from services.errors import RefusalError, SchemaError
from services.form_core import FormTriple, SeminormedFormData

logger = logging.getLogger(__name__)

TASKS = ("analyze", "extract", "evolve", "regularize", "invariance", "gaffney", "dtn", "wentzell", "multiplicative")
CONFIG_KEYS = {"task", "problem", "params", "output", "seed"}
PARAM_KEYS = {
    "lambda", "t", "n_max", "samples", "seed", "tol", "functionals", "x0", "f", "b", "mode", "weight",
    "omega1", "omega2", "u", "R", "center", "sets", "bound", "monotonicity_lambdas",
}
PROBLEM_KEYS = {
    "form": {"type", "form", "jmap", "gram_v", "gram_h"},
    "seminormed": {"type", "form", "jmap", "gamma", "gram_h"},
    "grid": {"type", "dim", "lengths", "cells", "coefficients", "bc", "theta", "weight"},
}
BC_KEYS = {"kind", "beta", "alpha", "B"}


def random_generator(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; child streams come from .spawn()."""
    return np.random.Generator(np.random.PCG64(seed))


def decode_array(value, ndim: int) -> np.ndarray:
    """
    Decode a JSON number/array into a complex array of rank ndim.

    Entries are plain reals or [re, im] pairs, used consistently.
    """
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("Arrays must be rectangular with real or [re, im] entries.")
    if arr.ndim == ndim:
        return arr.astype(complex)
    if arr.ndim == ndim + 1 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if ndim == 2 and arr.ndim == 1:
        return arr.astype(complex)[None, :]
    if ndim == 1 and arr.ndim == 0:
        return arr.astype(complex).reshape(1)
    if ndim == 2 and arr.ndim == 0:
        return arr.astype(complex).reshape(1, 1)
    raise SchemaError(f"Expected a rank-{ndim} array, got shape {arr.shape}.")


def encode_array(arr: np.ndarray):
    """Complex arrays as nested [re, im] pairs, real arrays as plain numbers."""
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        return np.stack([arr.real, arr.imag], axis=-1).tolist()
    return arr.tolist()


def load_document(path: str) -> dict:
    """Read a JSON configuration document."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise SchemaError("The configuration must be a JSON object.")
    return doc


def validate_problem(problem) -> Tuple[bool, str]:
    """
    Validate a problem document.

    Returns:
        tuple: (valid: bool, message: str)
    """
    if not isinstance(problem, dict):
        return False, "problem must be an object."

    kind = problem.get("type")
    if kind not in PROBLEM_KEYS:
        return False, f"problem.type must be one of {sorted(PROBLEM_KEYS)}."

    unknown = set(problem) - PROBLEM_KEYS[kind]
    if unknown:
        return False, f"Unknown problem keys: {sorted(unknown)}."

    if kind in ("form", "seminormed") and "form" not in problem:
        return False, "problem.form is required."

    if kind == "grid":
        for key in ("dim", "lengths", "cells"):
            if key not in problem:
                return False, f"problem.{key} is required."
        bc = problem.get("bc", {"kind": "neumann"})
        if not isinstance(bc, dict) or bc.get("kind") not in BC_KINDS:
            return False, f"problem.bc.kind must be one of {list(BC_KINDS)}."
        unknown = set(bc) - BC_KEYS
        if unknown:
            return False, f"Unknown bc keys: {sorted(unknown)}."

    return True, "ok"


def validate_run_config(doc: dict) -> Tuple[bool, str]:
    """
    Validate a run configuration before anything is executed.

    Returns:
        tuple: (valid: bool, message: str)
    """
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        return False, f"Unknown configuration keys: {sorted(unknown)}."

    if "task" in doc and doc["task"] not in TASKS:
        return False, f"task must be one of {list(TASKS)}."

    if "problem" not in doc:
        return False, "problem is required."

    params = doc.get("params", {})
    if not isinstance(params, dict):
        return False, "params must be an object."
    unknown = set(params) - PARAM_KEYS
    if unknown:
        return False, f"Unknown params keys: {sorted(unknown)}."

    if "seed" in doc and not isinstance(doc["seed"], int):
        return False, "seed must be an integer."

    return validate_problem(doc["problem"])


def _coefficient_value(value, dim: int):
    arr = np.asarray(value, dtype=float)
    if arr.shape == (2,):
        return complex(arr[0], arr[1])
    if arr.shape == (dim, dim, 2):
        return arr[..., 0] + 1j * arr[..., 1]
    return arr


def decode_coefficients(source, dim: int):
    """Coefficient entries with [re, im] pairs turned into complex values."""
    if isinstance(source, dict):
        return {key: _coefficient_value(value, dim) for key, value in source.items()}
    arr = np.asarray(source, dtype=float)
    if arr.ndim == 4 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    return arr


def problem_from_document(problem: dict):
    """Build a FormTriple, SeminormedFormData or GridProblem from a validated document."""
    kind = problem["type"]
    if kind in ("form", "seminormed"):
        form = decode_array(problem["form"], 2)
        jmap = decode_array(problem["jmap"], 2) if "jmap" in problem else np.eye(form.shape[0])
        gram_h = decode_array(problem["gram_h"], 2) if "gram_h" in problem else None
        if kind == "seminormed":
            return SeminormedFormData(form, jmap, float(problem.get("gamma", 0.0)), gram_h)
        gram_v = decode_array(problem["gram_v"], 2) if "gram_v" in problem else None
        return FormTriple.from_matrices(form, jmap, gram_v, gram_h)

    dim = int(problem["dim"])
    lengths = tuple(float(x) for x in problem["lengths"])
    cells = tuple(int(x) for x in problem["cells"])
    coeffs = decode_coefficients(problem.get("coefficients", {"uniform": 1.0}), dim)
    coefficients = coefficient_field(dim, cells, lengths, coeffs)
    bc_doc = problem.get("bc", {"kind": "neumann"})
    bc = BoundaryCondition(
        kind=bc_doc["kind"],
        beta=decode_array(bc_doc["beta"], 1) if "beta" in bc_doc else None,
        alpha=decode_array(bc_doc["alpha"], 1) if "alpha" in bc_doc else None,
        B=decode_array(bc_doc["B"], 2) if "B" in bc_doc else None,
    )
    weight = np.asarray(problem["weight"], dtype=float) if "weight" in problem else None
    theta = float(problem["theta"]) if "theta" in problem else None
    return GridProblem(dim, lengths, cells, coefficients, bc, theta, weight)


def parse_time_grid(grid: str) -> np.ndarray:
    """'A:B:logN' gives N log-spaced times, 'A:B:N' N evenly spaced ones."""
    parts = grid.split(":")
    if len(parts) != 3:
        raise SchemaError(f"Time grid '{grid}' must look like A:B:logN or A:B:N.")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = parts[2]
        if count.startswith("log"):
            n = int(count[3:])
            if start <= 0:
                raise SchemaError("Log-spaced time grids need a positive start.")
            return np.geomspace(start, stop, n)
        return np.linspace(start, stop, int(count))
    except ValueError:
        raise SchemaError(f"Time grid '{grid}' has non-numeric parts.")


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Write a CSV table with a header row and round-trip float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("wrote %s (%d rows)", path, len(rows))
    return path


def matrix_rows(A: np.ndarray) -> List[List]:
    """Rows i, j, re, im of a dense matrix."""
    A = np.atleast_2d(A)
    return [[i, j, float(A[i, j].real), float(A[i, j].imag)]
            for i in range(A.shape[0]) for j in range(A.shape[1])]


def write_json(path: str, doc: dict) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_manifest(task: str, doc: dict, seed: int, wall_time: float, artifacts: List[str],
                   tol: Optional[float] = None) -> Dict:
    """Run manifest: what ran, on which config, with which tolerances."""
    return {
        "task": task,
        "seed": seed,
        "config_sha256": config_hash(doc),
        "version": settings.VERSION,
        "wall_time_s": wall_time,
        "artifacts": [os.path.basename(a) for a in artifacts],
        "tolerances": {
            "rank_tol": tol if tol is not None else settings.RANK_TOL,
            "operator_tol": settings.OPERATOR_TOL,
            "shift_tol": settings.SHIFT_TOL,
            "sector_margin": settings.SECTOR_MARGIN,
        },
    }


def refusal_document(error: RefusalError) -> Dict:
    """Machine-readable record of a mathematical refusal."""
    witness = None
    if error.witness is not None:
        w = np.asarray(error.witness, dtype=complex).ravel()
        witness = [[float(x.real), float(x.imag)] for x in w]
    return {"error": type(error).__name__, "message": error.message, "witness": witness}

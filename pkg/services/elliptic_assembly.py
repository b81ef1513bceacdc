"""
Elliptic Assembly Module - Degenerate second-order forms on grids

Discretizes a(u, v) = sum_ij int a_ij (d_i u) conj(d_j v) with flux-form
differences and lumped masses on uniform 1D/2D grids, and runs the
Davies-Gaffney, tail-mass and conservation harnesses on the result.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from services.assoc_op import OperatorBundle, extract_operator, self_adjoint_defect
from services.errors import (
    CellNotSectorial, NonPositiveWeight, SchemaError, SetsOverlap, SupportTooLarge,
    WrongBoundaryCondition,
)
from services.evolution import propagate, propagator
from services.form_core import FormTriple, HilbertSpaceSpec
from settings import GAFFNEY_SLACK, OPERATOR_TOL

logger = logging.getLogger(__name__)

BC_KINDS = ("dirichlet", "neumann", "robin", "wentzell")
MULTIPLICATIVE_MODES = ("mDm", "rhoD", "Drho")
CELL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    kind: str = "neumann"
    beta: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise SchemaError(f"Unknown boundary condition '{self.kind}'.")


@dataclass(frozen=True, eq=False)
class GridProblem:
    """Uniform grid on a box with one complex d x d coefficient matrix per cell."""

    dim: int
    lengths: Tuple[float, ...]
    cells: Tuple[int, ...]
    coefficients: np.ndarray
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)
    theta: Optional[float] = None
    weight: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise SchemaError("Only 1D and 2D grids are supported.")
        if len(self.lengths) != self.dim or len(self.cells) != self.dim:
            raise SchemaError("lengths and cells must have one entry per dimension.")
        if any(c < 1 for c in self.cells) or any(length <= 0 for length in self.lengths):
            raise SchemaError("cells must be positive integers and lengths positive.")
        coefficients = np.asarray(self.coefficients, dtype=complex).reshape(self.n_cells, self.dim, self.dim)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def steps(self) -> Tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def n_nodes(self) -> int:
        return int(np.prod([n + 1 for n in self.cells]))

    def with_bc(self, bc: BoundaryCondition) -> "GridProblem":
        return GridProblem(self.dim, self.lengths, self.cells, self.coefficients, bc, self.theta, self.weight)


@dataclass(frozen=True, eq=False)
class GridForm:
    """Assembled grid form; index arrays refer to the full node numbering."""

    problem: GridProblem
    triple: FormTriple
    coords: np.ndarray
    free: np.ndarray
    boundary: np.ndarray
    sigma: np.ndarray
    mass: np.ndarray
    stiffness: np.ndarray
    laplacian: np.ndarray
    theta: float

    @property
    def interior(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.coords.shape[0]), self.boundary)

    @property
    def free_coords(self) -> np.ndarray:
        return self.coords[self.free]


@dataclass(frozen=True, eq=False)
class GaffneyReport:
    times: np.ndarray
    lhs: np.ndarray
    bound: np.ndarray
    M: float
    ratios: np.ndarray
    distance: float
    t_min: float

    def passes(self, slack: float = GAFFNEY_SLACK) -> bool:
        valid = self.times >= self.t_min
        return bool(np.all(self.ratios[valid] <= slack))

    def rows(self) -> List[List[float]]:
        return [[float(t), float(l), float(b), float(r)]
                for t, l, b, r in zip(self.times, self.lhs, self.bound, self.ratios)]


@dataclass(frozen=True, eq=False)
class TailReport:
    radii: np.ndarray
    tails: np.ndarray
    envelope: np.ndarray
    c_hat: float
    slope: float
    reference_slope: float
    passes: bool


def coefficient_field(dim: int, cells: Sequence[int], lengths: Sequence[float], source) -> np.ndarray:
    """
    Per-cell coefficient matrices from a document entry.

    Accepts {"uniform": c}, {"left": c, "right": c} split at half the first
    length, or an explicit nested array of shape (n_cells, d, d). A scalar c
    stands for c times the identity.
    """
    n_cells = int(np.prod(cells))

    def as_matrix(value) -> np.ndarray:
        value = np.asarray(value, dtype=complex)
        if value.ndim == 0:
            return value * np.eye(dim, dtype=complex)
        return value.reshape(dim, dim)

    if isinstance(source, dict) and "uniform" in source:
        return np.repeat(as_matrix(source["uniform"])[None], n_cells, axis=0)

    if isinstance(source, dict) and ("left" in source or "right" in source):
        left, right = as_matrix(source.get("left", 0.0)), as_matrix(source.get("right", 0.0))
        h = lengths[0] / cells[0]
        centers = (np.arange(cells[0]) + 0.5) * h
        split = np.where(centers < lengths[0] / 2)[0]
        per_x = np.array([left if c in split else right for c in range(cells[0])])
        if dim == 1:
            return per_x
        return np.tile(per_x, (cells[1], 1, 1))

    return np.asarray(source, dtype=complex).reshape(n_cells, dim, dim)


def laplacian_problem(dim: int = 1, lengths: Sequence[float] = (1.0,), cells: Sequence[int] = (32,),
                      bc: str = "neumann", coefficient: complex = 1.0, **bc_data) -> GridProblem:
    """Convenience constructor for scalar-coefficient problems."""
    bc_data = {k: None if v is None else np.asarray(v) for k, v in bc_data.items()}
    coefficients = coefficient_field(dim, cells, lengths, {"uniform": coefficient})
    return GridProblem(dim, tuple(lengths), tuple(cells), coefficients, BoundaryCondition(bc, **bc_data))


def grid_coordinates(p: GridProblem) -> np.ndarray:
    axes = [np.linspace(0.0, L, n + 1) for L, n in zip(p.lengths, p.cells)]
    if p.dim == 1:
        return axes[0][:, None]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def boundary_nodes(p: GridProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Boundary node indices and their boundary measure sigma."""
    if p.dim == 1:
        return np.array([0, p.cells[0]]), np.ones(2)

    nx, ny = p.cells
    hx, hy = p.steps
    nodes, sigma = [], []
    for j in range(ny + 1):
        for i in range(nx + 1):
            on_x = i in (0, nx)
            on_y = j in (0, ny)
            if not (on_x or on_y):
                continue
            weight = 0.0
            if on_y:
                weight += hx if 0 < i < nx else hx / 2
            if on_x:
                weight += hy if 0 < j < ny else hy / 2
            nodes.append(i + (nx + 1) * j)
            sigma.append(weight)
    return np.array(nodes), np.array(sigma)


def lumped_mass(p: GridProblem) -> np.ndarray:
    factors = []
    for L, n in zip(p.lengths, p.cells):
        w = np.full(n + 1, L / n)
        w[0] = w[-1] = L / (2 * n)
        factors.append(w)
    if p.dim == 1:
        return factors[0]
    return np.outer(factors[1], factors[0]).ravel()


def cell_angle(a: np.ndarray, index: int = -1) -> float:
    """
    Smallest theta with sum_ij a_ij xi_i conj(xi_j) in the closed sector of angle theta.

    Raises:
        CellNotSectorial: no such theta below pi/2 exists
    """
    b = a.T
    h = (b + b.conj().T) / 2
    k = (b - b.conj().T) / 2j
    scale = max(1.0, float(np.max(np.abs(a))))
    w, U = linalg.eigh(h)
    if w[0] < -CELL_TOL * scale:
        raise CellNotSectorial(f"Cell {index}: coefficient has negative real part.", cell=index, witness=U[:, 0])
    live = w > CELL_TOL * scale
    dead = U[:, ~live]
    if dead.shape[1] and np.linalg.norm(k @ dead) > CELL_TOL * scale:
        raise CellNotSectorial(f"Cell {index}: imaginary part survives where the real part vanishes.",
                               cell=index, witness=dead[:, 0])
    if not np.any(live):
        return 0.0
    R = U[:, live]
    tan = np.max(np.abs(linalg.eigvalsh(R.conj().T @ k @ R, R.conj().T @ h @ R)))
    return float(np.arctan(tan))


def check_cell(a: np.ndarray, theta: float, index: int) -> None:
    """Exact sector test: tan(theta) Re +- Im of the cell symbol must be PSD."""
    b = a.T
    h = (b + b.conj().T) / 2
    k = (b - b.conj().T) / 2j
    scale = max(1.0, float(np.max(np.abs(a))))
    tan = np.tan(theta)
    for sign in (1.0, -1.0):
        w, U = linalg.eigh(tan * h + sign * k)
        if w[0] < -CELL_TOL * scale:
            raise CellNotSectorial(
                f"Cell {index}: symbol leaves the sector of angle {theta:.6g}.", cell=index, witness=U[:, 0]
            )


def _cell_matrix_1d(a: np.ndarray, h: float) -> np.ndarray:
    d = np.array([-1.0, 1.0]) / h
    return h * a[0, 0] * np.outer(d, d)


def _cell_matrix_2d(a: np.ndarray, hx: float, hy: float) -> np.ndarray:
    # local nodes: (0,0), (1,0), (0,1), (1,1)
    dx_b = np.array([-1.0, 1.0, 0.0, 0.0]) / hx
    dx_t = np.array([0.0, 0.0, -1.0, 1.0]) / hx
    dy_l = np.array([-1.0, 0.0, 1.0, 0.0]) / hy
    dy_r = np.array([0.0, -1.0, 0.0, 1.0]) / hy
    dx, dy = (dx_b + dx_t) / 2, (dy_l + dy_r) / 2
    local = (
        a[0, 0] * (np.outer(dx_b, dx_b) + np.outer(dx_t, dx_t)) / 2
        + a[1, 1] * (np.outer(dy_l, dy_l) + np.outer(dy_r, dy_r)) / 2
        + a[0, 1] * np.outer(dy, dx)
        + a[1, 0] * np.outer(dx, dy)
    )
    return hx * hy * local


def cell_nodes(p: GridProblem, c: int) -> np.ndarray:
    if p.dim == 1:
        return np.array([c, c + 1])
    nx = p.cells[0]
    ci, cj = c % nx, c // nx
    base = ci + (nx + 1) * cj
    return np.array([base, base + 1, base + nx + 1, base + nx + 2])


def stiffness_matrix(p: GridProblem, coefficients: Optional[np.ndarray] = None) -> np.ndarray:
    """Full-node stiffness of the flux-form discretization."""
    coefficients = p.coefficients if coefficients is None else coefficients
    n = p.n_nodes
    S = np.zeros((n, n), dtype=complex)
    for c in range(p.n_cells):
        idx = cell_nodes(p, c)
        if p.dim == 1:
            local = _cell_matrix_1d(coefficients[c], p.steps[0])
        else:
            local = _cell_matrix_2d(coefficients[c], *p.steps)
        S[np.ix_(idx, idx)] += local
    return S


def _positive(vector, name: str, size: int) -> np.ndarray:
    vector = np.asarray(vector, dtype=float).ravel()
    if vector.shape[0] != size:
        raise SchemaError(f"{name} has {vector.shape[0]} entries, expected {size}.")
    if np.any(vector <= 0) or not np.all(np.isfinite(vector)):
        raise NonPositiveWeight(f"{name} must be strictly positive.", witness=(vector <= 0).astype(float))
    return vector


def _boundary_vector(values, count: int, name: str) -> np.ndarray:
    values = np.atleast_1d(np.asarray(values, dtype=complex))
    if values.size == 1:
        return np.full(count, values[0])
    if values.size != count:
        raise SchemaError(f"{name} needs one value per boundary node ({count}).")
    return values


def assemble_form(p: GridProblem) -> GridForm:
    """
    Assemble the grid problem into a FormTriple on the free nodes.

    Dirichlet drops the boundary nodes; Robin and Wentzell add the boundary
    term with weights sigma. V carries the discrete H1 Gram, H the lumped
    (optionally weighted) L2 Gram.
    """
    theta = p.theta
    if theta is None:
        theta = max((cell_angle(p.coefficients[c], c) for c in range(p.n_cells)), default=0.0)
    for c in range(p.n_cells):
        check_cell(p.coefficients[c], theta, c)

    coords = grid_coordinates(p)
    boundary, sigma = boundary_nodes(p)
    mass = lumped_mass(p)
    S = stiffness_matrix(p)
    lap = stiffness_matrix(p, np.repeat(np.eye(p.dim)[None], p.n_cells, axis=0)).real

    form = S.copy()
    if p.bc.kind == "robin":
        beta = _boundary_vector(p.bc.beta if p.bc.beta is not None else 0.0, boundary.size, "beta")
        form[boundary, boundary] += beta * sigma
    elif p.bc.kind == "wentzell":
        alpha = _boundary_vector(p.bc.alpha if p.bc.alpha is not None else 0.0, boundary.size, "alpha")
        form[boundary, boundary] += alpha * sigma

    if p.bc.kind == "dirichlet":
        free = np.setdiff1d(np.arange(p.n_nodes), boundary)
    else:
        free = np.arange(p.n_nodes)

    h_weights = mass.copy()
    if p.weight is not None:
        h_weights = h_weights * _positive(p.weight, "weight", p.n_nodes)

    sub = np.ix_(free, free)
    triple = FormTriple(
        HilbertSpaceSpec.from_gram(lap[sub] + np.diag(mass[free])),
        HilbertSpaceSpec.from_gram(np.diag(h_weights[free])),
        form[sub],
        np.eye(free.size),
    )
    logger.debug("assembled %dD grid: %d nodes, %d free, bc=%s", p.dim, p.n_nodes, free.size, p.bc.kind)
    return GridForm(p, triple, coords, free, boundary, sigma, mass, S, lap, float(theta))


def nodes_in_box(gf: GridForm, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    """Positions (in free numbering) of nodes inside the closed box [lower, upper]."""
    X = gf.free_coords
    inside = np.all((X >= np.asarray(lower) - 1e-12) & (X <= np.asarray(upper) + 1e-12), axis=1)
    return np.where(inside)[0]


def gradient_energy(gf: GridForm, x: np.ndarray) -> float:
    """Discrete H1 seminorm |grad_h x| on the free nodes."""
    lap = gf.laplacian[np.ix_(gf.free, gf.free)]
    return float(np.sqrt(max(np.real(np.vdot(x, lap @ x)), 0.0)))


def _indicator(positions, size: int) -> np.ndarray:
    vector = np.zeros(size)
    vector[np.asarray(positions, dtype=int)] = 1.0
    return vector


def gaffney_constant(p: GridProblem, theta: float) -> float:
    """M = 3 (1 + tan theta)^2 (1 + sum_ij sup |a_ij|)."""
    sup = np.max(np.abs(p.coefficients), axis=0).sum()
    return float(3.0 * (1.0 + np.tan(theta)) ** 2 * (1.0 + sup))


def davies_gaffney_check(p: GridProblem, omega1: Sequence[int], omega2: Sequence[int],
                         t_grid: Sequence[float], bundle: Optional[OperatorBundle] = None) -> GaffneyReport:
    """
    Compare |(S_t 1_{omega1}, 1_{omega2})| with exp(-d^2/(4 M t)) |1_{omega1}| |1_{omega2}|.

    Args:
        p: grid problem
        omega1, omega2: disjoint node sets (free numbering)
        t_grid: times, those below h^2 are reported but not judged
        bundle: pre-extracted operator of p, if already at hand

    Returns:
        GaffneyReport
    """
    gf = assemble_form(p)
    omega1, omega2 = np.asarray(omega1, dtype=int), np.asarray(omega2, dtype=int)
    shared = np.intersect1d(omega1, omega2)
    if shared.size:
        raise SetsOverlap("The two node sets share nodes.", witness=_indicator(shared, gf.free.size))
    X = gf.free_coords
    gaps = linalg.norm(X[omega1][:, None, :] - X[omega2][None, :, :], axis=2)
    distance = float(np.min(gaps))
    if distance <= 0:
        i, k = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
        raise SetsOverlap("The two node sets have zero distance.",
                          witness=_indicator([omega1[i], omega2[k]], gf.free.size))

    A = (bundle or extract_operator(gf.triple)).A
    G = gf.triple.H.gram
    n = A.shape[0]
    u, v = np.zeros(n), np.zeros(n)
    u[omega1], v[omega2] = 1.0, 1.0
    norms = np.sqrt(u @ G.real @ u) * np.sqrt(v @ G.real @ v)

    M = gaffney_constant(p, gf.theta)
    times = np.asarray(t_grid, dtype=float)
    states = propagate(A, times, u, G)
    lhs = np.abs(v @ (G @ states))
    bound = np.exp(-distance ** 2 / (4 * M * times)) * norms
    t_min = min(p.steps) ** 2
    report = GaffneyReport(times, lhs, bound, M, lhs / bound, distance, t_min)
    logger.info("Davies-Gaffney: M=%g d=%g max ratio %.4g", M, distance, float(np.max(report.ratios)))
    return report


def tail_mass_check(p: GridProblem, u: np.ndarray, t: float, R_grid: Sequence[float],
                    center: Optional[Sequence[float]] = None, bundle: Optional[OperatorBundle] = None) -> TailReport:
    """
    L1 mass of S_t u outside the ball of radius 2R against R^-1 N^((d+2)/4) e^(-R^2/(2N)), N = 4 M t.

    The prefactor is calibrated on the smallest R and the envelope is then
    required for all larger R; the log-tail slope in R^2 is fitted and reported.
    """
    gf = assemble_form(p)
    X = gf.free_coords
    u = np.asarray(u)
    radii = np.sort(np.asarray(R_grid, dtype=float))
    support = np.abs(u) > 0
    if center is None:
        center = X[support].mean(axis=0) if np.any(support) else X.mean(axis=0)
    dist = linalg.norm(X - np.asarray(center), axis=1)
    if np.any(support) and np.max(dist[support]) > radii[0] + 1e-12:
        outside = support & (dist > radii[0] + 1e-12)
        raise SupportTooLarge(f"Support of u reaches {np.max(dist[support]):.4g} > R = {radii[0]:.4g}.",
                              witness=np.where(outside, u, 0))

    A = (bundle or extract_operator(gf.triple)).A
    state = propagator(A, t) @ u
    weights = gf.mass[gf.free]
    tails = np.array([np.sum(weights * np.abs(state) * (dist > 2 * R)) for R in radii])

    M = gaffney_constant(p, gf.theta)
    N = 4 * M * t
    envelope = radii ** -1.0 * N ** ((p.dim + 2) / 4) * np.exp(-radii ** 2 / (2 * N))
    c_hat = float(tails[0] / envelope[0]) if envelope[0] > 0 else 0.0
    floor = 1e-14 * max(np.sum(weights * np.abs(u)), 1e-300)
    passes = bool(np.all(tails <= c_hat * envelope * (1 + 1e-9) + floor))

    positive = tails > floor
    if np.count_nonzero(positive) >= 2:
        slope = float(np.polyfit(radii[positive] ** 2, np.log(tails[positive]), 1)[0])
    else:
        slope = float("nan")
    logger.info("tail mass: c_hat=%.4g slope=%.4g vs %.4g", c_hat, slope, -1 / (2 * N))
    return TailReport(radii, tails, envelope, c_hat, slope, -1.0 / (2 * N), passes)


def conservation_check(p: GridProblem, u: Optional[np.ndarray] = None,
                       t_grid: Sequence[float] = (0.01, 0.1, 1.0)) -> Dict[str, float]:
    """
    Mass conservation (S_t u, 1) = (u, 1) and S_t 1 = 1 on Neumann problems.

    Returns:
        dict: {"mass_defect": ..., "constant_defect": ...}, both maxima over t_grid
    """
    gf = assemble_form(p)
    if p.bc.kind != "neumann":
        # a(1, .) on the free nodes: the flux that leaks through the boundary.
        leak = gf.triple.form @ np.ones(gf.free.size)
        raise WrongBoundaryCondition(f"Conservation needs Neumann data, got {p.bc.kind}.", witness=leak)
    A = extract_operator(gf.triple).A
    n = A.shape[0]
    weights = np.real(np.diag(gf.triple.H.gram))
    if u is None:
        u = np.zeros(n)
        u[n // 2] = 1.0 / weights[n // 2]
    ones = np.ones(n)

    mass_defect, constant_defect = 0.0, 0.0
    for t in t_grid:
        S = propagator(A, t)
        mass_defect = max(mass_defect, abs(np.sum(weights * (S @ u)) - np.sum(weights * u)))
        constant_defect = max(constant_defect, float(np.max(np.abs(S @ ones - ones))))
    return {"mass_defect": float(mass_defect), "constant_defect": constant_defect}


def multiplicative_triple(p: GridProblem, mode: str, weight: np.ndarray) -> FormTriple:
    """
    Form data of the operators m D m, rho D and D rho.

    mDm:  form of the Laplacian, j(u) = u / m, H = L2.
    rhoD: j = identity, H = L2(1 / rho).
    Drho: j(u) = u / rho, H = L2(rho).
    """
    if mode not in MULTIPLICATIVE_MODES:
        raise SchemaError(f"Unknown multiplicative mode '{mode}'.")
    base = assemble_form(p)
    free = base.free
    weight = np.asarray(weight, dtype=float).ravel()
    if weight.size == p.n_nodes:
        weight = weight[free]
    weight = _positive(weight, "weight", free.size)

    S = base.triple.form
    mass = base.mass[free]
    lap = base.laplacian[np.ix_(free, free)]
    if mode == "mDm":
        jmap = np.diag(1.0 / weight)
        gram_h = np.diag(mass)
        gram_v = lap + np.diag(mass / weight ** 2)
    elif mode == "rhoD":
        jmap = np.eye(free.size)
        gram_h = np.diag(mass / weight)
        gram_v = base.triple.V.gram
    else:
        jmap = np.diag(1.0 / weight)
        gram_h = np.diag(mass * weight)
        gram_v = lap + np.diag(mass / weight)

    return FormTriple(HilbertSpaceSpec.from_gram(gram_v), HilbertSpaceSpec.from_gram(gram_h), S, jmap)


def multiplicative_ops(p: GridProblem, mode: str, weight: np.ndarray) -> OperatorBundle:
    """Extract m D m, rho D or D rho and check self-adjointness in the weighted Gram."""
    triple = multiplicative_triple(p, mode, weight)
    bundle = extract_operator(triple)
    defect = self_adjoint_defect(bundle.A, triple.H.gram)
    if np.allclose(triple.form, triple.form.conj().T) and defect > OPERATOR_TOL:
        logger.warning("%s is not self-adjoint in its weighted Gram: defect %.3e", mode, defect)
    return bundle


def robin_trace_residual(gf: GridForm, A: np.ndarray, u: np.ndarray) -> float:
    """
    Green identity a_N(u, v) - (A u, v) + int_Gamma beta Tr u conj(Tr v) dsigma over all nodal v.

    Scaled by max(1, |S_N u|_inf).
    """
    free = gf.free
    S_N = gf.stiffness[np.ix_(free, free)]
    M = gf.triple.H.gram
    beta = np.zeros(free.size, dtype=complex)
    if gf.problem.bc.kind == "robin" and gf.problem.bc.beta is not None:
        position = np.searchsorted(free, gf.boundary)
        beta[position] = _boundary_vector(gf.problem.bc.beta, gf.boundary.size, "beta") * gf.sigma
    residual = S_N @ u - M @ (A @ u) + beta * u
    scale = max(1.0, float(np.max(np.abs(S_N @ u))))
    return float(np.max(np.abs(residual)) / scale)

"""
Evolution Module - Holomorphic semigroup S_z = exp(-z A)

Evaluates the semigroup on its sector, checks quasi-contractivity and
produces trajectory tables.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import expm_multiply

from services.errors import OutsideSector
from settings import SECTOR_MARGIN, SELF_ADJOINT_TOL, threads

logger = logging.getLogger(__name__)

Functional = Callable[[np.ndarray], float]


@dataclass(frozen=True, eq=False)
class TrajectoryTable:
    times: np.ndarray
    states: np.ndarray
    functionals: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def header(self) -> List[str]:
        return ["t_re", "t_im"] + list(self.functionals)

    def rows(self) -> List[List[float]]:
        rows = []
        for k, t in enumerate(self.times):
            rows.append([float(np.real(t)), float(np.imag(t))] + [float(col[k]) for col in self.functionals.values()])
        return rows


def admissible(z: complex, theta: float = 0.0, margin: float = SECTOR_MARGIN) -> bool:
    """True when z lies in the closed sector of half-angle pi/2 - theta - margin."""
    z = complex(z)
    if z == 0:
        return True
    if z.real < 0:
        return False
    return abs(np.angle(z)) <= np.pi / 2 - theta - margin


def propagator(A: np.ndarray, z: complex) -> np.ndarray:
    """exp(-z A); real times keep real generators real."""
    z = complex(z)
    if z.imag == 0:
        return linalg.expm(-z.real * A)
    return linalg.expm(-z * A)


def propagate(A: np.ndarray, times: Sequence[float], x: np.ndarray,
              gram: Optional[np.ndarray] = None, tol: float = SELF_ADJOINT_TOL) -> np.ndarray:
    """
    Columns S_t x for every real t in times.

    When A is self-adjoint in (., .)_gram it is diagonalized once through the
    pencil (gram A, gram); otherwise every column is an expm_multiply.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x)
    if np.max(np.abs(A.imag), initial=0.0) <= tol * max(np.max(np.abs(A)), 1e-300):
        A = A.real
    gram = np.eye(A.shape[0]) if gram is None else np.asarray(gram)
    if np.isrealobj(A) and not np.any(gram.imag):
        gram = gram.real
    GA = gram @ A
    scale = max(np.linalg.norm(GA), 1e-300)
    if np.linalg.norm(GA - GA.conj().T) <= tol * scale:
        w, V = linalg.eigh((GA + GA.conj().T) / 2, gram)
        coeffs = V.conj().T @ (gram @ x)
        states = V @ (np.exp(-np.outer(w, times)) * coeffs[:, None])
        return states.real if np.isrealobj(A) and np.isrealobj(x) else states
    return np.column_stack([expm_multiply(-t * A, x) for t in times])


def semigroup_apply(A: np.ndarray, z: complex, x: np.ndarray, theta: float = 0.0,
                    margin: float = SECTOR_MARGIN) -> np.ndarray:
    """
    Apply S_z = exp(-z A) to x.

    Args:
        A: generator (negative) on H
        z: sector point
        x: state
        theta: semi-angle of the numerical range of A

    Raises:
        OutsideSector: z is not in the holomorphy sector with the margin
    """
    if not admissible(z, theta, margin):
        raise OutsideSector(f"z={z} lies outside the sector of half-angle {np.pi / 2 - theta:.6g}.",
                            witness=np.array([z], dtype=complex))
    return propagator(A, z) @ x


def gram_norm(M: np.ndarray, gram: Optional[np.ndarray] = None) -> float:
    """Operator norm of M in the geometry (x, y) = y^H gram x."""
    if gram is None:
        return float(np.linalg.norm(M, 2))
    L = linalg.cholesky(gram, lower=True)
    inner = L.conj().T @ M
    inner = linalg.solve_triangular(L, inner.conj().T, lower=True).conj().T
    return float(np.linalg.norm(inner, 2))


def quasi_contractivity_check(A: np.ndarray, omega: float, theta_p: float, samples: int = 20,
                              gram: Optional[np.ndarray] = None,
                              radii: Optional[Sequence[float]] = None) -> float:
    """
    Largest |e^{-omega z} S_z| over a polar grid of the sector |arg z| <= theta_p.

    Norms are taken in the geometry of gram when given.
    """
    radii = np.geomspace(1e-2, 10.0, samples) if radii is None else np.asarray(radii)
    angles = np.linspace(-theta_p, theta_p, samples) if samples > 1 else np.zeros(1)
    worst = 0.0
    for r in radii:
        for phi in angles:
            z = r * np.exp(1j * phi)
            M = np.exp(-omega * z) * linalg.expm(-z * A)
            worst = max(worst, gram_norm(M, gram))
    logger.debug("quasi-contractivity: max norm %.12g over %d points", worst, len(radii) * len(angles))
    return worst


def builtin_functionals(weights: Optional[np.ndarray] = None, gram: Optional[np.ndarray] = None) -> Dict[str, Functional]:
    """mass, l1, sup and l2 functionals for the given measure."""
    def mass(x):
        w = np.ones(x.shape[0]) if weights is None else weights
        return float(np.real(np.sum(w * x)))

    def l1(x):
        w = np.ones(x.shape[0]) if weights is None else weights
        return float(np.sum(w * np.abs(x)))

    def l2(x):
        G = np.eye(x.shape[0]) if gram is None else gram
        return float(np.sqrt(max(np.real(np.vdot(x, G @ x)), 0.0)))

    return {"mass": mass, "l1": l1, "sup": lambda x: float(np.max(np.abs(x))) if x.size else 0.0, "l2": l2}


def _uniform(times: np.ndarray) -> bool:
    if times.size < 3:
        return False
    steps = np.diff(times)
    return bool(np.allclose(steps, steps[0], rtol=1e-12, atol=0.0))


def trajectory(A: np.ndarray, x0: np.ndarray, t_grid: Sequence[float],
               functionals: Union[Sequence[str], Dict[str, Functional], None] = None,
               weights: Optional[np.ndarray] = None, gram: Optional[np.ndarray] = None) -> TrajectoryTable:
    """
    Evaluate S_t x0 on an ascending grid of nonnegative times.

    Uniform grids reuse one step propagator; other grids are evaluated
    independently on a small thread pool (SECTORIA_THREADS).
    """
    times = np.asarray(t_grid, dtype=float)
    if times.size and (np.any(times < 0) or np.any(np.diff(times) < 0)):
        raise ValueError("t_grid must be ascending and nonnegative.")

    available = builtin_functionals(weights, gram)
    if functionals is None:
        chosen: Dict[str, Functional] = {}
    elif isinstance(functionals, dict):
        chosen = dict(functionals)
    else:
        chosen = {name: available[name] for name in functionals}

    x0 = np.asarray(x0)
    if _uniform(times):
        step = linalg.expm(-(times[1] - times[0]) * A)
        states = [linalg.expm(-times[0] * A) @ x0]
        for _ in times[1:]:
            states.append(step @ states[-1])
    else:
        with ThreadPoolExecutor(max_workers=threads()) as pool:
            states = list(pool.map(lambda t: linalg.expm(-t * A) @ x0, times))

    states = np.array(states) if states else np.zeros((0, x0.shape[0]))
    columns = {name: np.array([f(x) for x in states]) for name, f in chosen.items()}
    return TrajectoryTable(times=times.astype(complex), states=states, functionals=columns)


def crank_nicolson(A: np.ndarray, x: np.ndarray, t: float, steps: int = 10_000) -> np.ndarray:
    """Fixed-step Crank-Nicolson integration of x' = -A x up to time t."""
    h = t / steps
    n = A.shape[0]
    lu = linalg.lu_factor(np.eye(n) + 0.5 * h * A)
    explicit = np.eye(n) - 0.5 * h * A
    y = np.asarray(x, dtype=complex)
    for _ in range(steps):
        y = linalg.lu_solve(lu, explicit @ y)
    return y


def cauchy_reconstruct(A: np.ndarray, t: float, radius: float, nodes: int = 64, theta: float = 0.0) -> np.ndarray:
    """
    S_t as the mean of S_z over the circle |z - t| = radius.

    The circle has to stay inside the holomorphy sector.
    """
    points = t + radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    for z in points:
        if not admissible(z, theta):
            raise OutsideSector(f"Contour point {z} leaves the sector.", witness=np.array([z], dtype=complex))
    total = sum(linalg.expm(-z * A) for z in points)
    return total / nodes


def generator_defect(A: np.ndarray, x: np.ndarray, h: float) -> float:
    """|(x - S_h x)/h - A x|, which tends to zero at first order in h."""
    return float(np.linalg.norm((x - linalg.expm(-h * A) @ x) / h - A @ x))

"""
Invariance Module - Closed convex sets left invariant by the semigroup

Projections onto the supported convex sets, the form criterion
Re a(w, u - w) >= 0 with j(w) = P j(u), the dynamic check and the
real / positive / sup / L1 suite.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from services.errors import LiftMismatch, SchemaError
from services.evolution import propagator
from services.form_core import FormTriple, sector_fit
from settings import DEFAULT_SAMPLES, MARKOV_TIMES, RANK_TOL

logger = logging.getLogger(__name__)

SET_KINDS = ("real_subspace", "positive_cone", "upper_box", "weighted_box")
MEMBERSHIP_TOL = 1e-9
CRITERION_TOL = 1e-10
MARKOV_TOL = 1e-12
PAIR_LIMIT = 32


@dataclass(frozen=True, eq=False)
class ConvexSetDescriptor:
    """
    One of the supported closed convex sets.

    upper_box is {x real : x <= bound}; weighted_box(m) is the same set with
    bound 1/m. weights is the diagonal of the H Gram (lumped measure).
    """

    kind: str
    bound: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise SchemaError(f"Unknown convex set '{self.kind}'.")
        if self.kind in ("upper_box", "weighted_box") and self.bound is None:
            raise SchemaError(f"{self.kind} needs a bound.")

    @classmethod
    def weighted_box(cls, m: np.ndarray, weights: Optional[np.ndarray] = None) -> "ConvexSetDescriptor":
        return cls("weighted_box", 1.0 / np.asarray(m, dtype=float), weights)

    def projection(self) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: project(self, x)

    def norm(self, x: np.ndarray) -> float:
        w = np.ones(x.shape[0]) if self.weights is None else self.weights
        return float(np.sqrt(np.sum(w * np.abs(x) ** 2)))


def project(cset: ConvexSetDescriptor, x: np.ndarray) -> np.ndarray:
    """
    Orthogonal projection onto the set, in the geometry of the diagonal weights.

    positive_cone: (Re x)^+; upper_box and weighted_box: (Re x) ^ bound.
    """
    real = np.real(np.asarray(x))
    if cset.kind == "real_subspace":
        return real.astype(float)
    if cset.kind == "positive_cone":
        return np.maximum(real, 0.0)
    return np.minimum(real, np.broadcast_to(cset.bound, real.shape))


def distance(cset: ConvexSetDescriptor, x: np.ndarray) -> float:
    return cset.norm(x - project(cset, x))


def _index_pairs(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    if dim <= PAIR_LIMIT:
        return np.triu_indices(dim, k=1)
    first = np.arange(dim - 1)
    return first, first + 1


def sample_vectors(dim: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """
    Columns: +-e_i, 2(e_i + e_j), 2(e_i - e_j), the all-ones vector, then random complex vectors.

    Pairs run over all i < j up to PAIR_LIMIT dimensions and over neighbours beyond.
    """
    eye = np.eye(dim)
    first, second = _index_pairs(dim)
    sums = 2.0 * (eye[:, first] + eye[:, second])
    differences = 2.0 * (eye[:, first] - eye[:, second])
    canonical = [eye, -eye, sums, differences, np.ones((dim, 1))]
    random = 2.0 * (rng.standard_normal((dim, samples)) + 1j * rng.standard_normal((dim, samples)))
    return np.hstack([c.astype(complex) for c in canonical] + [random])


def _form_data(t):
    """(form, jmap, h_gram, vertex) of a FormTriple or SeminormedFormData."""
    if isinstance(t, FormTriple):
        return t.form, t.jmap, t.H.gram, sector_fit(t).vertex
    return t.form, t.jmap, t.h_gram, float(t.gamma)


def criterion_check(t, cset: ConvexSetDescriptor, lift: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    samples: int = DEFAULT_SAMPLES, rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """
    Check Re a(w, u - w) >= 0 with j(w) = P j(u) over a sample of u.

    The form is shifted by tau = max(0, -gamma) first so that it is accretive.
    Without a lift, j must be the identity and the lift is P itself.

    Returns:
        dict: {"worst_margin", "worst_relative", "shift", "samples", "passes"}

    Raises:
        LiftMismatch: P j(u) differs from j(lift(u))
    """
    form, jmap, h_gram, gamma = _form_data(t)
    tau = max(0.0, -gamma)
    shifted = form + tau * (jmap.conj().T @ h_gram @ jmap)
    if lift is None:
        if jmap.shape[0] != jmap.shape[1] or not np.allclose(jmap, np.eye(jmap.shape[0])):
            raise SchemaError("A lift is required when j is not the identity.")
        lift = cset.projection()

    rng = rng or np.random.default_rng()
    U = sample_vectors(form.shape[0], samples, rng)
    worst, worst_relative = np.inf, np.inf
    operator_norm = max(float(np.linalg.norm(shifted, 2)), np.finfo(float).tiny)
    for k in range(U.shape[1]):
        u = U[:, k]
        w = np.asarray(lift(u), dtype=complex)
        target = project(cset, jmap @ u)
        if np.linalg.norm(target - jmap @ w) > RANK_TOL * (1.0 + np.linalg.norm(jmap @ u)) * 100:
            raise LiftMismatch("P j(u) != j(w) for the supplied lift.", witness=u)
        margin = float(np.real(np.vdot(u - w, shifted @ w)))
        worst = min(worst, margin)
        size = float(np.vdot(u, u).real)
        if size > 0:
            worst_relative = min(worst_relative, margin / (operator_norm * size))

    passes = worst_relative >= -CRITERION_TOL
    logger.debug("criterion %s: worst margin %.3e (shift %g)", cset.kind, worst, tau)
    return {"worst_margin": worst, "worst_relative": worst_relative, "shift": tau,
            "samples": int(U.shape[1]), "passes": bool(passes)}


def dynamic_invariance_check(A: np.ndarray, cset: ConvexSetDescriptor, t_grid: Sequence[float],
                             samples: int = 100, rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """
    Evolve members of C and measure how far S_t leaves C.

    Returns:
        dict: {"worst_distance", "passes"}
    """
    rng = rng or np.random.default_rng()
    n = A.shape[0]
    starts = sample_vectors(n, samples, rng)
    members = np.column_stack([project(cset, starts[:, k]) for k in range(starts.shape[1])])
    worst = 0.0
    for t in t_grid:
        evolved = propagator(A, t) @ members
        for k in range(evolved.shape[1]):
            worst = max(worst, distance(cset, evolved[:, k]) / max(1.0, cset.norm(members[:, k])))
    logger.debug("dynamic invariance %s: worst distance %.3e", cset.kind, worst)
    return {"worst_distance": worst, "passes": bool(worst <= MEMBERSHIP_TOL)}


def adjoint_generator(A: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """W^{-1} A^H W, the adjoint in the weighted L2 geometry."""
    w = np.ones(A.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return (A.conj().T * w) / w[:, None]


def sup_contractive(A: np.ndarray, times: Sequence[float] = MARKOV_TIMES, tol: float = MARKOV_TOL) -> bool:
    """|S_t|_{inf -> inf} <= 1 at every sampled time."""
    return all(np.max(np.sum(np.abs(propagator(A, t)), axis=1)) <= 1.0 + tol for t in times)


def markov_suite(A: np.ndarray, weights: Optional[np.ndarray] = None, times: Sequence[float] = MARKOV_TIMES,
                 tol: float = MARKOV_TOL) -> Dict[str, bool]:
    """
    Flags real, positive, sup_contractive and l1_contractive of S_t = exp(-t A).

    The L1 flag is the sup flag of the adjoint semigroup in the weighted geometry.
    """
    real, positive = True, True
    for t in times:
        S = propagator(A, t)
        scale = max(1.0, float(np.max(np.abs(S))))
        if np.iscomplexobj(S) and np.max(np.abs(S.imag)) > tol * scale:
            real = False
        if np.min(np.real(S)) < -tol * scale:
            positive = False
    flags = {
        "real": real,
        "positive": real and positive,
        "sup_contractive": sup_contractive(A, times, tol),
        "l1_contractive": sup_contractive(adjoint_generator(A, weights), times, tol),
    }
    logger.debug("markov suite: %s", flags)
    return flags

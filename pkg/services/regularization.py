"""
Regularization Module - a_n = a + (1/n) b

Builds the regularized forms and measures how their resolvents (and
semigroups) approach those of the limit form.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from services.assoc_op import extract_incomplete, extract_operator, resolvent
from services.errors import BNotElliptic, MismatchedSpaces, NotElliptic, NotSectorial, ShiftTooSmall
from services.evolution import gram_norm, propagator
from services.form_core import FormTriple, SeminormedFormData, check_j_elliptic, sector_fit
from settings import DEFAULT_N_MAX, RIPPLE, threads

logger = logging.getLogger(__name__)

LimitForm = Union[FormTriple, SeminormedFormData]


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    n_values: np.ndarray
    strong_errors: np.ndarray
    norm_errors: np.ndarray
    lam: float
    f_norm: float

    def monotone(self, ripple: float = RIPPLE) -> bool:
        """Both columns non-increasing up to the relative ripple."""
        for errors in (self.strong_errors, self.norm_errors):
            floor = 1e-14 * max(float(errors[0]), 1e-300)
            if np.any(errors[1:] > errors[:-1] * (1 + ripple) + floor):
                return False
        return True

    def decay(self, column: str = "norm") -> float:
        errors = self.norm_errors if column == "norm" else self.strong_errors
        return float(errors[-1] / errors[0]) if errors[0] > 0 else 0.0

    def rows(self) -> List[List[float]]:
        return [[int(n), float(s), float(e)] for n, s, e in zip(self.n_values, self.strong_errors, self.norm_errors)]


def dyadic(n_max: int = DEFAULT_N_MAX) -> List[int]:
    values, n = [], 1
    while n <= n_max:
        values.append(n)
        n *= 2
    return values


def _parts(a: LimitForm):
    if isinstance(a, FormTriple):
        return a.form, a.jmap, a.H.gram
    return a.form, a.jmap, a.h_gram


def _b_matrix(b) -> np.ndarray:
    return b.form if isinstance(b, FormTriple) else np.atleast_2d(np.asarray(b, dtype=complex))


def _b_triple(a: LimitForm, b) -> FormTriple:
    form, jmap, h_gram = _parts(a)
    B = _b_matrix(b)
    if B.shape != form.shape:
        raise MismatchedSpaces(f"b has shape {B.shape}, a has {form.shape}.",
                               witness=np.array([*B.shape, *form.shape], dtype=float))
    if isinstance(b, FormTriple):
        if b.jmap.shape != jmap.shape or not np.allclose(b.jmap, jmap) or not np.allclose(b.H.gram, h_gram):
            raise MismatchedSpaces("a and b must share j and H.",
                                   witness=np.array([*b.jmap.shape, *jmap.shape], dtype=float))
        return b
    if isinstance(a, FormTriple):
        return FormTriple(a.V, a.H, B, jmap)
    return FormTriple.from_matrices(B, jmap, gram_h=h_gram)


def difference_certificate(a: LimitForm, b) -> dict:
    """
    Hypotheses of the a + (1/n) b construction for b.

    b must be j-elliptic and take values in a sector with vertex 0, so
    a_n(u) - a(u) - gamma_n |j u|^2 stays in that sector with gamma_n = 0.
    """
    bt = _b_triple(a, b)
    try:
        omega, mu = check_j_elliptic(bt)
        cert = sector_fit(bt)
    except (NotElliptic, NotSectorial) as e:
        raise BNotElliptic(f"b is not admissible: {e.message}", witness=e.witness) from e
    if cert.vertex < 0:
        raise BNotElliptic(f"b is not accretive: needs vertex {cert.vertex:.3e}.", witness=cert.vertex_witness)
    return {"gamma_n": 0.0, "theta_b": cert.semi_angle, "omega_b": omega, "mu_b": mu}


def build_regularized(a: LimitForm, b, n: int) -> FormTriple:
    """
    The regularized triple with form matrix A + B / n.

    Args:
        a: limit form, complete or seminormed
        b: j-elliptic accretive form on the same V, as a matrix or triple
        n: regularization index

    Returns:
        FormTriple on the V of b
    """
    if n < 1:
        raise ValueError("n must be a positive integer.")
    bt = _b_triple(a, b)
    certificate = difference_certificate(a, bt)
    form, _, _ = _parts(a)
    logger.debug("regularized form n=%d, certificate %s", n, certificate)
    return bt.with_form(form + bt.form / n)


def _limit_resolvent(a: LimitForm, lam: float) -> np.ndarray:
    if isinstance(a, FormTriple):
        try:
            A = extract_operator(a).A
        except NotElliptic:
            A = extract_incomplete(SeminormedFormData.from_triple(a, sector_fit(a).vertex)).A
    else:
        A = extract_incomplete(a).A
    return linalg.solve(lam * np.eye(A.shape[0]) + A, np.eye(A.shape[0]))


def _vertex(a: LimitForm) -> float:
    return sector_fit(a).vertex if isinstance(a, FormTriple) else float(a.gamma)


def convergence_sweep(a: LimitForm, b, lam: float, f: np.ndarray,
                      n_list: Optional[Sequence[int]] = None) -> ConvergenceReport:
    """
    Strong and norm errors of (lam + A_n)^{-1} against (lam + A)^{-1}.

    Errors are measured in the H geometry; lam must exceed max(-gamma, 0).
    """
    gamma = _vertex(a)
    if lam <= max(-gamma, 0.0):
        raise ShiftTooSmall(f"lambda={lam} must exceed max(-gamma, 0) = {max(-gamma, 0.0)}.",
                            witness=np.array([lam, max(-gamma, 0.0)]))
    n_list = dyadic() if n_list is None else list(n_list)
    _, _, h_gram = _parts(a)
    f = np.asarray(f, dtype=complex)
    R = _limit_resolvent(a, lam)
    Rf = R @ f
    f_norm = float(np.sqrt(np.real(np.vdot(f, h_gram @ f))))

    def errors(n: int):
        Rn = resolvent(build_regularized(a, b, n), lam)
        d = Rn @ f - Rf
        return float(np.sqrt(np.real(np.vdot(d, h_gram @ d)))), gram_norm(Rn - R, h_gram)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        results = list(pool.map(errors, n_list))

    report = ConvergenceReport(
        n_values=np.array(n_list),
        strong_errors=np.array([r[0] for r in results]),
        norm_errors=np.array([r[1] for r in results]),
        lam=float(lam),
        f_norm=f_norm,
    )
    logger.info("convergence sweep: strong %.3e -> %.3e, norm %.3e -> %.3e",
                report.strong_errors[0], report.strong_errors[-1], report.norm_errors[0], report.norm_errors[-1])
    return report


def semigroup_convergence(a: LimitForm, b, x: np.ndarray, t: float, n_list: Sequence[int],
                          window: np.ndarray) -> np.ndarray:
    """|(S_t^(n) x - S_t x, window)_H| for each n."""
    _, _, h_gram = _parts(a)
    if isinstance(a, FormTriple):
        A = extract_operator(a).A
    else:
        A = extract_incomplete(a).A
    reference = propagator(A, t) @ x
    gaps = []
    for n in n_list:
        An = extract_operator(build_regularized(a, b, n)).A
        gaps.append(abs(np.vdot(window, h_gram @ (propagator(An, t) @ x - reference))))
    return np.array(gaps)

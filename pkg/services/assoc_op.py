"""
Associated Operator Module - Business logic for operator extraction

Extracts the m-sectorial operator A on H associated with (a, j), both for
complete triples and for seminormed data, and derives resolvents, adjoints,
the classical form and the regular part.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from services.errors import (
    NotElliptic, NotEllipticOnVa, RangeNotDense, ShiftTooSmall, SingularSolve, SumDecompositionFails,
)
from services.form_core import (
    DecompositionBundle, FormTriple, HilbertSpaceSpec, SectorCertificate, SeminormedFormData,
    check_j_elliptic, continuity_constant, kernel_and_Va, kernel_basis, quotient_completion,
    sector_fit,
)
from settings import COND_WARN, OPERATOR_TOL, RANK_TOL, SHIFT_TOL

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Extracted operator with the data it came from."""

    A: np.ndarray
    lambda_ref: float
    decomposition: DecompositionBundle
    cert: SectorCertificate
    omega: float
    mu: float
    continuity: float
    gram_h: np.ndarray

    @property
    def sector_tan(self) -> float:
        """tan of the angle theta' = arctan(c / mu) bounding the numerical range of omega + A."""
        return self.continuity / self.mu

    def resolvent(self, lam: complex) -> np.ndarray:
        n = self.A.shape[0]
        return linalg.solve(lam * np.eye(n) + self.A, np.eye(n))


@dataclass(frozen=True, eq=False)
class ClassicalFormResult:
    a_c: np.ndarray
    h_c: np.ndarray
    C: float
    shift: float = 0.0


def relative_error(X: np.ndarray, Y: np.ndarray) -> float:
    """Relative Frobenius distance, absolute when Y vanishes."""
    scale = np.linalg.norm(Y)
    diff = np.linalg.norm(X - Y)
    return float(diff / scale) if scale > 0 else float(diff)


def shifted(t: FormTriple, tau: float) -> FormTriple:
    """The form a + tau (j., j.)_H on the same spaces."""
    return t.with_form(t.form + tau * t.pullback)


def _require_dense(t: FormTriple, rank_tol: float) -> None:
    if t.H.dim > t.V.dim or np.linalg.matrix_rank(t.jmap, tol=rank_tol * max(np.linalg.norm(t.jmap, 2), 1e-300)) < t.H.dim:
        # y = G_H^{-1} u with u orthogonal to range(J), so (y, j v)_H = 0 for every v.
        U, _, _ = linalg.svd(t.jmap)
        witness = linalg.solve(t.H.gram, U[:, -1])
        raise RangeNotDense(f"j(V) has dimension below dim H = {t.H.dim}.", witness=witness)


def _checked_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """LU solve with the condition estimate reported."""
    try:
        condition = float(np.linalg.cond(matrix))
    except np.linalg.LinAlgError:
        condition = float("inf")
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        _, _, Vh = linalg.svd(matrix)
        raise SingularSolve(f"System is numerically singular (cond ~ {condition:.3e}).",
                            condition=condition, witness=Vh[-1].conj())
    if condition > COND_WARN:
        logger.warning("ill-conditioned solve, cond ~ %.3e", condition)
    lu, piv = linalg.lu_factor(matrix)
    return linalg.lu_solve((lu, piv), rhs)


def resolvent(t: FormTriple, lam: float, rank_tol: float = RANK_TOL) -> np.ndarray:
    """
    R(lam) = J (A + lam P)^{-1} J^H G_H, the resolvent of the associated operator.

    Raises:
        ShiftTooSmall: Re a + lam |j.|^2 is not coercive on V
        SingularSolve: the Lax-Milgram system is numerically singular
    """
    hm, P, gv = t.hermitian_part, t.pullback, t.V.gram
    w, U = linalg.eigh(hm + lam * P, gv)
    tol = rank_tol * max(1.0, np.linalg.norm(hm, 2))
    if w[0] <= tol:
        raise ShiftTooSmall(f"Form is not coercive at lambda={lam}: min {w[0]:.3e}.", witness=U[:, 0])

    solution = _checked_solve(t.form + lam * P, t.jmap.conj().T @ t.H.gram)
    return t.jmap @ solution


def _closed_form_operator(t: FormTriple, rank_tol: float) -> np.ndarray:
    """A = G_H^{-1} J2^{-H} S J2^{-1}, S the Schur complement of a over ker j."""
    gh = t.H.gram
    Z = kernel_basis(t.jmap, rank_tol)
    if Z.shape[1] == 0 and t.H.dim == t.V.dim:
        X = _checked_solve(t.jmap.conj().T, t.form)
        X = _checked_solve(t.jmap.conj().T, X.conj().T).conj().T
        return linalg.solve(gh, X)

    Y = linalg.orth(t.jmap.conj().T, rcond=rank_tol).astype(complex)
    a_yy = Y.conj().T @ t.form @ Y
    if Z.shape[1]:
        a_yz = Y.conj().T @ t.form @ Z
        a_zy = Z.conj().T @ t.form @ Y
        a_zz = Z.conj().T @ t.form @ Z
        a_yy = a_yy - a_yz @ _checked_solve(a_zz, a_zy)
    J2 = t.jmap @ Y
    X = _checked_solve(J2.conj().T, a_yy)
    X = _checked_solve(J2.conj().T, X.conj().T).conj().T
    return linalg.solve(gh, X)


def operator_from_domain(t: FormTriple, rank_tol: float = RANK_TOL) -> np.ndarray:
    """
    Enumerate D_H(a) directly: pairs (u, f) with a(u, v) = (f, j v)_H for all v.

    A is read off as A (j u) = f on the solution space.
    """
    n, m = t.V.dim, t.H.dim
    system = np.hstack([t.form, -t.jmap.conj().T @ t.H.gram])
    pairs = kernel_basis(system, rank_tol)
    U, F = pairs[:n], pairs[n:]
    X = t.jmap @ U
    return F @ np.linalg.pinv(X, rcond=rank_tol)


def _assemble_bundle(t: FormTriple, A: np.ndarray, decomposition: DecompositionBundle,
                     cert: SectorCertificate, omega: float, mu: float) -> OperatorBundle:
    lam = omega + 1.0
    for shift in (lam, omega + 2.0):
        R = resolvent(t, shift)
        residual = np.linalg.norm((shift * np.eye(t.H.dim) + A) @ R - np.eye(t.H.dim))
        if residual > SHIFT_TOL * max(1.0, np.linalg.norm(A)):
            logger.warning("resolvent cross-check at lambda=%g off by %.3e", shift, residual)
    return OperatorBundle(
        A=A, lambda_ref=lam, decomposition=decomposition, cert=cert, omega=omega, mu=mu,
        continuity=continuity_constant(t), gram_h=t.H.gram,
    )


def extract_operator(t: FormTriple, rank_tol: float = RANK_TOL) -> OperatorBundle:
    """
    Extract the operator associated with a j-elliptic triple with dense j(V).

    Args:
        t: j-elliptic form data
        rank_tol: relative singular value cutoff

    Returns:
        OperatorBundle carrying A, the shift used and the decomposition
    """
    _require_dense(t, rank_tol)
    omega, mu = check_j_elliptic(t, rank_tol)
    cert = sector_fit(t, rank_tol)
    decomposition = kernel_and_Va(t, rank_tol)
    A = _closed_form_operator(t, rank_tol)
    logger.debug("extracted operator of size %d (omega=%g)", A.shape[0], omega)
    return _assemble_bundle(t, A, decomposition, cert, omega, mu)


def restrict_to_va(t: FormTriple, decomposition: Optional[DecompositionBundle] = None,
                   rank_tol: float = RANK_TOL) -> Tuple[FormTriple, DecompositionBundle]:
    """Restrict (a, j) to V(a), with the induced Gram matrix."""
    decomposition = decomposition or kernel_and_Va(t, rank_tol)
    W = decomposition.va_basis
    restricted = FormTriple(
        HilbertSpaceSpec.from_gram(W.conj().T @ t.V.gram @ W),
        t.H,
        W.conj().T @ t.form @ W,
        t.jmap @ W,
    )
    return restricted, decomposition


def extract_operator_Va(t: FormTriple, rank_tol: float = RANK_TOL) -> OperatorBundle:
    """
    Extract A through the restriction of (a, j) to V(a).

    Needs only ellipticity on V(a) and V = V(a) + ker j, so it works for
    forms that fail j-ellipticity on all of V.
    """
    decomposition = kernel_and_Va(t, rank_tol)
    if not decomposition.direct_sum:
        raise SumDecompositionFails(
            f"dim ker j + dim V(a) = {decomposition.ker_basis.shape[1] + decomposition.va_basis.shape[1]}"
            f" does not span V (dim {t.V.dim}).",
            witness=decomposition.defect_vector(),
        )
    restricted, _ = restrict_to_va(t, decomposition, rank_tol)
    _require_dense(restricted, rank_tol)
    try:
        omega, mu = check_j_elliptic(restricted, rank_tol)
    except NotElliptic as e:
        raise NotEllipticOnVa(f"Form is not elliptic on V(a): {e.message}", witness=e.witness) from e

    cert = sector_fit(restricted, rank_tol)
    A = _closed_form_operator(restricted, rank_tol)
    return _assemble_bundle(restricted, A, decomposition, cert, omega, mu)


def extract_incomplete(s: SeminormedFormData, rank_tol: float = RANK_TOL) -> OperatorBundle:
    """Operator of a j-sectorial form on an incomplete space: complete, then extract."""
    completed, _ = quotient_completion(s, rank_tol)
    return extract_operator(completed, rank_tol)


def adjoint_operator(t: FormTriple, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Operator associated with (a*, j); equals G_H^{-1} A^H G_H."""
    return extract_operator(t.with_form(t.form.conj().T), rank_tol).A


def self_adjoint_defect(A: np.ndarray, gram: np.ndarray) -> float:
    """Relative Hermitian defect of G A, zero exactly when A is self-adjoint in (., .)_G."""
    GA = gram @ A
    return relative_error(GA, GA.conj().T)


def _h_orthonormal(basis: np.ndarray, h: np.ndarray) -> np.ndarray:
    if basis.shape[1] == 0:
        return basis
    gram = basis.conj().T @ h @ basis
    L = linalg.cholesky(gram, lower=True)
    return linalg.solve_triangular(L, basis.conj().T, lower=True).conj().T


def comparison_constant(t: FormTriple, rank_tol: float = RANK_TOL) -> Tuple[float, float]:
    """
    C = |(I + i T11)^{-1} T12|^2 + 1 in the geometry of h = Re a (shifted when needed).

    Returns:
        tuple: (C, shift tau with Re a + tau |j.|^2 positive definite)
    """
    hm, k, P = t.hermitian_part, t.skew_part, t.pullback
    tau = 0.0
    if np.min(linalg.eigvalsh(hm, t.V.gram)) <= rank_tol * max(1.0, np.linalg.norm(hm, 2)):
        omega, _ = check_j_elliptic(t, rank_tol)
        tau = omega + 1.0
    h = hm + tau * P

    # In an h-orthonormal basis the form is I + i T.
    Z = kernel_basis(t.jmap, rank_tol)
    E1 = _h_orthonormal(Z, h)
    if E1.shape[1] == 0:
        return 1.0, tau
    complement = kernel_basis(E1.conj().T @ h, rank_tol)
    E2 = _h_orthonormal(complement, h)
    T11 = E1.conj().T @ k @ E1
    T12 = E1.conj().T @ k @ E2
    block = linalg.solve(np.eye(T11.shape[0]) + 1j * T11, T12)
    C = float(np.linalg.norm(block, 2) ** 2 + 1.0) if block.size else 1.0
    return C, tau


def classical_form(t: FormTriple, rank_tol: float = RANK_TOL) -> ClassicalFormResult:
    """
    Transport a along j restricted to V(a) to the classical form a_c on H.

    h_c is the classical form of the real part, built on V(h). The constant C
    satisfies Re a_c(x) + tau |x|^2 <= C (h_c(x) + tau |x|^2).
    """
    check_j_elliptic(t, rank_tol)
    decomposition = kernel_and_Va(t, rank_tol)
    W = decomposition.va_basis
    JW = t.jmap @ W
    inv = np.linalg.pinv(JW, rcond=rank_tol)
    a_c = inv.conj().T @ (W.conj().T @ t.form @ W) @ inv

    real_part = t.with_form(t.hermitian_part.astype(complex))
    Wh = kernel_and_Va(real_part, rank_tol).va_basis
    inv_h = np.linalg.pinv(t.jmap @ Wh, rcond=rank_tol)
    h_c = inv_h.conj().T @ (Wh.conj().T @ t.hermitian_part @ Wh) @ inv_h

    C, tau = comparison_constant(t, rank_tol)
    logger.debug("classical form on H (dim %d), C=%.6g tau=%g", a_c.shape[0], C, tau)
    return ClassicalFormResult(a_c=a_c, h_c=h_c, C=C, shift=tau)


def regular_part(s: SeminormedFormData, rank_tol: float = RANK_TOL) -> Tuple[np.ndarray, float]:
    """
    Regular part a_r on H of a possibly non-closable j-sectorial form.

    Returns:
        tuple: (a_r matrix, c with |j u|_{a_r} <= c |u|_a)
    """
    completed, q = quotient_completion(s, rank_tol)
    a_r = classical_form(completed, rank_tol).a_c
    norm_gram = (a_r + a_r.conj().T) / 2 + (1.0 - s.gamma) * s.h_gram
    # q is an isometry onto the completion, so the bound lives there.
    Jt = completed.jmap
    c = float(np.sqrt(max(np.max(linalg.eigvalsh(Jt.conj().T @ norm_gram @ Jt)), 0.0)))
    return a_r, c


def numerical_range_margin(bundle: OperatorBundle, samples: int, rng: np.random.Generator) -> float:
    """
    Worst sampled margin of ((omega + A) x, x) inside the sector of tan c/mu.

    Nonnegative margins mean every sample sits in -omega + Sigma_theta'.
    """
    n = bundle.A.shape[0]
    X = rng.standard_normal((n, samples)) + 1j * rng.standard_normal((n, samples))
    shifted_op = bundle.omega * np.eye(n) + bundle.A
    values = np.einsum("is,is->s", X.conj(), bundle.gram_h @ shifted_op @ X)
    norms = np.real(np.einsum("is,is->s", X.conj(), bundle.gram_h @ X))
    margin = (bundle.sector_tan * values.real - np.abs(values.imag)) / norms
    return float(np.min(margin))


def operators_agree(X: np.ndarray, Y: np.ndarray, tol: float = OPERATOR_TOL) -> bool:
    return relative_error(X, Y) <= tol

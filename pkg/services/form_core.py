"""
Form Core Module - Sesquilinear forms with a map j

Holds the finite-dimensional data (a, j, V, H), certifies sectoriality and
j-ellipticity, computes the ker j / V(a) decomposition and the quotient
completion of seminormed form data.

Conventions: a(u, v) = v^H A u, (x, y)_H = y^H G_H x, P = J^H G_H J.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from services.errors import NotDescendable, NotElliptic, NotSectorial, SchemaError
from settings import MAX_TAN_THETA, RANK_TOL, VERTEX_TOL

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12


def validate_gram(gram: np.ndarray) -> Tuple[bool, str]:
    """
    Check that a matrix can serve as an inner-product Gram matrix.

    Returns:
        tuple: (valid: bool, message: str)
    """
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        return False, f"Gram matrix must be square, got shape {gram.shape}."

    if gram.shape[0] == 0:
        return False, "Gram matrix must have positive dimension."

    if not np.all(np.isfinite(gram)):
        return False, "Gram matrix has non-finite entries."

    scale = max(1.0, float(np.max(np.abs(gram))))
    if np.max(np.abs(gram - gram.conj().T)) > HERMITIAN_TOL * scale:
        return False, "Gram matrix is not Hermitian."

    if np.min(linalg.eigvalsh(gram)) <= 0.0:
        return False, "Gram matrix is not positive definite."

    return True, "ok"


@dataclass(frozen=True, eq=False)
class HilbertSpaceSpec:
    """A finite-dimensional Hilbert space given by its Gram matrix."""

    dim: int
    gram: np.ndarray

    def __post_init__(self):
        gram = np.asarray(self.gram, dtype=complex)
        ok, msg = validate_gram(gram)
        if not ok:
            raise SchemaError(msg)
        if gram.shape[0] != self.dim:
            raise SchemaError(f"Gram matrix has size {gram.shape[0]}, expected {self.dim}.")
        object.__setattr__(self, "gram", gram)

    @classmethod
    def identity(cls, dim: int) -> "HilbertSpaceSpec":
        return cls(dim, np.eye(dim, dtype=complex))

    @classmethod
    def from_gram(cls, gram) -> "HilbertSpaceSpec":
        gram = np.atleast_2d(np.asarray(gram, dtype=complex))
        return cls(gram.shape[0], gram)

    def inner(self, x: np.ndarray, y: np.ndarray) -> complex:
        return complex(np.vdot(y, self.gram @ x))

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(np.real(np.vdot(x, self.gram @ x)), 0.0)))

    def factor(self) -> np.ndarray:
        """Lower Cholesky factor L with gram = L L^H."""
        return linalg.cholesky(self.gram, lower=True)


@dataclass(frozen=True, eq=False)
class FormTriple:
    """The pair (a, j) together with the spaces V and H."""

    V: HilbertSpaceSpec
    H: HilbertSpaceSpec
    form: np.ndarray
    jmap: np.ndarray

    def __post_init__(self):
        form = np.atleast_2d(np.asarray(self.form, dtype=complex))
        jmap = np.atleast_2d(np.asarray(self.jmap, dtype=complex))
        if form.shape != (self.V.dim, self.V.dim):
            raise SchemaError(f"Form matrix has shape {form.shape}, expected {(self.V.dim, self.V.dim)}.")
        if jmap.shape != (self.H.dim, self.V.dim):
            raise SchemaError(f"Map j has shape {jmap.shape}, expected {(self.H.dim, self.V.dim)}.")
        object.__setattr__(self, "form", form)
        object.__setattr__(self, "jmap", jmap)

    @classmethod
    def from_matrices(cls, form, jmap, gram_v=None, gram_h=None) -> "FormTriple":
        """Build a triple; missing Gram matrices default to identities."""
        form = np.atleast_2d(np.asarray(form, dtype=complex))
        jmap = np.atleast_2d(np.asarray(jmap, dtype=complex))
        V = HilbertSpaceSpec.identity(form.shape[0]) if gram_v is None else HilbertSpaceSpec.from_gram(gram_v)
        H = HilbertSpaceSpec.identity(jmap.shape[0]) if gram_h is None else HilbertSpaceSpec.from_gram(gram_h)
        return cls(V, H, form, jmap)

    @property
    def hermitian_part(self) -> np.ndarray:
        return (self.form + self.form.conj().T) / 2

    @property
    def skew_part(self) -> np.ndarray:
        return (self.form - self.form.conj().T) / 2j

    @property
    def pullback(self) -> np.ndarray:
        """P = J^H G_H J, the Gram matrix of (j u, j v)_H on V."""
        return self.jmap.conj().T @ self.H.gram @ self.jmap

    def value(self, u: np.ndarray) -> complex:
        return complex(np.vdot(u, self.form @ u))

    def pair(self, u: np.ndarray, v: np.ndarray) -> complex:
        return complex(np.vdot(v, self.form @ u))

    def with_form(self, form: np.ndarray) -> "FormTriple":
        return FormTriple(self.V, self.H, form, self.jmap)


@dataclass(frozen=True, eq=False)
class SectorCertificate:
    """
    Vertex gamma and semi-angle theta with a(u) - gamma |j u|^2 in the closed sector.

    angle_witness attains tan(theta); vertex_witness is the direction where
    Re a(u) - gamma |j u|^2 is smallest.
    """

    vertex: float
    semi_angle: float
    omega: Optional[float] = None
    mu: Optional[float] = None
    angle_witness: Optional[np.ndarray] = None
    vertex_witness: Optional[np.ndarray] = None

    @property
    def witnesses(self) -> List[np.ndarray]:
        return [w for w in (self.angle_witness, self.vertex_witness) if w is not None]

    @property
    def tan_theta(self) -> float:
        return float(np.tan(self.semi_angle))

    @property
    def elliptic(self) -> bool:
        return self.mu is not None

    def as_dict(self) -> dict:
        return {
            "vertex": self.vertex,
            "semi_angle": self.semi_angle,
            "tan_theta": self.tan_theta,
            "omega": self.omega,
            "mu": self.mu,
        }


@dataclass(frozen=True, eq=False)
class DecompositionBundle:
    ker_basis: np.ndarray
    va_basis: np.ndarray
    direct_sum: bool
    condition: float = float("inf")

    def defect_vector(self) -> np.ndarray:
        """
        A vector showing where V = ker j + V(a) breaks down.

        When the two spaces overlap this is a unit vector of ker j lying
        (numerically) in V(a); otherwise it is the unit vector of V farthest
        from their sum.
        """
        Z, W = self.ker_basis, self.va_basis
        n = Z.shape[0]
        joint = np.hstack([Z, W])
        if joint.shape[1] == 0:
            return np.eye(n, dtype=complex)[:, 0]
        U, s, Vh = linalg.svd(joint)
        overlapping = joint.shape[1] > n or (s.size and s[-1] <= RANK_TOL * s[0] and Z.shape[1] and W.shape[1])
        if overlapping:
            coeffs = Vh[-1].conj()
            v = Z @ coeffs[:Z.shape[1]]
            norm = np.linalg.norm(v)
            if norm > 0:
                return v / norm
        return U[:, -1]


@dataclass(frozen=True, eq=False)
class SeminormedFormData:
    """A form on V0 measured by the seminorm (u, v)_a = Re a(u, v) + (1 - gamma)(ju, jv)_H."""

    form: np.ndarray
    jmap: np.ndarray
    gamma: float = 0.0
    h_gram: Optional[np.ndarray] = None

    def __post_init__(self):
        form = np.atleast_2d(np.asarray(self.form, dtype=complex))
        jmap = np.atleast_2d(np.asarray(self.jmap, dtype=complex))
        if form.shape[0] != form.shape[1] or jmap.shape[1] != form.shape[0]:
            raise SchemaError(f"Inconsistent shapes: form {form.shape}, j {jmap.shape}.")
        h_gram = np.eye(jmap.shape[0], dtype=complex) if self.h_gram is None else np.asarray(self.h_gram, dtype=complex)
        ok, msg = validate_gram(h_gram)
        if not ok:
            raise SchemaError(msg)
        object.__setattr__(self, "form", form)
        object.__setattr__(self, "jmap", jmap)
        object.__setattr__(self, "h_gram", h_gram)

    @property
    def seminorm_gram(self) -> np.ndarray:
        hermitian = (self.form + self.form.conj().T) / 2
        return hermitian + (1.0 - self.gamma) * (self.jmap.conj().T @ self.h_gram @ self.jmap)

    def seminorm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(np.real(np.vdot(u, self.seminorm_gram @ u)), 0.0)))

    @classmethod
    def from_triple(cls, t: FormTriple, gamma: float = 0.0) -> "SeminormedFormData":
        return cls(t.form, t.jmap, gamma, t.H.gram)


def spectral_scale(*matrices: np.ndarray) -> float:
    """Largest spectral norm among the arguments, 1.0 when all vanish."""
    scale = max((np.linalg.norm(m, 2) for m in matrices if m.size), default=0.0)
    return float(scale) if scale > 0 else 1.0


def kernel_basis(matrix: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the null space with the package rank cutoff."""
    if matrix.shape[0] == 0 or not np.any(matrix):
        return np.eye(matrix.shape[1], dtype=complex)
    return linalg.null_space(matrix, rcond=rank_tol).astype(complex)


def continuity_constant(t: FormTriple) -> float:
    """Smallest c with |a(u, v)| <= c |u|_V |v|_V."""
    L = t.V.factor()
    scaled = linalg.solve_triangular(L, t.form, lower=True)
    scaled = linalg.solve_triangular(L, scaled.conj().T, lower=True).conj().T
    return float(np.linalg.norm(scaled, 2))


def in_sector(z, theta: float, tol: float = 0.0) -> np.ndarray:
    """Membership of z in the closed sector {r e^{i alpha} : r >= 0, |alpha| <= theta}."""
    z = np.asarray(z, dtype=complex)
    return np.abs(z.imag) <= np.tan(theta) * z.real + tol


def _psd_floor(matrix: np.ndarray) -> Tuple[float, np.ndarray]:
    w, U = linalg.eigh(matrix)
    return float(w[0]), U[:, 0]


def _check_kernel_sector(t: FormTriple, rank_tol: float) -> None:
    """Refuse forms that no vertex can shift into a sector (their trouble lives in ker j)."""
    hm, k = t.hermitian_part, t.skew_part
    scale = spectral_scale(hm, k)
    Z = kernel_basis(t.jmap, rank_tol)
    if Z.shape[1] == 0:
        return

    hz = Z.conj().T @ hm @ Z
    w, U = linalg.eigh(hz)
    if w[0] < -rank_tol * scale:
        raise NotSectorial(
            f"Re a(u) = {w[0]:.3e} < 0 for some u with j(u) = 0.", witness=Z @ U[:, 0]
        )

    null = U[:, w <= rank_tol * scale]
    if null.shape[1] == 0:
        return
    dead = Z @ null
    for i in range(dead.shape[1]):
        u = dead[:, i]
        if np.linalg.norm(hm @ u) > np.sqrt(rank_tol) * scale or np.linalg.norm(k @ u) > np.sqrt(rank_tol) * scale:
            raise NotSectorial(
                "Re a vanishes on a vector of ker j that still couples to the rest of V.", witness=u
            )


def _feasible(hm: np.ndarray, P: np.ndarray, gamma: float, tol: float) -> bool:
    return np.min(linalg.eigvalsh(hm - gamma * P)) >= -tol


def _tan_theta(hm: np.ndarray, k: np.ndarray, P: np.ndarray, gamma: float, rank_tol: float) -> Tuple[float, np.ndarray]:
    """Largest |eig| of the pencil (K, Hm - gamma P), regularized when singular."""
    M = hm - gamma * P
    scale = spectral_scale(hm)
    floor, _ = _psd_floor(M)
    if floor <= rank_tol * scale:
        eps = 1e-12 * np.linalg.norm(hm, 2) if np.any(hm) else 1e-12
        M = M + (eps + max(0.0, -floor)) * np.eye(M.shape[0])
    w, U = linalg.eigh(k, M)
    idx = int(np.argmax(np.abs(w)))
    return float(abs(w[idx])), U[:, idx]


def sector_fit(t: FormTriple, rank_tol: float = RANK_TOL) -> SectorCertificate:
    """
    Fit a vertex and a semi-angle with a(u) - gamma |j u|^2 in the closed sector.

    The vertex is the largest feasible one capped at 0, found by bisection;
    it is stepped down when the pencil is unbounded there.

    Args:
        t: the form data
        rank_tol: relative cutoff for singular values

    Returns:
        SectorCertificate, with (omega, mu) filled in when the form is j-elliptic
    """
    hm, k, P = t.hermitian_part, t.skew_part, t.pullback
    _check_kernel_sector(t, rank_tol)
    tol = rank_tol * spectral_scale(hm)

    if _feasible(hm, P, 0.0, tol):
        gamma = 0.0
    else:
        lo, steps = -1.0, 0
        while not _feasible(hm, P, lo, tol):
            lo *= 2.0
            steps += 1
            if steps > 200:
                _, floor = _psd_floor(hm - lo * P)
                raise NotSectorial("No vertex makes the real part bounded below.", witness=floor)
        hi = 0.0
        while hi - lo > VERTEX_TOL:
            mid = (lo + hi) / 2
            if _feasible(hm, P, mid, tol):
                lo = mid
            else:
                hi = mid
        gamma = lo

    tan, witness = _tan_theta(hm, k, P, gamma, rank_tol)
    step = 1.0
    while tan > MAX_TAN_THETA:
        gamma -= step
        step *= 2.0
        tan, witness = _tan_theta(hm, k, P, gamma, rank_tol)
        if step > 2.0 ** 60:
            raise NotSectorial("Numerical range is not contained in any sector.", witness=witness)

    try:
        omega, mu = check_j_elliptic(t, rank_tol)
    except NotElliptic:
        omega, mu = None, None

    _, lowest = _psd_floor(hm - gamma * P)
    logger.debug("sector fit: gamma=%.6g tan(theta)=%.6g omega=%s mu=%s", gamma, tan, omega, mu)
    return SectorCertificate(
        vertex=float(gamma),
        semi_angle=float(np.arctan(tan)),
        omega=omega,
        mu=mu,
        angle_witness=witness,
        vertex_witness=lowest,
    )


def _min_generalized(matrix: np.ndarray, gram: np.ndarray) -> Tuple[float, np.ndarray]:
    w, U = linalg.eigh(matrix, gram)
    return float(w[0]), U[:, 0]


def check_j_elliptic(t: FormTriple, rank_tol: float = RANK_TOL) -> Tuple[float, float]:
    """
    Find (omega, mu) with Re a(u) + omega |j u|^2 >= mu |u|_V^2.

    omega runs through 0, 1, 2, 4, ... and mu is the smallest generalized
    eigenvalue of (Re a + omega P, G_V) at the first admissible omega.

    Returns:
        tuple: (omega: float, mu: float)
    """
    hm, P, gv = t.hermitian_part, t.pullback, t.V.gram
    gv_floor = float(np.min(linalg.eigvalsh(gv)))
    tol = rank_tol * max(1.0, np.linalg.norm(hm, 2) / gv_floor)

    Z = kernel_basis(t.jmap, rank_tol)
    if Z.shape[1] > 0:
        mu0, v0 = _min_generalized(Z.conj().T @ hm @ Z, Z.conj().T @ gv @ Z)
        if mu0 <= tol:
            raise NotElliptic(f"Re a(u) = {mu0:.3e} |u|^2 on ker j; no omega helps.", witness=Z @ v0)

    omega = 0.0
    for _ in range(200):
        mu, lowest = _min_generalized(hm + omega * P, gv)
        if mu > tol:
            logger.debug("j-elliptic with omega=%g mu=%.6g", omega, mu)
            return float(omega), float(mu)
        omega = 1.0 if omega == 0.0 else 2.0 * omega

    raise NotElliptic("omega sweep did not reach a positive mu.", witness=lowest)


def kernel_and_Va(t: FormTriple, rank_tol: float = RANK_TOL) -> DecompositionBundle:
    """
    Split V into ker j and V(a) = {u : a(u, v) = 0 for all v in ker j}.

    Returns:
        DecompositionBundle: orthonormal ker basis, V(a) basis and the direct-sum flag
    """
    n = t.V.dim
    Z = kernel_basis(t.jmap, rank_tol)
    if Z.shape[1] == 0:
        return DecompositionBundle(Z, np.eye(n, dtype=complex), True, 1.0)

    W = kernel_basis(Z.conj().T @ t.form, rank_tol)
    joint = np.hstack([Z, W])
    s = linalg.svdvals(joint) if joint.shape[1] else np.zeros(0)
    condition = float(s[0] / s[-1]) if s.size and s[-1] > 0 else float("inf")
    direct = joint.shape[1] == n and s.size == n and s[-1] > rank_tol * s[0]

    logger.debug("dim ker j=%d dim V(a)=%d direct=%s cond=%.3e", Z.shape[1], W.shape[1], direct, condition)
    return DecompositionBundle(Z, W, bool(direct), condition)


def quotient_completion(s: SeminormedFormData, rank_tol: float = RANK_TOL) -> Tuple[FormTriple, np.ndarray]:
    """
    Complete V0 under the seminorm (., .)_a, i.e. divide out its kernel.

    Returns:
        tuple: (completed triple with identity V-Gram, q mapping V0 onto the completion)
    """
    gram = s.seminorm_gram
    w, U = linalg.eigh(gram)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    if top == 0.0:
        raise NotDescendable("The seminorm vanishes identically.", witness=U[:, 0])
    if w[0] < -rank_tol * top:
        raise NotDescendable("Seminorm Gram matrix is not positive semi-definite.", witness=U[:, 0])

    keep = w > rank_tol * top
    N = U[:, ~keep]
    scale = spectral_scale(s.form, s.jmap)
    for i in range(N.shape[1]):
        u = N[:, i]
        if (np.linalg.norm(s.form @ u) > np.sqrt(rank_tol) * scale
                or np.linalg.norm(u.conj() @ s.form) > np.sqrt(rank_tol) * scale
                or np.linalg.norm(s.jmap @ u) > np.sqrt(rank_tol) * scale):
            raise NotDescendable("a or j does not vanish where the seminorm does.", witness=u)

    root = np.sqrt(w[keep])
    q = (U[:, keep] * root).conj().T
    q_plus = U[:, keep] / root
    form = q_plus.conj().T @ s.form @ q_plus
    jmap = s.jmap @ q_plus

    logger.debug("quotient completion: dim %d -> %d", gram.shape[0], int(keep.sum()))
    completed = FormTriple(HilbertSpaceSpec.identity(int(keep.sum())), HilbertSpaceSpec.from_gram(s.h_gram), form, jmap)
    return completed, q

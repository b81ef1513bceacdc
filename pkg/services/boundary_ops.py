"""
Boundary Operators Module - Dirichlet-to-Neumann and Wentzell operators

Both are produced by the form method with a trace-type j: the DtN map from
a(u, v) = int grad u grad v - lam u v with j = Tr, and the Wentzell operator
from j(u) = (u, B Tr u) into L2(Omega) + L2(Gamma).
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import linalg

from services.assoc_op import OperatorBundle, extract_operator, extract_operator_Va, relative_error
from services.elliptic_assembly import BoundaryCondition, GridForm, GridProblem, assemble_form
from services.errors import CertificateFails, LambdaOnSpectrum, OnDirichletSpectrum, SchemaError
from services.evolution import propagator
from services.form_core import FormTriple, HilbertSpaceSpec
from settings import LAMBDA_GUARD

logger = logging.getLogger(__name__)

POSITIVITY_TIMES = (1e-4, 1e-3, 1e-2, 0.1)
SCHUR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DtnProblem:
    grid: GridProblem
    lam: float = 0.0


@dataclass(frozen=True, eq=False)
class WentzellProblem:
    """Grid data plus boundary coefficient alpha and boundary operator B."""

    grid: GridProblem
    alpha: np.ndarray
    B: np.ndarray
    omega_cert: Optional[float] = None

    @classmethod
    def from_grid(cls, grid: GridProblem, omega_cert: Optional[float] = None) -> "WentzellProblem":
        """Read alpha and B from a grid whose boundary condition is 'wentzell'."""
        if grid.bc.kind != "wentzell":
            raise SchemaError(f"Expected a wentzell boundary condition, got {grid.bc.kind}.")
        n_b = 2 if grid.dim == 1 else 2 * (grid.cells[0] + grid.cells[1])
        alpha = np.zeros(n_b) if grid.bc.alpha is None else grid.bc.alpha
        B = np.eye(n_b) if grid.bc.B is None else grid.bc.B
        return cls(grid, alpha, B, omega_cert)


@dataclass(frozen=True, eq=False)
class WentzellOperator:
    """
    Coupled operator carried in nodal coordinates.

    bundle.A acts on node vectors u; on the coupled space the operator maps
    embed @ u to embed @ (bundle.A @ u). coupled_gram is diag(M, Sigma).
    """

    problem: WentzellProblem
    grid_form: GridForm
    bundle: OperatorBundle
    embed: np.ndarray
    coupled_gram: np.ndarray
    certificate: Dict[str, float]
    domain_residual: float

    @property
    def nodal_gram(self) -> np.ndarray:
        return self.embed.conj().T @ self.coupled_gram @ self.embed

    def coupled_apply(self, u: np.ndarray) -> np.ndarray:
        return self.embed @ (self.bundle.A @ u)


def _trace(gf: GridForm) -> np.ndarray:
    T = np.zeros((gf.boundary.size, gf.coords.shape[0]))
    T[np.arange(gf.boundary.size), gf.boundary] = 1.0
    return T


def _neumann_form(grid: GridProblem) -> GridForm:
    return assemble_form(grid.with_bc(BoundaryCondition("neumann")))


def _dirichlet_pencil(grid: GridProblem):
    gf = _neumann_form(grid)
    I = gf.interior
    return gf, gf.stiffness[np.ix_(I, I)], np.diag(gf.mass[I])


def dirichlet_spectrum(grid: GridProblem) -> np.ndarray:
    """Eigenvalues of the interior pencil (S_II, M_II), sorted by real part."""
    gf, S_II, M_II = _dirichlet_pencil(grid)
    if gf.interior.size == 0:
        return np.zeros(0)
    w = linalg.eigvals(S_II, M_II)
    return w[np.argsort(w.real)]


def _guard(p: DtnProblem) -> None:
    gf, S_II, M_II = _dirichlet_pencil(p.grid)
    if gf.interior.size == 0:
        return
    spectrum, modes = linalg.eig(S_II, M_II)
    gap = np.min(np.abs(spectrum - p.lam))
    if gap <= LAMBDA_GUARD * max(1.0, abs(p.lam)):
        k = int(np.argmin(np.abs(spectrum - p.lam)))
        # The Dirichlet mode, zero on the boundary nodes.
        mode = np.zeros(gf.stiffness.shape[0], dtype=complex)
        mode[gf.interior] = modes[:, k]
        raise LambdaOnSpectrum(
            f"lambda={p.lam} is within {gap:.3e} of the Dirichlet eigenvalue {spectrum[k]:.6g}.", witness=mode
        )


def dtn_triple(p: DtnProblem) -> FormTriple:
    """Form S - lam M on all nodes, j = trace, H = L2(Gamma, sigma)."""
    gf = _neumann_form(p.grid)
    form = gf.stiffness - p.lam * np.diag(gf.mass)
    return FormTriple(gf.triple.V, HilbertSpaceSpec.from_gram(np.diag(gf.sigma)), form, _trace(gf))


def dtn_schur_complement(p: DtnProblem) -> np.ndarray:
    """Sigma^{-1} times the Schur complement of S - lam M onto the boundary nodes."""
    _guard(p)
    gf = _neumann_form(p.grid)
    K = gf.stiffness - p.lam * np.diag(gf.mass)
    I, B = gf.interior, gf.boundary
    schur = K[np.ix_(B, B)]
    if I.size:
        schur = schur - K[np.ix_(B, I)] @ linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, B)])
    return schur / gf.sigma[:, None]


def dtn_assemble(p: DtnProblem) -> OperatorBundle:
    """
    D_lam through the restriction of (a, Tr) to V(a), the discrete lam-harmonic functions.

    Cross-checked against the Schur complement.

    Raises:
        LambdaOnSpectrum: lam sits on the interior Dirichlet spectrum
    """
    _guard(p)
    bundle = extract_operator_Va(dtn_triple(p))
    schur = dtn_schur_complement(p)
    drift = relative_error(bundle.A, schur)
    if drift > SCHUR_TOL:
        logger.warning("DtN paths disagree: relative drift %.3e", drift)
    logger.debug("DtN at lambda=%g on %d boundary nodes", p.lam, bundle.A.shape[0])
    return bundle


def dtn_oracle_interval(lam: float, L: float) -> np.ndarray:
    """Exact DtN matrix of -u'' = lam u on (0, L)."""
    if lam == 0:
        return np.array([[1.0, -1.0], [-1.0, 1.0]]) / L
    if lam > 0:
        k = np.sqrt(lam)
        s, c = np.sin(k * L), np.cos(k * L)
        if abs(s) < 1e-12:
            raise OnDirichletSpectrum(f"sqrt(lambda) L = {k * L:.6g} is a multiple of pi.",
                                      witness=np.array([lam, k * L]))
        return (k / s) * np.array([[c, -1.0], [-1.0, c]])
    k = np.sqrt(-lam)
    s, c = np.sinh(k * L), np.cosh(k * L)
    return (k / s) * np.array([[c, -1.0], [-1.0, c]])


def dtn_monotonicity_log(grid: GridProblem, lambdas: Sequence[float]) -> bool:
    """Log whether the DtN entries decrease in lam below the Dirichlet spectrum."""
    mats = [dtn_schur_complement(DtnProblem(grid, lam)).real for lam in sorted(lambdas)]
    decreasing = all(np.all(b <= a + 1e-12) for a, b in zip(mats, mats[1:]))
    if decreasing:
        logger.info("DtN entries decrease in lambda over %s", sorted(lambdas))
    else:
        logger.warning("DtN entries do not decrease in lambda over %s", sorted(lambdas))
    return decreasing


def wentzell_certificate(p: WentzellProblem, sigma: np.ndarray) -> Dict[str, float]:
    """
    omega |B phi|^2 + int Re alpha |phi|^2 >= 0 for all boundary phi.

    omega is taken from the problem, or the first of 0, 1, 2, 4, ... that works.
    """
    Sigma = np.diag(sigma)
    B = np.asarray(p.B, dtype=complex)
    quad_b = B.conj().T @ Sigma @ B
    alpha = np.real(np.asarray(p.alpha, dtype=complex)) * np.ones(len(sigma))
    quad_a = Sigma @ np.diag(alpha)
    candidates = [p.omega_cert] if p.omega_cert is not None else [0.0] + [2.0 ** k for k in range(31)]
    for omega in candidates:
        w, U = linalg.eigh(omega * quad_b + quad_a)
        if w[0] >= -1e-12 * max(1.0, np.linalg.norm(quad_a, 2)):
            return {"omega": float(omega), "min_eig": float(w[0])}
    raise CertificateFails(
        f"omega |B phi|^2 + Re alpha |phi|^2 >= 0 fails (min {w[0]:.3e}).", witness=U[:, 0]
    )


def _boundary_parts(op: WentzellOperator):
    gf = op.grid_form
    T = _trace(gf)
    S = gf.stiffness
    M = np.diag(gf.mass)
    sigma = gf.sigma
    B = np.asarray(op.problem.B, dtype=complex)
    alpha = np.asarray(op.problem.alpha, dtype=complex) * np.ones(sigma.size)
    return gf, T, S, M, sigma, B, alpha


def wentzell_domain_check(op: WentzellOperator, u: np.ndarray) -> float:
    """
    Residual of A(u, B Tr u) = (Au, psi) with B* psi - alpha Tr u = normal derivative of u.

    Interior rows of S u - M (A u) must vanish; on the boundary the normal
    derivative Sigma^{-1} Tr(S u - M A u) must equal B* psi - alpha Tr u.
    """
    gf, T, S, M, sigma, B, alpha = _boundary_parts(op)
    g = op.bundle.A @ u
    psi = B @ (T @ g)
    flux = S @ u - M @ g
    normal = (T @ flux) / sigma
    b_star_psi = (B.conj().T @ (sigma * psi)) / sigma
    interior = flux[gf.interior]
    scale = max(1.0, float(np.max(np.abs(S @ u))))
    worst = max(
        float(np.max(np.abs(interior))) if interior.size else 0.0,
        float(np.max(np.abs(normal - (b_star_psi - alpha * (T @ u))))),
    )
    return worst / scale


def wentzell_assemble(p: WentzellProblem) -> WentzellOperator:
    """
    Operator of (a, j) with j(u) = (u, B Tr u), a = int a_ij d_i u conj(d_j v) + int_Gamma alpha u conj(v).

    Raises:
        CertificateFails: omega |B phi|^2 + int Re alpha |phi|^2 >= 0 fails
    """
    grid = p.grid.with_bc(BoundaryCondition("wentzell", alpha=np.asarray(p.alpha)))
    gf = assemble_form(grid)
    n_b = gf.boundary.size
    B = np.asarray(p.B, dtype=complex)
    if B.shape != (n_b, n_b):
        raise SchemaError(f"B must be {n_b} x {n_b}, got {B.shape}.")
    certificate = wentzell_certificate(p, gf.sigma)

    T = _trace(gf)
    embed = np.vstack([np.eye(gf.coords.shape[0]), B @ T])
    coupled_gram = linalg.block_diag(np.diag(gf.mass), np.diag(gf.sigma)).astype(complex)
    nodal_gram = embed.conj().T @ coupled_gram @ embed
    triple = FormTriple(gf.triple.V, HilbertSpaceSpec.from_gram(nodal_gram), gf.triple.form, np.eye(gf.coords.shape[0]))
    bundle = extract_operator(triple)

    op = WentzellOperator(p, gf, bundle, embed, coupled_gram, certificate, 0.0)
    n = gf.coords.shape[0]
    residual = max(wentzell_domain_check(op, np.eye(n)[:, k]) for k in range(n))
    if residual > 1e-9:
        logger.warning("Wentzell domain identity off by %.3e", residual)
    logger.debug("Wentzell operator: %d nodes, %d boundary, omega=%g", n, n_b, certificate["omega"])
    return WentzellOperator(p, gf, bundle, embed, coupled_gram, certificate, residual)


def is_lattice_homomorphism(B: np.ndarray, samples: int = 200, rng: Optional[np.random.Generator] = None,
                            tol: float = 1e-12) -> bool:
    """(B phi)^+ = B (phi^+) on all sign patterns (up to 12 entries) and random phi."""
    B = np.real(np.asarray(B))
    n = B.shape[1]
    rng = rng or np.random.default_rng()
    patterns = [rng.standard_normal(n) for _ in range(samples)]
    if n <= 12:
        patterns += [np.array(signs) for signs in itertools.product((1.0, -1.0), repeat=n)]
    scale = max(1.0, float(np.max(np.abs(B))))
    return all(np.max(np.abs(np.maximum(B @ phi, 0.0) - B @ np.maximum(phi, 0.0))) <= tol * scale * max(1.0, np.max(np.abs(phi)))
               for phi in patterns)


def wentzell_positivity_check(p: WentzellProblem, samples: int = 50, rng: Optional[np.random.Generator] = None,
                              op: Optional[WentzellOperator] = None) -> Dict[str, object]:
    """
    Lattice-homomorphism test of B against sampled positivity of the coupled semigroup.

    Returns:
        dict: {"lattice", "positive", "agree", "sup_bound", "c"}
    """
    rng = rng or np.random.default_rng()
    op = op or wentzell_assemble(p)
    A = op.bundle.A
    n = A.shape[0]
    lattice = is_lattice_homomorphism(p.B, rng=rng)

    starts = [np.eye(n)[:, k] for k in range(n)] + [np.abs(rng.standard_normal(n)) for _ in range(samples)]
    starts = [u for u in starts if np.min(np.real(op.embed @ u)) >= 0]
    positive, sup_bound = True, 0.0
    for t in POSITIVITY_TIMES:
        S = np.real_if_close(propagator(A, t))
        for u in starts:
            x = op.embed @ (S @ u)
            if np.min(np.real(x)) < -1e-12 * max(1.0, np.max(np.abs(x))):
                positive = False
            sup_bound = max(sup_bound, float(np.max(np.abs(x)) / np.max(np.abs(op.embed @ u))))

    ones = np.real(np.asarray(p.B) @ np.ones(np.asarray(p.B).shape[1]))
    c = float(max(np.max(ones), np.max(1.0 / ones))) if np.all(ones > 0) else float("inf")
    report = {"lattice": lattice, "positive": positive, "agree": lattice == positive, "sup_bound": sup_bound, "c": c}
    logger.debug("Wentzell positivity: %s", report)
    return report


def wentzell_strong_operator(op: WentzellOperator) -> np.ndarray:
    """
    A1 from the strong equations, without going through the form.

    Interior rows solve M (A1 u) = S u. On the boundary the identity
    normal derivative = B*B Tr(A1 u) - alpha Tr u is solved for Tr(A1 u).
    """
    gf, T, S, M, sigma, B, alpha = _boundary_parts(op)
    n = S.shape[0]
    I, G = gf.interior, gf.boundary
    A1 = np.zeros((n, n), dtype=complex)
    A1[I] = S[I] / gf.mass[I][:, None]
    boundary_gram = np.diag(gf.mass[G]) + B.conj().T @ (sigma[:, None] * B)
    A1[G] = linalg.solve(boundary_gram, S[G] + (sigma * alpha)[:, None] * T)
    return A1


def wentzell_h1_realization(p: WentzellProblem, op: Optional[WentzellOperator] = None) -> Dict[str, float]:
    """
    Compare the strong realization A1 with the operator extracted from the form.

    Reports the interior equation and the boundary identity
    normal derivative = B*B Tr(A1 u) - alpha Tr u on the nodal basis, the
    distance between A1 and the extracted operator and the gap between
    their spectra.
    """
    op = op or wentzell_assemble(p)
    gf, T, S, M, sigma, B, alpha = _boundary_parts(op)
    A1 = wentzell_strong_operator(op)
    flux = S - M @ A1
    interior = float(np.max(np.abs(flux[gf.interior]))) if gf.interior.size else 0.0
    bstar_b = (B.conj().T @ (sigma[:, None] * B)) / sigma[:, None]
    boundary = (T @ flux) / sigma[:, None] - (bstar_b @ T @ A1 - alpha[:, None] * T)
    scale = max(1.0, float(np.max(np.abs(S))))

    extracted = op.bundle.A
    direct = np.sort_complex(linalg.eigvals(A1))
    reference = np.sort_complex(linalg.eigvals(extracted))
    gap = float(np.max(np.abs(direct - reference)) / max(1.0, np.max(np.abs(reference))))

    report = {
        "interior_residual": interior / scale,
        "boundary_residual": float(np.max(np.abs(boundary))) / scale,
        "operator_gap": relative_error(A1, extracted),
        "spectrum_gap": gap,
    }
    report["passes"] = all(v <= 1e-8 for v in report.values())
    return report

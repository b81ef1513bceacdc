import numpy as np
import pytest
from scipy import linalg

from services.assoc_op import relative_error, self_adjoint_defect
from services.boundary_ops import (
    DtnProblem, WentzellProblem, dirichlet_spectrum, dtn_assemble, dtn_monotonicity_log, dtn_oracle_interval,
    dtn_schur_complement, dtn_triple, is_lattice_homomorphism, wentzell_assemble, wentzell_certificate,
    wentzell_h1_realization, wentzell_positivity_check, wentzell_strong_operator,
)
from services.elliptic_assembly import laplacian_problem
from services.errors import CertificateFails, LambdaOnSpectrum, NotElliptic, OnDirichletSpectrum, SchemaError
from services.form_core import check_j_elliptic


def wentzell(alpha=-0.5, B=None, cells=4, omega=None):
    grid = laplacian_problem(cells=(cells,), bc="wentzell", alpha=alpha, B=np.eye(2) if B is None else B)
    return WentzellProblem.from_grid(grid, omega)


#Dirichlet-to-Neumann---------------------------------------------------------------------------------------------------

def test_dtn_at_zero_on_interval():
    p = DtnProblem(laplacian_problem(cells=(256,)), 0.0)
    A = dtn_assemble(p).A
    assert relative_error(A, dtn_oracle_interval(0.0, 1.0)) <= 1e-3
    assert np.allclose(A @ np.ones(2), 0.0, atol=1e-10)

def test_dtn_below_first_dirichlet_eigenvalue():
    lam = np.pi ** 2 / 4
    A = dtn_assemble(DtnProblem(laplacian_problem(cells=(256,)), lam)).A
    assert relative_error(A, dtn_oracle_interval(lam, 1.0)) <= 1e-2

def test_dtn_negative_lambda_oracle():
    k = 1.0
    expected = (k / np.sinh(k)) * np.array([[np.cosh(k), -1.0], [-1.0, np.cosh(k)]])
    assert np.allclose(dtn_oracle_interval(-1.0, 1.0), expected)

def test_dtn_works_where_full_ellipticity_fails():
    """two cells, lam = 10: a(u) < 0 on the interior node, yet V(a) is fine"""
    p = DtnProblem(laplacian_problem(cells=(2,)), 10.0)
    with pytest.raises(NotElliptic):
        check_j_elliptic(dtn_triple(p))
    A = dtn_assemble(p).A
    assert relative_error(A, dtn_schur_complement(p)) <= 1e-9

def test_dtn_refuses_lambda_on_dirichlet_spectrum():
    grid = laplacian_problem(cells=(8,))
    lam = float(dirichlet_spectrum(grid)[0].real)
    with pytest.raises(LambdaOnSpectrum):
        dtn_assemble(DtnProblem(grid, lam))

def test_oracle_refuses_dirichlet_eigenvalue():
    with pytest.raises(OnDirichletSpectrum):
        dtn_oracle_interval(np.pi ** 2, 1.0)

def test_dtn_two_dimensional_paths_agree():
    p = DtnProblem(laplacian_problem(dim=2, lengths=(1.0, 1.0), cells=(4, 4)), 1.0)
    A = dtn_assemble(p).A
    assert A.shape == (16, 16)
    assert relative_error(A, dtn_schur_complement(p)) <= 1e-9

def test_dtn_entries_decrease_in_lambda():
    grid = laplacian_problem(cells=(16,))
    low, mid, high = (dtn_schur_complement(DtnProblem(grid, lam)).real for lam in (-1.0, 0.0, 1.0))
    assert np.all(mid < low)
    assert np.all(high < mid)

def test_monotonicity_log_reports_without_raising():
    assert dtn_monotonicity_log(laplacian_problem(cells=(16,)), [1.0, -1.0, 0.0]) in (True, False)

def test_dtn_is_self_adjoint_in_boundary_measure():
    bundle = dtn_assemble(DtnProblem(laplacian_problem(dim=2, lengths=(1.0, 1.0), cells=(4, 4)), 1.0))
    assert self_adjoint_defect(bundle.A, bundle.gram_h) <= 1e-9
    assert np.max(np.abs(linalg.eigvals(bundle.A).imag)) <= 1e-8

def test_spectrum_refusal_carries_the_dirichlet_mode():
    grid = laplacian_problem(cells=(8,))
    lam = float(dirichlet_spectrum(grid)[0].real)
    with pytest.raises(LambdaOnSpectrum) as info:
        dtn_assemble(DtnProblem(grid, lam))
    mode = info.value.witness
    assert mode.shape == (9,)
    assert mode[0] == 0 and mode[-1] == 0
    assert np.max(np.abs(mode)) > 0


#Wentzell---------------------------------------------------------------------------------------------------------------

def test_wentzell_domain_identity():
    op = wentzell_assemble(wentzell())
    assert op.domain_residual <= 1e-9
    assert op.certificate["omega"] == 1.0

def test_wentzell_h1_realization():
    report = wentzell_h1_realization(wentzell())
    assert report["passes"]

def test_certificate_with_given_omega():
    p = wentzell(omega=1.0)
    assert wentzell_certificate(p, np.ones(2))["min_eig"] == pytest.approx(0.5)

def test_certificate_fails_without_omega():
    with pytest.raises(CertificateFails):
        wentzell_certificate(wentzell(omega=0.0), np.ones(2))

def test_wentzell_needs_its_boundary_condition():
    with pytest.raises(SchemaError):
        WentzellProblem.from_grid(laplacian_problem(cells=(4,)))

def test_wentzell_rejects_wrong_b_shape():
    with pytest.raises(SchemaError):
        wentzell_assemble(wentzell(B=np.eye(3)))

def test_lattice_homomorphisms(rng):
    assert is_lattice_homomorphism(np.diag([1.0, 2.0]), rng=rng)
    assert is_lattice_homomorphism(np.array([[0.0, 3.0], [1.0, 0.0]]), rng=rng)
    assert not is_lattice_homomorphism(np.array([[1.0, 1.0], [0.0, 1.0]]), rng=rng)
    assert not is_lattice_homomorphism(-np.eye(2), rng=rng)

def test_positive_diagonal_b_gives_positive_semigroup(rng):
    report = wentzell_positivity_check(wentzell(alpha=0.0, B=np.diag([1.0, 2.0])), rng=rng)
    assert report["lattice"]
    assert report["positive"]
    assert report["agree"]
    assert report["c"] == pytest.approx(2.0)

def test_permutation_b_gives_positive_semigroup(rng):
    report = wentzell_positivity_check(wentzell(alpha=0.0, B=np.array([[0.0, 1.0], [1.0, 0.0]])), rng=rng)
    assert report["lattice"] and report["positive"]

def test_mixing_b_breaks_positivity(rng):
    report = wentzell_positivity_check(wentzell(alpha=0.0, B=np.array([[1.0, 1.0], [0.0, 1.0]])), rng=rng)
    assert not report["lattice"]
    assert not report["positive"]
    assert report["agree"]

def test_random_b_lattice_test_matches_positivity():
    """generalized permutations keep the cone, dense positive B mix it"""
    rng = np.random.default_rng(7)
    for k in range(50):
        if k % 2 == 0:
            B = np.diag(rng.uniform(0.5, 2.0, 2))[rng.permutation(2)]
        else:
            B = rng.uniform(0.2, 1.5, (2, 2))
        report = wentzell_positivity_check(wentzell(alpha=0.0, B=B), samples=10, rng=rng)
        assert report["agree"]
        assert report["lattice"] == (k % 2 == 0)

def test_wentzell_self_adjoint_for_real_alpha_and_nonsymmetric_b():
    op = wentzell_assemble(wentzell(alpha=0.4, B=np.array([[2.0, 0.5], [0.3, 1.0]])))
    assert self_adjoint_defect(op.bundle.A, op.nodal_gram) <= 1e-10

def test_scalar_b_boundary_identity():
    """B = beta I: normal derivative + |beta|^2 Tr(Laplacian u) + alpha Tr u = 0"""
    beta, alpha = 2.0, 0.3
    op = wentzell_assemble(wentzell(alpha=alpha, B=beta * np.eye(2), cells=8))
    gf = op.grid_form
    U = np.eye(gf.coords.shape[0])
    AU = op.bundle.A @ U
    normal = (gf.stiffness @ U - np.diag(gf.mass) @ AU)[gf.boundary] / gf.sigma[:, None]
    residual = normal + abs(beta) ** 2 * (-AU)[gf.boundary] + alpha * U[gf.boundary]
    assert np.max(np.abs(residual)) <= 1e-9 * np.max(np.abs(gf.stiffness))

def test_strong_operator_matches_extracted_operator():
    op = wentzell_assemble(wentzell(alpha=0.3, B=np.array([[1.0, 0.4], [0.0, 2.0]]), cells=6))
    assert relative_error(wentzell_strong_operator(op), op.bundle.A) <= 1e-10
    assert wentzell_h1_realization(op.problem, op)["operator_gap"] <= 1e-10

import numpy as np
import pytest

from services.assoc_op import (
    adjoint_operator, classical_form, extract_incomplete, extract_operator, extract_operator_Va,
    numerical_range_margin, operator_from_domain, regular_part, relative_error, resolvent,
    self_adjoint_defect, shifted,
)
from services.errors import RangeNotDense, ShiftTooSmall, SumDecompositionFails
from services.form_core import FormTriple, SeminormedFormData, quotient_completion


COUPLED = [[1.0, 1.0], [1.0, 2.0]]


#resolvent--------------------------------------------------------------------------------------------------------------

def test_resolvent_scalar():
    R = resolvent(FormTriple.from_matrices([[2 + 1j]], [[1.0]]), 1.0)
    assert R[0, 0] == pytest.approx(1 / (3 + 1j))

def test_resolvent_coupled_form():
    """A = 1/2 on C, so R(1) = 2/3"""
    R = resolvent(FormTriple.from_matrices(COUPLED, [[1.0, 0.0]]), 1.0)
    assert R[0, 0] == pytest.approx(2 / 3)

def test_resolvent_inverts_lambda_plus_A(make_triple):
    t = make_triple(n=6, m=4, shift=1.0)
    bundle = extract_operator(t)
    lam = bundle.omega + 1.0
    R = resolvent(t, lam)
    assert np.allclose((lam * np.eye(4) + bundle.A) @ R, np.eye(4), atol=1e-10)

def test_resolvent_refuses_small_shift():
    with pytest.raises(ShiftTooSmall) as info:
        resolvent(FormTriple.from_matrices(np.diag([-1.0, 1.0]), np.eye(2)), 0.5)
    assert np.allclose(np.abs(info.value.witness), [1.0, 0.0])


#extract_operator-------------------------------------------------------------------------------------------------------

def test_extract_restricts_to_va():
    bundle = extract_operator(FormTriple.from_matrices(np.eye(2), [[1.0, 0.0]]))
    assert bundle.A.shape == (1, 1)
    assert bundle.A[0, 0] == pytest.approx(1.0)

def test_extract_coupled_form():
    bundle = extract_operator(FormTriple.from_matrices(COUPLED, [[1.0, 0.0]]))
    assert bundle.A[0, 0] == pytest.approx(0.5)

def test_extract_identity_j_is_gram_inverse_times_form(make_triple, rng):
    t = make_triple(n=5, identity=True)
    gh = np.diag(rng.uniform(0.5, 2.0, 5))
    t = FormTriple.from_matrices(t.form, np.eye(5), gram_h=gh)
    assert relative_error(extract_operator(t).A, np.linalg.solve(gh, t.form)) <= 1e-12

def test_extract_agrees_with_domain_enumeration(make_triple, rng):
    """200 random triples, the closed form against the brute-force domain"""
    for _ in range(200):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, n + 1))
        t = make_triple(n=n, m=m, shift=float(rng.uniform(0, 1)))
        assert relative_error(extract_operator(t).A, operator_from_domain(t)) <= 1e-9

def test_extract_is_shift_covariant(make_triple):
    t = make_triple(n=5, m=3)
    A = extract_operator(t).A
    A_shifted = extract_operator(shifted(t, 2.5)).A
    assert relative_error(A_shifted, A + 2.5 * np.eye(3)) <= 1e-10

def test_extract_numerical_range_in_sector(make_triple, rng):
    for _ in range(10):
        bundle = extract_operator(make_triple(n=5, m=3, shift=1.0))
        assert numerical_range_margin(bundle, 500, rng) >= -1e-8

def test_extract_refuses_non_dense_range():
    J = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(RangeNotDense) as info:
        extract_operator(FormTriple.from_matrices(np.eye(2), J))
    w = info.value.witness
    assert np.linalg.norm(w) > 0.5
    assert np.allclose(J.T @ w, 0.0)


#extract_operator_Va----------------------------------------------------------------------------------------------------

def test_va_path_matches_full_path(make_triple):
    for _ in range(20):
        t = make_triple(n=6, m=3, shift=1.0)
        assert relative_error(extract_operator_Va(t).A, extract_operator(t).A) <= 1e-10

def test_va_path_with_identity_j(make_triple):
    t = make_triple(n=4, identity=True)
    assert relative_error(extract_operator_Va(t).A, t.form) <= 1e-12

def test_va_path_refuses_missing_sum():
    """a(u, v) = 0 on ker j for every u, so V(a) is everything and the sum is not direct"""
    t = FormTriple.from_matrices(np.array([[1.0, 0.0], [0.0, 0.0]]), [[1.0, 0.0]])
    with pytest.raises(SumDecompositionFails) as info:
        extract_operator_Va(t)
    assert np.allclose(np.abs(info.value.witness), [0.0, 1.0])


#incomplete case--------------------------------------------------------------------------------------------------------

def test_zero_operator_analog():
    """a = 0 with j the first coordinate gives exactly the zero operator"""
    bundle = extract_incomplete(SeminormedFormData(np.zeros((2, 2)), [[1.0, 0.0]]))
    assert bundle.A.shape == (1, 1)
    assert bundle.A[0, 0] == 0

def test_incomplete_norm_case_equals_plain_extraction():
    form = np.array([[2.0, 0.5j], [0.5j, 3.0]])
    bundle = extract_incomplete(SeminormedFormData(form, np.eye(2)))
    assert relative_error(bundle.A, form) <= 1e-12

def test_incomplete_matches_eigenbasis_quotient(make_seminormed):
    s = make_seminormed(n=5, k=1, m=2)
    w, U = np.linalg.eigh(s.seminorm_gram)
    keep = w > 1e-10 * w.max()
    q_plus = U[:, keep] / np.sqrt(w[keep])
    oracle = FormTriple.from_matrices(q_plus.conj().T @ s.form @ q_plus, s.jmap @ q_plus)
    assert relative_error(extract_incomplete(s).A, extract_operator(oracle).A) <= 1e-10


#adjoint----------------------------------------------------------------------------------------------------------------

def test_hermitian_form_gives_hermitian_operator(rng):
    X = rng.standard_normal((4, 4))
    form = X @ X.T + np.eye(4)
    A = extract_operator(FormTriple.from_matrices(form, np.eye(4))).A
    assert np.allclose(A, A.conj().T, atol=1e-12)

def test_adjoint_scalar():
    assert adjoint_operator(FormTriple.from_matrices([[2 + 1j]], [[1.0]]))[0, 0] == pytest.approx(2 - 1j)

def test_adjoint_is_gram_adjoint(make_triple):
    t = make_triple(n=4, m=4)
    A = extract_operator(t).A
    G = t.H.gram
    assert relative_error(adjoint_operator(t), np.linalg.solve(G, A.conj().T @ G)) <= 1e-9

def test_self_adjoint_defect_zero_for_weighted_symmetric():
    G = np.diag([1.0, 2.0])
    A = np.linalg.solve(G, np.array([[2.0, -1.0], [-1.0, 2.0]]))
    assert self_adjoint_defect(A, G) <= 1e-14


#classical form and regular part----------------------------------------------------------------------------------------

def test_classical_form_identity_j(make_triple):
    t = make_triple(n=4, identity=True)
    result = classical_form(t)
    assert relative_error(result.a_c, t.form) <= 1e-12
    assert result.shift == 0.0

def test_classical_form_drops_kernel():
    result = classical_form(FormTriple.from_matrices(np.eye(2), [[1.0, 0.0]]))
    assert result.a_c.shape == (1, 1)
    assert result.a_c[0, 0] == pytest.approx(1.0)

def test_classical_form_comparison_constant(make_triple, rng):
    """Re a_c(x) <= C h_c(x) on 10^4 random x"""
    t = make_triple(n=6, m=3)
    result = classical_form(t)
    assert result.shift == 0.0
    X = rng.standard_normal((3, 10_000)) + 1j * rng.standard_normal((3, 10_000))
    re_ac = np.real(np.einsum("is,is->s", X.conj(), result.a_c @ X))
    hc = np.real(np.einsum("is,is->s", X.conj(), result.h_c @ X))
    assert np.all(re_ac <= result.C * hc * (1 + 1e-9))

def test_regular_part_of_zero_operator_analog():
    a_r, c = regular_part(SeminormedFormData(np.zeros((2, 2)), [[1.0, 0.0]]))
    assert np.allclose(a_r, 0.0)
    assert c == pytest.approx(1.0)

def test_regular_part_of_closable_form():
    form = np.array([[2.0, 0.5j], [0.5j, 3.0]])
    a_r, _ = regular_part(SeminormedFormData(form, np.eye(2)))
    assert relative_error(a_r, form) <= 1e-12

def test_regular_part_bound(make_seminormed, rng):
    s = make_seminormed(n=5, k=2, m=2)
    a_r, c = regular_part(s)
    norm_gram = (a_r + a_r.conj().T) / 2 + (1 - s.gamma) * s.h_gram
    for _ in range(1000):
        u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        x = s.jmap @ u
        lhs = np.sqrt(max(np.real(np.vdot(x, norm_gram @ x)), 0.0))
        assert lhs <= c * s.seminorm(u) * (1 + 1e-9) + 1e-12

def test_completion_feeds_extraction(make_seminormed):
    s = make_seminormed(n=4, k=1, m=2)
    completed, _ = quotient_completion(s)
    assert extract_incomplete(s).A.shape == (completed.H.dim, completed.H.dim)

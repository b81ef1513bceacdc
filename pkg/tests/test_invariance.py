import numpy as np
import pytest

from services.assoc_op import extract_operator
from services.elliptic_assembly import assemble_form, laplacian_problem, multiplicative_ops, multiplicative_triple
from services.errors import LiftMismatch, SchemaError
from services.form_core import FormTriple
from services.invariance import (
    ConvexSetDescriptor, adjoint_generator, criterion_check, distance, dynamic_invariance_check, markov_suite,
    project, sample_vectors, sup_contractive,
)


def heat(bc="neumann", cells=8):
    gf = assemble_form(laplacian_problem(cells=(cells,), bc=bc))
    weights = np.real(np.diag(gf.triple.H.gram))
    return gf, extract_operator(gf.triple).A, weights


#projections------------------------------------------------------------------------------------------------------------

def test_project_positive_cone():
    cset = ConvexSetDescriptor("positive_cone")
    assert project(cset, np.array([1 + 2j, -3.0])).tolist() == [1.0, 0.0]

def test_project_upper_box():
    cset = ConvexSetDescriptor("upper_box", bound=np.ones(2))
    assert project(cset, np.array([2.0, 0.5j])).tolist() == [1.0, 0.0]

def test_project_real_subspace():
    assert project(ConvexSetDescriptor("real_subspace"), np.array([1 - 1j, 2j])).tolist() == [1.0, 0.0]

def test_upper_box_needs_bound():
    with pytest.raises(SchemaError):
        ConvexSetDescriptor("upper_box")

def test_unknown_set_kind():
    with pytest.raises(SchemaError):
        ConvexSetDescriptor("ball")

def test_weighted_box_projection_is_nearest_point(rng):
    """no member of the box gets closer than the projection"""
    m = rng.uniform(0.5, 2.0, 6)
    weights = rng.uniform(0.1, 1.0, 6)
    cset = ConvexSetDescriptor.weighted_box(m, weights)
    for _ in range(20):
        x = 2.0 * rng.standard_normal(6)
        p = project(cset, x)
        assert np.all(p <= 1.0 / m + 1e-15)
        best = cset.norm(x - p)
        members = np.minimum(rng.standard_normal((200, 6)) * 2.0, 1.0 / m)
        assert all(cset.norm(x - y) >= best - 1e-12 for y in members)

def test_distance_is_zero_on_members():
    cset = ConvexSetDescriptor("positive_cone")
    assert distance(cset, np.array([0.0, 1.0, 2.0])) == 0.0

def test_sample_vectors_layout(rng):
    U = sample_vectors(3, 5, rng)
    assert U.shape == (3, 3 + 3 + 3 + 3 + 1 + 5)
    assert np.allclose(U[:, 0], [1, 0, 0])
    assert np.allclose(U[:, 3], [-1, 0, 0])
    assert np.allclose(U[:, 6], [2, 2, 0])
    assert np.allclose(U[:, 9], [2, -2, 0])
    assert np.allclose(U[:, 12], [1, 1, 1])

def test_sample_vectors_use_neighbour_pairs_in_high_dimension(rng):
    U = sample_vectors(40, 0, rng)
    assert U.shape == (40, 40 + 40 + 39 + 39 + 1)
    assert np.allclose(U[:3, 80], [2, 2, 0])


#criterion_check--------------------------------------------------------------------------------------------------------

def test_real_form_keeps_real_subspace(rng):
    X = rng.standard_normal((4, 4))
    t = FormTriple.from_matrices(X @ X.T + np.eye(4), np.eye(4))
    report = criterion_check(t, ConvexSetDescriptor("real_subspace"), samples=200, rng=rng)
    assert report["passes"]
    assert report["worst_margin"] == pytest.approx(0.0, abs=1e-9)

def test_complex_form_leaves_real_subspace():
    t = FormTriple.from_matrices(np.array([[1.0, 1j], [-1j, 1.0]]) + np.eye(2), np.eye(2))
    report = criterion_check(t, ConvexSetDescriptor("real_subspace"), samples=200, rng=np.random.default_rng(1))
    assert not report["passes"]

def test_neumann_heat_keeps_positive_cone_and_box(rng):
    gf, _, weights = heat()
    positive = criterion_check(gf.triple, ConvexSetDescriptor("positive_cone", weights=weights), samples=200, rng=rng)
    box = criterion_check(gf.triple, ConvexSetDescriptor("upper_box", np.ones(9), weights), samples=200, rng=rng)
    assert positive["passes"]
    assert box["passes"]
    assert positive["shift"] == 0.0

def test_small_violation_of_a_tiny_form_is_flagged():
    """margins of order 1e-12 still count once scaled by |a| |u|^2"""
    t = FormTriple.from_matrices(1e-8 * np.array([[1.0, 1e-4], [1e-4, 1.0]]), np.eye(2))
    report = criterion_check(t, ConvexSetDescriptor("positive_cone"), samples=10, rng=np.random.default_rng(3))
    assert abs(report["worst_margin"]) < 1e-9
    assert report["worst_relative"] < -1e-6
    assert not report["passes"]

def test_box_violation_only_visible_on_pair_vectors():
    """+-e_i and the ones vector satisfy the criterion, 2(e_0 - e_1) does not"""
    t = FormTriple.from_matrices(np.array([[1.0, 0.6], [0.6, 1.0]]), np.eye(2))
    report = criterion_check(t, ConvexSetDescriptor("upper_box", np.ones(2)), samples=0, rng=np.random.default_rng(3))
    assert report["samples"] == 7
    assert report["worst_margin"] == pytest.approx(-0.2)
    assert not report["passes"]

def test_identity_lift_does_not_match_projection():
    t = FormTriple.from_matrices(np.eye(2), np.eye(2))
    with pytest.raises(LiftMismatch):
        criterion_check(t, ConvexSetDescriptor("positive_cone"), lift=lambda u: u, samples=5)

def test_lift_required_for_non_identity_j():
    t = FormTriple.from_matrices(np.eye(2), [[1.0, 0.0]])
    with pytest.raises(SchemaError):
        criterion_check(t, ConvexSetDescriptor("positive_cone"), samples=5)

def test_weighted_box_for_mdm(rng):
    """j(u) = u / m, so P j(u) = j(min(Re u, 1))"""
    p = laplacian_problem(cells=(16,), bc="dirichlet")
    m = 1.0 + np.linspace(0.0, 1.0, 17)
    t = multiplicative_triple(p, "mDm", m)
    mf = m[1:-1]
    cset = ConvexSetDescriptor.weighted_box(mf, np.real(np.diag(t.H.gram)))
    report = criterion_check(t, cset, lift=lambda u: np.minimum(np.real(u), 1.0), samples=200, rng=rng)
    assert report["passes"]

    A = multiplicative_ops(p, "mDm", m).A
    assert dynamic_invariance_check(A, cset, [0.01, 0.1], samples=20, rng=rng)["passes"]

def test_weighted_box_for_mdm_with_neumann_ends(rng):
    p = laplacian_problem(cells=(8,))
    m = 1.0 + np.linspace(0.0, 1.0, 9)
    t = multiplicative_triple(p, "mDm", m)
    cset = ConvexSetDescriptor.weighted_box(m, np.real(np.diag(t.H.gram)))
    report = criterion_check(t, cset, lift=lambda u: np.minimum(np.real(u), 1.0), samples=100, rng=rng)
    assert report["passes"]

    A = multiplicative_ops(p, "mDm", m).A
    assert dynamic_invariance_check(A, cset, [0.01, 0.1, 1.0], samples=20, rng=rng)["passes"]


#dynamic check and Markov flags-----------------------------------------------------------------------------------------

def test_heat_semigroup_is_positive_and_bounded(rng):
    _, A, weights = heat()
    for cset in (ConvexSetDescriptor("positive_cone", weights=weights),
                 ConvexSetDescriptor("upper_box", np.ones(9), weights)):
        report = dynamic_invariance_check(A, cset, [0.01, 0.1, 1.0], samples=20, rng=rng)
        assert report["passes"]

def test_rotation_leaves_positive_cone(rng):
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    report = dynamic_invariance_check(A, ConvexSetDescriptor("positive_cone"), [1.0], samples=5, rng=rng)
    assert not report["passes"]

def test_markov_suite_neumann():
    _, A, weights = heat()
    assert markov_suite(A, weights) == {
        "real": True, "positive": True, "sup_contractive": True, "l1_contractive": True,
    }

def test_markov_suite_dirichlet():
    _, A, weights = heat("dirichlet")
    flags = markov_suite(A, weights)
    assert flags["positive"]
    assert flags["sup_contractive"]

def test_growing_mode_is_not_sup_contractive():
    assert not sup_contractive(np.diag([1.0, -1.0]))

def test_adjoint_generator_weighted():
    A = np.array([[1.0, 2.0], [0.0, 3.0]])
    w = np.array([1.0, 4.0])
    assert np.allclose(adjoint_generator(A, w), np.diag(1 / w) @ A.T @ np.diag(w))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oppl.finspace import (MeasureVec, RegOperator, SpaceMismatch, band, band_inclusion,
                           band_of_indices, band_restrict, chi, dual, formal_key, formal_space,
                           hahn_jordan, identity, in_band, join, kothe_adjoint, measure_space,
                           meet, modulus, operator_space, pairing, projective_norm_bruteforce,
                           regular_norm, strictly_positive_functional, tensor_op, tensor_space,
                           tensor_vec, tv_norm)

X = measure_space(["a", "b", "c"], "X")
Y = measure_space([0, 1], "Y")

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_tv_norm_is_sum_of_absolute_values():
    assert tv_norm(MeasureVec(X, [0.5, -0.25, 0.0])) == pytest.approx(0.75)


@given(vec3)
def test_hahn_jordan_parts_are_disjoint_and_recompose(c):
    v = MeasureVec(X, c)
    p, n = hahn_jordan(v)
    assert p.is_positive() and n.is_positive()
    assert np.all(p.coeffs * n.coeffs == 0)
    assert np.allclose((p - n).coeffs, c)
    assert np.allclose((p + n).coeffs, modulus(v).coeffs)


@given(vec3, vec3)
def test_lattice_identity_meet_plus_join(a, b):
    v, w = MeasureVec(X, a), MeasureVec(X, b)
    assert np.allclose((meet(v, w) + join(v, w)).coeffs, a + b)


def test_mismatched_spaces_raise():
    with pytest.raises(SpaceMismatch):
        MeasureVec(X, [1.0, 2.0])
    with pytest.raises(SpaceMismatch):
        meet(MeasureVec(X, [1, 0, 0]), MeasureVec(Y, [1, 0]))


def test_spaces_compare_structurally():
    assert measure_space(["a", "b", "c"]) == X
    assert tensor_space(X, Y) == tensor_space(measure_space(["a", "b", "c"]), Y)
    assert tensor_space(X, Y) != tensor_space(Y, X)


def test_tensor_vec_is_lexicographic_kronecker():
    u, v = MeasureVec(X, [1.0, 2.0, 3.0]), MeasureVec(Y, [10.0, 20.0])
    t = tensor_vec(u, v)
    assert t.space.atoms[:3] == (("a", 0), ("a", 1), ("b", 0))
    assert t.coeffs.tolist() == [10, 20, 20, 40, 30, 60]


def test_tensor_op_mixed_product():
    rng = np.random.default_rng(0)
    F = RegOperator(X, X, rng.random((3, 3)))
    G = RegOperator(Y, Y, rng.random((2, 2)))
    u, v = MeasureVec(X, rng.random(3)), MeasureVec(Y, rng.random(2))
    assert tensor_op(F, G)(tensor_vec(u, v)).allclose(tensor_vec(F(u), G(v)), atol=1e-12)


def test_tv_norm_is_multiplicative_on_pure_tensors():
    u, v = MeasureVec(X, [1.0, -2.0, 0.5]), MeasureVec(Y, [0.3, -0.7])
    assert tv_norm(tensor_vec(u, v)) == pytest.approx(tv_norm(u) * tv_norm(v))


def test_regular_norm_of_stochastic_matrix_is_one():
    M = np.array([[0.2, 1.0], [0.8, 0.0]])
    assert regular_norm(RegOperator(Y, Y, M)) == pytest.approx(1.0)
    assert regular_norm(RegOperator(Y, Y, -M)) == pytest.approx(1.0)
    assert regular_norm(identity(X)) == 1.0


def test_operator_space_atoms_are_cod_major():
    op = operator_space(Y, X)
    assert op.size == 6
    assert op.atoms[:3] == (("a", 0), ("a", 1), ("b", 0))


def test_band_is_the_support_subspace():
    mu = MeasureVec(X, [0.5, 0.0, 0.5])
    B = band(X, mu)
    assert B.size == 2 and B.atoms == ("a", "c")
    assert in_band(MeasureVec(X, [1.0, 0.0, -3.0]), B)
    assert not in_band(MeasureVec(X, [0.0, 1.0, 0.0]), B)
    P = band_inclusion(B) @ band_restrict(X, mu)
    assert np.allclose(P.entries @ P.entries, P.entries)
    assert band_of_indices(X, [0, 2]) == B


def test_kothe_adjoint_preserves_pairing():
    rng = np.random.default_rng(1)
    F = RegOperator(X, Y, rng.random((2, 3)))
    u = MeasureVec(X, rng.random(3))
    f = MeasureVec(dual(Y), rng.random(2))
    Ft = kothe_adjoint(F)
    assert Ft.dom == dual(Y) and Ft.cod == dual(X)
    assert pairing(F(u), f) == pytest.approx(pairing(u, Ft(f)))


@settings(max_examples=50)
@given(arrays(np.float64, 3, elements=st.floats(0, 5)))
def test_strictly_positive_functional_is_strict(c):
    phi = strictly_positive_functional(X)
    v = MeasureVec(X, c)
    if np.any(c > 0):
        assert pairing(v, phi) > 0
    else:
        assert pairing(v, phi) == 0


def test_functional_on_operator_space_and_bands():
    op = operator_space(Y, X)
    assert np.all(strictly_positive_functional(op).coeffs == 1.0)
    B = band_of_indices(X, [1])
    assert strictly_positive_functional(B).coeffs.tolist() == [1.0]


def test_chi_of_stochastic_operator_and_identity():
    assert chi(identity(X)) == pytest.approx(1.0)
    M = np.array([[0.2, 1.0], [0.8, 0.0]])
    assert chi(RegOperator(Y, Y, M)) == pytest.approx(1.0)
    assert chi(RegOperator(Y, Y, np.zeros((2, 2)))) == 0.0


def test_formal_space_identifies_atoms_by_quantized_vector():
    inner = measure_space([False, True])
    assert formal_key([0.3, 0.7]) == formal_key([0.3 + 1e-14, 0.7])
    with pytest.raises(ValueError):
        formal_space(inner, [[0.3, 0.7], [0.3, 0.7 + 1e-15]])
    fs = formal_space(inner, [[1.0, 0.0], [0.5, 0.5]])
    assert fs.size == 2 and fs.support.shape == (2, 2)


def test_projective_norm_matches_tv_on_small_tensor():
    U, V = measure_space([0, 1]), measure_space([0, 1])
    x = MeasureVec(tensor_space(U, V), [1.0, -0.5, 0.25, 2.0])
    assert projective_norm_bruteforce(x) == pytest.approx(tv_norm(x), abs=1e-6)


def test_projective_norm_rejects_large_factors():
    big = measure_space(range(4))
    with pytest.raises(ValueError):
        projective_norm_bruteforce(MeasureVec(tensor_space(big, big), np.ones(16)))


def test_projective_norm_of_identity_and_point_mass_joints():
    A, B = measure_space(["a", "b"]), measure_space(["c", "d"])
    assert projective_norm_bruteforce(MeasureVec(tensor_space(A, B), [1.0, 0.0, 0.0, 1.0])) == \
        pytest.approx(2.0, abs=1e-9)
    one = measure_space(["a"])
    assert projective_norm_bruteforce(MeasureVec(tensor_space(one, one), [2.0])) == pytest.approx(2.0)

import numpy as np
import pytest

from oppl import kernels as K
from oppl.finspace import MeasureVec, measure_space

X = measure_space(["a", "b"], "X")
Y = measure_space(["heads", "tails"], "Y")
COIN = K.Kernel(X, Y, np.array([[0.9, 0.2], [0.1, 0.8]]))
FAIR = MeasureVec(X, [0.5, 0.5])


def test_pushforward_of_coin_model():
    nu = K.pushforward(COIN, FAIR)
    assert nu.coeffs.tolist() == pytest.approx([0.55, 0.45])


def test_bayes_inverse_of_coin_model_given_heads():
    fd = K.bayes_invert(COIN, FAIR)
    assert fd.column("heads").coeffs.tolist() == pytest.approx([9 / 11, 2 / 11], abs=1e-15)
    assert fd.is_probability()


def test_inverse_agrees_with_joint_disintegration():
    rng = np.random.default_rng(3)
    for _ in range(20):
        M = rng.random((3, 4))
        M /= M.sum(axis=0)
        Xs, Ys = measure_space(range(4)), measure_space(range(3))
        f = K.Kernel(Xs, Ys, M)
        mu = MeasureVec(Xs, rng.dirichlet(np.ones(4)))
        assert np.allclose(K.bayes_invert(f, mu).matrix, K.bayes_invert_via_joint(f, mu).matrix,
                           atol=1e-14)


def test_null_observations_give_zero_columns():
    f = K.Kernel(X, Y, np.array([[1.0, 1.0], [0.0, 0.0]]))
    fd = K.bayes_invert(f, FAIR)
    assert fd.column("tails").coeffs.tolist() == [0.0, 0.0]


def test_disintegration_averages_back_to_the_measure():
    Z = measure_space(range(4))
    mu = MeasureVec(Z, [0.1, 0.2, 0.3, 0.4])
    parity = K.Kernel.from_function(Z, measure_space([0, 1]), lambda z: z % 2)
    d = K.disintegrate(parity, mu)
    back = K.pushforward(d, K.pushforward(parity, mu))
    assert np.allclose(back.coeffs, mu.coeffs, atol=1e-15)


def test_rn_derivative_and_absolute_continuity():
    mu = MeasureVec(X, [0.25, 0.0])
    assert K.rn_derivative(MeasureVec(X, [0.5, 0.0]), mu).tolist() == [2.0, 0.0]
    with pytest.raises(K.AbsoluteContinuityError):
        K.rn_derivative(MeasureVec(X, [0.5, 0.1]), mu)


def test_mr_and_rn_are_inverse():
    mu = MeasureVec(X, [0.25, 0.75])
    h = np.array([3.0, 0.5])
    assert np.allclose(K.rn_derivative(K.mr(h, mu), mu), h)


def test_fr_and_rr_are_inverse():
    mu = MeasureVec(X, [0.25, 0.75])
    assert np.allclose(K.rr(K.as_callable(K.fr(mu)), mu).coeffs, mu.coeffs)


def test_naturality_of_rn_along_the_inverse():
    rho = MeasureVec(X, [0.1, 0.3])
    lhs = K.rn_derivative(K.pushforward(COIN, rho), K.pushforward(COIN, FAIR))
    rhs = K.l1_pullback(K.bayes_invert(COIN, FAIR), K.rn_derivative(rho, FAIR))
    assert np.allclose(lhs, rhs, atol=1e-15)


def test_kernel_validation():
    with pytest.raises(Exception):
        K.Kernel(X, Y, np.ones((3, 3)))
    assert not K.Kernel(X, Y, np.array([[0.5, 0.5], [0.2, 0.5]])).is_probability()

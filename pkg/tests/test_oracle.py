import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppl import oracle as O
from oppl.denote import cond_restrict

COIN = ("let x0 = sample(bernoulli(0.5)) in "
        "observe(if x0 then sample(bernoulli(0.9)) else sample(bernoulli(0.2)))")
GEOMETRIC = "x0 := true ; while x0 do x0 := sample(bernoulli(0.5))"


def test_bernoulli_enumerates_two_traces():
    dist = O.enumerate("sample(bernoulli(0.3))")
    assert dist.marginal() == {True: pytest.approx(0.3), False: pytest.approx(0.7)}
    assert dist.residual == 0.0


def test_sum_of_dice_is_clamped_at_int_max():
    dist = O.enumerate("add(sample(uniform_int[3]()), sample(uniform_int[3]()))",
                       max_depth=4, cfg=None)
    m = dist.marginal()
    assert m[2] == pytest.approx(3 / 9) and m[4] == pytest.approx(1 / 9)


def test_coin_posterior_and_evidence():
    post = O.posterior(COIN, True)
    assert post == {True: pytest.approx(9 / 11), False: pytest.approx(2 / 11)}
    assert O.marginal(COIN) == {True: pytest.approx(0.55), False: pytest.approx(0.45)}


def test_posterior_accepts_the_assignment_form():
    alt = COIN.replace("let x0 = sample(bernoulli(0.5)) in ", "x0 := sample(bernoulli(0.5)) ; ")
    assert O.posterior(alt, True) == pytest.approx(O.posterior(COIN, True))


def test_conditioning_on_an_impossible_value_is_an_error():
    with pytest.raises(O.OracleError):
        O.posterior("let x0 = sample(bernoulli(0.5)) in observe(true)", False)


def test_geometric_loop_unrolled_thirty_times():
    dist = O.enumerate(GEOMETRIC, max_depth=30)
    assert dist.residual == pytest.approx(2.0 ** -30, rel=1e-9)
    assert dist.marginal(slots=(0,)) == {(False,): pytest.approx(1 - 2.0 ** -30, abs=1e-15)}


def test_function_values_are_out_of_scope():
    with pytest.raises(O.OracleError):
        O.enumerate("(fn x0 . x0)(1)")


def test_gaussian_closed_forms_agree_with_quadrature():
    prior = O.GaussParams(0.0, 1.0)
    m = O.gaussian_marginal(prior, 1.0)
    assert (m.mean, m.sd) == (0.0, pytest.approx(np.sqrt(2)))
    mq = O.integrate_marginal(prior, 1.0)
    assert mq.mean == pytest.approx(m.mean, abs=1e-6) and mq.sd == pytest.approx(m.sd, abs=1e-6)
    for y in (-2.0, 0.0, 1.0, 3.5):
        p = O.gaussian_posterior(prior, 1.0, y)
        q = O.integrate_posterior(prior, 1.0, y)
        assert q.mean == pytest.approx(p.mean, abs=1e-6) and q.sd == pytest.approx(p.sd, abs=1e-6)
    p = O.gaussian_posterior(prior, 1.0, 1.0)
    assert (p.mean, p.sd) == (pytest.approx(0.5), pytest.approx(1 / np.sqrt(2)))


def test_discretized_normal_is_a_probability_vector():
    w = O.discretized_normal(O.GaussParams(0.0, 1.0), np.linspace(-8, 8, 1601))
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert w.argmax() == 800


def test_meet_bruteforce_three_atom_example():
    E = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    g = np.array([0.2, 0.5, 0.3])
    assert np.allclose(O.meet_bruteforce(E, g, True), [0.2, 0.0, 0.3], atol=1e-9)
    assert np.allclose(O.meet_bruteforce(E, g, False), [0.0, 0.5, 0.0], atol=1e-9)


# coefficients below the LP's resolution would make the search ill-posed
coef = st.one_of(st.just(0.0), st.floats(1e-3, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4).flatmap(lambda n: st.tuples(
    st.lists(st.tuples(coef, coef), min_size=n, max_size=n),
    st.lists(st.floats(0, 1), min_size=n, max_size=n), st.booleans())))
def test_meet_bruteforce_agrees_with_the_closed_form(inst):
    cols, gamma, branch = inst
    E, gamma = np.array(cols).T, np.array(gamma)
    assert np.allclose(O.meet_bruteforce(E, gamma, branch), cond_restrict(E, gamma, branch), atol=1e-4)


def test_meet_bruteforce_refuses_large_instances():
    with pytest.raises(ValueError):
        O.meet_bruteforce(np.ones((2, 5)), np.ones(5))

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from helpers import (chain_of, deterministic_choices, oracle_gain, oracle_optimal_discounted,
                     oracle_optimal_gain, random_float_mdp, random_rational_chain)
from pkmdp.mdp import MarkovChain, Mdp, StationaryPolicy, is_communicating, support_graph, \
    is_unichain_from
from pkmdp.models import GeneratorSpec, generate_model
from pkmdp.rng import make_rng
from pkmdp.solvers import (discounted_occupancy, discounted_values, evaluate_average,
                           evaluate_discounted, mertens_neyman_sweep, occupancy_matrix,
                           optimal_average, optimal_discounted)


def one_state(*rewards):
    return Mdp.from_rows([[[1.0]] * len(rewards)], [list(rewards)])


def cycle(r0, r1, exact=False):
    one = Fraction(1) if exact else 1.0
    zero = one * 0
    return Mdp.from_rows([[[zero, one]], [[one, zero]]], [[r0 * one], [r1 * one]])


def test_evaluate_discounted_geometric():
    m = one_state(1.0)
    pi = StationaryPolicy.uniform(m.n_actions)
    assert evaluate_discounted(m, pi, 0.5, 0) == pytest.approx(2.0)
    e = m.to_exact()
    assert evaluate_discounted(e, StationaryPolicy.uniform(e.n_actions, exact=True),
                               Fraction(1, 2), 0) == 2


def test_evaluate_discounted_zero_reward():
    m = Mdp.from_rows([[[0.5, 0.5]], [[0.2, 0.8]]], [[0.0], [0.0]])
    assert evaluate_discounted(m, StationaryPolicy.uniform(m.n_actions), 0.9, 1) == 0


def test_evaluate_discounted_matches_truncated_sum():
    rng = np.random.default_rng(0)
    m = random_float_mdp(rng, 3, 2)
    pi = StationaryPolicy(rng.dirichlet(np.ones(2), size=3))
    from pkmdp.mdp import induce_chain
    c = induce_chain(m, pi)
    dist = np.eye(3)[0]
    total = 0.0
    for t in range(200):
        total += 0.9**t * dist @ c.reward
        dist = dist @ c.transition
    assert abs(evaluate_discounted(m, pi, 0.9, 0) - total) <= 0.9**200 / 0.1


def test_evaluate_discounted_rejects_bad_alpha():
    m = one_state(1.0)
    with pytest.raises(ValueError):
        evaluate_discounted(m, StationaryPolicy.uniform(m.n_actions), 1.0, 0)


def test_optimal_discounted_small_cases():
    sol = optimal_discounted(one_state(1.0, 2.0), 0.5)
    assert sol.values[0] == pytest.approx(4.0) and sol.greedy.choices == (1,)
    sol = optimal_discounted(one_state(3.0, 3.0, 3.0), 0.75)
    assert sol.values[0] == pytest.approx(12.0) and sol.greedy.choices == (0,)
    with pytest.raises(ValueError):
        optimal_discounted(one_state(1.0), 0.5, tol=0)


def test_optimal_discounted_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(25):
        m = random_float_mdp(rng, 4, 2, density=0.6)
        sol = optimal_discounted(m, 0.8)
        assert np.allclose(sol.values, oracle_optimal_discounted(m, 0.8), atol=1e-8)
        # Bellman consistency and V = max Q
        q = sol.q_values
        for i in range(4):
            assert sol.values[i] == pytest.approx(max(q.row(i)), abs=1e-12)


def test_optimal_discounted_exact_mode():
    rng = np.random.default_rng(2)
    for _ in range(10):
        m = random_float_mdp(rng, 3, 2, density=0.6).to_exact()
        sol = optimal_discounted(m, Fraction(4, 5))
        best = oracle_optimal_discounted(m.to_float(), 0.8)
        assert all(isinstance(v, Fraction) for v in sol.values)
        assert np.allclose([float(v) for v in sol.values], best, atol=1e-12)


def test_occupancy_two_term_example():
    c = MarkovChain(np.array([[0, 1], [0, 1]], dtype=float))
    assert discounted_occupancy(c, 0, 0, 0.5) == pytest.approx(0.5)
    assert discounted_occupancy(c, 0, 1, 0.5) == pytest.approx(0.5)


def test_occupancy_rows_sum_to_one():
    rng = np.random.default_rng(3)
    for _ in range(30):
        c = random_rational_chain(rng, int(rng.integers(1, 5)))
        for alpha in (Fraction(1, 2), Fraction(9, 10)):
            occ = occupancy_matrix(c, alpha)
            assert all(sum(row) == 1 for row in occ)
            f = occupancy_matrix(MarkovChain(c.transition.astype(float)), float(alpha))
            assert np.allclose(f.sum(axis=1), 1, atol=1e-9)


def test_occupancy_matches_power_series():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(3), size=3)
    c = MarkovChain(p)
    dist = np.eye(3)
    series = np.zeros((3, 3))
    for t in range(400):
        series += 0.1 * 0.9**t * dist
        dist = dist @ p
    assert np.allclose(occupancy_matrix(c, 0.9), series, atol=1e-12)


def test_discounted_value_occupancy_identity_exact():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = random_float_mdp(rng, 3, 2, density=0.7).to_exact()
        pi = StationaryPolicy.deterministic(m.n_actions, [int(x) for x in rng.integers(0, 2, 3)],
                                            exact=True)
        from pkmdp.mdp import induce_chain
        c = induce_chain(m, pi)
        a = Fraction(3, 4)
        v = discounted_values(m, pi, a)
        occ = occupancy_matrix(c, a)
        for i in range(3):
            assert (1 - a) * v[i] == sum(c.reward[j] * occ[i, j] for j in range(3))


def test_evaluate_average_cycle_and_constant():
    m = cycle(0, 1)
    pi = StationaryPolicy.uniform(m.n_actions)
    assert evaluate_average(m, pi, 0) == pytest.approx(0.5)
    assert evaluate_average(m, pi, 1) == pytest.approx(0.5)
    c = Mdp.from_rows([[[0.5, 0.5]], [[0.3, 0.7]]], [[2.0], [2.0]])
    assert evaluate_average(c, StationaryPolicy.uniform(c.n_actions), 0) == pytest.approx(2.0)


def test_evaluate_average_refuses_multichain():
    m = Mdp.from_rows([[[0, 0.5, 0.5]], [[0, 1, 0]], [[0, 0, 1]]], [[0], [1], [0]])
    with pytest.raises(ValueError):
        evaluate_average(m, StationaryPolicy.uniform(m.n_actions), 0)


def test_evaluate_average_matches_simulation():
    from pkmdp.learn_average import Environment, simulate_fast
    m = generate_model(GeneratorSpec(4, 2, p_min=0.1), make_rng(0, "avg"))
    pi = StationaryPolicy.deterministic(m.n_actions, [0, 1, 0, 1])
    g = support_graph(m, pi)
    assert is_unichain_from(g, 0)
    t = simulate_fast(Environment(m), pi, 0, 10**6, make_rng(0, "avg-sim"))
    assert abs(float(np.mean(t.rewards)) - evaluate_average(m, pi, 0)) <= 5e-3


def test_optimal_average_small_cases():
    assert optimal_average(one_state(1.0, 3.0)).gain[0] == pytest.approx(3.0)
    # state A can self-loop for 1 or cycle through B paying nothing
    m = Mdp.from_rows([[[1, 0], [0, 1]], [[1, 0]]], [[1, 0], [0]])
    sol = optimal_average(m)
    assert np.allclose(sol.gain, 1.0) and sol.policy.choices[0] == 0


def test_optimal_average_rejects_non_communicating():
    with pytest.raises(ValueError):
        optimal_average(Mdp.from_rows([[[1, 0]], [[0, 1]]], [[0], [1]]))


def test_optimal_average_matches_enumeration():
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 25:
        m = random_float_mdp(rng, 4, 2, density=0.45)
        if not is_communicating(m):
            continue
        checked += 1
        sol = optimal_average(m)
        assert np.allclose(sol.gain, oracle_optimal_gain(m), atol=1e-6)
        assert np.allclose(sol.gain, sol.gain[0], atol=1e-9)
        g = support_graph(m, sol.policy)
        assert all(is_unichain_from(g, i) for i in range(4))


def test_optimal_average_exact_mode():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 8:
        m = random_float_mdp(rng, 3, 2, density=0.5)
        if not is_communicating(m):
            continue
        checked += 1
        sol = optimal_average(m.to_exact())
        assert all(isinstance(g, Fraction) for g in sol.gain)
        assert np.allclose([float(g) for g in sol.gain], oracle_optimal_gain(m), atol=1e-6)


def test_mertens_neyman_single_state_and_cycle():
    m = one_state(1.0)
    pi = StationaryPolicy.uniform(m.n_actions)
    assert all(v == pytest.approx(1.0) for _, v in mertens_neyman_sweep(m, pi, 0, [0.5, 0.9]))
    c = cycle(0, 1)
    alphas = [1 - 10.0**-k for k in range(1, 7)]
    for k, (_, v) in enumerate(mertens_neyman_sweep(c, StationaryPolicy.uniform(c.n_actions), 0,
                                                   alphas), start=1):
        assert abs(v - 0.5) <= 10.0**-k


def test_mertens_neyman_rejects_bad_alphas():
    m = one_state(1.0)
    pi = StationaryPolicy.uniform(m.n_actions)
    with pytest.raises(ValueError):
        mertens_neyman_sweep(m, pi, 0, [0.9, 0.5])
    with pytest.raises(ValueError):
        mertens_neyman_sweep(m, pi, 0, [1.0])


def test_mertens_neyman_converges_to_average():
    rng = np.random.default_rng(8)
    for _ in range(5):
        m = random_float_mdp(rng, 4, 2)
        pi = StationaryPolicy(rng.dirichlet(np.ones(2), size=4))
        (_, last), = mertens_neyman_sweep(m, pi, 0, [1 - 1e-6])
        assert abs(last - evaluate_average(m, pi, 0)) <= 1e-4


def test_oracle_gain_agrees_on_periodic_chain():
    p, r = chain_of(cycle(0, 1), (0, 0))
    assert np.allclose(oracle_gain(p, r), 0.5)
    assert len(list(deterministic_choices((2, 3)))) == 6

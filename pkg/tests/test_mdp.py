from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from helpers import oracle_communicating, oracle_unichain, random_float_mdp
from pkmdp.mdp import (Mdp, PriorKnowledge, StationaryPolicy, SupportGraph, Trajectory,
                       induce_chain, inverse_cdf, is_communicating, is_unichain_from,
                       sample_step, simulate, support_graph, validate)
from pkmdp.rng import make_rng


def two_state():
    return Mdp.from_rows([[[1, 0], [0, 1]], [[0.5, 0.5]]], [[0, 1], [2]])


def test_validate_well_formed():
    assert validate(two_state()) == []


def test_validate_row_sum_names_pair():
    m = Mdp.from_rows([[[0.5, 0.4]], [[0, 1]]], [[0], [0]])
    report = validate(m)
    assert [(v.kind, v.state, v.action) for v in report] == [("row-sum", 0, 0)]


def test_validate_empty_action_set():
    m = Mdp(np.array([[[1.0, 0.0]], [[0.0, 0.0]]]), np.zeros((2, 1)), (1, 0))
    assert [v.kind for v in validate(m)] == ["empty-action-set"]


def test_validate_exact_row_sum_is_exact():
    m = Mdp.from_rows([[[Fraction(1, 3), Fraction(2, 3)]], [[Fraction(1), Fraction(0)]]],
                      [[Fraction(0)], [Fraction(1)]])
    assert m.exact and validate(m) == []
    bad = Mdp.from_rows([[[Fraction(1, 3), Fraction(1, 3)]], [[Fraction(1), Fraction(0)]]],
                        [[Fraction(0)], [Fraction(1)]])
    assert validate(bad)[0].kind == "row-sum"


def test_padding_rejects_bad_action_counts():
    with pytest.raises(ValueError):
        Mdp(np.ones((1, 1, 1)), np.zeros((1, 1)), (2,))


def test_induce_chain_deterministic_rows():
    m = two_state()
    c = induce_chain(m, StationaryPolicy.deterministic(m.n_actions, [1, 0]))
    assert np.allclose(c.transition, [[0, 1], [0.5, 0.5]])
    assert np.allclose(c.reward, [1, 2])


def test_induce_chain_uniform_mix():
    m = Mdp.from_rows([[[1, 0], [0, 1]], [[0, 1]]], [[0, 1], [0]])
    c = induce_chain(m, StationaryPolicy.uniform(m.n_actions))
    assert np.allclose(c.transition[0], [0.5, 0.5])
    assert c.reward[0] == pytest.approx(0.5)


def test_induce_chain_matches_resummation():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = random_float_mdp(rng, 4, 3, density=0.6)
        w = rng.dirichlet(np.ones(3), size=4)
        c = induce_chain(m, StationaryPolicy(w))
        for i in range(4):
            for j in range(4):
                expected = 0.0
                for a in range(3):
                    expected += w[i, a] * m.transition[i, a, j]
                assert c.transition[i, j] == pytest.approx(expected, abs=1e-15)
        assert np.allclose(c.transition.sum(axis=1), 1)


def test_induce_chain_rejects_action_outside_set():
    m = Mdp.from_rows([[[1.0]], ], [[0.0]])
    with pytest.raises(ValueError):
        induce_chain(m, StationaryPolicy(np.array([[0.5, 0.5]])))


def test_support_graph_cycle():
    p = np.zeros((3, 1, 3))
    for i in range(3):
        p[i, 0, (i + 1) % 3] = 1
    m = Mdp(p, np.zeros((3, 1)))
    g = support_graph(m, StationaryPolicy.uniform(m.n_actions))
    assert g.edges == {(0, 1), (1, 2), (2, 0)}


def test_support_graph_zero_weight_action_adds_nothing():
    m = Mdp.from_rows([[[1, 0], [0, 1]], [[0, 1]]], [[0, 0], [0]])
    g = support_graph(m, StationaryPolicy.deterministic(m.n_actions, [0, 0]))
    assert (0, 1) not in g.edges


def test_support_graph_equals_chain_support():
    rng = np.random.default_rng(4)
    for _ in range(30):
        m = random_float_mdp(rng, 4, 2, density=0.5)
        w = rng.dirichlet(np.ones(2), size=4) * (rng.random((4, 2)) < 0.7)
        w[w.sum(axis=1) == 0, 0] = 1
        w = w / w.sum(axis=1, keepdims=True)
        pi = StationaryPolicy(w)
        delta = induce_chain(m, pi).transition
        assert support_graph(m, pi).edges == {(i, j) for i in range(4) for j in range(4)
                                              if delta[i, j] > 0}


def test_unichain_cycle_and_two_sinks():
    assert is_unichain_from(SupportGraph(2, frozenset({(0, 1), (1, 0)})), 0)
    g = SupportGraph(3, frozenset({(0, 1), (0, 2), (1, 1), (2, 2)}))
    assert not is_unichain_from(g, 0)
    assert is_unichain_from(g, 1)
    with pytest.raises(ValueError):
        is_unichain_from(g, 5)


def test_unichain_matches_closure_oracle():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(1, 6))
        adj = rng.random((n, n)) < 0.3
        # every vertex of a stochastic support graph has an out-edge
        for i in range(n):
            if not adj[i].any():
                adj[i, rng.integers(n)] = True
        g = SupportGraph(n, frozenset(zip(*np.nonzero(adj))))
        for i in range(n):
            assert is_unichain_from(g, i) == oracle_unichain(adj, i)


def test_communicating_small_cases():
    assert is_communicating(Mdp.from_rows([[[1.0]]], [[0.0]]))
    m = Mdp.from_rows([[[1, 0]], [[1, 0]]], [[0], [0]])
    assert not is_communicating(m)


def test_communicating_matches_policy_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(150):
        n, k = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        m = random_float_mdp(rng, n, k, density=0.35)
        assert is_communicating(m) == oracle_communicating(m)


def test_sample_step_deterministic_outcome():
    m = Mdp.from_rows([[[0, 1]], [[1, 0]]], [[3], [4]])
    pi = StationaryPolicy.uniform(m.n_actions)
    for seed in range(5):
        assert sample_step(m, pi, 0, make_rng(seed, "t")) == (0, 3.0, 1)


def test_sample_step_repeatable():
    m = Mdp.from_rows([[[0.3, 0.7], [0.5, 0.5]], [[1, 0]]], [[0, 1], [0]])
    pi = StationaryPolicy.uniform(m.n_actions)
    a = sample_step(m, pi, 0, make_rng(11, "t"))
    assert all(sample_step(m, pi, 0, make_rng(11, "t")) == a for _ in range(3))


def test_sampling_frequencies():
    m = Mdp.from_rows([[[0.3, 0.7]], [[1, 0]]], [[0], [0]])
    pi = StationaryPolicy.uniform(m.n_actions)
    rng = make_rng(0, "freq")
    hits = sum(sample_step(m, pi, 0, rng)[2] == 1 for _ in range(100_000))
    assert abs(hits / 100_000 - 0.7) <= 0.01


def test_inverse_cdf_skips_zeros_and_falls_back():
    assert inverse_cdf([0.0, 0.5, 0.0, 0.5], 0.0) == 1
    assert inverse_cdf([0.0, 0.5, 0.0, 0.5], 0.7) == 3
    assert inverse_cdf([0.3, 0.3, 0.0], 0.9999) == 1


def test_simulate_records_chain_and_rewards():
    m = Mdp.from_rows([[[0.3, 0.7], [1, 0]], [[0.5, 0.5]]], [[1, 2], [5]])
    t = simulate(m, StationaryPolicy.uniform(m.n_actions), 0, 200, seed=9)
    assert t.seed == 9 and len(t) == 200
    recs = list(t.records())
    for (x, a, r, j), nxt in zip(recs, recs[1:]):
        assert nxt[0] == j and r == m.reward[x, a]
    assert simulate(m, StationaryPolicy.uniform(m.n_actions), 0, 200, seed=9).states.tolist() \
        == t.states.tolist()


def test_trajectory_shape_checks():
    with pytest.raises(ValueError):
        Trajectory(0, np.array([0, 1]), np.array([0, 0]), np.array([1.0, 1.0]))


def test_prior_knowledge_violations():
    m = Mdp.from_rows([[[0.05, 0.95]], [[1, 0]]], [[2], [0]])
    out = PriorKnowledge(0.1, 1).violations(m)
    assert len(out) == 2
    with pytest.raises(ValueError):
        PriorKnowledge(0, 1)


def test_exact_conversion_renormalizes_rows():
    m = Mdp.from_rows([[[0.1, 0.2, 0.7]], [[1, 0, 0]], [[0, 0, 1]]], [[0], [0], [0]])
    e = m.to_exact()
    assert all(sum(e.transition[i, 0]) == 1 for i in range(3))
    assert e.to_float().transition[0, 0, 1] == pytest.approx(0.2)

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from helpers import oracle_hitting, random_rational_chain, random_rational_mdp
from pkmdp.mdp import MarkovChain, Mdp, StationaryPolicy, induce_chain
from pkmdp.rational import (SparsePoly, check_poly_ratio_bound, count_maps, duplicate_chain,
                            fw_discounted_value, fw_hitting_probability, fw_occupancy_row,
                            fw_polynomials, hitting_probability, spanning_map_terms)
from pkmdp.solvers import discounted_values, occupancy_matrix

F = Fraction


def chain(rows):
    return MarkovChain(np.array([[F(x) for x in r] for r in rows], dtype=object))


def test_two_state_example():
    c = chain([[F(3, 10), F(7, 10)], [0, 1]])
    v = fw_hitting_probability(c, {1}, 0, 1)
    assert v.numerator == F(7, 10) and v.denominator == F(7, 10) and v.value == 1


def test_single_forced_step():
    c = chain([[0, 1, 0], [0, 1, 0], [0, 0, 1]])
    assert fw_hitting_probability(c, {1, 2}, 0, 1).value == 1


def test_numerator_requires_acyclic_maps():
    # from state 1 the path may loop at 2 before hitting 3; cyclic maps must not count
    c = chain([[0, 0, 1], [0, F(1, 2), F(1, 2)], [0, 0, 1]])
    v = fw_hitting_probability(c, {2}, 0, 2)
    assert v.value == 1


def test_matches_independent_solver():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(2, 5))
        c = random_rational_chain(rng, n, density=0.7)
        q = {int(x) for x in rng.choice(n, size=int(rng.integers(1, min(2, n - 1) + 1)),
                                        replace=False)}
        try:
            hitting_probability(c, q, next(s for s in range(n) if s not in q), next(iter(q)))
        except ValueError:
            continue
        p = c.transition.tolist()
        for j in (s for s in range(n) if s not in q):
            for k in q:
                assert fw_hitting_probability(c, q, j, k).value == oracle_hitting(p, q, j, k)


def test_precondition_and_guard():
    c = chain([[1, 0], [0, 1]])
    with pytest.raises(ValueError):
        fw_hitting_probability(c, {1}, 0, 1)
    c = chain([[F(1, 2), F(1, 2)], [0, 1]])
    with pytest.raises(ValueError):
        fw_hitting_probability(c, {1}, 1, 1)
    big = MarkovChain(np.full((9, 9), F(1, 9), dtype=object))
    with pytest.raises(ValueError):
        list(spanning_map_terms(big, {0}, limit=1000))
    assert count_maps(big, {0}) == 9**8


def test_terms_are_nonnegative_and_flags_consistent():
    rng = np.random.default_rng(1)
    c = random_rational_chain(rng, 4, density=0.8)
    for term in spanning_map_terms(c, {0}):
        assert term.weight >= 0
        if term.acyclic:
            assert all(term.visits(s, term.terminal[s]) for s in term.free)


def test_duplicate_chain_cases():
    c = chain([[1]])
    d = duplicate_chain(c, F(1, 2))
    assert d.transition.tolist() == [[F(1, 2), F(1, 2)], [0, 1]]
    with pytest.raises(ValueError):
        duplicate_chain(c, 1)


def test_duplicate_chain_rows_and_first_step():
    rng = np.random.default_rng(2)
    for _ in range(20):
        c = random_rational_chain(rng, 3)
        a = F(int(rng.integers(1, 9)), 10)
        d = duplicate_chain(c, a)
        assert all(sum(row) == 1 for row in d.transition)
        for k in range(3):
            assert sum(d.transition[k, 3:]) == 1 - a


def test_duplicate_hitting_equals_occupancy():
    rng = np.random.default_rng(3)
    for _ in range(15):
        n = int(rng.integers(1, 5))
        c = random_rational_chain(rng, n)
        a = F(3, 4)
        occ = occupancy_matrix(c, a)
        d = duplicate_chain(c, a)
        copies = set(range(n, 2 * n))
        for i in range(n):
            nums, den = fw_occupancy_row(c, a, i)
            for j in range(n):
                assert nums[j] / den == occ[i, j]
                assert oracle_hitting(d.transition.tolist(), copies, i, n + j) == occ[i, j]


def test_fw_discounted_value_cases():
    m = Mdp.from_rows([[[F(1)]]], [[F(1)]])
    pi = StationaryPolicy.uniform(m.n_actions, exact=True)
    assert fw_discounted_value(m, pi, F(1, 3), 0).value == 1
    z = Mdp.from_rows([[[F(1, 2), F(1, 2)]], [[F(1), F(0)]]], [[F(0)], [F(0)]])
    assert fw_discounted_value(z, StationaryPolicy.uniform(z.n_actions, exact=True),
                               F(1, 2), 0).numerator == 0


def test_fw_discounted_value_matches_solver():
    rng = np.random.default_rng(4)
    for _ in range(10):
        m = random_rational_mdp(rng, 3, 2)
        pi = StationaryPolicy.deterministic(m.n_actions, [int(x) for x in rng.integers(0, 2, 3)],
                                            exact=True)
        v = discounted_values(m, pi, F(1, 2))
        for i in range(3):
            assert fw_discounted_value(m, pi, F(1, 2), i).value == v[i] / 2


def test_degree_audit():
    rng = np.random.default_rng(5)
    for _ in range(5):
        n = int(rng.integers(1, 4))
        c = random_rational_chain(rng, n)
        d = duplicate_chain(c, F(1, 2))
        _, nums, den = fw_polynomials(d, range(n, 2 * n), 0)
        for poly in [den, *nums.values()]:
            assert poly.nonnegative()
            assert poly.degree <= 2 * n and poly.max_support <= 2 * n


def test_polynomials_evaluate_to_the_sums():
    rng = np.random.default_rng(6)
    c = random_rational_chain(rng, 4)
    variables, nums, den = fw_polynomials(c, {0, 1}, 2)
    point = [c.transition[s, t] for s, t in variables]
    for k in (0, 1):
        v = fw_hitting_probability(c, {0, 1}, 2, k)
        assert nums[k].evaluate(point) == v.numerator
    assert den.evaluate(point) == v.denominator


def test_poly_ratio_bound_cases():
    f = SparsePoly(2, {(1, 1): 2, (2, 0): 1})
    a = [F(1, 2), F(1, 3)]
    assert check_poly_ratio_bound(f, a, a, F(1, 10))
    mono = SparsePoly(1, {(5,): 1})
    eps = F(1, 7)
    assert check_poly_ratio_bound(mono, [1 + eps], [F(1)], eps)
    assert mono.evaluate([1 + eps]) == (1 + eps) ** 5


def test_poly_ratio_bound_errors():
    with pytest.raises(ValueError):
        check_poly_ratio_bound(SparsePoly(1, {(1,): -1}), [1], [1], 0.1)
    with pytest.raises(ValueError):
        check_poly_ratio_bound(SparsePoly(1, {(1,): 1}), [2], [1], 0.1)
    with pytest.raises(ValueError):
        check_poly_ratio_bound(SparsePoly(1, {(1,): 1}), [0], [1], 0.1)
    assert check_poly_ratio_bound(SparsePoly(1, {(1,): 1}), [0], [0], 0.1)

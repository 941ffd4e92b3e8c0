"""Hitting probabilities as quotients of spanning-map sums.

For a chain on S and a target set Q, every map f: S \\ Q -> S defines a
functional graph. Summing the weights prod_l delta(l, f(l)) over the maps whose
graph is acyclic gives the denominator; restricting further to maps whose path
from j ends at k gives the numerator. The quotient is Pr_j(first Q-hit is k).
Both sums have nonnegative terms, which is what the robustness bounds rely on.

Discounted values reduce to the same form by duplicating the chain: each state
k gets an absorbing copy k' entered with probability 1 - alpha, and the
probability of first entering the copies at j' equals the normalized
discounted occupancy of j.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _linalg as la
from .mdp import MarkovChain, Mdp, StationaryPolicy, induce_chain, reachable_from

TERM_LIMIT = 10**7


@dataclass(frozen=True)
class RationalValue:
    """A quotient numerator / denominator of nonnegative-term sums."""

    numerator: object
    denominator: object

    @property
    def value(self):
        return self.numerator / self.denominator

    def __float__(self) -> float:
        return float(self.numerator) / float(self.denominator)


@dataclass(frozen=True)
class SpanningMapTerm:
    """One map f: S \\ Q -> S with its acyclicity flag and monomial weight.

    ``targets[k]`` is f(free[k]); ``terminal[s]`` is the Q-state where the
    path from s ends, or -1 when that path runs into a cycle.
    """

    free: tuple[int, ...]
    targets: tuple[int, ...]
    acyclic: bool
    weight: object
    terminal: dict[int, int]

    def visits(self, i: int, j: int) -> bool:
        """Whether the unique path from ``i`` in the functional graph visits ``j``."""
        step = dict(zip(self.free, self.targets))
        seen = set()
        s = i
        while True:
            if s == j:
                return True
            if s in seen or s not in step:
                return False
            seen.add(s)
            s = step[s]


def _check_target_set(c: MarkovChain, q: Iterable[int]) -> tuple[list[int], list[int]]:
    qset = sorted(set(int(x) for x in q))
    if not qset or any(not 0 <= x < c.n_states for x in qset):
        raise ValueError("target set must be a nonempty set of states")
    adj = np.array(c.transition > 0, dtype=bool)
    # every state must reach Q with positive probability
    rev = adj.T
    hit = np.zeros(c.n_states, dtype=bool)
    for x in qset:
        hit |= reachable_from(rev, x)
    if not hit.all():
        bad = np.flatnonzero(~hit).tolist()
        raise ValueError(f"states {bad} cannot reach the target set")
    free = [s for s in range(c.n_states) if s not in set(qset)]
    return qset, free


def _choices(c: MarkovChain, free: Sequence[int]) -> list[list[int]]:
    # maps sending some l to a zero-probability successor carry weight zero and are skipped
    return [[t for t in range(c.n_states) if c.transition[s, t] > 0] for s in free]


def count_maps(c: MarkovChain, q: Iterable[int]) -> int:
    """Number of positive-weight maps the enumeration visits."""
    _, free = _check_target_set(c, q)
    return math.prod(len(x) for x in _choices(c, free))


def spanning_map_terms(c: MarkovChain, q: Iterable[int],
                       limit: int = TERM_LIMIT) -> Iterator[SpanningMapTerm]:
    """Lazily enumerate positive-weight maps in mixed-radix order."""
    qset, free = _check_target_set(c, q)
    choices = _choices(c, free)
    total = math.prod(len(x) for x in choices)
    if total > limit:
        raise ValueError(f"{total} spanning maps exceed the guard of {limit}")
    one = Fraction(1) if c.exact else 1.0
    in_q = set(qset)
    for targets in itertools.product(*choices):
        step = dict(zip(free, targets))
        weight = one
        for s, t in zip(free, targets):
            weight = weight * c.transition[s, t]
        assert weight >= 0
        terminal = _terminals(step, in_q)
        yield SpanningMapTerm(tuple(free), tuple(targets),
                              all(terminal[s] >= 0 for s in free), weight, terminal)


def _terminals(step: dict[int, int], in_q: set[int]) -> dict[int, int]:
    """Where each free state's path ends: a Q-state, or -1 for a cycle."""
    out: dict[int, int] = {}
    for start in step:
        if start in out:
            continue
        path = []
        on_path = set()
        s = start
        while s not in in_q and s not in out and s not in on_path:
            path.append(s)
            on_path.add(s)
            s = step[s]
        end = s if s in in_q else out.get(s, -1)
        for x in path:
            out[x] = end
    return out


def _fw_sums(c: MarkovChain, q: Iterable[int], j: int, limit: int = TERM_LIMIT):
    """Numerators for every k in Q (one shared pass) and the denominator."""
    qset = sorted(set(int(x) for x in q))
    zero = Fraction(0) if c.exact else 0.0
    nums = {k: zero for k in qset}
    den = zero
    for term in spanning_map_terms(c, qset, limit):
        if not term.acyclic:
            continue
        den += term.weight
        nums[term.terminal[j]] += term.weight
    return nums, den


def fw_hitting_probability(c: MarkovChain, q: Iterable[int], j: int, k: int,
                           limit: int = TERM_LIMIT) -> RationalValue:
    """Pr_j(the first visit to Q is at k) as a spanning-map quotient.

    The numerator sums the weights of acyclic maps whose path from ``j`` ends
    at ``k``; the denominator sums the weights of all acyclic maps.
    """
    qset = set(int(x) for x in q)
    if j in qset or k not in qset:
        raise ValueError("need j outside the target set and k inside it")
    nums, den = _fw_sums(c, qset, j, limit)
    return RationalValue(nums[k], den)


def hitting_probability(c: MarkovChain, q: Iterable[int], j: int, k: int):
    """Same probability from the linear system h = delta h off Q, h = 1{k} on Q."""
    qset, free = _check_target_set(c, q)
    exact = c.exact
    p = c.transition
    idx = {s: n for n, s in enumerate(free)}
    a = la.identity(len(free), exact) - p[np.ix_(free, free)]
    b = p[np.ix_(free, [k])][:, 0]
    if j in set(qset):
        return (Fraction(1) if exact else 1.0) * (j == k)
    return la.solve(a, b)[idx[j]]


def duplicate_chain(c: MarkovChain, alpha) -> MarkovChain:
    """Chain on S plus absorbing copies; state n + k is the copy of k.

    From an original state k the chain moves to its copy with probability
    1 - alpha and otherwise follows alpha * delta(k, .).
    """
    if not 0 < alpha < 1:
        raise ValueError("discount must lie in (0, 1)")
    n = c.n_states
    exact = c.exact or isinstance(alpha, Fraction)
    p = la.to_fraction_array(c.transition) if exact else c.transition
    out = la.zeros((2 * n, 2 * n), exact)
    one = Fraction(1) if exact else 1.0
    out[:n, :n] = alpha * p
    for k in range(n):
        out[k, n + k] = one - alpha
        out[n + k, n + k] = one
    reward = la.zeros(2 * n, exact)
    reward[:n] = la.to_fraction_array(c.reward) if exact else c.reward
    names = tuple(c.state_names) + tuple(f"{s}'" for s in c.state_names)
    return MarkovChain(out, reward, names)


def fw_occupancy_row(c: MarkovChain, alpha, i: int, limit: int = TERM_LIMIT):
    """Numerators (one per state) and shared denominator of the occupancy row of ``i``."""
    n = c.n_states
    dup = duplicate_chain(c, alpha)
    nums, den = _fw_sums(dup, range(n, 2 * n), i, limit)
    return [nums[n + k] for k in range(n)], den


def fw_discounted_value(m: Mdp, pi: StationaryPolicy, alpha, i: int,
                        limit: int = TERM_LIMIT) -> RationalValue:
    """(1 - alpha) v_i^alpha as sum_j rbar(j) * occupancy(i, j), over one common denominator."""
    c = induce_chain(m, pi)
    nums, den = fw_occupancy_row(c, alpha, i, limit)
    exact = c.exact or isinstance(alpha, Fraction)
    zero = Fraction(0) if exact else 0.0
    rbar = la.to_fraction_array(c.reward) if exact else c.reward
    return RationalValue(sum((rbar[j] * nums[j] for j in range(c.n_states)), zero), den)


@dataclass(frozen=True)
class SparsePoly:
    """Multivariate polynomial stored as {exponent tuple: coefficient}."""

    n_vars: int
    terms: dict[tuple[int, ...], object] = field(default_factory=dict)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    @property
    def max_support(self) -> int:
        """Largest number of distinct variables in any monomial."""
        return max((sum(1 for x in e if x) for e in self.terms), default=0)

    def evaluate(self, point: Sequence):
        zero = Fraction(0) if any(isinstance(x, Fraction) for x in point) else 0.0
        total = zero
        for exps, coef in self.terms.items():
            t = coef
            for x, e in zip(point, exps):
                if e:
                    t = t * x**e
            total = total + t
        return total

    def nonnegative(self) -> bool:
        return all(c >= 0 for c in self.terms.values())


def fw_polynomials(c: MarkovChain, q: Iterable[int], j: int, limit: int = 10**5):
    """Symbolic spanning-map sums with one variable per positive chain entry.

    Returns (variables, numerators by target, denominator). ``variables[v]`` is
    the (row, column) entry that variable v stands for.
    """
    qset = sorted(set(int(x) for x in q))
    variables = [(s, t) for s in range(c.n_states) for t in range(c.n_states)
                 if c.transition[s, t] > 0]
    index = {v: n for n, v in enumerate(variables)}
    nums = {k: {} for k in qset}
    den: dict[tuple[int, ...], int] = {}
    for term in spanning_map_terms(c, qset, limit):
        if not term.acyclic:
            continue
        exps = [0] * len(variables)
        for s, t in zip(term.free, term.targets):
            exps[index[s, t]] += 1
        key = tuple(exps)
        den[key] = den.get(key, 0) + 1
        bucket = nums[term.terminal[j]]
        bucket[key] = bucket.get(key, 0) + 1
    nv = len(variables)
    return (variables, {k: SparsePoly(nv, v) for k, v in nums.items()}, SparsePoly(nv, den))


def check_poly_ratio_bound(poly: SparsePoly, a: Sequence, b: Sequence, eps) -> bool:
    """Check (1+eps)^-d f(b) <= f(a) <= (1+eps)^d f(b) for a nonnegative polynomial.

    Requires every coefficient to be nonnegative and every coordinate to satisfy
    b_i / (1+eps) <= a_i <= (1+eps) b_i (so 0 pairs only with 0). Both the
    precondition and the conclusion are checked in cross-multiplied form.
    Float inputs get a relative slack of 1e-12 on the conclusion.
    """
    if not poly.nonnegative():
        raise ValueError("polynomial has a negative coefficient")
    if len(a) != poly.n_vars or len(b) != poly.n_vars:
        raise ValueError("points must have one coordinate per variable")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    grow = 1 + eps
    for x, y in zip(a, b):
        if x < 0 or y < 0 or not (y <= grow * x and x <= grow * y):
            raise ValueError("points violate the coordinate ratio precondition")
    d = poly.degree
    fa, fb = poly.evaluate(a), poly.evaluate(b)
    exact = all(isinstance(v, (int, Fraction)) for v in [*a, *b, eps, *poly.terms.values()])
    slack = 0 if exact else 1e-12 * max(abs(fa), abs(fb))
    return bool(fb <= grow**d * fa + slack and fa <= grow**d * fb + slack)

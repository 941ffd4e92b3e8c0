"""Random instances and independent brute-force oracles for the tests.

Nothing here calls into the package's solvers: the oracles re-derive their
answers from definitions (exhaustive enumeration, plain Gaussian elimination,
transitive closure) so they can catch mistakes in the code under test.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from pkmdp.mdp import MarkovChain, Mdp


def random_rational_row(rng: np.random.Generator, n: int, density: float = 0.6,
                        denominator: int = 12) -> list[Fraction]:
    support = [j for j in range(n) if rng.random() < density] or [int(rng.integers(n))]
    weights = [int(rng.integers(1, denominator)) for _ in support]
    total = sum(weights)
    row = [Fraction(0)] * n
    for j, w in zip(support, weights):
        row[j] = Fraction(w, total)
    return row


def random_rational_chain(rng: np.random.Generator, n: int, density: float = 0.6) -> MarkovChain:
    p = np.array([random_rational_row(rng, n, density) for _ in range(n)], dtype=object)
    r = np.array([Fraction(int(rng.integers(0, 10)), 4) for _ in range(n)], dtype=object)
    return MarkovChain(p, r)


def random_float_mdp(rng: np.random.Generator, n: int, k: int, density: float = 1.0,
                     rewards=(0.0, 1.0)) -> Mdp:
    p = np.zeros((n, k, n))
    for i in range(n):
        for a in range(k):
            support = [j for j in range(n) if rng.random() < density] or [int(rng.integers(n))]
            p[i, a, support] = rng.dirichlet(np.ones(len(support)))
    r = rng.uniform(*rewards, size=(n, k))
    return Mdp(p, r, (k,) * n)


def random_rational_mdp(rng: np.random.Generator, n: int, k: int, density: float = 0.7) -> Mdp:
    p = np.empty((n, k, n), dtype=object)
    r = np.empty((n, k), dtype=object)
    for i in range(n):
        for a in range(k):
            p[i, a] = random_rational_row(rng, n, density)
            r[i, a] = Fraction(int(rng.integers(0, 9)), 8)
    return Mdp(p, r, (k,) * n)


def exact_solve(a: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination with Fractions (no pivoting subtleties needed)."""
    n = len(b)
    m = [list(row) + [rhs] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def oracle_hitting(p, q: set[int], j: int, k: int) -> Fraction:
    """Pr_j(first visit to q is at k) from h = P h off q, h = 1{k} on q."""
    n = len(p)
    free = [s for s in range(n) if s not in q]
    a = [[(1 if s == t else 0) - p[s][t] for t in free] for s in free]
    b = [p[s][k] for s in free]
    h = exact_solve(a, b)
    return h[free.index(j)]


def closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure by Warshall's algorithm."""
    n = len(adj)
    c = np.array(adj, dtype=bool) | np.eye(n, dtype=bool)
    for m in range(n):
        c |= c[:, [m]] & c[[m], :]
    return c


def oracle_unichain(adj: np.ndarray, i: int) -> bool:
    """Exactly one closed strongly connected class among the states reachable from i."""
    c = closure(adj)
    reach = np.flatnonzero(c[i])
    classes = {tuple(np.flatnonzero(c[s] & c[:, s])) for s in reach}
    closed = 0
    for cls in classes:
        members = set(cls)
        nontrivial = len(cls) > 1 or adj[cls[0], cls[0]]
        escapes = any(adj[s, t] and t not in members for s in cls for t in range(len(adj)))
        if nontrivial and not escapes:
            closed += 1
    return closed == 1


def deterministic_choices(n_actions):
    return itertools.product(*[range(k) for k in n_actions])


def chain_of(m: Mdp, choices) -> tuple[np.ndarray, np.ndarray]:
    p = np.array([[float(x) for x in m.transition[i, a]] for i, a in enumerate(choices)])
    r = np.array([float(m.reward[i, a]) for i, a in enumerate(choices)])
    return p, r


def oracle_communicating(m: Mdp) -> bool:
    n = m.n_states
    ok = np.zeros((n, n), dtype=bool)
    for ch in deterministic_choices(m.n_actions):
        p, _ = chain_of(m, ch)
        ok |= closure(p > 0)
    return bool(ok.all())


def oracle_optimal_discounted(m: Mdp, alpha: float) -> np.ndarray:
    best = None
    for ch in deterministic_choices(m.n_actions):
        p, r = chain_of(m, ch)
        v = np.linalg.solve(np.eye(m.n_states) - alpha * p, r)
        best = v if best is None else np.maximum(best, v)
    return best


def oracle_gain(p: np.ndarray, r: np.ndarray, n_terms: int = 1 << 30) -> np.ndarray:
    """Cesaro limit (1/N) sum_{t<N} P^t r with N a power of two, by doubling."""
    n = len(p)
    # S_N = sum_{t<N} P^t; S_2N = S_N + P^N S_N
    s = np.eye(n)
    pw = p.copy()
    count = 1
    while count < n_terms:
        s = s + pw @ s
        pw = pw @ pw
        count *= 2
    return (s @ r) / count


def oracle_optimal_gain(m: Mdp) -> np.ndarray:
    best = None
    for ch in deterministic_choices(m.n_actions):
        g = oracle_gain(*chain_of(m, ch))
        best = g if best is None else np.maximum(best, g)
    return best


def oracle_q_learning(states, actions, rewards, gammas, q1, alpha):
    """Plain dict-based Q-learning, returning Q^(1), ..., Q^(n+1)."""
    q = {(i, a): q1[i][a] for i in range(len(q1)) for a in range(len(q1[i]))}
    out = [dict(q)]
    for t in range(len(actions)):
        i, a, j = states[t], actions[t], states[t + 1]
        best = max(q[j, b] for b in range(len(q1[j])))
        q[i, a] = (1 - gammas[t]) * q[i, a] + gammas[t] * (rewards[t] + alpha * best)
        out.append(dict(q))
    return out

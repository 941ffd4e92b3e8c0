"""Discounted and limit-average evaluation and optimization.

Every routine is generic over the scalar: object arrays of ``Fraction`` give
exact answers, float arrays go through LAPACK.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _linalg as la
from .mdp import (MarkovChain, Mdp, StationaryPolicy, closed_classes, induce_chain,
                  is_communicating, is_unichain_from, reachable_from, support_graph,
                  union_graph)

DIRECT_SOLVE_LIMIT = 512


@dataclass(frozen=True, eq=False)
class QTable:
    """State-action values on a padded (n_states, max_actions) array.

    Entries outside A(i) are NaN (float) or None (exact) and never read.
    """

    values: np.ndarray
    n_actions: tuple[int, ...]

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        v = v.astype(object) if la.is_exact(v) else v.astype(float)
        for i, k in enumerate(self.n_actions):
            v[i, k:] = None if v.dtype == object else np.nan
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "n_actions", tuple(self.n_actions))

    def row(self, i: int) -> np.ndarray:
        return self.values[i, : self.n_actions[i]]

    def state_values(self) -> np.ndarray:
        return np.array([max(self.row(i)) for i in range(len(self.n_actions))],
                        dtype=self.values.dtype)

    def sup_distance(self, other: "QTable") -> float:
        return max(abs(float(x) - float(y)) for i in range(len(self.n_actions))
                   for x, y in zip(self.row(i), other.row(i)))

    def items(self):
        for i, k in enumerate(self.n_actions):
            for a in range(k):
                yield i, a, self.values[i, a]


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    alpha: float
    values: np.ndarray
    q_values: QTable
    greedy: StationaryPolicy
    residual: float


@dataclass(frozen=True, eq=False)
class AverageSolution:
    gain: np.ndarray
    policy: StationaryPolicy
    stationary_distribution: dict[tuple[int, ...], np.ndarray]


def _check_alpha(alpha) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"discount must lie in (0, 1), got {alpha}")


def chain_discounted_values(c: MarkovChain, alpha) -> np.ndarray:
    """Solve v = r + alpha * delta v on a chain."""
    _check_alpha(alpha)
    n = c.n_states
    exact = c.exact or isinstance(alpha, Fraction)
    p = la.to_fraction_array(c.transition) if exact else c.transition
    r = la.to_fraction_array(c.reward) if exact else c.reward
    if exact or n <= DIRECT_SOLVE_LIMIT:
        return la.solve(la.identity(n, exact) - alpha * p, r)
    # contraction: iterate until the sup-norm update is below 1e-10
    v = np.zeros(n)
    while True:
        nxt = r + alpha * (p @ v)
        if np.max(np.abs(nxt - v)) <= 1e-10:
            return nxt
        v = nxt


def discounted_values(m: Mdp, pi: StationaryPolicy, alpha) -> np.ndarray:
    return chain_discounted_values(induce_chain(m, pi), alpha)


def evaluate_discounted(m: Mdp, pi: StationaryPolicy, alpha, i: int):
    """Expected total discounted reward from ``i`` when following ``pi``."""
    return discounted_values(m, pi, alpha)[i]


def batch_discounted_values(transitions: np.ndarray, rewards: np.ndarray,
                            alpha: float) -> np.ndarray:
    """Float values for a stack of chains: shapes (k, n, n) and (k, n) -> (k, n)."""
    _check_alpha(alpha)
    n = transitions.shape[-1]
    return np.linalg.solve(np.eye(n)[None] - alpha * transitions, rewards[..., None])[..., 0]


def _q_from_values(m: Mdp, v: np.ndarray, alpha) -> np.ndarray:
    p, r = m.filled(Fraction(0) if m.exact else 0.0)
    return r + alpha * (p * v[None, None, :]).sum(axis=2)


def _masked_max(q: np.ndarray, n_actions: Sequence[int]) -> np.ndarray:
    return np.array([max(q[i, :k]) for i, k in enumerate(n_actions)], dtype=q.dtype)


def _argmax_lowest(row: Sequence, tol) -> int:
    best = max(row)
    return next(a for a, x in enumerate(row) if x >= best - tol)


def _greedy_float(q: np.ndarray, n_actions: Sequence[int], keep: Sequence[int] | None = None
                  ) -> list[int]:
    """Lowest near-maximal action per state; ``keep`` retains a near-maximal current action."""
    out = []
    for i, k in enumerate(n_actions):
        row = q[i, :k]
        tie = 1e-10 * (1 + abs(max(row)))
        if keep is not None and row[keep[i]] >= max(row) - tie:
            out.append(keep[i])
        else:
            out.append(_argmax_lowest(row, tie))
    return out


def optimal_discounted(m: Mdp, alpha, tol: float = 1e-8) -> DiscountedSolution:
    """Optimal discounted values, Q-values and a greedy policy.

    Float models run value iteration until the sup-norm step is at most
    ``tol * (1 - alpha) / (2 * alpha)`` (value error at most ``tol``), then
    polish with policy iteration from the resulting greedy policy. Exact
    models use policy iteration and return exact values.
    Ties in the greedy policy go to the lowest action index.
    """
    _check_alpha(alpha)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m.exact:
        return _policy_iteration_discounted(m, alpha)
    p, r = m.filled(0.0)
    mask = m.action_mask
    threshold = tol * (1 - alpha) / (2 * alpha)
    v = np.zeros(m.n_states)
    while True:
        q = r + alpha * (p @ v)
        nxt = np.where(mask, q, -np.inf).max(axis=1)
        residual = float(np.max(np.abs(nxt - v)))
        v = nxt
        if residual <= threshold:
            break
    q = _q_from_values(m, v, alpha)
    choices = _greedy_float(q, m.n_actions)
    # polish with policy iteration from the value-iteration policy so the values
    # are those of an actual policy, accurate to rounding
    for _ in range(100):
        pi = StationaryPolicy.deterministic(m.n_actions, choices)
        q = _q_from_values(m, discounted_values(m, pi, alpha), alpha)
        new = _greedy_float(q, m.n_actions, keep=choices)
        if new == choices:
            break
        choices = new
    values = _masked_max(q, m.n_actions)
    residual = float(np.max(np.abs(values - np.array([q[i, a] for i, a in enumerate(choices)]))))
    choices = _greedy_float(q, m.n_actions)
    return DiscountedSolution(alpha, values, QTable(q, m.n_actions),
                              StationaryPolicy.deterministic(m.n_actions, choices), residual)


def _policy_iteration_discounted(m: Mdp, alpha) -> DiscountedSolution:
    choices = [0] * m.n_states
    while True:
        pi = StationaryPolicy.deterministic(m.n_actions, choices, exact=True)
        v = discounted_values(m, pi, alpha)
        q = _q_from_values(m, v, alpha)
        new = [a if q[i, a] >= max(q[i, :k]) else _argmax_lowest(q[i, :k], 0)
               for i, (a, k) in enumerate(zip(choices, m.n_actions))]
        if new == choices:
            break
        choices = new
    values = _masked_max(q, m.n_actions)
    greedy = [_argmax_lowest(q[i, :k], 0) for i, k in enumerate(m.n_actions)]
    return DiscountedSolution(alpha, values, QTable(q, m.n_actions),
                              StationaryPolicy.deterministic(m.n_actions, greedy, exact=True),
                              Fraction(0))


def occupancy_matrix(c: MarkovChain, alpha) -> np.ndarray:
    """Normalized discounted occupancy: row i gives the expected discounted
    fraction of time spent in each state when starting from i."""
    _check_alpha(alpha)
    exact = c.exact or isinstance(alpha, Fraction)
    n = c.n_states
    p = la.to_fraction_array(c.transition) if exact else c.transition
    eye = la.identity(n, exact)
    return la.solve(eye - alpha * p, (1 - alpha) * eye)


def discounted_occupancy(c: MarkovChain, i: int, j: int, alpha):
    """Occupancy of ``j`` from ``i``: solves y_k = (1 - alpha) 1{k = j} + alpha sum_l delta(k, l) y_l."""
    _check_alpha(alpha)
    exact = c.exact or isinstance(alpha, Fraction)
    n = c.n_states
    p = la.to_fraction_array(c.transition) if exact else c.transition
    rhs = la.zeros(n, exact)
    rhs[j] = 1 - alpha
    return la.solve(la.identity(n, exact) - alpha * p, rhs)[i]


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix."""
    n = p.shape[0]
    exact = la.is_exact(p)
    a = (la.identity(n, exact) - p).T.copy()
    a[-1, :] = Fraction(1) if exact else 1.0
    b = la.zeros(n, exact)
    b[-1] = Fraction(1) if exact else 1.0
    return la.solve(a, b)


def _support(p: np.ndarray) -> np.ndarray:
    return np.array(p > 0, dtype=bool)


def evaluate_average(m: Mdp, pi: StationaryPolicy, i: int):
    """Long-run average reward from ``i``; ``pi`` must be unichain from ``i``."""
    if not is_unichain_from(support_graph(m, pi), i):
        raise ValueError(f"policy is not unichain from state {i}")
    c = induce_chain(m, pi)
    adj = _support(c.transition)
    reach = np.flatnonzero(reachable_from(adj, i))
    (cls,) = closed_classes(adj[np.ix_(reach, reach)])
    members = reach[list(cls)]
    mu = stationary_distribution(c.transition[np.ix_(members, members)])
    return sum(mu[k] * c.reward[s] for k, s in enumerate(members))


def _gain_bias(p: np.ndarray, r: np.ndarray):
    """Gain and bias of a (possibly multichain) chain, bias normalized per class."""
    n = p.shape[0]
    exact = la.is_exact(p)
    zero = Fraction(0) if exact else 0.0
    g = la.zeros(n, exact)
    h = la.zeros(n, exact)
    classes = closed_classes(_support(p))
    recurrent = np.zeros(n, dtype=bool)
    dists = {}
    for cls in classes:
        idx = np.array(cls)
        recurrent[idx] = True
        mu = stationary_distribution(p[np.ix_(idx, idx)])
        dists[cls] = mu
        gain = sum((mu * r[idx]).tolist(), zero)
        g[idx] = gain
        if len(idx) > 1:
            rest = idx[1:]
            sub = la.identity(len(rest), exact) - p[np.ix_(rest, rest)]
            hr = la.solve(sub, r[rest] - gain)
            h[rest] = hr
            h[idx[0]] = zero
            shift = sum((mu * h[idx]).tolist(), zero)
            h[idx] = h[idx] - shift
    trans = np.flatnonzero(~recurrent)
    if len(trans):
        rec = np.flatnonzero(recurrent)
        a = la.identity(len(trans), exact) - p[np.ix_(trans, trans)]
        g[trans] = la.solve(a, p[np.ix_(trans, rec)] @ g[rec])
        h[trans] = la.solve(a, r[trans] - g[trans] + p[np.ix_(trans, rec)] @ h[rec])
    return g, h, dists


def deterministic_chain(m: Mdp, choices: Sequence[int]):
    idx = np.arange(m.n_states)
    return m.transition[idx, list(choices)], m.reward[idx, list(choices)]


def optimal_average(m: Mdp, max_iter: int = 10_000) -> AverageSolution:
    """Optimal gain and an optimal deterministic unichain policy.

    Runs gain/bias policy iteration (the current action is kept on ties), then
    turns the optimal policy into a unichain one: one of its recurrent classes
    is kept and every other state is routed along shortest paths toward it.
    """
    if not is_communicating(m):
        raise ValueError("model is not communicating")
    exact = m.exact
    p, r = m.filled(Fraction(0) if exact else 0.0)
    choices = [_argmax_lowest(m.reward[i, :k], 0) for i, k in enumerate(m.n_actions)]
    for _ in range(max_iter):
        pc, rc = deterministic_chain(m, choices)
        g, h, _ = _gain_bias(pc, rc)
        tol = 0 if exact else 1e-10 * (1 + float(np.max(np.abs(np.asarray(g, dtype=float)))))
        gq = (p * g[None, None, :]).sum(axis=2)
        new = list(choices)
        for i, k in enumerate(m.n_actions):
            row = gq[i, :k]
            if row[choices[i]] < max(row) - tol:
                new[i] = _argmax_lowest(row, tol)
        if new == choices:
            hq = r + (p * h[None, None, :]).sum(axis=2)
            htol = 0 if exact else 1e-10 * (1 + float(np.max(np.abs(np.asarray(h, dtype=float)))))
            for i, k in enumerate(m.n_actions):
                best_gain = max(gq[i, :k])
                allowed = [a for a in range(k) if gq[i, a] >= best_gain - tol]
                best = max(hq[i, a] for a in allowed)
                if hq[i, choices[i]] < best - htol:
                    new[i] = next(a for a in allowed if hq[i, a] >= best - htol)
        if new == choices:
            break
        choices = new
    else:
        raise RuntimeError("policy iteration did not terminate")
    choices = _make_unichain(m, choices)
    pc, rc = deterministic_chain(m, choices)
    g, _, dists = _gain_bias(pc, rc)
    policy = StationaryPolicy.deterministic(m.n_actions, choices, exact=exact)
    return AverageSolution(g, policy, dists)


def _make_unichain(m: Mdp, choices: list[int]) -> list[int]:
    pc, _ = deterministic_chain(m, choices)
    target = closed_classes(_support(pc))[0]
    adj = union_graph(m)
    dist = {s: 0 for s in target}
    out = list(choices)
    queue = deque(target)
    # backward BFS over the union graph; each newly reached state moves one hop closer
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(adj[:, j]):
            if i in dist:
                continue
            dist[int(i)] = dist[j] + 1
            out[i] = next(a for a in range(m.n_actions[i]) if m.transition[i, a, j] > 0)
            queue.append(int(i))
    return out


def mertens_neyman_sweep(m: Mdp, pi: StationaryPolicy, i: int, alphas: Sequence):
    """Pairs (alpha, (1 - alpha) v_i^alpha) for an increasing list of discounts."""
    alphas = list(alphas)
    if not alphas or any(not 0 < a < 1 for a in alphas):
        raise ValueError("discounts must lie in (0, 1)")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("discounts must be strictly increasing")
    c = induce_chain(m, pi)
    return [(a, (1 - a) * chain_discounted_values(c, a)[i]) for a in alphas]

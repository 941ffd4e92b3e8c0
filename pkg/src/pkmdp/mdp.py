"""Core model types: MDPs, stationary policies, induced chains, trajectories.

States and actions are dense 0-based indices. A model is stored as padded
arrays: ``transition[i, a, j]`` and ``reward[i, a]`` are meaningful only for
``a < n_actions[i]``; padding holds NaN (float mode) or ``None`` (exact mode).
Exact mode is an object array of ``Fraction`` entries and is selected simply by
passing such arrays in.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._linalg import is_exact

FLOAT_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _as_fraction(x):
    return x if isinstance(x, Fraction) or x is None else Fraction(x)


def _pad_value(exact: bool):
    return None if exact else np.nan


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP with per-state action sets.

    Args:
        transition: array of shape (n_states, max_actions, n_states).
        reward: array of shape (n_states, max_actions).
        n_actions: size of A(i) for each state; defaults to max_actions everywhere.
        state_names: optional display names.
        action_names: optional per-state display names.
    """

    transition: np.ndarray
    reward: np.ndarray
    n_actions: tuple[int, ...] = ()
    state_names: tuple[str, ...] = ()
    action_names: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        p = np.asarray(self.transition)
        r = np.asarray(self.reward)
        exact = is_exact(p) or is_exact(r)
        if exact:
            p, r = p.astype(object), r.astype(object)
        else:
            p, r = p.astype(float), r.astype(float)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ValueError(f"inconsistent shapes {p.shape} and {r.shape}")
        n, m = r.shape
        n_actions = tuple(int(k) for k in self.n_actions) or (m,) * n
        if len(n_actions) != n or any(k < 0 or k > m for k in n_actions):
            raise ValueError("n_actions must give a size in [0, max_actions] per state")
        p, r = p.copy(), r.copy()
        for i, k in enumerate(n_actions):
            p[i, k:, :] = _pad_value(exact)
            r[i, k:] = _pad_value(exact)
            if exact:
                for a in range(k):
                    p[i, a] = [_as_fraction(x) for x in p[i, a]]
                    r[i, a] = _as_fraction(r[i, a])
        names = tuple(self.state_names) or tuple(str(i) for i in range(n))
        anames = tuple(tuple(a) for a in self.action_names) or tuple(
            tuple(str(a) for a in range(k)) for k in n_actions)
        object.__setattr__(self, "transition", _frozen(p))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "state_names", names)
        object.__setattr__(self, "action_names", anames)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Sequence]], rewards: Sequence[Sequence],
                  **names) -> "Mdp":
        """Build from ragged lists ``rows[i][a] = [p_i0(a), ...]`` and ``rewards[i][a]``."""
        n = len(rows)
        m = max((len(r) for r in rows), default=0)
        exact = any(isinstance(x, Fraction) for row in rows for act in row for x in act)
        exact = exact or any(isinstance(x, Fraction) for rr in rewards for x in rr)
        dtype = object if exact else float
        p = np.full((n, max(m, 1), n), _pad_value(exact), dtype=dtype)
        r = np.full((n, max(m, 1)), _pad_value(exact), dtype=dtype)
        for i, acts in enumerate(rows):
            for a, row in enumerate(acts):
                p[i, a, :] = [Fraction(x) if exact else x for x in row]
                r[i, a] = Fraction(rewards[i][a]) if exact else rewards[i][a]
        return cls(p, r, tuple(len(acts) for acts in rows), **names)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def max_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def exact(self) -> bool:
        return is_exact(self.transition)

    @property
    def action_mask(self) -> np.ndarray:
        return np.arange(self.max_actions)[None, :] < np.asarray(self.n_actions)[:, None]

    def pairs(self) -> Iterator[tuple[int, int]]:
        for i, k in enumerate(self.n_actions):
            for a in range(k):
                yield i, a

    def reward_sup(self):
        """Sup norm of the reward over defined pairs."""
        return max((abs(self.reward[i, a]) for i, a in self.pairs()), default=0)

    def min_positive_probability(self):
        return min(self.transition[i, a, j] for i, a in self.pairs()
                   for j in range(self.n_states) if self.transition[i, a, j] > 0)

    def to_float(self) -> "Mdp":
        if not self.exact:
            return self
        p = np.where(self.transition == None, np.nan, self.transition).astype(float)  # noqa: E711
        r = np.where(self.reward == None, np.nan, self.reward).astype(float)  # noqa: E711
        return Mdp(p, r, self.n_actions, self.state_names, self.action_names)

    def to_exact(self) -> "Mdp":
        """Exact copy. Each row is converted entry by entry and then divided by
        its exact sum, so float rows that are off by an ulp become stochastic."""
        if self.exact:
            return self
        p = np.full(self.transition.shape, None, dtype=object)
        r = np.full(self.reward.shape, None, dtype=object)
        for i, a in self.pairs():
            row = [Fraction(float(x)) for x in self.transition[i, a]]
            total = sum(row)
            p[i, a] = [x / total for x in row]
            r[i, a] = Fraction(float(self.reward[i, a]))
        return Mdp(p, r, self.n_actions, self.state_names, self.action_names)

    def filled(self, fill=0) -> tuple[np.ndarray, np.ndarray]:
        """Transition and reward arrays with padding replaced by ``fill``."""
        mask = self.action_mask
        p = self.transition.copy()
        r = self.reward.copy()
        p[~mask] = fill
        r[~mask] = fill
        return p, r


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Per-state distribution over actions, shape (n_states, max_actions)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        w = w.astype(object) if is_exact(w) else w.astype(float)
        if w.ndim != 2:
            raise ValueError("policy weights must be a 2-D array")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def deterministic(cls, n_actions: Sequence[int], choices: Sequence[int],
                      exact: bool = False) -> "StationaryPolicy":
        n, m = len(n_actions), max(n_actions)
        if exact:
            w = np.full((n, m), Fraction(0), dtype=object)
            one = Fraction(1)
        else:
            w, one = np.zeros((n, m)), 1.0
        for i, a in enumerate(choices):
            if not 0 <= a < n_actions[i]:
                raise ValueError(f"action {a} not available in state {i}")
            w[i, a] = one
        return cls(w)

    @classmethod
    def uniform(cls, n_actions: Sequence[int], exact: bool = False) -> "StationaryPolicy":
        n, m = len(n_actions), max(n_actions)
        w = np.full((n, m), Fraction(0), dtype=object) if exact else np.zeros((n, m))
        for i, k in enumerate(n_actions):
            w[i, :k] = Fraction(1, k) if exact else 1.0 / k
        return cls(w)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.weights == 0) | (self.weights == 1)))

    @property
    def choices(self) -> tuple[int, ...]:
        """Chosen action per state; only meaningful for deterministic policies."""
        if not self.is_deterministic:
            raise ValueError("policy is not deterministic")
        return tuple(int(np.argmax(self.weights[i] == 1)) for i in range(self.n_states))

    def encode(self) -> str:
        """Compact text form, used as a key in reports."""
        if self.is_deterministic:
            return "det:" + ",".join(str(a) for a in self.choices)
        rows = (";".join(f"{float(x):.6g}" for x in row) for row in self.weights)
        return "sto:" + "|".join(rows)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """A finite chain with per-state expected rewards."""

    transition: np.ndarray
    reward: np.ndarray | None = None
    state_names: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.asarray(self.transition)
        p = p.astype(object) if is_exact(p) else p.astype(float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("chain transition must be square")
        n = p.shape[0]
        r = self.reward
        if r is None:
            r = np.full(n, Fraction(0), dtype=object) if is_exact(p) else np.zeros(n)
        r = np.asarray(r)
        r = r.astype(object) if is_exact(r) else r.astype(float)
        object.__setattr__(self, "transition", _frozen(p))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "state_names",
                           tuple(self.state_names) or tuple(str(i) for i in range(n)))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def exact(self) -> bool:
        return is_exact(self.transition)


@dataclass(frozen=True)
class SupportGraph:
    n_vertices: int
    edges: frozenset[tuple[int, int]]

    def successors(self, i: int) -> list[int]:
        return sorted(j for (k, j) in self.edges if k == i)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_vertices, self.n_vertices), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
        return adj


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A recorded run. ``states`` has one more entry than ``actions``.

    ``gammas`` holds the learning rate applied at each step for Q-learning runs.
    """

    start: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int | None = None
    gammas: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if len(states) != len(actions) + 1 or (len(states) and states[0] != self.start):
            raise ValueError("states must start at `start` and have one more entry than actions")
        if len(self.rewards) != len(actions):
            raise ValueError("one reward per action")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "actions", _frozen(actions))
        rewards = np.asarray(self.rewards)
        object.__setattr__(self, "rewards", _frozen(rewards))
        if self.gammas is not None:
            object.__setattr__(self, "gammas", _frozen(np.asarray(self.gammas)))

    def __len__(self) -> int:
        return len(self.actions)

    def records(self) -> Iterator[tuple[int, int, object, int]]:
        """Yield ``(X_t, Y_t, r_t, X_{t+1})`` for t = 1, 2, ..."""
        for t in range(len(self.actions)):
            yield (int(self.states[t]), int(self.actions[t]), self.rewards[t],
                   int(self.states[t + 1]))


@dataclass(frozen=True)
class PriorKnowledge:
    """Known lower bound on nonzero transition probabilities and reward bound."""

    p_min: Fraction | float
    reward_bound: Fraction | float

    def __post_init__(self):
        if not 0 < self.p_min <= 1:
            raise ValueError("p_min must lie in (0, 1]")
        if self.reward_bound < 0:
            raise ValueError("reward bound must be nonnegative")

    def violations(self, m: Mdp) -> list[str]:
        out = []
        for i, a in m.pairs():
            for j in range(m.n_states):
                p = m.transition[i, a, j]
                if 0 < p < self.p_min:
                    out.append(f"p[{i},{a},{j}]={p} below p_min")
            if abs(m.reward[i, a]) > self.reward_bound:
                out.append(f"|r[{i},{a}]| exceeds reward bound")
        return out


@dataclass(frozen=True)
class Violation:
    kind: str
    state: int | None = None
    action: int | None = None
    detail: str = ""


def validate(m: Mdp) -> list[Violation]:
    """List every violated model invariant. An empty list means well-formed."""
    out: list[Violation] = []
    exact = m.exact
    for i, k in enumerate(m.n_actions):
        if k == 0:
            out.append(Violation("empty-action-set", i))
    for i, a in m.pairs():
        row = m.transition[i, a]
        if any(x is None or (not exact and not np.isfinite(x)) for x in row):
            out.append(Violation("undefined-transition", i, a))
            continue
        if any(x < 0 or x > 1 for x in row):
            out.append(Violation("probability-out-of-range", i, a))
        total = sum(row)
        bad = total != 1 if exact else abs(total - 1) > FLOAT_TOL
        if bad:
            out.append(Violation("row-sum", i, a, f"sum={total}"))
        rew = m.reward[i, a]
        if rew is None or (not exact and not np.isfinite(rew)):
            out.append(Violation("undefined-reward", i, a))
    return out


def _check_policy(m: Mdp, pi: StationaryPolicy) -> None:
    w = pi.weights
    if w.shape[0] != m.n_states or w.shape[1] > m.max_actions:
        raise ValueError(f"policy shape {w.shape} does not fit the model")
    for i in range(m.n_states):
        for a in range(w.shape[1]):
            if a >= m.n_actions[i] and w[i, a] != 0:
                raise ValueError(f"policy puts weight on action {a} not in A({i})")


def _policy_weights(m: Mdp, pi: StationaryPolicy) -> np.ndarray:
    _check_policy(m, pi)
    w = pi.weights
    if w.shape[1] < m.max_actions:
        pad = np.zeros((m.n_states, m.max_actions - w.shape[1]), dtype=w.dtype)
        if w.dtype == object:
            pad[:] = Fraction(0)
        w = np.concatenate([w, pad], axis=1)
    return w


def induce_chain(m: Mdp, pi: StationaryPolicy) -> MarkovChain:
    """The chain of states visited when ``pi`` is followed in ``m``."""
    w = _policy_weights(m, pi)
    p, r = m.filled(Fraction(0) if m.exact else 0.0)
    delta = (w[:, :, None] * p).sum(axis=1)
    rbar = (w * r).sum(axis=1)
    return MarkovChain(delta, rbar, m.state_names)


def support_graph(m: Mdp, pi: StationaryPolicy) -> SupportGraph:
    """Edge (i, j) iff some available action a has p_ij(a) * pi_ia > 0."""
    w = _policy_weights(m, pi)
    edges = set()
    for i, a in m.pairs():
        if w[i, a] > 0:
            for j in range(m.n_states):
                if m.transition[i, a, j] * w[i, a] > 0:
                    edges.add((i, j))
    return SupportGraph(m.n_states, frozenset(edges))


def reachable_from(adj: np.ndarray, i: int) -> np.ndarray:
    """Boolean mask of vertices reachable from ``i`` (including ``i``)."""
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[i] = True
    queue = deque([i])
    while queue:
        k = queue.popleft()
        for j in np.flatnonzero(adj[k]):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return seen


def strong_components(adj: np.ndarray) -> np.ndarray:
    """Strongly connected component label per vertex."""
    _, labels = connected_components(csr_matrix(adj.astype(np.int8)), directed=True,
                                     connection="strong")
    return labels


def closed_classes(adj: np.ndarray) -> list[tuple[int, ...]]:
    """Nontrivial SCCs from which no other nontrivial SCC can be reached.

    For the support graph of a stochastic matrix these are exactly its closed
    recurrent classes, listed in order of their smallest member.
    """
    n = adj.shape[0]
    labels = strong_components(adj)
    comps: dict[int, list[int]] = {}
    for v in range(n):
        comps.setdefault(labels[v], []).append(v)
    nontrivial = [c for c in comps.values() if len(c) > 1 or adj[c[0], c[0]]]
    out = []
    for comp in nontrivial:
        reach = reachable_from(adj, comp[0])
        members = set(comp)
        if not any(reach[other[0]] for other in nontrivial if other[0] not in members):
            out.append(tuple(sorted(comp)))
    return sorted(out)


def is_unichain_from(g: SupportGraph, i: int) -> bool:
    """True iff the part of ``g`` reachable from ``i`` has one maximal nontrivial SCC.

    Maximal means no other nontrivial SCC is reachable from it, which for a
    stochastic support graph is a closed recurrent class.
    """
    if not 0 <= i < g.n_vertices:
        raise ValueError(f"unknown state {i}")
    adj = g.adjacency()
    keep = np.flatnonzero(reachable_from(adj, i))
    return len(closed_classes(adj[np.ix_(keep, keep)])) == 1


def union_graph(m: Mdp) -> np.ndarray:
    """Edge (i, j) iff some available action moves i to j with positive probability."""
    adj = np.zeros((m.n_states, m.n_states), dtype=bool)
    for i, a in m.pairs():
        adj[i] |= m.transition[i, a] > 0
    return adj


def is_communicating(m: Mdp) -> bool:
    """True iff every state can reach every other under some deterministic policy.

    Following a simple path in the union graph needs only one action per state,
    so the model is communicating exactly when that graph is strongly connected.
    """
    labels = strong_components(union_graph(m))
    return len(set(labels.tolist())) == 1


def inverse_cdf(probs: Sequence, u: float) -> int:
    """First index whose cumulative mass exceeds ``u``, skipping zero entries.

    Falls back to the last positive entry when rounding leaves the total
    slightly below ``u``. The simulation kernels replicate this rule exactly.
    """
    acc = 0.0
    last = -1
    for k, p in enumerate(probs):
        p = float(p)
        if p <= 0.0:
            continue
        acc += p
        last = k
        if u < acc:
            return k
    if last < 0:
        raise ValueError("distribution has no positive entry")
    return last


def sample_step(m: Mdp, pi: StationaryPolicy, i: int, rng: np.random.Generator):
    """Draw an action from pi(i, .) and a successor; returns (action, reward, next)."""
    u = rng.random(2)
    a = inverse_cdf(pi.weights[i, : m.n_actions[i]], u[0])
    j = inverse_cdf(m.transition[i, a], u[1])
    return a, m.reward[i, a], j


def simulate(m: Mdp, pi: StationaryPolicy, start: int, steps: int, seed: int,
             stream: str = "simulate") -> Trajectory:
    """Run ``pi`` for ``steps`` steps from ``start`` on the named Philox stream."""
    from .rng import make_rng

    _check_policy(m, pi)
    u = make_rng(seed, stream).random((steps, 2))
    states = np.empty(steps + 1, dtype=np.int64)
    actions = np.empty(steps, dtype=np.int64)
    rewards = np.empty(steps, dtype=object if m.exact else float)
    states[0] = x = start
    for t in range(steps):
        a = inverse_cdf(pi.weights[x, : m.n_actions[x]], u[t, 0])
        rewards[t] = m.reward[x, a]
        x = inverse_cdf(m.transition[x, a], u[t, 1])
        actions[t] = a
        states[t + 1] = x
    return Trajectory(start, states, actions, rewards, seed)

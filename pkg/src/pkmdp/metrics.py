"""Distances between partially defined nonnegative functions.

Both distances only look at indices where *both* functions are defined and
strictly positive. An undefined entry is not the same as a zero, but neither
counts as positive, so both are skipped. A sup over an empty index set is 0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping

import numpy as np

from ._linalg import is_exact
from .mdp import Mdp


@dataclass(frozen=True)
class PartialValuation:
    """A map from indices to numbers where ``None`` marks an undefined index."""

    values: Mapping[Hashable, object]

    def __getitem__(self, key):
        return self.values.get(key)

    def defined(self, key) -> bool:
        return self.values.get(key) is not None

    def positive(self, key) -> bool:
        v = self.values.get(key)
        return v is not None and v > 0

    @property
    def domain(self) -> set:
        return set(self.values)


def _jointly_positive(f, g) -> Iterable[tuple[object, object]]:
    if isinstance(f, PartialValuation) or isinstance(g, PartialValuation):
        f = f if isinstance(f, PartialValuation) else PartialValuation(dict(enumerate(f)))
        g = g if isinstance(g, PartialValuation) else PartialValuation(dict(enumerate(g)))
        for key in sorted(f.domain & g.domain, key=repr):
            if f.positive(key) and g.positive(key):
                yield f[key], g[key]
        return
    fa, ga = np.asarray(f), np.asarray(g)
    if fa.shape != ga.shape:
        raise ValueError(f"shape mismatch {fa.shape} vs {ga.shape}")
    for x, y in zip(fa.ravel(), ga.ravel()):
        if x is None or y is None:
            continue
        if x > 0 and y > 0:  # NaN compares false, so undefined float entries drop out
            yield x, y


def _zero_like(pairs_exact: bool):
    return Fraction(0) if pairs_exact else 0.0


def total_variation(f, g):
    """Sup of |f(a) - g(a)| over indices where both are defined and positive.

    Accepts two ``PartialValuation`` objects or two equally shaped arrays
    (NaN or None marks undefined entries).
    """
    best = None
    for x, y in _jointly_positive(f, g):
        d = abs(x - y)
        best = d if best is None or d > best else best
    if best is None:
        return _zero_like(_exact_input(f, g))
    return best


def ratio_distance(f, g):
    """Sup of max(f/g, g/f) over jointly positive indices, minus 1."""
    best = None
    for x, y in _jointly_positive(f, g):
        d = max(x / y, y / x)
        best = d if best is None or d > best else best
    if best is None:
        return _zero_like(_exact_input(f, g))
    return best - 1


def _exact_input(f, g) -> bool:
    if isinstance(f, PartialValuation):
        return any(isinstance(v, Fraction) for v in f.values.values())
    return is_exact(f) and is_exact(g)


def total_variation_arrays(f: np.ndarray, g: np.ndarray) -> float:
    """Vectorized float version of :func:`total_variation` for NaN-padded arrays."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    mask = (f > 0) & (g > 0)
    return float(np.max(np.abs(f - g)[mask])) if mask.any() else 0.0


def ratio_distance_arrays(f: np.ndarray, g: np.ndarray) -> float:
    """Vectorized float version of :func:`ratio_distance` for NaN-padded arrays."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    mask = (f > 0) & (g > 0)
    if not mask.any():
        return 0.0
    x, y = f[mask], g[mask]
    return float(np.max(np.maximum(x / y, y / x))) - 1.0


def kernel_valuation(m: Mdp) -> PartialValuation:
    """Transition kernel as a valuation over (i, a, j); undefined for a not in A(i)."""
    values = {}
    for i in range(m.n_states):
        for a in range(m.max_actions):
            for j in range(m.n_states):
                values[i, a, j] = m.transition[i, a, j] if a < m.n_actions[i] else None
    return PartialValuation(values)


def reward_valuation(m: Mdp) -> PartialValuation:
    return PartialValuation({(i, a): (m.reward[i, a] if a < m.n_actions[i] else None)
                             for i in range(m.n_states) for a in range(m.max_actions)})


def same_structure(m1: Mdp, m2: Mdp) -> bool:
    return m1.n_states == m2.n_states and m1.n_actions == m2.n_actions


def kernel_distances(m1: Mdp, m2: Mdp) -> tuple[object, object]:
    """(d_tv, d_rat) between the two transition kernels."""
    if not same_structure(m1, m2):
        raise ValueError("models differ in state/action structure")
    if m1.exact or m2.exact:
        f, g = kernel_valuation(m1), kernel_valuation(m2)
        return total_variation(f, g), ratio_distance(f, g)
    return (total_variation_arrays(m1.transition, m2.transition),
            ratio_distance_arrays(m1.transition, m2.transition))


def reward_distance(m1: Mdp, m2: Mdp):
    if not same_structure(m1, m2):
        raise ValueError("models differ in state/action structure")
    if m1.exact or m2.exact:
        return total_variation(reward_valuation(m1), reward_valuation(m2))
    return total_variation_arrays(m1.reward, m2.reward)


def check_distance_relation(m1: Mdp, m2: Mdp, p_min) -> bool:
    """Whether d_rat(P1, P2) * p_min <= d_tv(P1, P2) holds for the two kernels.

    The inequality is guaranteed when ``p_min`` lower-bounds the nonzero
    entries of *both* kernels; the function simply evaluates it, so callers can
    also observe it failing when that precondition is broken.
    """
    tv, rat = kernel_distances(m1, m2)
    lhs = rat * p_min
    if m1.exact or m2.exact:
        return lhs <= tv
    return lhs <= tv + 1e-12


def find_ratio_triangle_violation(grid: Iterable[float] = (0.1, 0.25, 0.5, 0.75, 1.0)):
    """Search 2-point valuations for f, g, h with d(f, h) > d(f, g) + d(g, h).

    Returns the first violating triple as ``PartialValuation`` objects, or None.
    """
    grid = [Fraction(x).limit_denominator(1000) for x in grid]
    points = [PartialValuation({"a": x, "b": y}) for x, y in itertools.product(grid, repeat=2)]
    for f, g, h in itertools.product(points, repeat=3):
        if ratio_distance(f, h) > ratio_distance(f, g) + ratio_distance(g, h):
            return f, g, h
    return None

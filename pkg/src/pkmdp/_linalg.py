"""Scalar-generic dense linear algebra.

Float inputs go through LAPACK via numpy. Object arrays holding ``Fraction``
entries are solved by exact Gauss-Jordan elimination so that rational-mode
results carry no rounding at all.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def is_exact(a) -> bool:
    """True when ``a`` is an object array (the rational scalar mode)."""
    return np.asarray(a).dtype == object


def to_fraction_array(a) -> np.ndarray:
    """Copy ``a`` into an object array of ``Fraction`` (floats convert exactly)."""
    arr = np.asarray(a)
    out = np.empty(arr.shape, dtype=object)
    for idx, x in np.ndenumerate(arr):
        out[idx] = x if isinstance(x, Fraction) else Fraction(x)
    return out


def identity(n: int, exact: bool) -> np.ndarray:
    if not exact:
        return np.eye(n)
    out = np.full((n, n), Fraction(0), dtype=object)
    for k in range(n):
        out[k, k] = Fraction(1)
    return out


def zeros(shape, exact: bool) -> np.ndarray:
    if not exact:
        return np.zeros(shape)
    return np.full(shape, Fraction(0), dtype=object)


def _gauss_jordan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    m = [list(a[r]) + list(b[r]) for r in range(n)]
    width = len(m[0])
    for col in range(n):
        pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
        if pivot is None:
            raise np.linalg.LinAlgError("singular matrix")
        m[col], m[pivot] = m[pivot], m[col]
        inv = 1 / m[col][col]
        row = [x * inv for x in m[col]]
        m[col] = row
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], row)]
    out = np.empty((n, width - n), dtype=object)
    for r in range(n):
        out[r] = m[r][n:]
    return out


def solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for a square ``a`` and vector or matrix ``b``.

    Exact when either operand is an object array, LAPACK otherwise.
    Raises ``numpy.linalg.LinAlgError`` on a singular system.
    """
    if not (is_exact(a) or is_exact(b)):
        return np.linalg.solve(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    a = to_fraction_array(a)
    b = to_fraction_array(b)
    vec = b.ndim == 1
    x = _gauss_jordan(a, b.reshape(len(b), -1))
    return x[:, 0] if vec else x

"""Compiled inner loops for long simulations.

Each kernel consumes pre-drawn uniforms (two per step: action, successor) and
applies the same inverse-CDF rule as ``mdp.inverse_cdf``, so a compiled run
and the pure-Python reference produce identical trajectories from the same
uniforms.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _draw(row, k, u):
    acc = 0.0
    last = -1
    for b in range(k):
        p = row[b]
        if p > 0.0:
            acc += p
            last = b
            if u < acc:
                return b
    return last


@njit(cache=True)
def simulate_block(policy, trans, reward, n_actions, x, u, t_start, total, stride,
                   avg_out, count_sa, count_sas, states_out, actions_out, record):
    """Run ``len(u)`` steps from state ``x``.

    Visit counts are accumulated in place. Every time the global step index is
    a multiple of ``stride`` the running average is appended to ``avg_out``.
    Returns (final state, reward total, number of averages written).
    """
    n = trans.shape[2]
    k = 0
    for s in range(u.shape[0]):
        a = _draw(policy[x], n_actions[x], u[s, 0])
        j = _draw(trans[x, a], n, u[s, 1])
        total += reward[x, a]
        count_sa[x, a] += 1
        count_sas[x, a, j] += 1
        if record:
            states_out[s] = x
            actions_out[s] = a
        t = t_start + s + 1
        if t % stride == 0:
            avg_out[k] = total / t
            k += 1
        x = j
    return x, total, k


@njit(cache=True)
def q_learning_block(trans, reward, n_actions, q, visits, x, u, t_start, alpha,
                     rate_kind, omega, eps_kind, eps_c, greedy_only,
                     states_out, actions_out, rewards_out, gammas_out, record):
    """Q-learning steps with epsilon-greedy exploration.

    rate_kind: 0 per-pair harmonic 1/(k+1) at the k-th visit, 1 global
    polynomial (t+1)^-omega, 2 per-pair polynomial (k+1)^-omega, 3 zero.
    eps_kind: 0 constant eps_c, 1 min(1, eps_c / t).
    Uniform columns: 0 explore-or-not, 1 exploratory action, 2 successor.
    """
    n = trans.shape[2]
    for s in range(u.shape[0]):
        t = t_start + s + 1
        k = n_actions[x]
        # greedy action: lowest index among maximizers
        best = 0
        for b in range(1, k):
            if q[x, b] > q[x, best]:
                best = b
        a = best
        if not greedy_only:
            eps = eps_c if eps_kind == 0 else min(1.0, eps_c / t)
            if u[s, 0] < eps:
                a = min(int(u[s, 1] * k), k - 1)
        j = _draw(trans[x, a], n, u[s, 2])
        r = reward[x, a]
        visits[x, a] += 1
        if rate_kind == 0:
            g = 1.0 / (visits[x, a] + 1.0)
        elif rate_kind == 1:
            g = (t + 1.0) ** (-omega)
        elif rate_kind == 3:
            g = 0.0
        else:
            g = (visits[x, a] + 1.0) ** (-omega)
        vmax = q[j, 0]
        for b in range(1, n_actions[j]):
            if q[j, b] > vmax:
                vmax = q[j, b]
        q[x, a] = (1.0 - g) * q[x, a] + g * (r + alpha * vmax)
        if record:
            states_out[s] = x
            actions_out[s] = a
            rewards_out[s] = r
            gammas_out[s] = g
        x = j
    return x


@njit(cache=True)
def block_sum_sampler(cdf, start_states, u):
    """Vectorized categorical draws: row ``cdf[start]`` is searched for each u."""
    out = np.empty(u.shape[0], dtype=np.int64)
    for r in range(u.shape[0]):
        row = cdf[start_states[r]]
        lo = 0
        hi = row.shape[0] - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if row[mid] > u[r]:
                hi = mid
            else:
                lo = mid + 1
        out[r] = lo
    return out

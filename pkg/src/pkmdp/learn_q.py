"""Q-learning, the action-replay process built from its trajectory, and the
model projections of that process.

Time runs t = 1, 2, ...: at step t the learner is in X_t, plays Y_t, sees
r_t and X_{t+1}, and applies learning rate gamma_t to produce Q^(t+1) from
Q^(t). The replay process has one copy of the state space per level; level t
stands for the table Q^(t), so its optimal values at level n reproduce Q^(n)
exactly.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import _linalg as la
from ._kernels import q_learning_block
from .learn_average import Environment
from .mdp import Mdp, Trajectory
from .solvers import QTable, optimal_discounted

CHUNK = 1 << 18


@dataclass(frozen=True)
class LearningRateSchedule:
    """Rule for gamma_t.

    Kinds: ``harmonic`` 1/(k+1) at the k-th visit of the pair, ``polynomial``
    (t+1)^-omega in global time, ``pair-polynomial`` (k+1)^-omega at the k-th
    visit, ``constant`` and ``zero``. All rates stay below 1.
    """

    kind: str = "harmonic"
    omega: float = 0.7
    value: float = 0.0

    _CODES = {"harmonic": 0, "polynomial": 1, "pair-polynomial": 2}

    def __post_init__(self):
        if self.kind not in ("harmonic", "polynomial", "pair-polynomial", "constant", "zero"):
            raise ValueError(f"unknown learning-rate kind {self.kind!r}")
        if self.kind in ("polynomial", "pair-polynomial") and not 0.5 < self.omega <= 1:
            raise ValueError("omega must lie in (0.5, 1]")
        if self.kind == "constant" and not 0 <= self.value < 1:
            raise ValueError("constant rate must lie in [0, 1)")

    def rate(self, t: int, visits: int, exact: bool = False):
        """gamma for global step ``t`` that is the ``visits``-th visit of its pair."""
        if self.kind == "harmonic":
            return Fraction(1, visits + 1) if exact else 1.0 / (visits + 1.0)
        if self.kind == "zero":
            return Fraction(0) if exact else 0.0
        if self.kind == "constant":
            return Fraction(self.value) if exact else float(self.value)
        base = t if self.kind == "polynomial" else visits
        g = (base + 1.0) ** (-self.omega)
        return Fraction(g) if exact else g

    def rates_along(self, traj: Trajectory, exact: bool = False) -> list:
        counts: dict[tuple[int, int], int] = {}
        out = []
        for t, (x, a, _, _) in enumerate(traj.records(), start=1):
            counts[x, a] = counts.get((x, a), 0) + 1
            out.append(self.rate(t, counts[x, a], exact))
        return out

    def kernel_code(self) -> tuple[int, float]:
        if self.kind in self._CODES:
            return self._CODES[self.kind], float(self.omega)
        raise ValueError(f"{self.kind} rates run on the reference loop only")


@dataclass(frozen=True)
class ExplorationMode:
    """``greedy`` (argmax only) or ``epsilon`` with eps_t = min(1, c / t) or constant c."""

    kind: str = "epsilon"
    c: float | None = None
    decay: bool = True

    def __post_init__(self):
        if self.kind not in ("greedy", "epsilon"):
            raise ValueError("exploration mode must be 'greedy' or 'epsilon'")

    def scale(self, n_states: int, max_actions: int) -> float:
        return float(self.c) if self.c is not None else 10.0 * n_states * max_actions

    def epsilon(self, t: int, n_states: int, max_actions: int) -> float:
        if self.kind == "greedy":
            return 0.0
        c = self.scale(n_states, max_actions)
        return min(1.0, c / t) if self.decay else c


@dataclass(frozen=True, eq=False)
class QLearningState:
    q: QTable
    visits: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, q1: QTable) -> "QLearningState":
        v = np.zeros(q1.values.shape, dtype=np.int64)
        return cls(q1, v, 0)


def q_update(state: QLearningState, transition: tuple, gamma, alpha) -> QLearningState:
    """One learning step on (i, a, r, j): only entry (i, a) changes, to
    (1 - gamma) Q(i, a) + gamma (r + alpha max_b Q(j, b)).

    ``gamma = 1`` is accepted and replaces the entry by the sample target.
    """
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    i, a, r, j = transition
    q = state.q
    values = q.values.copy()
    target = r + alpha * max(q.row(j))
    values[i, a] = (1 - gamma) * values[i, a] + gamma * target
    visits = state.visits.copy()
    visits[i, a] += 1
    return QLearningState(QTable(values, q.n_actions), visits, state.t + 1)


def greedy_action(q: QTable, i: int) -> int:
    """Argmax over A(i); ties go to the lowest index."""
    row = q.row(i)
    best = max(row)
    return next(a for a, x in enumerate(row) if x == best)


def geometric_checkpoints(steps: int) -> list[int]:
    out, t = [], 1
    while t < steps:
        out.append(t)
        t *= 2
    out.append(steps)
    return out


@dataclass
class QLearningRun:
    checkpoints: list[tuple[int, QTable]]
    trajectory: Trajectory | None
    final: QLearningState


def _zero_table(n_actions: Sequence[int], exact: bool = False) -> QTable:
    n, m = len(n_actions), max(n_actions)
    v = np.full((n, m), Fraction(0), dtype=object) if exact else np.zeros((n, m))
    return QTable(v, n_actions)


def run_q_learning(env: Environment, alpha: float, schedule: LearningRateSchedule,
                   mode: ExplorationMode, steps: int, rng: np.random.Generator,
                   q1: QTable | None = None, start: int = 0, record: bool = True,
                   checkpoints: Sequence[int] | None = None, seed: int | None = None
                   ) -> QLearningRun:
    """Online Q-learning for ``steps`` steps with compiled inner loops.

    Each step draws three uniforms: whether to explore, which action to try
    when exploring, and the successor. Snapshots of the table are kept at
    ``checkpoints`` (default: powers of two and the last step).
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p, r, k = env._arrays()
    q1 = q1 or _zero_table(env.n_actions)
    q = np.where(np.isnan(q1.values), 0.0, q1.values).astype(float)
    visits = np.zeros(q.shape, dtype=np.int64)
    marks = sorted(set(checkpoints or geometric_checkpoints(steps)))
    states = np.empty(steps + 1, dtype=np.int64) if record else np.empty(0, dtype=np.int64)
    actions = np.empty(steps if record else 0, dtype=np.int64)
    rewards = np.empty(steps if record else 0)
    gammas = np.empty(steps if record else 0)
    snaps: list[tuple[int, QTable]] = []
    if schedule.kind == "zero":
        rate_kind, omega = 3, 1.0
    else:
        rate_kind, omega = schedule.kernel_code()
    eps_c = mode.scale(env.n_states, env.max_actions)
    x, t = start, 0
    for mark in marks:
        while t < mark:
            n = min(CHUNK, mark - t)
            u = rng.random((n, 3))
            sl = slice(t, t + n)
            x = q_learning_block(p, r, k, q, visits, x, u, t, alpha, rate_kind, omega,
                                 0 if not mode.decay else 1, eps_c, mode.kind == "greedy",
                                 states[sl] if record else states, actions[sl] if record else actions,
                                 rewards[sl] if record else rewards,
                                 gammas[sl] if record else gammas, record)
            t += n
        snaps.append((t, QTable(q.copy(), env.n_actions)))
    traj = None
    if record:
        states[steps] = x
        traj = Trajectory(start, states, actions, rewards, seed, gammas)
    return QLearningRun(snaps, traj, QLearningState(QTable(q, env.n_actions), visits, t))


def run_q_learning_reference(m: Mdp, alpha, schedule: LearningRateSchedule, mode: ExplorationMode,
                             steps: int, uniforms: np.ndarray, q1: QTable | None = None,
                             start: int = 0, exact: bool = False) -> tuple[QLearningState, Trajectory]:
    """Pure-Python loop over the same uniform layout as the compiled one.

    With ``exact`` the table, rewards and rates are ``Fraction`` values (the
    rates are the exact rationals of the float rates).
    """
    from .mdp import inverse_cdf

    q1 = q1 or _zero_table(m.n_actions, exact)
    state = QLearningState.initial(q1)
    x = start
    states, actions, rewards, gammas = [x], [], [], []
    n_states, max_a = m.n_states, m.max_actions
    for t in range(1, steps + 1):
        kx = m.n_actions[x]
        row = [float(v) for v in state.q.row(x)]
        a = row.index(max(row))
        eps = mode.epsilon(t, n_states, max_a)
        if mode.kind != "greedy" and uniforms[t - 1, 0] < eps:
            a = min(int(uniforms[t - 1, 1] * kx), kx - 1)
        j = inverse_cdf(m.transition[x, a], uniforms[t - 1, 2])
        rew = m.reward[x, a]
        g = schedule.rate(t, int(state.visits[x, a]) + 1, exact)
        if exact:
            rew = Fraction(rew)
        state = q_update(state, (x, a, rew, j), g, alpha)
        states.append(j)
        actions.append(a)
        rewards.append(rew)
        gammas.append(g)
        x = j
    traj = Trajectory(start, np.array(states), np.array(actions),
                      np.array(rewards, dtype=object if exact else float), None,
                      np.array(gammas, dtype=object if exact else float))
    return state, traj


def replay_q_tables(traj: Trajectory, gammas: Sequence, q1: QTable, alpha,
                    levels: int | None = None) -> list[QTable]:
    """Q^(1), ..., Q^(n) obtained by replaying the updates of ``traj``."""
    n = len(traj) + 1 if levels is None else levels
    state = QLearningState.initial(q1)
    out = [q1]
    for t, rec in enumerate(traj.records(), start=1):
        if t >= n:
            break
        state = q_update(state, rec, gammas[t - 1], alpha)
        out.append(state.q)
    return out


@dataclass(frozen=True, eq=False)
class ArpModel:
    """Replay process over levels 1..top built from a trajectory.

    ``occurrences[(i, a)]`` lists the steps t (1-based) with (X_t, Y_t) = (i, a).
    From state <i, t> under action a, with t_1 < ... < t_k the occurrences before
    t, the process moves to <X_{t_l + 1}, t_l> with probability
    gamma_{t_l} * prod_{m > l} (1 - gamma_{t_m}) and reward r_{t_l}, and to the
    sink with the remaining mass prod_m (1 - gamma_{t_m}) and reward Q^(1)(i, a).
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    gammas: tuple
    q1: QTable
    top: int
    occurrences: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    @property
    def n_actions(self) -> tuple[int, ...]:
        return self.q1.n_actions

    @property
    def n_states(self) -> int:
        return len(self.q1.n_actions)

    def prior(self, i: int, a: int, level: int) -> list[int]:
        occ = self.occurrences.get((i, a), [])
        return occ[: bisect.bisect_left(occ, level)]

    def transitions(self, i: int, a: int, level: int):
        """List of (probability, target, reward); target is (state, level) or None for the sink."""
        occ = self.prior(i, a, level)
        exact = isinstance(self.gammas[0], Fraction) if self.gammas else False
        keep = Fraction(1) if exact else 1.0
        out = []
        for t in reversed(occ):
            g = self.gammas[t - 1]
            out.append((g * keep, (int(self.states[t]), t), self.rewards[t - 1]))
            keep = keep * (1 - g)
        out.append((keep, None, self.q1.values[i, a]))
        return out[::-1]


def build_arp(traj: Trajectory, schedule: LearningRateSchedule | Sequence, q1: QTable,
              level: int, exact: bool = False) -> ArpModel:
    """Replay process up to ``level`` (at most len(traj) + 1).

    ``schedule`` is a rule evaluated along the trajectory or an explicit
    sequence of per-step rates.
    """
    if not 1 <= level <= len(traj) + 1:
        raise ValueError("level must lie in [1, trajectory length + 1]")
    if isinstance(schedule, LearningRateSchedule):
        gammas = schedule.rates_along(traj, exact)
    else:
        gammas = list(schedule)
    if len(gammas) != len(traj):
        raise ValueError("need one learning rate per trajectory step")
    if exact:
        gammas = [Fraction(g) for g in gammas]
        rewards = np.array([Fraction(r) for r in traj.rewards], dtype=object)
        q1 = QTable(la.to_fraction_array(np.where(q1.values == None, 0, q1.values))  # noqa: E711
                    if la.is_exact(q1.values) else la.to_fraction_array(np.nan_to_num(q1.values)),
                    q1.n_actions)
    else:
        rewards = np.asarray(traj.rewards)
    occ: dict[tuple[int, int], list[int]] = {}
    for t in range(1, level):
        occ.setdefault((int(traj.states[t - 1]), int(traj.actions[t - 1])), []).append(t)
    return ArpModel(traj.states, traj.actions, rewards, tuple(gammas), q1, level, occ)


def solve_arp(arp: ArpModel, alpha) -> list[QTable]:
    """Optimal Q-values of the replay process for levels 1..top, bottom-up.

    Every transition lowers the level or ends in the sink, so one pass in
    increasing level order is exact. ``result[n - 1]`` is the level-n table.
    """
    exact = bool(arp.gammas) and isinstance(arp.gammas[0], Fraction)
    if exact:
        alpha = Fraction(alpha)
    n_states, n_actions = arp.n_states, arp.n_actions
    values: list[np.ndarray] = []   # per level: V(j) = max_b Q(j, b)
    tables: list[QTable] = []
    for lvl in range(1, arp.top + 1):
        q = np.array(arp.q1.values, copy=True)
        for i in range(n_states):
            for a in range(n_actions[i]):
                total = Fraction(0) if exact else 0.0
                for w, target, rew in arp.transitions(i, a, lvl):
                    if target is None:
                        total += w * rew
                        continue
                    j, src = target
                    if src >= lvl:
                        raise ValueError("replay transition does not lower the level")
                    total += w * (rew + alpha * values[src - 1][j])
                q[i, a] = total
        table = QTable(q, n_actions)
        tables.append(table)
        values.append(np.array([max(table.row(j)) for j in range(n_states)], dtype=q.dtype))
    return tables


def _log_weights(gammas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log gamma and the running sum of log(1 - gamma) for a pair's occurrences."""
    g = np.asarray(gammas, dtype=float)
    return np.log(g), np.concatenate([[0.0], np.cumsum(np.log1p(-g))])


def arp_projection(arp: ArpModel, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Level-t transition mass per base successor and the level-t rewards.

    P_t(i, a, j) sums the replay probabilities from <i, t> into any level of
    state j; the missing mass is the sink probability. r_t(i, a) is the
    replayed reward, NaN for pairs without an earlier occurrence.
    """
    if not 1 <= t <= arp.top:
        raise ValueError("level out of range")
    n, m = arp.n_states, max(arp.n_actions)
    p = np.zeros((n, m, n))
    r = np.full((n, m), np.nan)
    for (i, a), occ in arp.occurrences.items():
        prior = occ[: bisect.bisect_left(occ, t)]
        if not prior:
            continue
        idx = np.asarray(prior)
        lg, cum = _log_weights(np.asarray([float(arp.gammas[s - 1]) for s in prior]))
        w = np.exp(lg + cum[-1] - cum[1:])
        np.add.at(p[i, a], arp.states[idx], w)
        r[i, a] = float(arp.rewards[prior[-1] - 1])
    for i, k in enumerate(arp.n_actions):
        p[i, k:] = np.nan
    return p, r


def nodrop_probability(arp: ArpModel, m: int, ell: int, start_level: int,
                       policy: Callable[[int, int], int] | str = "worst",
                       state: int | None = None) -> float:
    """Probability of reaching a level <= m within ``ell`` steps from <i, start_level>.

    ``policy`` is a function (state, level) -> action or ``"worst"`` for the
    action-wise maximum. Returns the value for ``state``, or the maximum over
    base states when ``state`` is None. The sink never counts as a hit.
    """
    if not 0 <= m < start_level <= arp.top or ell < 0:
        raise ValueError("need 0 <= m < start_level <= top and ell >= 0")
    n = arp.n_states
    prepared = {}
    for (i, a), occ in arp.occurrences.items():
        occ_arr = np.asarray(occ)
        lg, cum = _log_weights(np.asarray([float(arp.gammas[s - 1]) for s in occ]))
        prepared[i, a] = (occ_arr, arp.states[occ_arr], lg, cum)
    # hit[level, state]: probability of reaching a level <= m in the remaining steps
    hit = np.zeros((start_level + 1, n))
    hit[: m + 1] = 1.0
    for _ in range(ell):
        nxt = hit.copy()
        for lvl in range(m + 1, start_level + 1):
            for i in range(n):
                vals = []
                actions = range(arp.n_actions[i]) if policy == "worst" else [policy(i, lvl)]
                for a in actions:
                    if (i, a) not in prepared:
                        vals.append(0.0)
                        continue
                    occ_arr, succ, lg, cum = prepared[i, a]
                    k = int(np.searchsorted(occ_arr, lvl))
                    if k == 0:
                        vals.append(0.0)
                        continue
                    w = np.exp(lg[:k] + cum[k] - cum[1:k + 1])
                    vals.append(float(np.dot(w, hit[occ_arr[:k], succ[:k]])))
                nxt[lvl, i] = max(vals)
        hit = nxt
    row = hit[start_level]
    return float(row[state] if state is not None else row.max())


def cutoff_horizon(reward_bound: float, alpha: float, eta: float) -> int:
    """Least T with W alpha^T / (1 - alpha) <= eta."""
    if not 0 < alpha < 1 or eta <= 0 or reward_bound < 0:
        raise ValueError("need 0 < alpha < 1, eta > 0 and W >= 0")
    if reward_bound == 0:
        return 0
    return max(0, math.ceil(math.log(eta * (1 - alpha) / reward_bound) / math.log(alpha)))


def projected_model(p_hat: np.ndarray, r_hat: np.ndarray, n_actions: Sequence[int]) -> Mdp:
    """The projection as an MDP, with the sink mass sent to an extra zero-reward state."""
    n, m, _ = p_hat.shape
    p = np.zeros((n + 1, m, n + 1))
    r = np.zeros((n + 1, m))
    for i, k in enumerate(n_actions):
        for a in range(k):
            row = np.nan_to_num(p_hat[i, a])
            p[i, a, :n] = row
            p[i, a, n] = max(0.0, 1.0 - row.sum())
            r[i, a] = 0.0 if np.isnan(r_hat[i, a]) else r_hat[i, a]
    p[n, 0, n] = 1.0
    return Mdp(p, r, tuple(n_actions) + (1,))


@dataclass
class ConvergenceReport:
    checkpoints: list[int]
    qhat_distance: list[float]
    q_distance: list[float]
    first_coverage: int | None
    cutoff: int
    eps: float

    @property
    def final_within_eps(self) -> bool:
        return bool(self.q_distance) and self.q_distance[-1] <= self.eps

    def to_dict(self) -> dict:
        return {"checkpoints": self.checkpoints, "qhat_distance": self.qhat_distance,
                "q_distance": self.q_distance, "first_coverage": self.first_coverage,
                "cutoff": self.cutoff, "eps": self.eps,
                "final_within_eps": self.final_within_eps}


def first_coverage(traj: Trajectory, n_actions: Sequence[int]) -> int | None:
    """Least level t at which every pair has occurred before t."""
    need = {(i, a) for i, k in enumerate(n_actions) for a in range(k)}
    for t, (x, a, _, _) in enumerate(traj.records(), start=1):
        need.discard((x, a))
        if not need:
            return t + 1
    return None


def check_qhat_convergence(env: Mdp, arp: ArpModel, q_tables: Sequence[tuple[int, QTable]],
                           alpha: float, eps: float, checkpoints: Sequence[int] | None = None,
                           eta: float = 0.01) -> ConvergenceReport:
    """Distances of the projected-model optimum and of the online table to Q*.

    ``q_tables`` are (level, Q^(level)) pairs from the run that produced the
    replay process; projections are evaluated at those levels unless
    ``checkpoints`` is given.
    """
    qstar = optimal_discounted(env.to_float(), alpha, tol=1e-10).q_values
    levels = list(checkpoints) if checkpoints is not None else [t for t, _ in q_tables]
    by_level = dict(q_tables)
    n = env.n_states
    qhat_d, q_d = [], []
    for t in levels:
        p_hat, r_hat = arp_projection(arp, min(t, arp.top))
        sol = optimal_discounted(projected_model(p_hat, r_hat, env.n_actions), alpha, tol=1e-10)
        sub = QTable(sol.q_values.values[:n], env.n_actions)
        qhat_d.append(sub.sup_distance(qstar))
        q_d.append(by_level[t].sup_distance(qstar) if t in by_level else math.nan)
    traj = Trajectory(int(arp.states[0]), arp.states, arp.actions,
                      np.asarray(arp.rewards, dtype=float))
    return ConvergenceReport(levels, qhat_d, q_d, first_coverage(traj, env.n_actions),
                             cutoff_horizon(float(env.reward_sup()), alpha, eta), eps)

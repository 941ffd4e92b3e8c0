"""Model-based learning for the long-run average criterion.

The learner alternates uniform-random exploration with exploitation of the
optimal unichain policy of the current empirical model. Episode i explores
for L_i steps and exploits for O_i steps. O_i is long enough that the reward
lost while exploring is amortized to eps_i / 2 = 2^-(i+1).

The constants (sample budgets, Doeblin certificate, tail-bound constants)
depend only on the number of states and actions, the transition lower bound
p_min and the reward bound W. The unknown model itself is never used.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import heapq
import mpmath
import numpy as np

from ._kernels import simulate_block
from .mdp import Mdp, PriorKnowledge, StationaryPolicy, Trajectory, is_communicating
from .solvers import optimal_average

log = logging.getLogger(__name__)

CHUNK = 1 << 20


class Environment:
    """Opaque handle on a model: learners may step it but not read it.

    The arrays are reachable through ``_arrays`` for the compiled kernels only.
    """

    def __init__(self, m: Mdp):
        fm = m.to_float()
        self._mdp = m
        p, r = fm.filled(0.0)
        self._p = np.ascontiguousarray(p)
        self._r = np.ascontiguousarray(r)
        self._k = np.asarray(m.n_actions, dtype=np.int64)

    @property
    def n_states(self) -> int:
        return self._mdp.n_states

    @property
    def n_actions(self) -> tuple[int, ...]:
        return self._mdp.n_actions

    @property
    def max_actions(self) -> int:
        return self._mdp.max_actions

    def _arrays(self):
        return self._p, self._r, self._k


def exploration_policy(n_actions: Sequence[int]) -> StationaryPolicy:
    """Uniform distribution over A(i) in every state."""
    if any(k < 1 for k in n_actions):
        raise ValueError("every state needs at least one action")
    return StationaryPolicy.uniform(n_actions)


@dataclass
class EmpiricalModel:
    """Visit counts, successor counts and observed rewards.

    ``rewards`` is NaN on pairs that were never tried.
    """

    visits: np.ndarray
    successors: np.ndarray
    rewards: np.ndarray
    n_actions: tuple[int, ...]

    @classmethod
    def empty(cls, n_actions: Sequence[int], n_states: int | None = None) -> "EmpiricalModel":
        n = len(n_actions) if n_states is None else n_states
        m = max(n_actions)
        return cls(np.zeros((n, m), dtype=np.int64), np.zeros((n, m, n), dtype=np.int64),
                   np.full((n, m), np.nan), tuple(n_actions))

    def estimate(self) -> np.ndarray:
        """Relative frequencies N(i,a,j) / N(i,a); NaN rows for unvisited pairs."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.successors / self.visits[..., None]

    def to_mdp(self, prior: PriorKnowledge) -> Mdp:
        """Model used for planning.

        Frequencies below p_min / 2 are dropped and the row renormalized. A pair
        that was never tried becomes a self-loop paying -W, so that the
        planner never prefers it.
        """
        n, m = self.visits.shape
        p = np.zeros((n, m, n))
        r = np.zeros((n, m))
        est = self.estimate()
        thresh = float(prior.p_min) / 2
        w = float(prior.reward_bound)
        for i, k in enumerate(self.n_actions):
            for a in range(k):
                if self.visits[i, a] == 0:
                    p[i, a, i] = 1.0
                    r[i, a] = -w
                    continue
                row = np.where(est[i, a] >= thresh, est[i, a], 0.0)
                p[i, a] = row / row.sum()
                r[i, a] = self.rewards[i, a]
        return Mdp(p, r, self.n_actions)

    def snapshot(self) -> dict:
        return {"visits": self.visits.tolist(), "successors": self.successors.tolist(),
                "rewards": [[None if np.isnan(x) else float(x) for x in row]
                            for row in self.rewards]}


def estimate_model(t: Trajectory, n_actions: Sequence[int], n_states: int | None = None
                   ) -> EmpiricalModel:
    """Count visits and successors along ``t``; rewards must repeat exactly."""
    model = EmpiricalModel.empty(n_actions, n_states)
    k = len(t.actions)
    if k == 0:
        return model
    x = np.asarray(t.states[:k], dtype=np.int64)
    y = np.asarray(t.states[1:k + 1], dtype=np.int64)
    a = np.asarray(t.actions, dtype=np.int64)
    r = np.asarray(t.rewards, dtype=float)
    bad = np.flatnonzero(a >= np.asarray(n_actions)[x])
    if bad.size:
        raise ValueError(f"action {a[bad[0]]} not available in state {x[bad[0]]}")
    np.add.at(model.visits, (x, a), 1)
    np.add.at(model.successors, (x, a, y), 1)
    # first reward seen per pair, then every later one must match it
    flat = x * model.visits.shape[1] + a
    _, first = np.unique(flat, return_index=True)
    model.rewards[x[first], a[first]] = r[first]
    changed = np.flatnonzero(model.rewards[x, a] != r)
    if changed.size:
        c = changed[0]
        raise ValueError(f"reward of ({x[c]},{a[c]}) changed from {model.rewards[x[c], a[c]]} to {r[c]}")
    return model


def accuracy_target(n_states: int, p_min, eps) -> float:
    """Per-entry frequency accuracy that keeps the ratio distance within eps / (8|S|).

    If every estimated entry is within e of a true entry p >= p_min, the ratio
    error is at most e / (p_min - e); solving e / (p_min - e) = b gives
    e = p_min * b / (1 + b).
    """
    b = float(eps) / (8 * n_states)
    return float(p_min) * b / (1 + b)


def exploration_budget(sizes: tuple[int, int], prior: PriorKnowledge, eps, delta) -> int:
    """Exploration steps after which the estimate meets all three robustness
    assumptions with probability at least 1 - delta.

    Each (i, a, j) frequency needs m samples for Hoeffding accuracy e with
    failure share delta / 2 in total. Within any block of |S| steps the pair
    (i, a) is tried with probability at least q = p_min^(|S|-1) / |A|^|S|
    (walk a shortest path to i, then pick a). A Chernoff lower tail with
    failure share delta / 2 over all pairs then fixes the number of blocks.
    """
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise ValueError("eps and delta must lie in (0, 1)")
    n_s, n_a = sizes
    if n_s < 1 or n_a < 1:
        raise ValueError("sizes must be positive")
    e = accuracy_target(n_s, prior.p_min, eps)
    m = math.ceil(math.log(4 * n_s * n_s * n_a / delta) / (2 * e * e))
    q = float(prior.p_min) ** (n_s - 1) / n_a**n_s
    lg = math.log(2 * n_s * n_a / delta)
    mu = m + lg + math.sqrt(lg * lg + 2 * m * lg)
    blocks = math.ceil(mu / q)
    return blocks * n_s


def frobenius_number(values: Sequence[int]) -> int:
    """Largest integer that is not a nonnegative integer combination of ``values``.

    Shortest paths over residues modulo the smallest value: the least
    representable number in each residue class, minus that modulus, maximized.
    Returns -1 when every nonnegative integer is representable.
    """
    vals = sorted(set(int(v) for v in values))
    if not vals or vals[0] < 1:
        raise ValueError("need a nonempty set of positive integers")
    if reduce(math.gcd, vals) != 1:
        raise ValueError("gcd of the values must be 1")
    base = vals[0]
    if base == 1:
        return -1
    dist = [math.inf] * base
    dist[0] = 0
    heap = [(0, 0)]
    while heap:
        d, r = heapq.heappop(heap)
        if d > dist[r]:
            continue
        for v in vals[1:]:
            nd, nr = d + v, (r + v) % base
            if nd < dist[nr]:
                dist[nr] = nd
                heapq.heappush(heap, (nd, nr))
    return int(max(dist)) - base


@dataclass(frozen=True)
class DoeblinCertificate:
    """Every t-step transition probability of the chain is at least ``lam``."""

    t: int
    lam: Fraction | float


def _as_exact(x):
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**12)


def doeblin_certificate(cycle_lengths: Sequence[int] | None, p_min,
                        n_states: int | None = None) -> DoeblinCertificate:
    """Mixing time t and coefficient p_min^t.

    With the chain's cycle lengths, t = g + 1 for their Frobenius number g,
    clamped to at least 1. Without them (conservative mode, ``n_states``
    required) t = (|S| - 1)|S| + 1, which is at least Wielandt's bound on the
    exponent of any primitive |S|-state matrix.
    """
    if cycle_lengths is None:
        if not n_states:
            raise ValueError("conservative mode needs the number of states")
        t = (n_states - 1) * n_states + 1
    else:
        lengths = sorted(set(int(c) for c in cycle_lengths))
        if not lengths or reduce(math.gcd, lengths) != 1:
            raise ValueError("chain is periodic: cycle lengths must have gcd 1")
        t = max(frobenius_number(lengths) + 1, 1)
    p = _as_exact(p_min)
    return DoeblinCertificate(t, p**t)


def primitive_exponent(adj: np.ndarray) -> int | None:
    """Smallest t with every entry of the t-th boolean power positive, or None."""
    n = adj.shape[0]
    a = adj.astype(bool)
    power = a.copy()
    for t in range(1, (n - 1) ** 2 + 2):
        if power.all():
            return t
        power = (power.astype(np.int64) @ a.astype(np.int64)) > 0
    return None


def doeblin_from_chain(p: np.ndarray, p_min) -> DoeblinCertificate:
    """Certificate with t equal to the primitivity exponent of the support graph."""
    t = primitive_exponent(np.asarray(p > 0))
    if t is None:
        raise ValueError("chain is not primitive")
    return DoeblinCertificate(t, _as_exact(p_min) ** t)


@dataclass(frozen=True)
class TracolConstants:
    """K0, a_coef, b_coef with Pr(sum_{t<=T} r_t < E[...] - T eps) <= a_coef exp(-T b_coef eps^2) for T >= K0."""

    k0: int
    a_coef: int
    b_coef: Fraction
    t: int
    lam: Fraction


def tracol_constants(n_states: int, p_min, eps) -> TracolConstants:
    """Tail-bound constants from the conservative Doeblin certificate.

    b_coef = lam^2 / (8 t^2) for rewards scaled to [0, 1], a_coef = 2|S| and
    K0 = c * ceil((4 t / (lam eps))^2), where the integer c = max(1, ceil(ln(a_coef) / 2))
    makes a_coef * exp(-K0 b_coef eps^2) <= 1 at every size.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if n_states < 1:
        raise ValueError("need at least one state")
    cert = doeblin_certificate(None, p_min, n_states)
    t, lam = cert.t, cert.lam
    e = _as_exact(eps)
    b = lam**2 / (8 * t * t)
    a = 2 * n_states
    base = (4 * t / (lam * e)) ** 2
    scale = max(1, math.ceil(math.log(a) / 2))
    return TracolConstants(scale * math.ceil(base), a, b, t, lam)


def tail_bound(c: TracolConstants, horizon: int, eps) -> float:
    """a_coef * exp(-T b_coef eps^2) evaluated in floating point."""
    e = Fraction(eps) if not isinstance(eps, float) else Fraction(str(eps))
    rate = mpmath.mpf(c.b_coef.numerator) / c.b_coef.denominator
    return float(c.a_coef * mpmath.exp(-horizon * rate * (mpmath.mpf(e.numerator) / e.denominator) ** 2))


def k1_threshold(c: TracolConstants, eps) -> int | None:
    """Least K1 with a_coef exp(-T b_coef eps^2) <= 2^-T for all T >= K1, if any.

    Such a K1 exists only when b_coef eps^2 > ln 2. Otherwise None.
    """
    rate = float(c.b_coef) * float(eps) ** 2
    if rate <= math.log(2):
        return None
    return max(1, math.ceil(math.log(c.a_coef) / (rate - math.log(2))))


def prod_exp_gap(horizon: int, precision_bits: int = 100, extra_terms: int = 200) -> mpmath.mpf:
    """Certified lower bound on prod_{t>=T}(1 - 2^-t) minus exp(-2^(2-T)).

    The infinite product is bounded below by the partial product up to
    N = T + extra_terms times (1 - 2^-N).
    """
    with mpmath.workprec(precision_bits):
        prod = mpmath.mpf(1)
        last = horizon + extra_terms
        for t in range(horizon, last + 1):
            prod *= 1 - mpmath.mpf(2) ** (-t)
        lower = prod * (1 - mpmath.mpf(2) ** (-last))
        return lower - mpmath.exp(-mpmath.mpf(2) ** (2 - horizon))


def prod_exp_threshold(eps) -> float:
    """Least real T with exp(-2^(2-T)) >= 1 - eps, i.e. 2 - log2(-ln(1 - eps))."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return 2 - math.log2(-math.log(1 - eps))


def exploit_constant(eps, k1: int | None) -> float | None:
    """max(K1, 2 - log2(-ln(1 - eps))), or None when K1 does not exist."""
    if k1 is None:
        return None
    return max(float(k1), prod_exp_threshold(eps))


@dataclass(frozen=True)
class EpisodeSchedule:
    """Exploration lengths L_i, exploitation lengths O_i and eps_i = 2^-i."""

    explore: tuple[int, ...]
    exploit: tuple[int, ...]

    def __post_init__(self):
        if len(self.explore) != len(self.exploit) or not self.explore:
            raise ValueError("need one (L, O) pair per episode")
        if any(x < 1 for x in (*self.explore, *self.exploit)):
            raise ValueError("episode lengths must be positive")

    @property
    def episodes(self) -> int:
        return len(self.explore)

    @property
    def eps(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(1, 2**i) for i in range(1, self.episodes + 1))

    @property
    def starts(self) -> tuple[int, ...]:
        """S_1 = 0, S_{i+1} = S_i + L_i + O_i; one entry per episode plus the end."""
        out = [0]
        for l, o in zip(self.explore, self.exploit):
            out.append(out[-1] + l + o)
        return tuple(out)

    def to_dict(self) -> dict:
        return {"explore": [str(x) for x in self.explore], "exploit": [str(x) for x in self.exploit],
                "starts": [str(x) for x in self.starts]}


def amortized_exploit(start: int, explore: int, reward_bound, eps) -> int:
    """Least O with W (S + L) / (S + L + O) <= eps / 2, in exact arithmetic."""
    w = _as_exact(reward_bound)
    e = _as_exact(eps)
    need = (2 * w / e - 1) * (start + explore)
    return max(0, math.ceil(need))


def _build_schedule(explore: Sequence[int], prior: PriorKnowledge, n_states: int,
                    tracol: bool) -> EpisodeSchedule:
    exploit: list[int] = []
    start = 0
    prev = 0
    for i, l in enumerate(explore, start=1):
        eps = Fraction(1, 2**i)
        o = amortized_exploit(start, l, prior.reward_bound, eps)
        if tracol:
            o = max(o, tracol_constants(n_states, prior.p_min, eps).k0)
        o = max(o, prev + 1, 1)
        exploit.append(o)
        prev = o
        start += l + o
    return EpisodeSchedule(tuple(int(x) for x in explore), tuple(exploit))


def episode_schedule(prior: PriorKnowledge, sizes: tuple[int, int], episodes: int
                     ) -> EpisodeSchedule:
    """Schedule from the sample budgets and tail constants.

    L_i = exploration_budget(sizes, prior, eps_i, eps_i / 2) and O_i is the
    least length meeting the amortization, O_i >= K0(eps_i) and O_i > O_{i-1}.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    explore = []
    for i in range(1, episodes + 1):
        eps = 1.0 / 2**i
        l = exploration_budget(sizes, prior, eps, eps / 2)
        explore.append(max(l, explore[-1] + 1) if explore else l)
    return _build_schedule(explore, prior, sizes[0], tracol=True)


def scaled_schedule(prior: PriorKnowledge, episodes: int, base: float,
                    growth: float = 4.0) -> EpisodeSchedule:
    """Desk-scale schedule: L_i = ceil(base * growth^i), O_i from amortization only.

    The exploration lengths follow the same inverse-square growth in eps_i as
    the sample budget, but with a small constant.
    """
    if episodes < 1 or base <= 0 or growth <= 1:
        raise ValueError("need episodes >= 1, base > 0 and growth > 1")
    explore = [math.ceil(base * growth**i) for i in range(1, episodes + 1)]
    return _build_schedule(explore, prior, 1, tracol=False)


@dataclass
class ExploreExploitResult:
    trajectory: Trajectory | None
    stride: int
    running_average: np.ndarray
    episode_averages: list[tuple[int, float]]
    snapshots: list[EmpiricalModel]
    policies: list[tuple[int, ...] | None]
    fallbacks: list[int] = field(default_factory=list)
    steps: int = 0


class _Runner:
    def __init__(self, env: Environment, rng: np.random.Generator, stride: int, keep: bool,
                 total_steps: int):
        self.p, self.r, self.k = env._arrays()
        self.rng = rng
        self.stride = stride
        self.keep = keep
        self.x = 0
        self.t = 0
        self.total = 0.0
        self.avg = np.empty(total_steps // stride)
        self.n_avg = 0
        self.states: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.reward_log: list[np.ndarray] = []

    def run(self, policy: np.ndarray, steps: int, visits: np.ndarray, successors: np.ndarray):
        done = 0
        while done < steps:
            n = min(CHUNK, steps - done)
            u = self.rng.random((n, 2))
            so = np.empty(n if self.keep else 0, dtype=np.int64)
            ao = np.empty(n if self.keep else 0, dtype=np.int64)
            x, total, k = simulate_block(policy, self.p, self.r, self.k, self.x, u, self.t,
                                         self.total, self.stride, self.avg[self.n_avg:],
                                         visits, successors, so, ao, self.keep)
            if self.keep:
                self.states.append(so)
                self.actions.append(ao)
                self.reward_log.append(self.r[so, ao])
            self.x, self.total = int(x), float(total)
            self.n_avg += int(k)
            self.t += n
            done += n


def run_explore_exploit(env: Environment, prior: PriorKnowledge, schedule: EpisodeSchedule,
                        total_steps: int, rng: np.random.Generator, start: int = 0,
                        stride: int = 1, keep_trajectory: bool = False, seed: int | None = None
                        ) -> ExploreExploitResult:
    """Play the episodes of ``schedule`` for at most ``total_steps`` steps.

    Exploration statistics accumulate over episodes. After each exploration
    phase the estimate is planned on with average-reward policy iteration. If
    the estimate is not communicating, the episode keeps exploring instead.
    The running average is recorded every ``stride`` steps.
    """
    if stride < 1 or total_steps < 0:
        raise ValueError("stride must be positive and total_steps nonnegative")
    runner = _Runner(env, rng, stride, keep_trajectory, total_steps)
    runner.x = start
    rho = np.ascontiguousarray(exploration_policy(env.n_actions).weights, dtype=float)
    model = EmpiricalModel.empty(env.n_actions, env.n_states)
    scratch_v = np.zeros_like(model.visits)
    scratch_s = np.zeros_like(model.successors)
    result = ExploreExploitResult(None, stride, runner.avg, [], [], [])
    for ep, (l, o) in enumerate(zip(schedule.explore, schedule.exploit), start=1):
        if runner.t >= total_steps:
            break
        runner.run(rho, min(l, total_steps - runner.t), model.visits, model.successors)
        tried = model.visits > 0
        model.rewards = np.where(tried, runner.r, np.nan)
        result.snapshots.append(EmpiricalModel(model.visits.copy(), model.successors.copy(),
                                               model.rewards.copy(), model.n_actions))
        est = model.to_mdp(prior)
        if is_communicating(est):
            choice = optimal_average(est).policy
            policy = np.ascontiguousarray(choice.weights, dtype=float)
            result.policies.append(choice.choices)
        else:
            log.info("episode %d: estimate is not communicating, exploring instead", ep)
            result.fallbacks.append(ep)
            result.policies.append(None)
            policy = rho
        steps = min(o, total_steps - runner.t)
        if policy is rho:
            runner.run(rho, steps, model.visits, model.successors)
        else:
            runner.run(policy, steps, scratch_v, scratch_s)
        result.episode_averages.append((runner.t, runner.total / max(runner.t, 1)))
    result.running_average = runner.avg[: runner.n_avg]
    result.steps = runner.t
    if keep_trajectory:
        states = np.concatenate(runner.states + [np.array([runner.x])])
        actions = np.concatenate(runner.actions) if runner.actions else np.empty(0, np.int64)
        rewards = np.concatenate(runner.reward_log) if runner.reward_log else np.empty(0)
        result.trajectory = Trajectory(start, states, actions, rewards, seed)
    return result


def simulate_fast(env: Environment, policy: StationaryPolicy, start: int, steps: int,
                  rng: np.random.Generator) -> Trajectory:
    """Compiled counterpart of ``mdp.simulate`` drawing from the same stream layout."""
    runner = _Runner(env, rng, max(steps, 1), True, steps)
    runner.x = start
    w = np.ascontiguousarray(policy.weights, dtype=float)
    v = np.zeros((env.n_states, env.max_actions), dtype=np.int64)
    s = np.zeros((env.n_states, env.max_actions, env.n_states), dtype=np.int64)
    runner.run(w, steps, v, s)
    states = np.concatenate(runner.states + [np.array([runner.x])])
    actions = np.concatenate(runner.actions) if runner.actions else np.empty(0, np.int64)
    rewards = np.concatenate(runner.reward_log) if runner.reward_log else np.empty(0)
    return Trajectory(start, states, actions, rewards)

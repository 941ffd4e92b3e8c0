"""Perturbations within the robustness budgets and audits of the value bounds.

Two models with the same transition support, transition ratio distance at most
eps / (8 |S|) and reward distance at most eps / 2 have normalized values
(discounted or long-run average) within eps / 2 + eps / 2 * ||r1|| of each
other for every stationary policy. The audits here check that inequality
policy by policy.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .mdp import Mdp, StationaryPolicy, is_unichain_from, support_graph
from .metrics import kernel_distances, ratio_distance_arrays, reward_distance, same_structure
from .solvers import batch_discounted_values, discounted_values, evaluate_average

FLOAT_SLACK = 1e-9
POLICY_GUARD = 10**6


@dataclass(frozen=True)
class PerturbationBudget:
    eps: float
    n_states: int

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    @property
    def ratio_budget(self):
        return self.eps / (8 * self.n_states)

    @property
    def reward_budget(self):
        return self.eps / 2


@dataclass(frozen=True)
class PolicyEntry:
    policy: str
    start: int
    v1: float
    v2: float
    gap: float
    bound: float
    holds: bool


@dataclass
class RobustnessReport:
    criterion: str
    eps: float
    alpha: float | None
    corollary: bool
    a1: bool
    a2: bool
    a3: bool
    ratio_distance: float
    binomial_growth: float
    binomial_step_holds: bool
    entries: list[PolicyEntry] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(e.holds for e in self.entries)

    @property
    def worst_gap(self) -> float:
        return max((e.gap for e in self.entries), default=0.0)

    @property
    def worst_slack(self) -> float:
        """Smallest bound - gap over all entries (negative means a violation)."""
        return min((e.bound - e.gap for e in self.entries), default=math.inf)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        d["worst_gap"] = self.worst_gap
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "start", "v1", "v2", "gap", "bound", "holds"])
        for e in self.entries:
            w.writerow([e.policy, e.start, repr(e.v1), repr(e.v2), repr(e.gap),
                        repr(e.bound), e.holds])
        return buf.getvalue()


def perturb_model(m: Mdp, eps: float, rng: np.random.Generator, corollary: bool = False,
                  max_tries: int = 1000) -> Mdp:
    """Random model sharing ``m``'s structure and support, within the budgets.

    Each positive transition entry is scaled by a factor drawn uniformly from
    [1/(1+b), 1+b] with b = eps / (16 |S|), the row is renormalized, and the
    draw is rejected if the ratio budget eps / (8 |S|) is exceeded. Rewards
    get additive noise of size at most eps / 2 that keeps their sign (zero
    stays zero) and, in corollary mode, stays inside [0, 1].
    """
    budget = PerturbationBudget(eps, m.n_states)
    base = m.to_float()
    p1, r1 = base.filled(0.0)
    beta = eps / (16 * m.n_states)
    mask = m.action_mask
    for _ in range(max_tries):
        factors = rng.uniform(1 / (1 + beta), 1 + beta, size=p1.shape)
        p2 = p1 * factors
        sums = p2.sum(axis=2, keepdims=True)
        p2 = np.where(sums > 0, p2 / np.where(sums > 0, sums, 1), 0.0)
        if ratio_distance_arrays(np.where(mask[..., None], p1, np.nan), p2) <= budget.ratio_budget:
            break
    else:
        raise RuntimeError("could not draw a perturbation within the ratio budget")
    noise = rng.uniform(-eps / 2, eps / 2, size=r1.shape)
    r2 = r1 + noise
    if corollary:
        r2 = np.clip(r2, 0.0, 1.0)
    flipped = ((r1 > 0) & (r2 <= 0)) | ((r1 < 0) & (r2 >= 0))
    r2 = np.where(flipped, r1 / 2, r2)
    r2 = np.where(r1 == 0, 0.0, r2)
    out = Mdp(p2, r2, m.n_actions, m.state_names, m.action_names)
    if m.exact:
        out = out.to_exact()
    return out


def shift_rewards(m: Mdp, rho) -> Mdp:
    """Copy of ``m`` with every reward replaced by r - rho."""
    r = m.reward.copy()
    for i, a in m.pairs():
        r[i, a] = r[i, a] - rho
    return Mdp(m.transition, r, m.n_actions, m.state_names, m.action_names)


def with_rewards(m: Mdp, source: Mdp) -> Mdp:
    """``m``'s transitions with ``source``'s rewards."""
    return Mdp(m.transition, source.reward, m.n_actions, m.state_names, m.action_names)


def _supports_equal(m1: Mdp, m2: Mdp) -> bool:
    return all(bool(np.array_equal(m1.transition[i, a] > 0, m2.transition[i, a] > 0))
               for i, a in m1.pairs())


def assumptions_hold(m1: Mdp, m2: Mdp, eps, policies: Iterable[StationaryPolicy] | None = None
                     ) -> tuple[bool, bool, bool]:
    """(equal support graphs, transition ratio budget, reward budget).

    Without ``policies`` the first check is kernel-support equality, which is
    the same as support-graph equality for every policy.
    """
    if not same_structure(m1, m2):
        raise ValueError("models differ in state/action structure")
    if policies is None:
        a1 = _supports_equal(m1, m2)
    else:
        a1 = all(support_graph(m1, pi) == support_graph(m2, pi) for pi in policies)
    _, rat = kernel_distances(m1, m2)
    a2 = rat <= eps / (8 * m1.n_states)
    a3 = reward_distance(m1, m2) <= eps / 2
    return bool(a1), bool(a2), bool(a3)


def deterministic_policies(m: Mdp, exact: bool = False) -> list[StationaryPolicy]:
    total = math.prod(m.n_actions)
    if total > POLICY_GUARD:
        raise ValueError(f"{total} deterministic policies exceed the guard of {POLICY_GUARD}")
    return [StationaryPolicy.deterministic(m.n_actions, ch, exact=exact)
            for ch in itertools.product(*(range(k) for k in m.n_actions))]


def random_policies(m: Mdp, count: int, rng: np.random.Generator) -> list[StationaryPolicy]:
    """Dirichlet-uniform distributions over each A(i)."""
    out = []
    for _ in range(count):
        w = np.zeros((m.n_states, m.max_actions))
        for i, k in enumerate(m.n_actions):
            w[i, :k] = rng.dirichlet(np.ones(k))
        out.append(StationaryPolicy(w))
    return out


def _bound(m1: Mdp, eps, corollary: bool):
    if corollary:
        if any(not 0 <= m1.reward[i, a] <= 1 for i, a in m1.pairs()):
            raise ValueError("corollary bound needs rewards in [0, 1]")
        return eps
    return eps / 2 + eps / 2 * m1.reward_sup()


def _prepare(m1: Mdp, m2: Mdp, eps, require: bool):
    a1, a2, a3 = assumptions_hold(m1, m2, eps)
    if require and not (a1 and a2 and a3):
        raise ValueError(f"robustness assumptions fail: A1={a1} A2={a2} A3={a3}")
    _, delta = kernel_distances(m1, m2)
    growth = (1 + delta) ** (2 * m1.n_states) - 1
    return a1, a2, a3, delta, growth


def check_discounted_robustness(m1: Mdp, m2: Mdp, alpha, eps, i: int | None = None,
                                n_random: int = 100, rng: np.random.Generator | None = None,
                                corollary: bool = False, require: bool = True
                                ) -> RobustnessReport:
    """Audit (1 - alpha) |v1 - v2| <= bound over all deterministic policies and
    ``n_random`` Dirichlet-uniform stochastic ones.

    ``i`` selects one start state; ``None`` audits every start state.
    """
    if not 0 < alpha < 1 or not 0 < eps < 1:
        raise ValueError("alpha and eps must lie in (0, 1)")
    a1, a2, a3, delta, growth = _prepare(m1, m2, eps, require)
    bound = _bound(m1, eps, corollary)
    policies = deterministic_policies(m1)
    if n_random:
        if rng is None:
            raise ValueError("random policies need an rng")
        policies += random_policies(m1, n_random, rng)
    starts = range(m1.n_states) if i is None else [i]
    report = RobustnessReport("discounted", float(eps), float(alpha), corollary, a1, a2, a3,
                              float(delta), float(growth), bool(growth <= eps / 4))
    if m1.exact or m2.exact:
        v1s = [discounted_values(m1, pi, alpha) for pi in policies]
        v2s = [discounted_values(m2, pi, alpha) for pi in policies]
        slack = 0
    else:
        w = np.stack([pi.weights for pi in policies])
        v1s = _batch_values(m1, w, alpha)
        v2s = _batch_values(m2, w, alpha)
        slack = FLOAT_SLACK
    for pi, v1, v2 in zip(policies, v1s, v2s):
        code = pi.encode()
        for s in starts:
            gap = (1 - alpha) * abs(v1[s] - v2[s])
            report.entries.append(PolicyEntry(code, s, float(v1[s]), float(v2[s]), float(gap),
                                              float(bound), bool(gap <= bound + slack)))
    return report


def _batch_values(m: Mdp, weights: np.ndarray, alpha: float) -> np.ndarray:
    p, r = m.filled(0.0)
    chains = np.einsum("kia,iaj->kij", weights, p)
    rewards = np.einsum("kia,ia->ki", weights, r)
    return batch_discounted_values(chains, rewards, alpha)


def check_average_robustness(m1: Mdp, m2: Mdp, eps, i: int | None = None, n_random: int = 0,
                             rng: np.random.Generator | None = None, corollary: bool = False,
                             require: bool = True) -> RobustnessReport:
    """Audit |phi1 - phi2| <= bound over policies that are unichain from the start."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    a1, a2, a3, delta, growth = _prepare(m1, m2, eps, require)
    bound = _bound(m1, eps, corollary)
    policies = deterministic_policies(m1)
    if n_random:
        if rng is None:
            raise ValueError("random policies need an rng")
        policies += random_policies(m1, n_random, rng)
    starts = range(m1.n_states) if i is None else [i]
    slack = 0 if (m1.exact or m2.exact) else FLOAT_SLACK
    report = RobustnessReport("average", float(eps), None, corollary, a1, a2, a3,
                              float(delta), float(growth), bool(growth <= eps / 4))
    for pi in policies:
        g1, g2 = support_graph(m1, pi), support_graph(m2, pi)
        for s in starts:
            if not (is_unichain_from(g1, s) and is_unichain_from(g2, s)):
                continue
            phi1 = evaluate_average(m1, pi, s)
            phi2 = evaluate_average(m2, pi, s)
            gap = abs(phi1 - phi2)
            report.entries.append(PolicyEntry(pi.encode(), s, float(phi1), float(phi2),
                                              float(gap), float(bound),
                                              bool(gap <= bound + slack)))
    return report


def check_w_ratio_bound(m1: Mdp, m2: Mdp, pi: StationaryPolicy, alpha, i: int) -> bool:
    """Check the sandwich (1+d)^(-2|S|) <= w1 / w2 <= (1+d)^(2|S|).

    w1 and w2 are the discounted values of the first model's rewards shifted
    up by ||r1|| (so nonnegative), evaluated on the first and second model's
    transitions; d is the transition ratio distance. Compared in
    cross-multiplied form so that w1 = w2 = 0 passes.
    """
    if not same_structure(m1, m2) or not _supports_equal(m1, m2):
        raise ValueError("transition supports differ")
    rho = -m1.reward_sup()
    shifted = shift_rewards(m1, rho)
    w1 = discounted_values(shifted, pi, alpha)[i]
    w2 = discounted_values(with_rewards(m2, shifted), pi, alpha)[i]
    _, delta = kernel_distances(m1, m2)
    grow = (1 + delta) ** (2 * m1.n_states)
    exact = m1.exact and m2.exact
    slack = 0 if exact else 1e-12 * max(abs(w1), abs(w2))
    return bool(w2 <= grow * w1 + slack and w1 <= grow * w2 + slack)

"""Random model generation and plain-text persistence (JSON models, JSON-lines
trajectories, CSV Q-tables).

Exact models store every number as a string (a decimal such as ``"0.25"``
when one exists, else ``"1/3"``) so they load back bit-for-bit; float models
store JSON numbers.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .mdp import Mdp, PriorKnowledge, Trajectory
from .solvers import QTable


@dataclass(frozen=True)
class GeneratorSpec:
    n_states: int
    n_actions: int
    p_min: float = 0.1
    reward_low: float = 0.0
    reward_high: float = 1.0
    max_out_degree: int | None = None
    exact: bool = False

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("need at least one state and one action")
        if not 0 < self.p_min <= 1:
            raise ValueError("p_min must lie in (0, 1]")
        if self.reward_low > self.reward_high:
            raise ValueError("empty reward range")
        d = self.out_degree
        if d < 1 or self.p_min * d > 1 + 1e-12:
            raise ValueError(f"p_min * out-degree = {self.p_min * d} exceeds 1")

    @property
    def out_degree(self) -> int:
        if self.max_out_degree is not None:
            return min(self.max_out_degree, self.n_states)
        return min(self.n_states, int(math.floor(1 / self.p_min + 1e-12)))

    @property
    def reward_bound(self) -> float:
        return max(abs(self.reward_low), abs(self.reward_high))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        keys = {"n_states", "n_actions", "p_min", "reward_low", "reward_high",
                "max_out_degree", "exact"}
        return cls(**{k: v for k, v in d.items() if k in keys})


def _row(successors: list[int], n: int, p_min, rng: np.random.Generator, exact: bool):
    """Entries p_min + share of the leftover mass on the given support."""
    d = len(successors)
    if exact:
        p_min = Fraction(p_min).limit_denominator(10**6)
        counts = rng.integers(1, 100, size=d)
        total = int(counts.sum())
        spare = 1 - d * p_min
        row = [Fraction(0)] * n
        for j, c in zip(successors, counts):
            row[j] = p_min + spare * Fraction(int(c), total)
        return row
    w = rng.dirichlet(np.ones(d))
    row = np.zeros(n)
    row[successors] = p_min + (1 - d * p_min) * w
    return row


def generate_model(spec: GeneratorSpec, rng: np.random.Generator) -> Mdp:
    """Random communicating MDP.

    A random cyclic order of the states is embedded first: state sigma_k gets
    one action whose support contains sigma_{k+1}. Every row then receives a
    random support of size at most the out-degree, and every positive entry is
    at least p_min.
    """
    n, m, d = spec.n_states, spec.n_actions, spec.out_degree
    order = rng.permutation(n)
    cycle_action = rng.integers(0, m, size=n)
    succ_on_cycle = {int(order[k]): int(order[(k + 1) % n]) for k in range(n)}
    dtype = object if spec.exact else float
    p = np.zeros((n, m, n), dtype=dtype)
    r = np.zeros((n, m), dtype=dtype)
    for i in range(n):
        for a in range(m):
            size = int(rng.integers(1, d + 1))
            support = [int(x) for x in rng.choice(n, size=size, replace=False)]
            if a == cycle_action[i] and succ_on_cycle[i] not in support:
                support[0] = succ_on_cycle[i]
            p[i, a] = _row(sorted(support), n, spec.p_min, rng, spec.exact)
            if spec.exact:
                lo = Fraction(spec.reward_low).limit_denominator(10**6)
                hi = Fraction(spec.reward_high).limit_denominator(10**6)
                r[i, a] = lo + (hi - lo) * Fraction(int(rng.integers(0, 1001)), 1000)
            else:
                r[i, a] = rng.uniform(spec.reward_low, spec.reward_high)
    return Mdp(p, r, (m,) * n)


def _decimal_string(x: Fraction) -> str:
    """Finite decimal expansion when one exists, otherwise ``p/q``."""
    d = x.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return str(x)
    digits = max(twos, fives)
    scaled = x * 10**digits
    sign = "-" if scaled < 0 else ""
    whole, frac = divmod(abs(int(scaled)), 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}" if digits else f"{sign}{whole}"


def _num(x, exact: bool):
    return _decimal_string(Fraction(x)) if exact else float(x)


def _parse(x, exact: bool):
    return Fraction(x) if exact else float(x)


def model_to_dict(m: Mdp, prior: PriorKnowledge | None = None) -> dict:
    """Keyed form: transitions[state][action][successor] with zero entries omitted."""
    exact = m.exact
    names = m.state_names
    if len(set(names)) != len(names):
        raise ValueError("state names must be unique")
    d: dict = {
        "states": list(names),
        "actions": {names[i]: list(m.action_names[i]) for i in range(m.n_states)},
        "transitions": {
            names[i]: {m.action_names[i][a]: {names[j]: _num(m.transition[i, a, j], exact)
                                              for j in range(m.n_states) if m.transition[i, a, j] != 0}
                       for a in range(k)}
            for i, k in enumerate(m.n_actions)},
        "rewards": {names[i]: {m.action_names[i][a]: _num(m.reward[i, a], exact) for a in range(k)}
                    for i, k in enumerate(m.n_actions)},
    }
    if prior is not None:
        d["p_min"] = _num(prior.p_min, exact)
        d["reward_bound"] = _num(prior.reward_bound, exact)
    return d


def model_from_dict(d: dict) -> Mdp:
    """Inverse of ``model_to_dict``. String numbers select exact mode."""
    try:
        states = [str(s) for s in d["states"]]
        index = {s: n for n, s in enumerate(states)}
        actions = [[str(a) for a in d["actions"][s]] for s in states]
        numbers = [x for s in states for a in d["transitions"][s].values() for x in a.values()]
        numbers += [x for s in states for x in d["rewards"][s].values()]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model document: missing {exc}") from exc
    exact = any(isinstance(x, str) for x in numbers)
    rows, rewards = [], []
    for s, acts in zip(states, actions):
        trans = d["transitions"][s]
        if set(trans) != set(acts) or set(d["rewards"][s]) != set(acts):
            raise ValueError(f"state {s!r}: transitions and rewards must cover exactly its actions")
        row_s, rew_s = [], []
        for a in acts:
            row = [Fraction(0) if exact else 0.0] * len(states)
            for t, x in trans[a].items():
                if t not in index:
                    raise ValueError(f"state {s!r}, action {a!r}: unknown successor {t!r}")
                row[index[t]] = _parse(x, exact)
            row_s.append(row)
            rew_s.append(_parse(d["rewards"][s][a], exact))
        rows.append(row_s)
        rewards.append(rew_s)
    return Mdp.from_rows(rows, rewards, state_names=tuple(states),
                         action_names=tuple(tuple(a) for a in actions))


def prior_from_dict(d: dict) -> PriorKnowledge | None:
    if "p_min" not in d or "reward_bound" not in d:
        return None
    exact = isinstance(d["p_min"], str)
    return PriorKnowledge(_parse(d["p_min"], exact), _parse(d["reward_bound"], exact))


def save_model(m: Mdp, path: str | Path, prior: PriorKnowledge | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m, prior), indent=1) + "\n")


def load_model(path: str | Path) -> Mdp:
    return model_from_dict(json.loads(Path(path).read_text()))


def trajectory_lines(traj: Trajectory) -> str:
    """JSON lines with t, X_t, Y_t, r_t, X_{t+1} and gamma_t (when recorded)."""
    out = io.StringIO()
    for t, (x, a, r, j) in enumerate(traj.records(), start=1):
        row = {"t": t, "x": x, "y": a, "r": float(r), "next": j}
        if traj.gammas is not None:
            row["gamma"] = float(traj.gammas[t - 1])
        out.write(json.dumps(row) + "\n")
    return out.getvalue()


def trajectory_from_lines(text: str) -> Trajectory:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty trajectory")
    states = [rows[0]["x"]] + [r["next"] for r in rows]
    gammas = [r["gamma"] for r in rows] if "gamma" in rows[0] else None
    return Trajectory(states[0], np.array(states), np.array([r["y"] for r in rows]),
                      np.array([r["r"] for r in rows]), None,
                      None if gammas is None else np.array(gammas))


def qtable_csv(q: QTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["state", "action", "value"])
    for i, a, v in q.items():
        w.writerow([i, a, repr(float(v))])
    return out.getvalue()

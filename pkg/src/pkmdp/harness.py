"""Experiment configuration, dispatch and persistence.

A config is a JSON object validated against ``schemas/config.schema.json``.
``run`` returns a :class:`RunRecord` whose JSON form is a pure function of
the config: wall-clock time is written to a separate ``timing.json`` so that
records compare byte for byte across reruns.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from .learn_average import (Environment, episode_schedule, run_explore_exploit,
                            scaled_schedule)
from .learn_q import (ExplorationMode, LearningRateSchedule, build_arp, run_q_learning,
                      run_q_learning_reference, solve_arp, arp_projection, geometric_checkpoints,
                      replay_q_tables)
from .mdp import Mdp, PriorKnowledge, StationaryPolicy, induce_chain, is_communicating
from .metrics import ratio_distance_arrays
from .models import GeneratorSpec, generate_model, model_from_dict, prior_from_dict, qtable_csv
from .rational import fw_discounted_value
from .rng import make_rng
from .robustness import (check_average_robustness, check_discounted_robustness,
                         deterministic_policies, perturb_model)
from .solvers import (QTable, discounted_values, evaluate_average, mertens_neyman_sweep,
                      occupancy_matrix, optimal_average, optimal_discounted)

OUTPUT_ENV = "PKMDP_OUTPUT_DIR"
KINDS = ("solve", "evaluate", "perturb-audit", "learn-avg", "learn-q", "verify-rational",
         "arp-check")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def _schema(name: str) -> dict:
    return json.loads(resources.files("pkmdp").joinpath("schemas", name).read_text())


def _field_path(err: jsonschema.ValidationError) -> str:
    return "config" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}"
                              for p in err.absolute_path)


def validate_config(config: dict) -> None:
    validator = jsonschema.Draft202012Validator(_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(config), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        # the deepest error is the most specific one
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(f"{_field_path(err)}: {err.message}")
    model = config["model"]
    if "path" in model and not Path(model["path"]).is_file():
        raise ConfigError(f"config.model.path: file {model['path']!r} does not exist")


def _jsonable(x: Any) -> Any:
    """Plain JSON values; exact numbers become strings, non-finite floats strings."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    return x


def _echo(config: dict) -> dict:
    # where the files go does not affect the results
    return {k: v for k, v in config.items() if k != "output_dir"}


@dataclass
class RunRecord:
    kind: str
    config: dict
    seed: int | None
    payload: dict
    verdicts: dict[str, bool] = field(default_factory=dict)
    version: str = __version__
    wall_clock: float | None = None

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {"tool": "pkmdp", "version": self.version, "kind": self.kind,
                "seed": self.seed, "config": _jsonable(_echo(self.config)),
                "payload": _jsonable(self.payload), "verdicts": _jsonable(self.verdicts)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        jsonschema.validate(d, _schema("record.schema.json"))
        return cls(d["kind"], d["config"], d["seed"], d["payload"], d["verdicts"], d["version"])

    def series_names(self) -> list[str]:
        return sorted(self.payload.get("series", {}))


def _number(x):
    if isinstance(x, str):
        return Fraction(x)
    return x


def _discount(x, exact: bool):
    """Discount from a config value; exact models get the exact rational."""
    if x is None:
        raise ConfigError("config.params.alpha: required for the discounted criterion")
    a = Fraction(x) if isinstance(x, str) else x
    if not 0 < a < 1:
        raise ConfigError("config.params.alpha: must lie in (0, 1)")
    if exact:
        return Fraction(a) if not isinstance(a, float) else Fraction(str(a))
    return float(a)


def resolve_model(config: dict) -> tuple[Mdp, PriorKnowledge | None]:
    """The model and, when its document declares one, its prior knowledge."""
    spec = config["model"]
    if "generate" in spec:
        gen = dict(spec["generate"])
        seed = gen.pop("seed", config.get("seed", 0))
        try:
            g = GeneratorSpec.from_dict(gen)
            return generate_model(g, make_rng(seed, "generate")), None
        except ValueError as exc:
            raise ConfigError(f"config.model.generate: {exc}") from exc
    where = "config.model.path" if "path" in spec else "config.model.inline"
    try:
        doc = json.loads(Path(spec["path"]).read_text()) if "path" in spec else spec["inline"]
        return model_from_dict(doc), prior_from_dict(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_start(m: Mdp, start: int) -> int:
    if not 0 <= start < m.n_states:
        raise ConfigError(f"config.params.start: state {start} out of range")
    return start


def _series(x, y) -> dict:
    return {"x": list(x), "y": list(y)}


def _policy_from_params(m: Mdp, spec: list) -> StationaryPolicy:
    if len(spec) != m.n_states:
        raise ConfigError("config.params.policy: need one entry per state")
    try:
        if all(isinstance(x, int) for x in spec):
            return StationaryPolicy.deterministic(m.n_actions, spec, exact=m.exact)
        w = np.full((m.n_states, m.max_actions), Fraction(0) if m.exact else 0.0,
                    dtype=object if m.exact else float)
        for i, row in enumerate(spec):
            for a, x in enumerate(row):
                w[i, a] = Fraction(_number(x)) if m.exact else float(_number(x))
        return StationaryPolicy(w)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"config.params.policy: {exc}") from exc


def _run_solve(m: Mdp, params: dict, seed) -> tuple[dict, dict]:
    start = _check_start(m, params.get("start", 0))
    if params.get("criterion", "discounted") == "average":
        if not is_communicating(m):
            raise ConfigError("config.model: the average criterion needs a communicating model")
        sol = optimal_average(m)
        return {"criterion": "average", "gain": sol.gain, "value": sol.gain[start],
                "policy": list(sol.policy.choices)}, {}
    alpha = _discount(params.get("alpha"), m.exact)
    sol = optimal_discounted(m, alpha, tol=params.get("tol", 1e-10))
    return {"criterion": "discounted", "alpha": alpha, "values": sol.values,
            "value": sol.values[start], "q_values": sol.q_values.values,
            "policy": list(sol.greedy.choices)}, {}


def _run_evaluate(m: Mdp, params: dict, seed) -> tuple[dict, dict]:
    start = _check_start(m, params.get("start", 0))
    pi = _policy_from_params(m, params["policy"])
    out: dict[str, Any] = {"policy": pi.encode()}
    if params.get("criterion", "discounted") == "average":
        try:
            out["value"] = evaluate_average(m, pi, start)
        except ValueError as exc:
            raise ConfigError(f"config.params.policy: {exc}") from exc
        out["criterion"] = "average"
    elif "alpha" in params or "sweep_alphas" not in params:
        alpha = _discount(params.get("alpha"), m.exact)
        v = discounted_values(m, pi, alpha)
        out.update(criterion="discounted", alpha=alpha, values=v, value=v[start])
    if "sweep_alphas" in params:
        try:
            fpi = StationaryPolicy(np.asarray(pi.weights, dtype=float))
            sweep = mertens_neyman_sweep(m.to_float(), fpi, start, params["sweep_alphas"])
        except ValueError as exc:
            raise ConfigError(f"config.params.sweep_alphas: {exc}") from exc
        out["series"] = {"mertens_neyman": _series([a for a, _ in sweep], [v for _, v in sweep])}
    return out, {}


def _audit_pair(args) -> tuple[dict, str]:
    m1, params, seed, k = args
    eps = params["eps"]
    corollary = params.get("corollary", False)
    rng = make_rng(seed, "perturb-audit", k)
    m2 = perturb_model(m1, eps, rng, corollary=corollary)
    start = params.get("start")
    if params.get("criterion", "discounted") == "average":
        rep = check_average_robustness(m1, m2, eps, start, params.get("n_random", 0), rng,
                                       corollary=corollary)
    else:
        alpha = params.get("alpha")
        if alpha is None:
            raise ConfigError("config.params.alpha: required for the discounted criterion")
        rep = check_discounted_robustness(m1, m2, alpha, eps, start, params.get("n_random", 100),
                                          rng, corollary=corollary)
    summary = {"pair": k, "holds": rep.holds, "entries": len(rep.entries),
               "worst_gap": rep.worst_gap, "worst_slack": rep.worst_slack,
               "ratio_distance": rep.ratio_distance, "binomial_step_holds": rep.binomial_step_holds}
    return summary, rep.to_csv()


def _run_perturb(m: Mdp, params: dict, seed: int, jobs: int = 1) -> tuple[dict, dict]:
    m1 = m.to_float()
    if params.get("start") is not None:
        _check_start(m, params["start"])
    if params.get("corollary") and any(not 0 <= m1.reward[i, a] <= 1 for i, a in m1.pairs()):
        raise ConfigError("config.params.corollary: rewards must lie in [0, 1]")
    tasks = [(m1, params, seed, k) for k in range(params.get("n_pairs", 1))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_audit_pair, tasks))
    else:
        results = [_audit_pair(t) for t in tasks]
    rows = []
    for summary, text in results:
        lines = text.splitlines()
        if not rows:
            rows.append("pair," + lines[0])
        rows.extend(f"{summary['pair']},{line}" for line in lines[1:])
    pairs = [s for s, _ in results]
    payload = {"pairs": pairs, "violations": sum(not s["holds"] for s in pairs),
               "worst_slack": min(s["worst_slack"] for s in pairs)}
    return payload, {"audit.csv": "\n".join(rows) + "\n"}


def _run_learn_avg(m: Mdp, params: dict, seed: int, known: PriorKnowledge | None = None
                   ) -> tuple[dict, dict]:
    if not is_communicating(m):
        raise ConfigError("config.model: explore-exploit needs a communicating model")
    p_min = _number(params.get("p_min", known.p_min if known else m.min_positive_probability()))
    w = _number(params.get("reward_bound", known.reward_bound if known else m.reward_sup()))
    prior = PriorKnowledge(p_min, w)
    bad = prior.violations(m)
    if bad:
        raise ConfigError(f"config.params: prior knowledge does not hold: {bad[0]}")
    episodes = params.get("episodes", 5)
    sched_cfg = params.get("schedule", {})
    if sched_cfg.get("kind", "scaled") == "literal":
        schedule = episode_schedule(prior, (m.n_states, m.max_actions), episodes)
    else:
        schedule = scaled_schedule(prior, episodes, sched_cfg.get("base", 4.0),
                                   sched_cfg.get("growth", 4.0))
    total = params.get("total_steps", schedule.starts[-1])
    if total > schedule.starts[-1]:
        raise ConfigError(f"config.params.total_steps: the schedule covers only "
                          f"{schedule.starts[-1]} steps; raise episodes or lower total_steps")
    stride = params.get("stride", max(1, total // 1000))
    start = _check_start(m, params.get("start", 0))
    res = run_explore_exploit(Environment(m), prior, schedule, total, make_rng(seed, "learn-avg"),
                              start=start, stride=stride)
    phi = optimal_average(m).gain[start]
    final = res.episode_averages[-1][1] if res.episode_averages else 0.0
    payload = {"phi_star": phi, "final_average": final, "steps": res.steps,
               "schedule": schedule.to_dict(),
               "episode_averages": [[t, a] for t, a in res.episode_averages],
               "policies": [list(p) if p is not None else None for p in res.policies],
               "fallbacks": res.fallbacks,
               "series": {"running_average": _series(
                   [stride * (k + 1) for k in range(len(res.running_average))],
                   res.running_average)}}
    verdicts = {}
    if "tolerance" in params:
        verdicts["near_optimal"] = bool(final >= float(phi) - params["tolerance"])
    return payload, verdicts


def _lr(params: dict) -> LearningRateSchedule:
    cfg = params.get("schedule", {})
    return LearningRateSchedule(cfg.get("kind", "harmonic"), cfg.get("omega", 0.7))


def _exploration(params: dict) -> ExplorationMode:
    cfg = params.get("exploration", {})
    return ExplorationMode(cfg.get("kind", "epsilon"), cfg.get("c"), cfg.get("decay", True))


def _run_learn_q(m: Mdp, params: dict, seed: int) -> tuple[dict, dict, dict]:
    alpha = params["alpha"]
    steps = params["steps"]
    marks = params.get("checkpoints", "geometric")
    marks = geometric_checkpoints(steps) if marks == "geometric" else sorted(set(marks))
    if marks[-1] > steps:
        raise ConfigError("config.params.checkpoints: checkpoint beyond the step count")
    start = _check_start(m, params.get("start", 0))
    run = run_q_learning(Environment(m), alpha, _lr(params), _exploration(params), steps,
                         make_rng(seed, "learn-q"), start=start, record=False, checkpoints=marks)
    qstar = optimal_discounted(m.to_float(), alpha, tol=1e-12).q_values
    dist = [q.sup_distance(qstar) for _, q in run.checkpoints]
    payload = {"alpha": alpha, "final_distance": dist[-1], "final_q": run.final.q.values,
               "q_star": qstar.values, "visits": run.final.visits,
               "series": {"q_distance": _series([t for t, _ in run.checkpoints], dist)}}
    verdicts = {}
    if "tolerance" in params:
        verdicts["converged"] = bool(dist[-1] <= params["tolerance"])
    return payload, verdicts, {"q_final.csv": qtable_csv(run.final.q)}


def _run_verify(m: Mdp, params: dict, seed) -> tuple[dict, dict]:
    me = m.to_exact()
    alpha = _discount(params["alpha"], True)
    policies = deterministic_policies(me, exact=True)[: params.get("max_policies", 64)]
    checked, mismatches, occupancy_ok = 0, [], True
    for pi in policies:
        v = discounted_values(me, pi, alpha)
        occ = occupancy_matrix(induce_chain(me, pi), alpha)
        occupancy_ok &= all(sum(occ[i]) == 1 for i in range(me.n_states))
        for i in range(me.n_states):
            fw = fw_discounted_value(me, pi, alpha, i)
            checked += 1
            if fw.value != (1 - alpha) * v[i]:
                mismatches.append({"policy": pi.encode(), "start": i})
    payload = {"alpha": alpha, "checked": checked, "mismatches": mismatches}
    return payload, {"discounted_identity": not mismatches, "occupancy_normalized": occupancy_ok}


def _run_arp(m: Mdp, params: dict, seed: int) -> tuple[dict, dict]:
    alpha = params["alpha"]
    steps = params.get("steps", 200)
    sched = _lr(params)
    mode = _exploration(params)
    start = _check_start(m, params.get("start", 0))
    n, k = m.n_states, m.n_actions
    rng = make_rng(seed, "arp-check")
    payload: dict[str, Any] = {"steps": steps}
    if params.get("exact", False):
        me = m.to_exact()
        a = Fraction(str(alpha))
        q1 = QTable(np.full((n, me.max_actions), Fraction(0), dtype=object), k)
        _, traj = run_q_learning_reference(me, a, sched, mode, steps, rng.random((steps, 3)),
                                           q1, start, exact=True)
        arp = build_arp(traj, list(traj.gammas), q1, steps + 1, exact=True)
        tables = solve_arp(arp, a)
        replay = replay_q_tables(traj, list(traj.gammas), q1, a)
        equal = all(x.values[i, b] == y.values[i, b] for x, y in zip(tables, replay)
                    for i, b, _ in x.items())
        payload["exact_equal"] = equal
        verdict = equal
    else:
        q1 = QTable(np.zeros((n, m.max_actions)), k)
        run = run_q_learning(Environment(m), alpha, sched, mode, steps, rng, q1=q1, start=start,
                             checkpoints=list(range(1, steps + 1)))
        arp = build_arp(run.trajectory, list(run.trajectory.gammas), q1, steps + 1)
        tables = solve_arp(arp, alpha)
        err = max(float(np.nanmax(np.abs(tables[t].values - q.values))) for t, q in run.checkpoints)
        err = max(err, float(np.nanmax(np.abs(tables[0].values - q1.values))))
        payload["max_abs_error"] = err
        verdict = err <= 1e-12
    p_true, _ = m.to_float().filled(np.nan)
    levels = [t for t in geometric_checkpoints(arp.top) if t > 1]
    drat = []
    for t in levels:
        p_hat, _ = arp_projection(arp, t)
        drat.append(ratio_distance_arrays(p_hat, p_true))
    payload["series"] = {"ratio_distance": _series(levels, drat)}
    return payload, {"replay_identity": bool(verdict)}


_DISPATCH = {"solve": _run_solve, "evaluate": _run_evaluate, "verify-rational": _run_verify,
             "arp-check": _run_arp}


def output_dir(config: dict) -> Path | None:
    d = config.get("output_dir") or os.environ.get(OUTPUT_ENV)
    return Path(d) if d else None


def run(config: dict, jobs: int = 1, write: bool = True) -> RunRecord:
    """Validate ``config``, run the experiment and (when an output directory is
    configured) write ``record.json``, CSV side files and ``timing.json``."""
    validate_config(config)
    kind = config["kind"]
    seed = config.get("seed")
    params = config.get("params", {})
    t0 = time.perf_counter()
    m, known = resolve_model(config)
    files: dict[str, str] = {}
    if kind == "perturb-audit":
        payload, files = _run_perturb(m, params, seed, jobs)
        verdicts = {"all_hold": payload["violations"] == 0}
    elif kind == "learn-q":
        payload, verdicts, files = _run_learn_q(m, params, seed)
    elif kind == "learn-avg":
        payload, verdicts = _run_learn_avg(m, params, seed, known)
    else:
        payload, verdicts = _DISPATCH[kind](m, params, seed)
    record = RunRecord(kind, config, seed, payload, verdicts)
    record.wall_clock = time.perf_counter() - t0
    out = output_dir(config) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(record.to_json())
        for name, text in files.items():
            (out / name).write_text(text)
        (out / "timing.json").write_text(json.dumps({"wall_clock_seconds": record.wall_clock}) + "\n")
    return record


def emit_plot_data(record: RunRecord, what: str, path: str | Path | None = None) -> str:
    """Two-column CSV (x, y) of the series ``what``; written to ``path`` when given."""
    series = record.payload.get("series", {})
    if what not in series:
        names = ", ".join(record.series_names()) or "none"
        raise KeyError(f"unknown series {what!r}; available: {names}")
    s = series[what]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y"])
    for x, y in zip(s["x"], s["y"]):
        w.writerow([_jsonable(x), _jsonable(y)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text

from __future__ import annotations

import json

import pytest

from pkmdp.cli import main
from pkmdp.harness import ConfigError, RunRecord, emit_plot_data, run, validate_config

ONE_STATE = {"states": ["s"], "actions": {"s": ["a"]}, "transitions": {"s": {"a": {"s": 1}}},
             "rewards": {"s": {"a": 1}}}
CYCLE = {"states": ["0", "1"], "actions": {"0": ["a"], "1": ["a"]},
         "transitions": {"0": {"a": {"1": 1}}, "1": {"a": {"0": 1}}},
         "rewards": {"0": {"a": 0}, "1": {"a": 1}}}
GEN = {"generate": {"n_states": 3, "n_actions": 2, "p_min": 0.25}}


def test_solve_one_state():
    rec = run({"kind": "solve", "model": {"inline": ONE_STATE}, "params": {"alpha": 0.5}},
              write=False)
    assert rec.payload["values"][0] == 2.0


def test_validation_names_the_field():
    with pytest.raises(ConfigError, match="alpha"):
        validate_config({"kind": "learn-q", "model": GEN, "seed": 0,
                         "params": {"alpha": 1.5, "steps": 10}})
    with pytest.raises(ConfigError, match="seed"):
        validate_config({"kind": "learn-q", "model": GEN, "params": {"alpha": 0.5, "steps": 10}})
    with pytest.raises(ConfigError):
        validate_config({"kind": "solve", "model": {"path": "/nonexistent/model.json"}})


def test_perturb_audit_verdict(tmp_path):
    cfg = {"kind": "perturb-audit", "model": {"generate": {"n_states": 4, "n_actions": 2}},
           "seed": 3, "params": {"eps": 0.2, "alpha": 0.9, "n_pairs": 3, "n_random": 5},
           "output_dir": str(tmp_path)}
    rec = run(cfg)
    assert rec.verdicts == {"all_hold": True} and rec.payload["violations"] == 0
    assert (tmp_path / "audit.csv").exists() and (tmp_path / "timing.json").exists()
    assert RunRecord.from_json((tmp_path / "record.json").read_text()).to_json() == rec.to_json()


def test_mertens_neyman_series():
    alphas = [0.9, 0.99, 0.999, 1 - 1e-6]
    rec = run({"kind": "evaluate", "model": {"inline": CYCLE},
               "params": {"policy": [0, 0], "sweep_alphas": alphas}}, write=False)
    csv = emit_plot_data(rec, "mertens_neyman").splitlines()
    assert len(csv) == 1 + len(alphas)
    assert abs(float(csv[-1].split(",")[1]) - 0.5) <= 1e-4


def test_plot_data_unknown_series():
    rec = run({"kind": "solve", "model": {"inline": ONE_STATE}, "params": {"alpha": 0.5}},
              write=False)
    with pytest.raises(KeyError, match="available"):
        emit_plot_data(rec, "nope")


def test_learn_avg_curve_length():
    rec = run({"kind": "learn-avg", "model": {"inline": CYCLE}, "seed": 1,
               "params": {"p_min": 1, "reward_bound": 1, "episodes": 2,
                          "schedule": {"kind": "scaled", "base": 2},
                          "total_steps": 500, "stride": 10}}, write=False)
    assert len(rec.payload["series"]["running_average"]["x"]) == 50
    assert rec.payload["steps"] == 500
    with pytest.raises(ConfigError, match="total_steps"):
        run({"kind": "learn-avg", "model": {"inline": CYCLE}, "seed": 1,
             "params": {"p_min": 1, "reward_bound": 1, "episodes": 1, "total_steps": 10**6}},
            write=False)


def test_learn_q_and_arp_check():
    rec = run({"kind": "learn-q", "model": GEN, "seed": 2,
               "params": {"alpha": 0.5, "steps": 5000,
                          "schedule": {"kind": "pair-polynomial", "omega": 0.7}}}, write=False)
    assert "q_distance" in rec.series_names()
    arp = run({"kind": "arp-check", "model": GEN, "seed": 2,
               "params": {"alpha": 0.5, "steps": 60, "exact": True}}, write=False)
    assert arp.verdicts == {"replay_identity": True}


def test_cli_exit_codes(tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["gen-model", "--states", "3", "--actions", "2", "--p-min", "0.25",
                 "--seed", "0", "--out", str(model)]) == 0
    assert main(["solve", "--model", str(model), "--param", "alpha=0.9"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "solve"
    assert main(["learn-q", "--model", str(model), "--param", "alpha=0.9",
                 "--param", "steps=10"]) == 2
    assert main(["solve", "--model", str(model), "--param", "alpha=2"]) == 2
    assert main(["learn-q", "--model", str(model), "--seed", "0", "--param", "alpha=0.9",
                 "--param", "steps=50", "--param", "tolerance=0"]) == 3
    rec = tmp_path / "out"
    assert main(["solve", "--model", str(model), "--param", "alpha=0.9", "--out", str(rec)]) == 0
    assert main(["plot-data", str(rec / "record.json"), "missing"]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PKMDP_OUTPUT_DIR", str(tmp_path))
    run({"kind": "solve", "model": {"inline": ONE_STATE}, "params": {"alpha": 0.5}})
    assert (tmp_path / "record.json").exists()

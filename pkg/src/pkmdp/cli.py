"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 an acceptance verdict failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .harness import KINDS, ConfigError, RunRecord, emit_plot_data, run
from .models import GeneratorSpec, generate_model, save_model
from .rng import make_rng

LEARNING_KINDS = {"learn-avg", "learn-q", "perturb-audit", "arp-check"}
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args: argparse.Namespace) -> dict:
    config: dict = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--config: {exc}") from exc
        if config.get("kind", args.command) != args.command:
            raise ConfigError(f"config.kind: {config['kind']!r} does not match subcommand {args.command!r}")
    config["kind"] = args.command
    if args.model:
        config["model"] = {"path": args.model}
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out:
        config["output_dir"] = args.out
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param {item!r}: expected KEY=VALUE")
        config.setdefault("params", {})[key] = _parse_value(value)
    if "model" not in config:
        raise ConfigError("config.model: give --model or a config file with a model")
    if args.command in LEARNING_KINDS and "seed" not in config:
        raise ConfigError(f"config.seed: --seed is mandatory for {args.command}")
    return config


def _add_run_parser(sub, kind: str) -> None:
    p = sub.add_parser(kind, help=f"run a {kind} experiment")
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--model", help="model JSON file (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (mandatory for learning kinds)")
    p.add_argument("--out", help="output directory (default: $PKMDP_OUTPUT_DIR)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="override one parameter; VALUE is parsed as JSON when possible")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across independent pairs")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pkmdp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        _add_run_parser(sub, kind)
    g = sub.add_parser("gen-model", help="write a random communicating model")
    g.add_argument("--states", type=int, required=True)
    g.add_argument("--actions", type=int, required=True)
    g.add_argument("--p-min", type=float, default=0.1)
    g.add_argument("--reward-low", type=float, default=0.0)
    g.add_argument("--reward-high", type=float, default=1.0)
    g.add_argument("--max-out-degree", type=int)
    g.add_argument("--exact", action="store_true")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="output model JSON path")
    pd = sub.add_parser("plot-data", help="export one series of a record as CSV")
    pd.add_argument("record", help="record.json written by a run")
    pd.add_argument("series", nargs="?", default="", help="series name")
    pd.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-model":
            spec = GeneratorSpec(args.states, args.actions, args.p_min, args.reward_low,
                                 args.reward_high, args.max_out_degree, args.exact)
            save_model(generate_model(spec, make_rng(args.seed, "generate")), args.out)
            return 0
        if args.command == "plot-data":
            record = RunRecord.from_json(Path(args.record).read_text())
            text = emit_plot_data(record, args.series, args.out)
            if not args.out:
                sys.stdout.write(text)
            return 0
        record = run(build_config(args), jobs=args.jobs)
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(record.to_json())
    if not record.passed:
        failed = [k for k, v in record.verdicts.items() if not v]
        print(f"acceptance check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return 0

"""Command-line interface: dataset generation, training, evaluation, sweeps.

Configuration lives in a JSON file with ``sim``, ``train``, and
``lookahead`` sections whose keys mirror the dataclass fields; flags
override file values. Exit codes: 0 success, 1 usage, 2 configuration,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .evaluation import SWEEP_AXES, evaluate_policy, sweep
from .lookahead import LookaheadConfig
from .policy import (
    BASELINE_KINDS,
    baseline_policy,
    featurize,
    load_checkpoint,
    save_checkpoint,
    scorer_policy,
)
from .prompts import PROMPT_MODES, PromptStyle, export_dataset, load_dataset, parse_prompt
from .simulator import ConfigurationError, Environment, SimConfig
from .training import TrainConfig, save_training_log, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_section(data: dict, key: str, cls):
    section = data.get(key, {})
    if not isinstance(section, dict):
        raise ConfigurationError(f"config section {key!r} must be an object")
    try:
        return cls(**{k: _tupled(v) for k, v in section.items()})
    except TypeError as exc:
        raise ConfigurationError(f"bad field in config section {key!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"invalid value in config section {key!r}: {exc}") from exc


def _tupled(value):
    return tuple(value) if isinstance(value, list) else value


def load_configs(path: str | None, seed: int | None = None):
    """(SimConfig, TrainConfig, LookaheadConfig) from an optional JSON file,
    with --seed applied to both the simulator and the trainer."""
    data = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
    unknown = set(data) - {"sim", "train", "lookahead"}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    sim = _load_section(data, "sim", SimConfig)
    train_cfg = _load_section(data, "train", TrainConfig)
    lookahead = _load_section(data, "lookahead", LookaheadConfig)
    if seed is not None:
        sim = replace(sim, seed=seed)
        train_cfg = replace(train_cfg, seed=seed)
    sim.validate()
    return sim, train_cfg, lookahead


def _guard_output(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ConfigurationError(f"refusing to overwrite {path} (pass --force)")


def _sft_samples_from_file(path: str, slot_seconds: float):
    samples = []
    for record in load_dataset(path):
        state = parse_prompt(record.prompt, slot_seconds)
        samples.append((featurize(state), record.label_action))
    return samples


def _policy_factory(token: str, base_seed: int):
    """Map a CLI policy token to (name, factory(SimConfig) -> decision fn)."""
    if token in ("oracle", "greedy_oracle"):
        return "greedy_oracle", lambda cfg: baseline_policy(
            "greedy_oracle", cost_params=cfg.cost_params()
        )
    if token in BASELINE_KINDS:
        return token, lambda cfg, _t=token: baseline_policy(_t, seed=base_seed)
    if token.startswith("checkpoint:"):
        params, _meta = load_checkpoint(token.split(":", 1)[1])
        return "checkpoint", lambda cfg: scorer_policy(params)
    if token == "remote":
        from .remote import EndpointConfig, RemotePolicy

        remote = RemotePolicy(EndpointConfig.from_env())
        return "remote", lambda cfg: remote.policy()
    raise ConfigurationError(f"unknown policy token {token!r}")


def _cmd_gen_data(args) -> int:
    sim, _train, _look = load_configs(args.config, args.seed)
    _guard_output(args.out, args.force)
    count = export_dataset(sim, args.count, PromptStyle(mode=args.style), args.out)
    print(f"wrote {count} records to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    sim, train_cfg, lookahead = load_configs(args.config, args.seed)
    _guard_output(args.out, args.force)
    if args.log:
        _guard_output(args.log, args.force)

    sft_samples = None
    if args.sft_data:
        sft_samples = _sft_samples_from_file(args.sft_data, sim.slot_seconds)
        print(f"loaded {len(sft_samples)} supervised samples from {args.sft_data}")
    else:
        print("no --sft-data given: starting from zero weights with a uniform reference")

    env_factory = lambda seed: Environment(replace(sim, seed=seed))
    params, log = train(
        env_factory,
        train_cfg,
        lookahead=lookahead if args.lookahead == "on" else None,
        sft_samples=sft_samples,
        abort_checkpoint=args.out,
    )
    save_checkpoint(
        params,
        args.out,
        metadata={
            "iterations": train_cfg.iterations,
            "lookahead": args.lookahead,
            "seed": train_cfg.seed,
            "num_servers": sim.num_servers,
        },
    )
    if args.log:
        save_training_log(log, args.log)
    report = evaluate_policy(scorer_policy(params), sim, episodes=args.eval_episodes)
    row = report.row()
    print(f"checkpoint written to {args.out}")
    print(
        f"final eval: AL={row['AL']} TDR%={row['TDR']} PR%={row['PR']} "
        f"LBI%={row['LBI']} over {report.n_samples} decisions"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    sim, _train, _look = load_configs(args.config, args.seed)
    if args.checkpoint:
        params, _meta = load_checkpoint(args.checkpoint)
        name, decide = "checkpoint", scorer_policy(params)
    elif args.baseline:
        token = args.baseline
        name, factory = _policy_factory(token, base_seed=args.seed or sim.seed)
        decide = factory(sim)
    else:
        name, factory = _policy_factory("remote", base_seed=args.seed or sim.seed)
        decide = factory(sim)
    report = evaluate_policy(decide, sim, episodes=args.episodes)
    row = report.row()
    line = f"{name},default,{row['AL']},{row['TDR']},{row['PR']},{row['LBI']}"
    print("policy,axis,AL,TDR,PR,LBI")
    print(line)
    print(f"per-action counts: {list(report.per_action_counts)}")
    if args.out:
        _guard_output(args.out, args.force)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("policy,axis,AL,TDR,PR,LBI\n" + line + "\n")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    sim, _train, _look = load_configs(args.config, args.seed)
    _guard_output(args.out, args.force)
    policies = {}
    for token in args.policies.split(","):
        name, factory = _policy_factory(token.strip(), base_seed=args.seed or sim.seed)
        policies[name] = factory
    rows = sweep(policies, args.axis, sim, args.out, episodes=args.episodes)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mecoffload", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (sim/train/lookahead sections)")
        p.add_argument("--seed", type=int, help="override the configured seeds")
        p.add_argument("--force", action="store_true", help="allow overwriting outputs")

    p = sub.add_parser("gen-data", help="export an oracle-labeled prompt dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--style", choices=PROMPT_MODES, default="standard")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="supervised init + GRPO training")
    common(p)
    p.add_argument("--lookahead", "--lacs", dest="lookahead", choices=("on", "off"), default="on")
    p.add_argument("--sft-data", help="dataset file for supervised initialization")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (one JSON record per update)")
    p.add_argument("--eval-episodes", type=int, default=5)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate one policy on seeded episodes")
    common(p)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint")
    source.add_argument("--baseline", choices=BASELINE_KINDS + ("oracle",))
    source.add_argument("--remote", action="store_true")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="evaluate policies across an experiment axis")
    common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--policies", required=True, help="comma list, e.g. oracle,random,checkpoint:run.json")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep partial artifacts on disk
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

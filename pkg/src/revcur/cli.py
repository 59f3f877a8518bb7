"""Command-line entry point.

Subcommands: `run` trains under a config and writes artifacts, `eval` scores a
saved checkpoint on the six-cell grid, `ksearch` sweeps swap periods, and
`inspect-pool` summarizes a pool-snapshot CSV. Exit codes: 0 on success, 2 for
configuration problems, 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .config import CLI_ALIASES, SCHEMA, ExperimentConfig
from .envs import make_env
from .errors import ConfigurationError, OptimizerError, ResetError, UsageError
from .harness import coverage_entropy, evaluate, k_search, run
from .ppo import load_actor_critic


def _dest(key: str) -> str:
    return key.replace(".", "_").replace("-", "_")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="config file of key = value lines")
    for alias, key in CLI_ALIASES.items():
        parser.add_argument(f"--{alias}", dest=f"alias_{_dest(alias)}", metavar="V",
                            help=f"shorthand for --{key}")
    group = parser.add_argument_group("config keys", "each overrides the config file")
    for field in SCHEMA:
        group.add_argument(f"--{field.key}", dest=_dest(field.key), metavar="V", help=field.help)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, object] = {}
    for alias, key in CLI_ALIASES.items():
        value = getattr(args, f"alias_{_dest(alias)}", None)
        if value is not None:
            overrides[key] = value
    for field in SCHEMA:
        value = getattr(args, _dest(field.key), None)
        if value is not None:
            overrides[field.key] = value
    return ExperimentConfig.from_sources(file_path=args.config, cli_overrides=overrides)


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{flag} expects comma-separated integers, got {text!r}") from exc
    if not values:
        raise ConfigurationError(f"{flag} must list at least one integer")
    return values


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    artifacts = run(config)
    result = artifacts.result
    best = "ensemble" if result.best_index is None else str(result.best_index)
    print(f"run complete: {artifacts.output_dir}")
    print(f"best model: {best}")
    if result.selection is not None:
        scores = ", ".join(f"{s:.3f}" for s in result.selection.scores)
        print(f"selection scores: {scores}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_actor_critic(args.checkpoint)
    env = make_env(args.env, t_max=args.t_max, gamma=args.gamma, goal_radius=args.goal_radius)
    rng = np.random.default_rng(args.seed)
    records = evaluate(model.policy, env, args.episodes, rng, stochastic=args.stochastic)
    print(f"{'band':<6} {'pose':<9} {'success':>8} {'return':>8}")
    for record in records:
        print(
            f"{record.band.value:<6} {record.pose_mode.value:<9} "
            f"{record.success_rate:>8.3f} {record.mean_discounted_return:>8.4f}"
        )
    return 0


def _cmd_ksearch(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    k_values = _parse_int_list(args.k_values, "--k-values")
    seeds = _parse_int_list(args.seeds, "--seeds")
    rows = k_search(config, k_values, args.trial_iterations, seeds)
    print(f"{'label':<10} {'mean':>8} {'std':>8} {'runs':>5}")
    for row in rows:
        print(f"{row.label:<10} {row.mean_success:>8.3f} {row.std_success:>8.3f} {len(row.seed_successes):>5}")
    print(f"summary written to {config.get('run.output_dir')}/ksearch_summary.csv")
    return 0


def _cmd_inspect_pool(args: argparse.Namespace) -> int:
    groups: dict[tuple[int, int], list[list[float]]] = {}
    with open(args.snapshots, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["model_id", "iteration", "added_iteration", "x", "y"]:
            raise ConfigurationError(f"unexpected snapshot header: {header}")
        for row in reader:
            model_id, iteration = int(row[0]), int(row[1])
            if args.model is not None and model_id != args.model:
                continue
            if args.iteration is not None and iteration != args.iteration:
                continue
            groups.setdefault((model_id, iteration), []).append([float(row[3]), float(row[4])])
    if not groups:
        print("no matching snapshot rows")
        return 0
    print(f"{'model':<6} {'iter':<6} {'size':>6} {'x range':>17} {'y range':>17} {'entropy':>8}")
    for (model_id, iteration), states in sorted(groups.items()):
        coords = np.asarray(states)
        entropy = coverage_entropy(coords)
        print(
            f"{model_id:<6} {iteration:<6} {len(states):>6} "
            f"[{coords[:, 0].min():.3f}, {coords[:, 0].max():.3f}] "
            f"[{coords[:, 1].min():.3f}, {coords[:, 1].max():.3f}] {entropy:>8.3f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revcur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train under a config and write artifacts")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="score a checkpoint on the six-cell grid")
    p_eval.add_argument("--checkpoint", required=True, metavar="PATH")
    p_eval.add_argument("--env", default="pointmaze")
    p_eval.add_argument("--t-max", type=int, default=10)
    p_eval.add_argument("--gamma", type=float, default=0.99)
    p_eval.add_argument("--goal-radius", type=float, default=0.03)
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--stochastic", action="store_true", help="sample actions instead of means")
    p_eval.set_defaults(func=_cmd_eval)

    p_ksearch = sub.add_parser("ksearch", help="sweep swap periods against a no-exchange baseline")
    _add_config_flags(p_ksearch)
    p_ksearch.add_argument("--k-values", default="5,10,20,50", metavar="K1,K2,...")
    p_ksearch.add_argument("--trial-iterations", type=int, default=100)
    p_ksearch.add_argument("--seeds", default="0,1,2,3", metavar="S1,S2,...")
    p_ksearch.set_defaults(func=_cmd_ksearch)

    p_inspect = sub.add_parser("inspect-pool", help="summarize a pool-snapshot CSV")
    p_inspect.add_argument("--snapshots", required=True, metavar="PATH")
    p_inspect.add_argument("--model", type=int, default=None)
    p_inspect.add_argument("--iteration", type=int, default=None)
    p_inspect.set_defaults(func=_cmd_inspect_pool)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ResetError, OptimizerError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``mhairl <gen-expert|train|eval|transfer|oracle-check> ...``.

Training subcommands take a config file plus ``--key value`` overrides for any
config key. Exit codes: 0 success, 2 configuration/input error, 3 failed check.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import checks, emtrain, experiments
from . import env as envlib
from .diffcore import ContractError
from .expert import DemoFormatError, generate_dataset, write_demos

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3
log = logging.getLogger("mhairl")


def parse_overrides(tokens: Sequence[str]) -> dict[str, str]:
    """``--key value`` pairs (or ``--key=value``) into a dict; dashes in keys become underscores."""
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise emtrain.ConfigError(f"unexpected argument {tok!r}; overrides look like --key value")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise emtrain.ConfigError(f"override --{key} needs a value")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def _config(args, extra) -> emtrain.TrainConfig:
    return emtrain.load_config(args.config, parse_overrides(extra))


def cmd_gen_expert(args, extra) -> int:
    if extra:
        raise emtrain.ConfigError(f"gen-expert takes no overrides, got {' '.join(extra)}")
    spec = envlib.make_env(args.env)
    demos = generate_dataset(spec, args.n, args.seed, annotate=args.annotate)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_demos(demos, out)
    print(f"wrote {len(demos)} demonstrations to {out}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    cfg = _config(args, extra)
    name = cfg.name or Path(args.config).stem
    run_dir = Path(args.run_dir) if args.run_dir else Path("runs") / name
    report = emtrain.run(cfg, run_dir, progress=True)
    final = report["final"]
    print(f"{run_dir}: final mean return {final['mean_return']:.3f} (expert {final['expert_return']:.3f}), "
          f"{report['wall_clock_s']:.0f}s")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    if args.run_dir:
        cfg = experiments.read_run_config(args.run_dir)
        if extra:
            cfg = emtrain.build_config({**_echo_dict(cfg), **parse_overrides(extra)})
        checkpoint = args.checkpoint or Path(args.run_dir) / "ckpt_policy.npz"
    elif args.config:
        cfg = _config(args, extra)
        checkpoint = args.checkpoint
    else:
        raise emtrain.ConfigError("eval needs --run-dir or --config")
    report = experiments.evaluate_policy(cfg, checkpoint, args.tasks)
    out = Path(args.out) if args.out else (Path(args.run_dir) / "eval_report.json" if args.run_dir else None)
    if out is not None:
        experiments.write_json(report, out)
    exp = report["expert_mean_return"]
    print(f"mean return {report['mean_return']:.3f} over {len(report['tasks'])} tasks"
          + (f" (expert {exp:.3f})" if exp is not None else "") + (f"; report at {out}" if out else ""))
    return EXIT_OK


def _echo_dict(cfg: emtrain.TrainConfig) -> dict[str, str]:
    return emtrain.parse_config_text(emtrain.echo_config(cfg))


def cmd_transfer(args, extra) -> int:
    if extra:
        raise emtrain.ConfigError(f"transfer takes no overrides, got {' '.join(extra)}")
    envs = tuple(args.envs.split(","))
    for e in envs:
        if e not in experiments.TRANSFER_ENVS:
            raise emtrain.ConfigError(f"envs: {e!r} is not a transfer environment")
    goals = tuple(int(g) for g in args.goals.split(","))
    seeds = range(args.seeds)

    def progress(res):
        print(f"{res['env']} goal {res['goal']} seed {res['seed']}: "
              f"init {res['init']['episodes_to_success']}  scratch {res['scratch']['episodes_to_success']}",
              flush=True)

    result = experiments.transfer_experiment(args.run_dir, envs, goals, seeds, args.episodes,
                                             args.checkpoint, progress)
    out = Path(args.out) if args.out else Path(args.run_dir) / "transfer.json"
    experiments.write_json(result, out)
    for env_name, s in result["summary"].items():
        print(f"{env_name}: median episodes to first success, init {s['median_init']} vs scratch "
              f"{s['median_scratch']} ({s['solved_init']}/{s['runs']} vs {s['solved_scratch']}/{s['runs']} solved)")
    return EXIT_OK


def cmd_oracle_check(args, extra) -> int:
    if extra:
        raise emtrain.ConfigError(f"oracle-check takes no overrides, got {' '.join(extra)}")
    names = args.checks.split(",") if args.checks else None
    try:
        results = checks.run_suite(names, seed=args.seed, fault=args.inject_fault, quick=args.quick)
    except ValueError as exc:
        raise emtrain.ConfigError(str(exc)) from None
    print(checks.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhairl", description="Hierarchical multi-task imitation learning with options.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-expert", help="write scripted-expert demonstrations as JSON Lines")
    p.add_argument("--env", default="grid_multigoal", choices=envlib.ENV_NAMES[:2])
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--annotate", action="store_true", help="keep context and option labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_expert)

    p = sub.add_parser("train", help="run the EM adversarial training loop")
    p.add_argument("config")
    p.add_argument("--run-dir", help="output directory (default runs/<name>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a fresh policy) on held-out tasks")
    p.add_argument("--run-dir")
    p.add_argument("--config")
    p.add_argument("--checkpoint", help="policy checkpoint; omitted with --config means untrained")
    p.add_argument("--tasks", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="HPPO with transferred options vs from scratch on sparse tasks")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--envs", default=",".join(experiments.TRANSFER_ENVS))
    p.add_argument("--goals", default="0,1,2,3")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--episodes", type=int, default=100, help="cap per run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("oracle-check", help="run the numerical verification suite")
    p.add_argument("--checks", help=f"comma list from {','.join(checks.SUITE)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.add_argument("--inject-fault", choices=checks.FAULTS, help="deliberately break one check")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, extra)
    except (emtrain.ConfigError, DemoFormatError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Evaluation of saved runs and the transfer protocol (HPPO from transferred options vs from scratch)."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from . import env as envlib
from .diffcore import load_params
from .emtrain import (EVAL_STREAM, ConfigError, TrainConfig, build_config, option_structure,
                      parse_config_text)
from .expert import expert_return
from .hppo import Baselines, hppo_rl, load_transferred
from .policy import Featurizer, HierPolicy, PolicyConfig, rollout

TRANSFER_ENVS = ("point_room", "point_maze")
TRANSFER_GOALS = (0, 1, 2, 3)


def read_run_config(run_dir: str | Path) -> TrainConfig:
    path = Path(run_dir) / "config.echo"
    if not path.exists():
        raise ConfigError(f"run directory has no config.echo: {path}")
    return build_config(parse_config_text(path.read_text(encoding="utf-8"), str(path)))


def build_policy(cfg: TrainConfig, spec: envlib.TaskSpec, seed: int | None = None) -> tuple[HierPolicy, Featurizer]:
    featurizer = Featurizer(spec, cfg.variant != "h-airl", cfg.feature_kind())
    g = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    pcfg = PolicyConfig(cfg.num_options, cfg.embed_dim, cfg.hidden, cfg.heads)
    return HierPolicy(featurizer.dim, spec.n_actions, pcfg, g), featurizer


def load_policy(cfg: TrainConfig, spec: envlib.TaskSpec, checkpoint: str | Path | None) -> tuple[HierPolicy, Featurizer]:
    policy, featurizer = build_policy(cfg, spec)
    if checkpoint is not None:
        path = Path(checkpoint)
        if not path.exists():
            raise ConfigError(f"checkpoint not found: {path}")
        state = load_params(path)
        missing = set(policy.state_dict()) - set(state)
        if missing:
            raise ConfigError(f"checkpoint {path} lacks {', '.join(sorted(missing))}")
        policy.load_state_dict({k: state[k] for k in policy.state_dict()})
    return policy, featurizer


def option_segments(options: Sequence[int]) -> list[list[int]]:
    """Runs of a constant active option over steps 1..T as [first step, last step, option]."""
    segs: list[list[int]] = []
    for t, z in enumerate(options[1:], start=1):
        if segs and segs[-1][2] == z:
            segs[-1][1] = t
        else:
            segs.append([t, t, int(z)])
    return segs


def evaluate_policy(cfg: TrainConfig, checkpoint: str | Path | None, n_tasks: int | None = None) -> dict[str, Any]:
    """Argmax rollouts on held-out tasks: return per task, expert return and option segmentation."""
    spec = cfg.spec()
    policy, featurizer = load_policy(cfg, spec, checkpoint)
    n = n_tasks or cfg.eval_tasks
    ctx = envlib.sample_tasks(spec, np.random.default_rng(cfg.seed + EVAL_STREAM), n)
    batch = rollout(policy, spec, ctx, featurizer=featurizer, argmax=True)
    returns = batch.env_rewards.sum(-1).numpy()
    exp = expert_return(spec, ctx) if spec.name in ("tinychain", "grid_multigoal") else None
    tasks = []
    for i in range(batch.size):
        tasks.append({"context": [float(v) for v in ctx[i]], "return": float(returns[i]),
                      "expert_return": None if exp is None else float(exp[i]),
                      "option_segments": option_segments(batch.options[i].tolist())})
    report = {"checkpoint": None if checkpoint is None else str(checkpoint), "env": spec.name,
              "mean_return": float(returns.mean()),
              "expert_mean_return": None if exp is None else float(exp.mean()), "tasks": tasks}
    if spec.name == "grid_multigoal":
        report["options"] = option_structure(spec, batch)
    return report


# --- transfer ------------------------------------------------------------------------

def transfer_pair(cfg: TrainConfig, checkpoint: str | Path, env_name: str, goal: int, seed: int,
                  episodes: int) -> dict[str, Any]:
    """HPPO on one sparse task twice with identical seeds: transferred low level + W_C vs all fresh."""
    spec = envlib.make_env(env_name, goal=goal)
    state = load_params(checkpoint)
    out = {"env": env_name, "goal": goal, "seed": seed}
    for arm in ("init", "scratch"):
        policy, featurizer = build_policy(cfg, spec, seed)
        if arm == "init":
            load_transferred(policy, state)
        baselines = Baselines(featurizer.dim, cfg.num_options, cfg.hidden, torch.Generator().manual_seed(seed))
        curve = hppo_rl(policy, spec, cfg.ppo(), episodes, seed, baselines, featurizer, stop_on_success=True)
        first = curve.first_success
        out[arm] = {"first_success": first, "episodes_to_success": first if first is not None else episodes + 1,
                    "returns": curve.returns, "success_rate": curve.success_rate}
    return out


def transfer_experiment(run_dir: str | Path, envs: Sequence[str] = TRANSFER_ENVS,
                        goals: Sequence[int] = TRANSFER_GOALS, seeds: Sequence[int] = range(5),
                        episodes: int = 100, checkpoint: str | Path | None = None,
                        progress=None) -> dict[str, Any]:
    """Paired runs for every (env, goal, seed); unsolved runs count as ``episodes + 1``."""
    cfg = read_run_config(run_dir)
    checkpoint = checkpoint or Path(run_dir) / "ckpt_policy.npz"
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    torch.set_num_threads(1)
    pairs = []
    for env_name in envs:
        for goal in goals:
            for seed in seeds:
                res = transfer_pair(cfg, checkpoint, env_name, goal, seed, episodes)
                pairs.append(res)
                if progress:
                    progress(res)
    summary = {}
    for env_name in envs:
        rows = [p for p in pairs if p["env"] == env_name]
        init = [p["init"]["episodes_to_success"] for p in rows]
        scratch = [p["scratch"]["episodes_to_success"] for p in rows]
        summary[env_name] = {"median_init": float(np.median(init)), "median_scratch": float(np.median(scratch)),
                             "solved_init": sum(p["init"]["first_success"] is not None for p in rows),
                             "solved_scratch": sum(p["scratch"]["first_success"] is not None for p in rows),
                             "runs": len(rows)}
    return {"run_dir": str(run_dir), "checkpoint": str(checkpoint), "episodes_cap": episodes,
            "config": asdict(cfg), "pairs": pairs, "summary": summary}


def write_json(obj: Any, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc

"""EM-style adversarial training loop from (possibly unannotated) demonstrations."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
from sklearn.metrics import normalized_mutual_info_score

from . import env as envlib
from .diffcore import DTYPE, ContractError, save_params
from .discrim import GAIL, Discriminator, il_reward, pairs_from_batch, train_discriminator
from .expert import DemoSet, expert_direction_labels, expert_return
from .hppo import Baselines, PPOConfig, compute_advantages, fit_baselines, ppo_update
from .objective import ObjectiveWeights, assemble_returns, l_di, l_mi
from .policy import Featurizer, HierPolicy, PolicyConfig, TrajBatch, rollout, step_logprobs
from .posterior import OptionPosterior, TaskPosterior, fit_posteriors, posterior_inputs

log = logging.getLogger(__name__)

VARIANTS = ("mh-airl", "mh-gail", "h-airl")
METRIC_FIELDS = ("iteration", "env_steps", "mean_return", "disc_loss", "l_mi", "l_di",
                 "loss_high", "loss_low", "post_task_nll", "post_option_nll")
REQUIRED_KEYS = ("env", "variant", "demos", "episodes", "seed", "num_options",
                 "alpha_mi", "alpha_di", "alpha_il", "ratio")
# seed offsets of the component random streams
ENV_STREAM, POLICY_STREAM, ESTEP_STREAM, MINIBATCH_STREAM, EVAL_STREAM = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "grid_multigoal"
    variant: str = "mh-airl"
    demos: str = ""
    episodes: int = 400
    seed: int = 0
    num_options: int = 4
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    heads: int = 2
    posterior_hidden: int = 64
    alpha_mi: float = 1.0
    alpha_di: float = 0.01
    alpha_il: float = 1.0
    ratio: tuple[int, ...] = (1, 3, 10)   # discriminator : policy : posteriors
    disc_mode: str = "airl_state_only"
    gamma: float = 0.99
    n_traj: int = 32
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 0                     # 0 = full batch
    lr_policy: float = 3e-4
    lr_baseline: float = 1e-3
    lr_disc: float = 1e-3
    lr_posterior: float = 1e-3
    disc_minibatch: int = 256
    baseline_steps: int = 20
    standardize: bool = True
    lr_anneal: bool = False                # decay policy/disc lr linearly to 0 over the run
    use_annotations: bool = True           # use context/options stored in the demos
    override_annotations: bool = False     # resample them anyway
    eval_every: int = 10
    eval_tasks: int = 16
    context_in_obs: bool = True            # tinychain only
    features: str = "auto"                 # onehot | coords | auto (coords on grids)
    name: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: expected one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.env not in envlib.ENV_NAMES:
            raise ConfigError(f"env: unknown environment {self.env!r}")
        if len(self.ratio) != 3 or min(self.ratio) < 0:
            raise ConfigError(f"ratio: expected three nonnegative counts, got {self.ratio}")
        if self.features not in ("auto", *Featurizer.KINDS):
            raise ConfigError(f"features: expected auto, onehot or coords, got {self.features!r}")
        if not self.alpha_il > 0:
            raise ConfigError(f"alpha_il: must be positive, got {self.alpha_il}")
        if self.episodes < 0 or self.num_options < 1:
            raise ConfigError("episodes must be >= 0 and num_options >= 1")
        try:
            self.weights()
        except ContractError as exc:
            raise ConfigError(f"alpha_*: {exc}") from None

    def weights(self) -> ObjectiveWeights:
        a_mi = 0.0 if self.variant == "h-airl" else self.alpha_mi
        return ObjectiveWeights(a_mi, self.alpha_di, self.alpha_il)

    def ppo(self) -> PPOConfig:
        return PPOConfig(self.clip, self.epochs, self.lr_policy, self.lr_baseline,
                         self.minibatch or None, self.n_traj, self.standardize, self.baseline_steps)

    def feature_kind(self) -> str:
        if self.features == "auto":
            return "coords" if self.env != "tinychain" else "onehot"
        return self.features

    def spec(self) -> envlib.TaskSpec:
        if self.env == "tinychain":
            return envlib.make_env("tinychain", context_in_obs=self.context_in_obs)
        return envlib.make_env(self.env)


# --- config text format ------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(name: str, value: Any, default: Any):
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            v = value.lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return v in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            sep = ":" if name == "ratio" else ","
            return tuple(int(p) for p in value.replace(" ", "").split(sep) if p)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    return value


def build_config(values: Mapping[str, Any], overrides: Mapping[str, Any] | None = None,
                 require: bool = False) -> TrainConfig:
    merged = dict(values)
    merged.update(overrides or {})
    known = {f.name: f for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(merged) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if require:
        missing = [k for k in REQUIRED_KEYS if k not in merged]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    defaults = TrainConfig()
    kw = {k: _coerce(k, v, getattr(defaults, k)) for k, v in merged.items()}
    return TrainConfig(**kw)


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return build_config(parse_config_text(path.read_text(encoding="utf-8"), str(path)), overrides, require=True)


def echo_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = (":" if f.name == "ratio" else ",").join(str(p) for p in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# --- E-step ------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSnapshot:
    """Frozen copies of the posteriors, taken before they train in an episode."""

    task: TaskPosterior | None
    option: OptionPosterior

    @classmethod
    def take(cls, task: TaskPosterior | None, option: OptionPosterior) -> "PosteriorSnapshot":
        def freeze(m):
            if m is None:
                return None
            m = copy.deepcopy(m)
            for p in m.parameters():
                p.requires_grad_(False)
            return m
        return cls(freeze(task), freeze(option))


def e_step_tensors(snap: PosteriorSnapshot, x: torch.Tensor, context_dim: int,
                   gen: torch.Generator | None) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample C_E ~ P_psi(.|X) then Z_{0:T} ~ P_omega(.|X, C_E) causally."""
    B = x.shape[0]
    c = snap.task.sample(x, gen) if snap.task is not None else torch.zeros(B, context_dim, dtype=DTYPE)
    z = snap.option.sample(x, c, gen)
    return c, z


def e_step(snap: PosteriorSnapshot, demos: DemoSet, spec: envlib.TaskSpec, gen: torch.Generator | None,
           override: bool = False, obs_dim: int | None = None) -> DemoSet:
    """Annotate every demonstration with sampled (C, Z_{0:T}); annotated sets pass through unless overridden."""
    if demos.annotated and not override:
        log.info("demonstrations already annotated; E-step skipped")
        return demos
    batch = demo_batch(spec, demos)
    x = posterior_inputs(batch, spec.n_actions, obs_dim)
    cdim = snap.task.context_dim if snap.task is not None else 0
    c, z = e_step_tensors(snap, x, cdim, gen)
    out = []
    for i, d in enumerate(demos):
        d = copy.copy(d)
        d.context, d.options = c[i].numpy().copy(), z[i].numpy().copy()
        out.append(d)
    return DemoSet(out, dict(demos.meta))


def demo_batch(spec: envlib.TaskSpec, demos: DemoSet) -> TrajBatch:
    """Expert demonstrations as a batch; contexts/options are placeholders unless annotated."""
    states = torch.as_tensor(np.stack([d.states for d in demos]), dtype=DTYPE)
    actions = torch.as_tensor(np.stack([d.actions for d in demos]))
    B, T = actions.shape
    if T != spec.horizon or states.shape[-1] != spec.obs_dim:
        raise ContractError(f"demonstrations do not match {spec.name} (T={T}, obs width {states.shape[-1]})")
    cells = states[..., : spec.n_cells].argmax(dim=-1)
    if demos.annotated:
        ctx = torch.as_tensor(np.stack([d.context for d in demos]), dtype=DTYPE)
        opts = torch.as_tensor(np.stack([d.options for d in demos]))
    else:
        ctx = torch.zeros(B, spec.context_dim, dtype=DTYPE)
        opts = torch.zeros(B, T + 1, dtype=torch.long)
    goals = torch.as_tensor(spec.goals_of(ctx.numpy())) if demos.annotated else None
    rewards = (cells[:, 1:] == goals[:, None]).to(DTYPE) if goals is not None else torch.zeros(B, T, dtype=DTYPE)
    return TrajBatch(cells, actions, opts, ctx, torch.ones(B, T, dtype=DTYPE), rewards, states)


# --- trainer -----------------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: TrainConfig, demos: DemoSet | None, spec: envlib.TaskSpec | None = None):
        """``spec`` replaces ``cfg.spec()``, e.g. to restrict a family's prior."""
        self.cfg = cfg
        self.spec = spec = spec or cfg.spec()
        self.use_context = cfg.variant != "h-airl"
        self.featurizer = Featurizer(spec, self.use_context, cfg.feature_kind())
        self.obs_dim = spec.obs_dim if self.use_context else spec.n_cells
        self.cdim = spec.context_dim if self.use_context else 0
        self.weights = cfg.weights()
        self.ppo_cfg = cfg.ppo()
        g = torch.Generator().manual_seed(cfg.seed)
        N, A, F = cfg.num_options, spec.n_actions, self.featurizer.dim
        self.policy = HierPolicy(F, A, PolicyConfig(N, cfg.embed_dim, cfg.hidden, cfg.heads), g)
        mode = GAIL if cfg.variant == "mh-gail" else cfg.disc_mode
        self.disc = Discriminator(F, N, A, mode, cfg.gamma, cfg.hidden, g)
        self.baselines = Baselines(F, N, cfg.hidden, g)
        x_dim = A + self.obs_dim
        self.task_post = (TaskPosterior(x_dim, spec.context_dim, spec.context_kind, cfg.posterior_hidden, g)
                          if self.use_context else None)
        self.opt_post = OptionPosterior(x_dim, N, self.cdim, cfg.posterior_hidden, g)
        self.opt_policy = torch.optim.Adam(self.policy.parameters(), lr=cfg.lr_policy)
        self.opt_baseline = torch.optim.Adam(self.baselines.parameters(), lr=cfg.lr_baseline)
        self.opt_disc = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr_disc)
        post_params = list(self.opt_post.parameters()) + ([] if self.task_post is None else list(self.task_post.parameters()))
        self.opt_posterior = torch.optim.Adam(post_params, lr=cfg.lr_posterior)
        self.rng_env = np.random.default_rng(cfg.seed + ENV_STREAM)
        self.gen_policy = torch.Generator().manual_seed(cfg.seed + POLICY_STREAM)
        self.gen_estep = torch.Generator().manual_seed(cfg.seed + ESTEP_STREAM)
        self.gen_mb = torch.Generator().manual_seed(cfg.seed + MINIBATCH_STREAM)
        self.h_c = envlib.context_entropy(spec) if self.use_context else 0.0
        self.env_steps = 0
        self.iteration = 0
        self.estep_calls = 0
        self.demos = demos
        self.expert = demo_batch(spec, demos) if demos is not None else None
        self.supervised = (demos is not None and demos.annotated and cfg.use_annotations
                           and not cfg.override_annotations)
        if self.expert is not None:
            self.expert_x = posterior_inputs(self.expert, A, self.obs_dim)

    def _ctx(self, c: torch.Tensor) -> torch.Tensor:
        return c if self.use_context else c[:, :0]

    def expert_annotations(self, snap: PosteriorSnapshot) -> tuple[torch.Tensor, torch.Tensor]:
        if self.supervised:
            return self._ctx(self.expert.contexts), self.expert.options
        self.estep_calls += 1
        return e_step_tensors(snap, self.expert_x, self.cdim, self.gen_estep)

    def train_episode(self) -> dict[str, float]:
        cfg, spec = self.cfg, self.spec
        n_disc, n_policy, n_post = cfg.ratio
        self.iteration += 1
        if cfg.lr_anneal and cfg.episodes:
            frac = max(0.0, 1.0 - (self.iteration - 1) / cfg.episodes)
            for opt, lr in ((self.opt_policy, cfg.lr_policy), (self.opt_disc, cfg.lr_disc)):
                for group in opt.param_groups:
                    group["lr"] = lr * frac
        # generate M trajectories with the current policy
        contexts = envlib.sample_tasks(spec, self.rng_env, cfg.n_traj)
        batch = rollout(self.policy, spec, contexts, self.gen_policy, self.featurizer)
        self.env_steps += batch.steps()
        snap = PosteriorSnapshot.take(self.task_post, self.opt_post)
        # posteriors on the fresh trajectories
        x = posterior_inputs(batch, spec.n_actions, self.obs_dim)
        c_in = self._ctx(batch.contexts)
        gen_for_post = dataclasses.replace(batch, contexts=c_in)
        task_nll, opt_nll = fit_posteriors(self.task_post, self.opt_post, x, gen_for_post, n_post, self.opt_posterior)
        # E-step on the demonstrations with the snapshot
        disc_loss = float("nan")
        if self.expert is not None:
            c_e, z_e = self.expert_annotations(snap)
            expert = dataclasses.replace(self.expert, options=z_e)
            with torch.no_grad():
                lh, ll = step_logprobs(self.policy, expert, self.featurizer, c_e)
            e_pairs = pairs_from_batch(expert, self.featurizer, lh + ll, c_e)
            g_pairs = pairs_from_batch(batch, self.featurizer, batch.logp_high + batch.logp_low)
            disc_loss = train_discriminator(self.disc, e_pairs, g_pairs, self.opt_disc, n_disc,
                                            cfg.disc_minibatch, self.gen_mb)
            r_il = il_reward(self.disc, pairs_from_batch(batch, self.featurizer, batch.logp_high + batch.logp_low))
            r_il = r_il.reshape(batch.size, -1)
        else:
            r_il = batch.env_rewards
        with torch.no_grad():
            log_pw = self.opt_post.log_probs(x, batch.options, c_in)
            log_ppsi = self.task_post.log_prob(x, c_in) if self.task_post is not None else None
        lmi = float(l_mi(log_ppsi, self.h_c)) if log_ppsi is not None else 0.0
        ldi = float(l_di(log_pw, batch.logp_high))
        table = assemble_returns(log_ppsi, log_pw - batch.logp_high, r_il, self.weights)
        loss_h = loss_l = float("nan")
        for _ in range(n_policy):
            adv_h, adv_l = compute_advantages(table.ret, batch, self.baselines, self.featurizer, cfg.standardize)
            loss_h, loss_l = ppo_update(self.policy, batch, adv_h, adv_l, self.ppo_cfg, self.opt_policy,
                                        self.featurizer, self.gen_mb)
        fit_baselines(self.baselines, batch, table.ret, cfg.baseline_steps, self.opt_baseline, self.featurizer)
        return {"iteration": self.iteration, "env_steps": self.env_steps,
                "mean_return": float(batch.env_rewards.sum(-1).mean()), "disc_loss": disc_loss,
                "l_mi": lmi, "l_di": ldi, "loss_high": loss_h, "loss_low": loss_l,
                "post_task_nll": task_nll if self.task_post is not None else 0.0, "post_option_nll": opt_nll}

    # --- evaluation ---

    def eval_contexts(self, n: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(self.cfg.seed + EVAL_STREAM)
        return envlib.sample_tasks(self.spec, rng, n or self.cfg.eval_tasks)

    def evaluate(self, n: int | None = None) -> dict[str, Any]:
        ctx = self.eval_contexts(n)
        batch = rollout(self.policy, self.spec, ctx, featurizer=self.featurizer, argmax=True)
        returns = batch.env_rewards.sum(-1).numpy()
        exp_ret = expert_return(self.spec, ctx)
        out = {"mean_return": float(returns.mean()), "expert_return": float(exp_ret.mean()),
               "returns": returns.tolist(), "expert_returns": exp_ret.tolist()}
        if self.spec.name == "grid_multigoal":
            out["options"] = option_structure(self.spec, batch)
        return out

    def state(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, mod in (("policy", self.policy), ("disc", self.disc), ("baselines", self.baselines),
                            ("task_post", self.task_post), ("opt_post", self.opt_post)):
            if mod is not None:
                out.update({f"{prefix}/{k}": v for k, v in mod.state_dict().items()})
        return out


def option_structure(spec: envlib.TaskSpec, batch: TrajBatch) -> dict[str, Any]:
    """How active options line up with the expert's movement direction at each step."""
    goals = spec.goals_of(batch.contexts.numpy())
    labels = expert_direction_labels(spec, batch.cells[:, :-1].numpy(), goals)
    opts = batch.options[:, 1:].numpy()
    keep = (labels != envlib.STAY) & (batch.mask.numpy() > 0)
    lab, opt = labels[keep], opts[keep]
    nmi = float(normalized_mutual_info_score(lab, opt)) if len(lab) else 0.0
    majority = {}
    for d in (envlib.UP, envlib.DOWN, envlib.LEFT, envlib.RIGHT):
        sel = opt[lab == d]
        if len(sel):
            majority[envlib.GRID_ACTIONS[d]] = int(np.bincount(sel).argmax())
    distinct = len(set(majority.values()))
    return {"nmi": nmi, "majority_option": majority, "distinct_majorities": distinct, "labelled_steps": int(len(lab))}


# --- artifacts -----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_trajectories(policy: HierPolicy, spec: envlib.TaskSpec, contexts: np.ndarray, path: str | Path,
                      featurizer: Featurizer | None = None) -> int:
    """One JSON line per argmax trajectory with its per-step active option."""
    batch = rollout(policy, spec, contexts, featurizer=featurizer, argmax=True)
    lines = []
    for i in range(batch.size):
        cells = batch.cells[i].tolist()
        rec = {"context": [float(v) for v in batch.contexts[i]],
               "goal": list(spec.cell_xy(spec.goal_of(batch.contexts[i].numpy()))),
               "states": [list(spec.cell_xy(c)) for c in cells],
               "actions": batch.actions[i].tolist(), "options": batch.options[i].tolist(),
               "rewards": [float(r) for r in batch.env_rewards[i]]}
        lines.append(json.dumps(rec, separators=(",", ":")))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write trajectories to {path}: {exc}") from exc
    return len(lines)


def run(cfg: TrainConfig, run_dir: str | Path, demos: DemoSet | None = None,
        progress: bool = False) -> dict[str, Any]:
    """Train, writing config.echo, metrics.csv, report.json, trajs.jsonl and checkpoints into ``run_dir``."""
    from .expert import read_demos

    torch.set_num_threads(1)
    if demos is None:
        if not cfg.demos:
            raise ConfigError("demos: imitation training needs a demonstration file")
        path = Path(cfg.demos)
        if not path.exists():
            raise ConfigError(f"demos: file not found: {path}")
        demos = read_demos(path)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.echo").write_text(echo_config(cfg), encoding="utf-8")
    trainer = Trainer(cfg, demos)
    evals = []
    start = time.perf_counter()
    with open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for ep in range(1, cfg.episodes + 1):
            row = trainer.train_episode()
            writer.writerow([_fmt(row[k]) for k in METRIC_FIELDS])
            if cfg.eval_every and ep % cfg.eval_every == 0:
                ev = trainer.evaluate()
                evals.append({"iteration": ep, "mean_return": ev["mean_return"]})
                if progress:
                    log.info("ep %d  train %.2f  eval %.2f / expert %.2f", ep, row["mean_return"],
                             ev["mean_return"], ev["expert_return"])
    final = trainer.evaluate()
    save_params(trainer.policy.state_dict(), run_dir / "ckpt_policy.npz")
    save_params(trainer.state(), run_dir / "ckpt_final.npz")
    n_dump = 8
    dump_trajectories(trainer.policy, trainer.spec, trainer.eval_contexts(n_dump), run_dir / "trajs.jsonl",
                      trainer.featurizer)
    report = {"config": dataclasses.asdict(cfg), "final": final, "eval_curve": evals,
              "estep_calls": trainer.estep_calls, "wall_clock_s": time.perf_counter() - start}
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report

"""Hierarchical PPO: per-level baselines, advantages and clipped-surrogate updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch
from torch import nn
from torch.nn.functional import one_hot

from . import env as envlib
from .diffcore import DTYPE, MLP, ContractError, ParamSet
from .objective import ObjectiveWeights, assemble_returns
from .policy import Featurizer, HierPolicy, TrajBatch, rollout, step_logprobs


@dataclass
class PPOConfig:
    clip: float = 0.2
    epochs: int = 4
    lr_policy: float = 3e-4
    lr_baseline: float = 1e-3
    minibatch: int | None = None   # trajectories per minibatch; None = full batch
    n_traj: int = 32
    standardize: bool = True
    baseline_steps: int = 20

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ContractError("clip must lie in (0, 1)")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")


class Baselines(nn.Module):
    """b_high(S_{t-1}, Z_{t-1} | C) and b_low(S_{t-1}, Z_t | C)."""

    def __init__(self, feat_dim: int, num_options: int, hidden=(64, 64), generator: torch.Generator | None = None,
                 zero_last: bool = True):
        super().__init__()
        self.num_options = num_options
        self.high = MLP(feat_dim + num_options, hidden, 1, generator, zero_last=zero_last)
        self.low = MLP(feat_dim + num_options, hidden, 1, generator, zero_last=zero_last)

    def forward(self, feat: torch.Tensor, z_prev: torch.Tensor, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        oh = lambda v: one_hot(v, self.num_options).to(DTYPE)
        bh = self.high(torch.cat([feat, oh(z_prev)], dim=-1)).squeeze(-1)
        bl = self.low(torch.cat([feat, oh(z)], dim=-1)).squeeze(-1)
        return bh, bl

    def of_batch(self, batch: TrajBatch, featurizer: Featurizer, feature_contexts=None):
        fctx = batch.contexts if feature_contexts is None else feature_contexts
        feat = featurizer(batch.cells[:, :-1], fctx)
        return self(feat, batch.options[:, :-1], batch.options[:, 1:])


def standardize(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    n = mask.sum()
    mean = (x * mask).sum() / n
    var = (((x - mean) * mask) ** 2).sum() / n
    if var <= 1e-16:
        return (x - mean) * mask
    return (x - mean) / var.sqrt() * mask


def compute_advantages(ret: torch.Tensor, batch: TrajBatch, baselines: Baselines | None, featurizer: Featurizer,
                       standardize_adv: bool = False, feature_contexts=None) -> tuple[torch.Tensor, torch.Tensor]:
    """(Ret_t - b_high, Ret_t - b_low), both (B, T), zero on masked steps."""
    ret = ret.detach()
    if baselines is None:
        bh = bl = torch.zeros_like(ret)
    else:
        with torch.no_grad():
            bh, bl = baselines.of_batch(batch, featurizer, feature_contexts)
    adv_h, adv_l = (ret - bh) * batch.mask, (ret - bl) * batch.mask
    if standardize_adv:
        adv_h, adv_l = standardize(adv_h, batch.mask), standardize(adv_l, batch.mask)
    return adv_h, adv_l


def clipped_surrogate(policy: HierPolicy, batch: TrajBatch, adv_h: torch.Tensor, adv_l: torch.Tensor, clip: float,
                      featurizer: Featurizer, feature_contexts=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-trajectory sums of the clipped objectives of the two heads, each (B,)."""
    lh, ll = step_logprobs(policy, batch, featurizer, feature_contexts)

    def surr(new, old, adv):
        ratio = torch.exp(new - old.detach())
        s = torch.minimum(ratio * adv, ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
        return (s * batch.mask).sum(dim=-1)

    return surr(lh, batch.logp_high, adv_h), surr(ll, batch.logp_low, adv_l)


def ppo_update(policy: HierPolicy, batch: TrajBatch, adv_h: torch.Tensor, adv_l: torch.Tensor, cfg: PPOConfig,
               optimizer: torch.optim.Optimizer, featurizer: Featurizer, gen: torch.Generator | None = None,
               feature_contexts=None) -> tuple[float, float]:
    """K epochs of clipped-surrogate ascent on both heads; returns the last (high, low) losses per step."""
    if batch.logp_high is None or batch.logp_low is None:
        raise ContractError("batch needs behavior log-probabilities")
    B = batch.size
    mb = B if cfg.minibatch is None else min(cfg.minibatch, B)
    fctx = batch.contexts if feature_contexts is None else feature_contexts
    loss_h = loss_l = float("nan")
    for _ in range(cfg.epochs):
        order = torch.randperm(B, generator=gen) if mb < B else torch.arange(B)
        for start in range(0, B, mb):
            idx = order[start:start + mb]
            sub = batch.select(idx)
            n = sub.mask.sum().clamp_min(1.0)
            sh, sl = clipped_surrogate(policy, sub, adv_h[idx], adv_l[idx], cfg.clip, featurizer, fctx[idx])
            lh, ll = -sh.sum() / n, -sl.sum() / n
            optimizer.zero_grad()
            (lh + ll).backward()
            optimizer.step()
            loss_h, loss_l = float(lh.detach()), float(ll.detach())
    return loss_h, loss_l


def fit_baselines(baselines: Baselines, batch: TrajBatch, ret: torch.Tensor, steps: int,
                  optimizer: torch.optim.Optimizer, featurizer: Featurizer, feature_contexts=None) -> float:
    """Full-batch squared-error regression of both baselines onto Ret_t."""
    if batch.size == 0:
        raise ContractError("empty batch")
    ret = ret.detach()
    n = batch.mask.sum()
    loss = torch.tensor(float("nan"))
    for _ in range(steps):
        bh, bl = baselines.of_batch(batch, featurizer, feature_contexts)
        loss = ((((bh - ret) ** 2) + ((bl - ret) ** 2)) * batch.mask).sum() / n
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    if steps == 0:
        with torch.no_grad():
            bh, bl = baselines.of_batch(batch, featurizer, feature_contexts)
            loss = ((((bh - ret) ** 2) + ((bl - ret) ** 2)) * batch.mask).sum() / n
    return float(loss.detach())


# --- pure RL with environment rewards ------------------------------------------

TRANSFER_PREFIXES = ("W_C", "low.")


def load_transferred(policy: HierPolicy, state: Mapping[str, torch.Tensor]) -> None:
    """Copy the low level and W_C from a checkpoint; the high level keeps its fresh initialization."""
    with torch.no_grad():
        for name, p in policy.named_parameters():
            if name.startswith(TRANSFER_PREFIXES):
                if name not in state:
                    raise ContractError(f"checkpoint lacks {name!r}")
                if tuple(state[name].shape) != tuple(p.shape):
                    raise ContractError(f"{name}: checkpoint shape {tuple(state[name].shape)} != {tuple(p.shape)}")
                p.copy_(state[name])


@dataclass
class RLCurve:
    returns: list[float] = field(default_factory=list)
    success_rate: list[float] = field(default_factory=list)
    env_steps: list[int] = field(default_factory=list)

    @property
    def first_success(self) -> int | None:
        """1-based episode index of the first batch containing a successful trajectory."""
        for i, s in enumerate(self.success_rate):
            if s > 0:
                return i + 1
        return None


def hppo_rl(policy: HierPolicy, spec: envlib.TaskSpec, cfg: PPOConfig, episodes: int, seed: int,
            baselines: Baselines | None = None, featurizer: Featurizer | None = None,
            stop_on_success: bool = False) -> RLCurve:
    """HPPO on environment rewards (in place of R_IL, with no information terms)."""
    featurizer = featurizer or Featurizer(spec)
    if baselines is None:
        baselines = Baselines(featurizer.dim, policy.num_options, generator=torch.Generator().manual_seed(seed))
    rng = np.random.default_rng(seed + 1)
    gen_policy = torch.Generator().manual_seed(seed + 2)
    gen_mb = torch.Generator().manual_seed(seed + 4)
    opt_pi = torch.optim.Adam(policy.parameters(), lr=cfg.lr_policy)
    opt_b = torch.optim.Adam(baselines.parameters(), lr=cfg.lr_baseline)
    w = ObjectiveWeights(0.0, 0.0, 1.0)
    curve = RLCurve()
    total_steps = 0
    for _ in range(episodes):
        contexts = envlib.sample_tasks(spec, rng, cfg.n_traj)
        batch = rollout(policy, spec, contexts, gen_policy, featurizer)
        total_steps += batch.steps()
        ep_ret = batch.env_rewards.sum(dim=-1)
        curve.returns.append(float(ep_ret.mean()))
        curve.success_rate.append(float((ep_ret > 0).to(DTYPE).mean()))
        curve.env_steps.append(total_steps)
        if stop_on_success and curve.first_success is not None:
            break
        table = assemble_returns(None, None, batch.env_rewards, w, batch.mask)
        adv_h, adv_l = compute_advantages(table.ret, batch, baselines, featurizer, cfg.standardize)
        ppo_update(policy, batch, adv_h, adv_l, cfg, opt_pi, featurizer, gen_mb)
        fit_baselines(baselines, batch, table.ret, cfg.baseline_steps, opt_b, featurizer)
    return curve


def policy_params(policy: HierPolicy) -> ParamSet:
    return ParamSet(policy)

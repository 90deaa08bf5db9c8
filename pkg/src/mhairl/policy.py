"""Context-conditioned one-step option policy.

The high level picks an option at every step from ``(S_{t-1}, Z_{t-1}, C)``
by attending over the option context matrix ``W_C``; the low level picks an
action from ``(S_{t-1}, Z_t, C)`` using the option's embedding row.
All computations are batched over leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import env as envlib
from .diffcore import DTYPE, MLP, ContractError, Linear, MultiHeadAttention, ParamSet, log_softmax, logprob_categorical
from .env import TaskSpec

DUMMY_OPTION = 0


class Featurizer:
    """Network conditioning features of a cell under a context.

    ``onehot`` encodes the cell as a one-hot vector; ``coords`` as its (x, y)
    position scaled to [-1, 1]. The context C is appended unless disabled.
    """

    KINDS = ("onehot", "coords")

    def __init__(self, spec: TaskSpec, use_context: bool = True, kind: str = "onehot"):
        if kind not in self.KINDS:
            raise ContractError(f"unknown feature kind {kind!r}")
        if kind == "coords" and not spec.width:
            raise ContractError(f"{spec.name} has no grid coordinates")
        self.spec, self.use_context, self.kind = spec, use_context, kind
        self.context_dim = spec.context_dim if use_context else 0
        self.state_dim = spec.n_cells if kind == "onehot" else 2
        self.dim = self.state_dim + self.context_dim
        if kind == "coords":
            xy = torch.tensor([spec.cell_xy(c) for c in range(spec.n_cells)], dtype=DTYPE)
            self._xy = 2.0 * xy / torch.tensor([spec.width - 1, spec.height - 1], dtype=DTYPE) - 1.0

    def state(self, cells: torch.Tensor) -> torch.Tensor:
        if self.kind == "onehot":
            return envlib.cell_onehot(self.spec, cells)
        return self._xy[cells]

    def __call__(self, cells: torch.Tensor, contexts: torch.Tensor) -> torch.Tensor:
        s = self.state(cells)
        if not self.use_context:
            return s
        ctx = contexts.to(DTYPE)
        while ctx.dim() < s.dim():
            ctx = ctx.unsqueeze(-2)
        return torch.cat([s, ctx.expand(*s.shape[:-1], ctx.shape[-1])], dim=-1)


@dataclass
class PolicyConfig:
    num_options: int = 4
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    heads: int = 2
    zero_heads: bool = True  # zero output layers: uniform options/actions at init


class HierPolicy(nn.Module):
    HIGH_PREFIXES = ("W_C", "query.", "mha.", "high_out.")
    LOW_PREFIXES = ("low.",)

    def __init__(self, feat_dim: int, n_actions: int, cfg: PolicyConfig = PolicyConfig(),
                 generator: torch.Generator | None = None):
        super().__init__()
        if cfg.num_options < 1:
            raise ContractError("need at least one option")
        self.cfg = cfg
        self.feat_dim, self.n_actions = feat_dim, n_actions
        self.num_options, self.embed_dim = cfg.num_options, cfg.embed_dim
        E = cfg.embed_dim
        w = torch.zeros(cfg.num_options, E, dtype=DTYPE)
        self.W_C = nn.Parameter(w.uniform_(-1.0, 1.0, generator=generator))
        self.query = Linear(feat_dim + E, E, generator)
        self.mha = MultiHeadAttention(E, E, cfg.heads, generator)
        self.high_out = Linear(E, cfg.num_options, generator, zero=cfg.zero_heads)
        self.low = MLP(feat_dim + E, cfg.hidden, n_actions, generator, zero_last=cfg.zero_heads)

    # W_C only moves through the attention keys/values; its rows are used as
    # fixed inputs everywhere else.
    def embed(self, z: torch.Tensor) -> torch.Tensor:
        return self.W_C.detach()[z]

    def high_logits(self, feat: torch.Tensor, z_prev: torch.Tensor) -> torch.Tensor:
        q = self.query(torch.cat([feat, self.embed(z_prev)], dim=-1))
        dense = self.mha(q, self.W_C, self.W_C)
        return self.high_out(dense)

    def low_logits(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.low(torch.cat([feat, self.embed(z)], dim=-1))

    def high_params(self) -> ParamSet:
        return ParamSet([(n, p) for n, p in self.named_parameters() if n.startswith(self.HIGH_PREFIXES)])

    def low_params(self) -> ParamSet:
        return ParamSet([(n, p) for n, p in self.named_parameters() if n.startswith(self.LOW_PREFIXES)])

    def params(self) -> ParamSet:
        return ParamSet(self)


def high_dist(p: HierPolicy, feat: torch.Tensor, z_prev) -> torch.Tensor:
    """Probability vector(s) over options."""
    return log_softmax(p.high_logits(feat, torch.as_tensor(z_prev))).exp()


def low_dist(p: HierPolicy, feat: torch.Tensor, z) -> torch.Tensor:
    return log_softmax(p.low_logits(feat, torch.as_tensor(z))).exp()


# --- trajectories -------------------------------------------------------------

@dataclass
class TrajBatch:
    """B extended trajectories of horizon T (index t of ``cells``/``options`` is step t).

    ``logp_high[:, t-1]`` is log pi_theta(Z_t | S_{t-1}, Z_{t-1}, C) and
    ``logp_low[:, t-1]`` is log pi_phi(A_{t-1} | S_{t-1}, Z_t, C). ``mask`` marks
    steps taken before the episode ended.
    """

    cells: torch.Tensor       # (B, T+1) long
    actions: torch.Tensor     # (B, T) long
    options: torch.Tensor     # (B, T+1) long, options[:, 0] dummy
    contexts: torch.Tensor    # (B, d_C)
    mask: torch.Tensor        # (B, T)
    env_rewards: torch.Tensor  # (B, T)
    obs: torch.Tensor | None = None       # (B, T+1, obs_dim) raw observations
    logp_high: torch.Tensor | None = None
    logp_low: torch.Tensor | None = None
    r_il: torch.Tensor | None = None      # (B, T), filled by the discriminator
    log_pw: torch.Tensor | None = None    # (B, T), log P_omega(Z_t | ...)
    log_ppsi: torch.Tensor | None = None  # (B,), log P_psi(C | X)

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __post_init__(self):
        B, T = self.actions.shape
        if self.cells.shape != (B, T + 1) or self.options.shape != (B, T + 1):
            raise ContractError("cells/options must have T+1 entries per trajectory")
        if self.options.numel() and bool((self.options[:, 0] != DUMMY_OPTION).any()):
            raise ContractError("Z_0 must be the dummy option")

    def select(self, idx) -> "TrajBatch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = None if v is None else v[idx]
        return TrajBatch(**kw)

    def item(self, i: int) -> "HierTrajectory":
        return HierTrajectory(self.select([i]))

    def steps(self) -> int:
        return int(self.mask.sum().item())


@dataclass
class HierTrajectory:
    """Single-trajectory view of a batch of size one."""

    batch: TrajBatch

    def __post_init__(self):
        if self.batch.size != 1:
            raise ContractError("HierTrajectory wraps exactly one trajectory")

    @property
    def states(self) -> np.ndarray:
        return self.batch.cells[0].numpy()

    @property
    def actions(self) -> np.ndarray:
        return self.batch.actions[0].numpy()

    @property
    def options(self) -> np.ndarray:
        return self.batch.options[0].numpy()

    @property
    def context(self) -> np.ndarray:
        return self.batch.contexts[0].numpy()


def concat_batches(batches: Sequence[TrajBatch]) -> TrajBatch:
    kw = {}
    for f in fields(TrajBatch):
        vals = [getattr(b, f.name) for b in batches]
        kw[f.name] = None if any(v is None for v in vals) else torch.cat(vals, dim=0)
    return TrajBatch(**kw)


def _sample(logits: torch.Tensor, gen: torch.Generator | None, argmax: bool) -> torch.Tensor:
    if argmax:
        return logits.argmax(dim=-1)
    probs = log_softmax(logits).exp()
    return torch.multinomial(probs, 1, generator=gen).squeeze(-1)


@torch.no_grad()
def rollout(p: HierPolicy, spec: TaskSpec, contexts, gen: torch.Generator | None = None,
            featurizer: Featurizer | None = None, argmax: bool = False,
            feature_contexts: torch.Tensor | None = None) -> TrajBatch:
    """Sample one trajectory per context row; options are re-drawn at every step.

    ``feature_contexts`` overrides the context fed to the networks (the
    environment always uses the true ``contexts``).
    """
    featurizer = featurizer or Featurizer(spec)
    ctx = torch.as_tensor(np.asarray(contexts, dtype=np.float64), dtype=DTYPE)
    if ctx.dim() == 1:
        ctx = ctx.unsqueeze(0)
    fctx = ctx if feature_contexts is None else feature_contexts
    B, T = ctx.shape[0], spec.horizon
    goals = torch.as_tensor(spec.goals_of(ctx.numpy()), dtype=torch.long)
    cells = torch.empty(B, T + 1, dtype=torch.long)
    options = torch.zeros(B, T + 1, dtype=torch.long)
    actions = torch.empty(B, T, dtype=torch.long)
    logp_h = torch.zeros(B, T, dtype=DTYPE)
    logp_l = torch.zeros(B, T, dtype=DTYPE)
    mask = torch.zeros(B, T, dtype=DTYPE)
    rewards = torch.zeros(B, T, dtype=DTYPE)
    cells[:, 0] = spec.start_cell
    alive = torch.ones(B, dtype=torch.bool)
    for t in range(1, T + 1):
        feat = featurizer(cells[:, t - 1], fctx)
        hl = p.high_logits(feat, options[:, t - 1])
        z = _sample(hl, gen, argmax)
        ll = p.low_logits(feat, z)
        a = _sample(ll, gen, argmax)
        options[:, t], actions[:, t - 1] = z, a
        logp_h[:, t - 1] = logprob_categorical(hl, z)
        logp_l[:, t - 1] = logprob_categorical(ll, a)
        nxt = envlib.next_cells(spec, cells[:, t - 1], a)
        nxt = torch.where(alive, nxt, cells[:, t - 1])
        cells[:, t] = nxt
        mask[:, t - 1] = alive.to(DTYPE)
        hit = (nxt == goals) & alive
        rewards[:, t - 1] = hit.to(DTYPE)
        if spec.terminate_on_goal:
            alive = alive & ~hit
    obs = envlib.observations(spec, cells, ctx)
    return TrajBatch(cells, actions, options, ctx, mask, rewards, obs, logp_h, logp_l)


def step_logprobs(p: HierPolicy, batch: TrajBatch, featurizer: Featurizer,
                  feature_contexts: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable per-step (log pi_theta, log pi_phi), each (B, T)."""
    fctx = batch.contexts if feature_contexts is None else feature_contexts
    feat = featurizer(batch.cells[:, :-1], fctx)
    z_prev, z = batch.options[:, :-1], batch.options[:, 1:]
    lh = logprob_categorical(p.high_logits(feat, z_prev), z)
    ll = logprob_categorical(p.low_logits(feat, z), batch.actions)
    return lh, ll


def joint_logprob(p: HierPolicy, batch: TrajBatch, featurizer: Featurizer,
                  feature_contexts: torch.Tensor | None = None) -> torch.Tensor:
    """Sum over steps of log pi_theta + log pi_phi per trajectory, (B,)."""
    lh, ll = step_logprobs(p, batch, featurizer, feature_contexts)
    return ((lh + ll) * batch.mask).sum(dim=-1)


def clone_policy(p: HierPolicy) -> HierPolicy:
    q = HierPolicy(p.feat_dim, p.n_actions, p.cfg)
    q.load_state_dict(p.state_dict())
    return q

"""Recurrent variational posteriors over the task context and the option sequence."""

from __future__ import annotations

from collections import OrderedDict

import torch
from torch import nn

from .diffcore import (DTYPE, ContractError, GRUCell, Linear, ParamSet, log_softmax, logprob_categorical,
                       logprob_gaussian, reverse_grad)
from .policy import DUMMY_OPTION, TrajBatch

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def posterior_inputs(batch: TrajBatch, n_actions: int, obs_dim: int | None = None) -> torch.Tensor:
    """X_t = (A_{t-1}, S_t) for t = 0..T with a zero vector for A_{-1}; shape (B, T+1, n_actions + obs_dim).

    ``obs_dim`` truncates each observation (drops a trailing context block).
    """
    if batch.obs is None:
        raise ContractError("batch carries no observations")
    obs = batch.obs if obs_dim is None else batch.obs[..., :obs_dim]
    B, T = batch.actions.shape
    a = torch.zeros(B, T + 1, n_actions, dtype=DTYPE)
    a[:, 1:] = nn.functional.one_hot(batch.actions, n_actions).to(DTYPE)
    return torch.cat([a, obs.to(DTYPE)], dim=-1)


class TaskPosterior(nn.Module):
    """Bidirectional GRU over X_{0:T}; categorical or diagonal-Gaussian head on the final states."""

    def __init__(self, x_dim: int, context_dim: int, kind: str, hidden: int = 64,
                 generator: torch.Generator | None = None, zero_head: bool = False):
        super().__init__()
        if kind not in ("discrete", "continuous"):
            raise ContractError(f"unknown context kind {kind!r}")
        self.kind, self.context_dim, self.hidden = kind, context_dim, hidden
        self.fwd = GRUCell(x_dim, hidden, generator)
        self.bwd = GRUCell(x_dim, hidden, generator)
        n_out = context_dim if kind == "discrete" else 2 * context_dim
        self.head = Linear(2 * hidden, n_out, generator, zero=zero_head)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        B, L, _ = x.shape
        hf = torch.zeros(B, self.hidden, dtype=DTYPE)
        hb = torch.zeros(B, self.hidden, dtype=DTYPE)
        hf = self.fwd.run(x, hf)[:, -1]
        hb = self.bwd.run(x, hb, reverse=True)[:, 0]
        return torch.cat([hf, hb], dim=-1)

    def head_out(self, x: torch.Tensor):
        out = self.head(self.encode(x))
        if self.kind == "discrete":
            return out
        mean, log_std = out[:, : self.context_dim], out[:, self.context_dim:]
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def log_prob(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """log P_psi(c | x) per trajectory, (B,)."""
        if c.shape != (x.shape[0], self.context_dim):
            raise ContractError(f"context shape {tuple(c.shape)} does not match batch of {x.shape[0]}")
        out = self.head_out(x)
        if self.kind == "discrete":
            return logprob_categorical(out, c.argmax(dim=-1))
        mean, log_std = out
        return logprob_gaussian(mean, log_std, c.to(DTYPE))

    @torch.no_grad()
    def sample(self, x: torch.Tensor, gen: torch.Generator | None = None) -> torch.Tensor:
        out = self.head_out(x)
        if self.kind == "discrete":
            idx = torch.multinomial(log_softmax(out).exp(), 1, generator=gen).squeeze(-1)
            return nn.functional.one_hot(idx, self.context_dim).to(DTYPE)
        mean, log_std = out
        eps = torch.randn(mean.shape, dtype=DTYPE, generator=gen)
        return mean + log_std.exp() * eps


def task_logprob(post: TaskPosterior, x: torch.Tensor, c: torch.Tensor, horizon: int | None = None) -> torch.Tensor:
    if horizon is not None and x.shape[1] != horizon + 1:
        raise ContractError(f"trajectory has {x.shape[1]} steps, expected {horizon + 1}")
    return post.log_prob(x, c)


class OptionPosterior(nn.Module):
    """Causal GRU: P_omega(Z_t | X_t, Z_{t-1}, C, h_{t-1}) with h carrying X_{0:t-1}, Z_{0:t-2}."""

    def __init__(self, x_dim: int, num_options: int, context_dim: int, hidden: int = 64,
                 generator: torch.Generator | None = None, zero_head: bool = False):
        super().__init__()
        self.num_options, self.context_dim, self.hidden = num_options, context_dim, hidden
        self.cell = GRUCell(x_dim + num_options, hidden, generator)
        self.head = Linear(x_dim + num_options + context_dim + hidden, num_options, generator, zero=zero_head)

    def _onehot(self, z: torch.Tensor) -> torch.Tensor:
        return nn.functional.one_hot(z, self.num_options).to(DTYPE)

    def _logits(self, x_t, z_prev_oh, c, h):
        return self.head(torch.cat([x_t, z_prev_oh, c.to(DTYPE), h], dim=-1))

    def log_probs(self, x: torch.Tensor, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """log P_omega(Z_t | ...) for t = 1..T, shape (B, T)."""
        B, L, _ = x.shape
        if z.shape != (B, L):
            raise ContractError(f"options shape {tuple(z.shape)} != {(B, L)}")
        # GRU inputs [X_t, onehot Z_{t-1}] with Z_{-1} = zeros
        zprev = torch.zeros(B, L, self.num_options, dtype=DTYPE)
        zprev[:, 1:] = self._onehot(z[:, :-1])
        # h_{t-1} for t = 1..T
        h = self.cell.run(torch.cat([x, zprev], dim=-1)[:, :-1], torch.zeros(B, self.hidden, dtype=DTYPE))
        ctx = c.to(DTYPE).unsqueeze(1).expand(B, L - 1, c.shape[-1])
        logits = self.head(torch.cat([x[:, 1:], zprev[:, 1:], ctx, h], dim=-1))
        return logprob_categorical(logits, z[:, 1:])

    @torch.no_grad()
    def sample(self, x: torch.Tensor, c: torch.Tensor, gen: torch.Generator | None = None) -> torch.Tensor:
        """Draw Z_{0:T} step by step; Z_0 is the dummy option."""
        B, L, _ = x.shape
        z = torch.full((B, L), DUMMY_OPTION, dtype=torch.long)
        h = self.cell(torch.cat([x[:, 0], torch.zeros(B, self.num_options, dtype=DTYPE)], dim=-1),
                      torch.zeros(B, self.hidden, dtype=DTYPE))
        for t in range(1, L):
            zp = self._onehot(z[:, t - 1])
            probs = log_softmax(self._logits(x[:, t], zp, c, h)).exp()
            z[:, t] = torch.multinomial(probs, 1, generator=gen).squeeze(-1)
            h = self.cell(torch.cat([x[:, t], zp], dim=-1), h)
        return z


def option_logprob_seq(post: OptionPosterior, x: torch.Tensor, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    return post.log_probs(x, z, c)


def posterior_losses(task_post: TaskPosterior | None, opt_post: OptionPosterior,
                     x: torch.Tensor, batch: TrajBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Monte-Carlo negative log-likelihoods: -mean log P_psi and -mean sum_t log P_omega."""
    if batch.size == 0:
        raise ContractError("empty batch")
    task_nll = torch.zeros((), dtype=DTYPE)
    if task_post is not None:
        task_nll = -task_post.log_prob(x, batch.contexts).mean()
    opt_nll = -opt_post.log_probs(x, batch.options, batch.contexts).sum(dim=-1).mean()
    return task_nll, opt_nll


def posterior_params(task_post: TaskPosterior | None, opt_post: OptionPosterior) -> ParamSet:
    items = [] if task_post is None else [(f"psi.{n}", p) for n, p in task_post.named_parameters()]
    items += [(f"omega.{n}", p) for n, p in opt_post.named_parameters()]
    return ParamSet(items)


def posterior_grads(task_post, opt_post, x, batch) -> tuple["OrderedDict[str, torch.Tensor]", float, float]:
    """Ascent direction of both log-likelihoods, expressed as gradients of the summed NLL.

    The two likelihoods have disjoint parameters, so one backward pass yields
    both updates independently.
    """
    task_nll, opt_nll = posterior_losses(task_post, opt_post, x, batch)
    grads = reverse_grad(task_nll + opt_nll, posterior_params(task_post, opt_post))
    return grads, float(task_nll.detach()), float(opt_nll.detach())


def fit_posteriors(task_post: TaskPosterior | None, opt_post: OptionPosterior, x: torch.Tensor,
                   batch: TrajBatch, steps: int, optimizer: torch.optim.Optimizer) -> tuple[float, float]:
    """Full-batch likelihood ascent for ``steps`` iterations; returns the last (task, option) NLLs."""
    if batch.size == 0:
        raise ContractError("empty batch")
    params = posterior_params(task_post, opt_post)
    task_nll = opt_nll = float("nan")
    for _ in range(steps):
        grads, task_nll, opt_nll = posterior_grads(task_post, opt_post, x, batch)
        for name, g in grads.items():
            params[name].grad = g
        optimizer.step()
    return task_nll, opt_nll

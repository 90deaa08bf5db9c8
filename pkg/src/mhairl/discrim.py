"""Discriminators on the extended (state, option) x (next option, action) space."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
from torch import nn
from torch.nn.functional import logsigmoid, one_hot

from .diffcore import DTYPE, MLP, ContractError, ParamSet
from .policy import Featurizer, TrajBatch

AIRL_RAW = "airl_raw"
AIRL_STATE_ONLY = "airl_state_only"
GAIL = "gail"
MODES = (AIRL_RAW, AIRL_STATE_ONLY, GAIL)
GAIL_EPS = 1e-8


@dataclass
class ExtendedPairs:
    """P flattened pairs ((S_t, Z_t), (Z_{t+1}, A_t)) with successor (S_{t+1}, Z_{t+1})."""

    feat: torch.Tensor       # (P, F) features of S_t under C
    z: torch.Tensor          # (P,)
    z_next: torch.Tensor     # (P,)
    a: torch.Tensor          # (P,)
    feat_next: torch.Tensor | None = None
    policy_logprob: torch.Tensor | None = None  # log pi_theta(Z_{t+1}|.) + log pi_phi(A_t|.)
    weight: torch.Tensor | None = None

    def __len__(self):
        return self.z.shape[0]

    def select(self, idx) -> "ExtendedPairs":
        return ExtendedPairs(**{f.name: None if getattr(self, f.name) is None else getattr(self, f.name)[idx]
                                for f in fields(self)})


def pairs_from_batch(batch: TrajBatch, featurizer: Featurizer, policy_logprob: torch.Tensor | None = None,
                     feature_contexts: torch.Tensor | None = None) -> ExtendedPairs:
    """Flatten all valid steps of a batch. Index order is (trajectory, step)."""
    fctx = batch.contexts if feature_contexts is None else feature_contexts
    feats = featurizer(batch.cells, fctx)           # (B, T+1, F)
    keep = batch.mask.reshape(-1) > 0
    flat = lambda v: v.reshape(-1, *v.shape[2:])[keep]
    lp = None if policy_logprob is None else flat(policy_logprob)
    return ExtendedPairs(flat(feats[:, :-1]), flat(batch.options[:, :-1]), flat(batch.options[:, 1:]),
                         flat(batch.actions), flat(feats[:, 1:]), lp)


class Discriminator(nn.Module):
    def __init__(self, feat_dim: int, num_options: int, n_actions: int, mode: str = AIRL_STATE_ONLY,
                 gamma: float = 0.99, hidden=(64, 64), generator: torch.Generator | None = None):
        super().__init__()
        if mode not in MODES:
            raise ContractError(f"unknown discriminator mode {mode!r}")
        self.mode, self.gamma = mode, gamma
        self.num_options, self.n_actions = num_options, n_actions
        if mode == AIRL_STATE_ONLY:
            self.g = MLP(feat_dim + num_options, hidden, 1, generator)
            self.h = MLP(feat_dim + num_options, hidden, 1, generator)
        else:
            self.net = MLP(feat_dim + 2 * num_options + n_actions, hidden, 1, generator)

    def params(self) -> ParamSet:
        return ParamSet(self)

    def _oh(self, z):
        return one_hot(z, self.num_options).to(DTYPE)

    def _full_input(self, p: ExtendedPairs) -> torch.Tensor:
        return torch.cat([p.feat, self._oh(p.z), self._oh(p.z_next), one_hot(p.a, self.n_actions).to(DTYPE)], dim=-1)

    def f_value(self, p: ExtendedPairs) -> torch.Tensor:
        if self.mode == GAIL:
            raise ContractError("f is undefined for the GAIL classifier")
        if self.mode == AIRL_RAW:
            return self.net(self._full_input(p)).squeeze(-1)
        if p.feat_next is None:
            raise ContractError("state-only mode needs the successor pair")
        g = self.g(torch.cat([p.feat, self._oh(p.z)], dim=-1)).squeeze(-1)
        h_now = self.h(torch.cat([p.feat, self._oh(p.z)], dim=-1)).squeeze(-1)
        h_next = self.h(torch.cat([p.feat_next, self._oh(p.z_next)], dim=-1)).squeeze(-1)
        return g + self.gamma * h_next - h_now

    def gail_logit(self, p: ExtendedPairs) -> torch.Tensor:
        """Logit of the classifier's probability that a pair was generated."""
        if self.mode != GAIL:
            raise ContractError("not a GAIL discriminator")
        return self.net(self._full_input(p)).squeeze(-1)


def _policy_lp(p: ExtendedPairs) -> torch.Tensor:
    if p.policy_logprob is None:
        raise ContractError("pairs need policy log-probabilities")
    return p.policy_logprob.detach()


def d_logit(d: Discriminator, p: ExtendedPairs) -> torch.Tensor:
    """f - log pi for AIRL modes, so that D = logistic(result)."""
    return d.f_value(p) - _policy_lp(p)


def d_prob(d: Discriminator, p: ExtendedPairs) -> torch.Tensor:
    if d.mode == GAIL:
        return torch.sigmoid(d.gail_logit(p)).clamp(GAIL_EPS, 1.0 - GAIL_EPS)
    return torch.sigmoid(d_logit(d, p))


def airl_reward(d: Discriminator, p: ExtendedPairs) -> torch.Tensor:
    """log D - log(1 - D), computed directly as f - log pi."""
    if d.mode == GAIL:
        raise ContractError("AIRL reward needs an AIRL discriminator")
    return d_logit(d, p)


def gail_reward(d: Discriminator, p: ExtendedPairs) -> torch.Tensor:
    """-log D with D the (clamped) probability of 'generated'."""
    return -torch.log(d_prob(d, p))


def il_reward(d: Discriminator, p: ExtendedPairs) -> torch.Tensor:
    with torch.no_grad():
        return gail_reward(d, p) if d.mode == GAIL else airl_reward(d, p)


def _side_mean(values: torch.Tensor, weight: torch.Tensor | None) -> torch.Tensor:
    if weight is None:
        return values.mean()
    return (weight * values).sum() / weight.sum()


def disc_loss(d: Discriminator, expert: ExtendedPairs, gen: ExtendedPairs) -> torch.Tensor:
    """Binary cross-entropy: mean over expert pairs plus mean over generated pairs.

    AIRL labels expert pairs 1 (D = logistic(f - log pi)); GAIL's classifier
    labels generated pairs 1. Policy log-probs enter as constants.
    """
    if len(expert) == 0 or len(gen) == 0:
        raise ContractError("both batches must be nonempty")
    if d.mode == GAIL:
        pe = d_prob(d, expert)
        pg = d_prob(d, gen)
        return _side_mean(-torch.log1p(-pe), expert.weight) + _side_mean(-torch.log(pg), gen.weight)
    le, lg = d_logit(d, expert), d_logit(d, gen)
    return _side_mean(-logsigmoid(le), expert.weight) + _side_mean(-logsigmoid(-lg), gen.weight)


def train_discriminator(d: Discriminator, expert: ExtendedPairs, gen: ExtendedPairs,
                        optimizer: torch.optim.Optimizer, passes: int = 1, minibatch: int | None = None,
                        gen_rng: torch.Generator | None = None) -> float:
    """``passes`` sweeps over the generated pairs in minibatches, each paired with a random expert minibatch."""
    last = float("nan")
    n = len(gen)
    mb = n if minibatch is None else min(minibatch, n)
    for _ in range(passes):
        order = torch.randperm(n, generator=gen_rng)
        for start in range(0, n, mb):
            gi = order[start:start + mb]
            ei = torch.randint(len(expert), (len(gi),), generator=gen_rng)
            optimizer.zero_grad()
            loss = disc_loss(d, expert.select(ei), gen.select(gi))
            loss.backward()
            optimizer.step()
            last = float(loss.detach())
    return last

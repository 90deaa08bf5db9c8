"""Exact enumeration over every (C, Z_{0:T}, X_{0:T}) of a small deterministic family.

Everything here is brute force: probabilities come from the policy factors
of each enumerated path, information quantities from their definitions,
posteriors from Bayes' rule. Used only as ground truth in tests and checks.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch

from . import env as envlib
from .diffcore import DTYPE, ContractError, logprob_categorical, reverse_grad
from .discrim import ExtendedPairs
from .objective import ObjectiveWeights
from .policy import Featurizer, HierPolicy, TrajBatch, step_logprobs

BUDGET = 10**6


@dataclass
class JointTable:
    """K enumerated paths; ``batch`` holds them as trajectories with their log-probs."""

    spec: envlib.TaskSpec
    batch: TrajBatch
    context_index: np.ndarray   # (K,)
    log_prior: torch.Tensor     # (K,)
    logp: torch.Tensor          # (K,) exact log-probability of each path
    num_options: int

    @property
    def prob(self) -> torch.Tensor:
        return self.logp.exp()

    def __len__(self):
        return self.batch.size


def path_count(spec: envlib.TaskSpec, num_options: int) -> int:
    n_ctx = sum(1 for p in (spec.prior or ()) if p > 0)
    return n_ctx * num_options ** spec.horizon * spec.n_actions ** spec.horizon


def enumerate_joint(spec: envlib.TaskSpec, policy: HierPolicy, featurizer: Featurizer | None = None,
                    budget: int = BUDGET) -> JointTable:
    if spec.context_kind != "discrete" or spec.terminate_on_goal:
        raise ContractError(f"{spec.name} is not enumerable (needs discrete contexts and a fixed horizon)")
    count = path_count(spec, policy.num_options)
    if count > budget:
        raise ContractError(f"enumeration of {count} paths exceeds the budget of {budget}")
    featurizer = featurizer or Featurizer(spec)
    T = spec.horizon
    ctx_ids = [i for i, p in enumerate(spec.prior) if p > 0]
    zs = np.array(list(itertools.product(range(policy.num_options), repeat=T)), dtype=np.int64).reshape(-1, T)
    acts = np.array(list(itertools.product(range(spec.n_actions), repeat=T)), dtype=np.int64).reshape(-1, T)
    ci = np.repeat(ctx_ids, len(zs) * len(acts))
    zi = np.tile(np.repeat(np.arange(len(zs)), len(acts)), len(ctx_ids))
    ai = np.tile(np.arange(len(acts)), len(ctx_ids) * len(zs))
    K = len(ci)
    options = np.zeros((K, T + 1), dtype=np.int64)
    options[:, 1:] = zs[zi]
    actions = acts[ai]
    cells = np.empty((K, T + 1), dtype=np.int64)
    cells[:, 0] = spec.start_cell
    for t in range(T):
        cells[:, t + 1] = spec.next_cell[cells[:, t], actions[:, t]]
    contexts = np.eye(spec.context_dim)[ci]
    goals = spec.goals_of(contexts)
    rewards = (cells[:, 1:] == goals[:, None]).astype(np.float64)
    ctx_t = torch.as_tensor(contexts, dtype=DTYPE)
    cells_t = torch.as_tensor(cells)
    batch = TrajBatch(cells_t, torch.as_tensor(actions), torch.as_tensor(options), ctx_t,
                      torch.ones(K, T, dtype=DTYPE), torch.as_tensor(rewards),
                      envlib.observations(spec, cells_t, ctx_t))
    log_prior = torch.log(torch.as_tensor(np.asarray(spec.prior)[ci], dtype=DTYPE))
    with torch.no_grad():
        lh, ll = step_logprobs(policy, batch, featurizer)
    batch.logp_high, batch.logp_low = lh, ll
    logp = log_prior + lh.sum(-1) + ll.sum(-1)
    keep = torch.isfinite(logp) & (logp.exp() > 0)
    if not bool(keep.all()):
        idx = torch.nonzero(keep).squeeze(-1)
        batch = batch.select(idx)
        ci, log_prior, logp = ci[idx.numpy()], log_prior[idx], logp[idx]
    return JointTable(spec, batch, ci, log_prior, logp, policy.num_options)


def path_logprob(policy: HierPolicy, table: JointTable, featurizer: Featurizer | None = None) -> torch.Tensor:
    """Differentiable log-probability of every enumerated path under ``policy``."""
    lh, ll = step_logprobs(policy, table.batch, featurizer or Featurizer(table.spec))
    return table.log_prior + lh.sum(-1) + ll.sum(-1)


# --- grouping helpers ------------------------------------------------------------

def _group(*cols: np.ndarray) -> np.ndarray:
    """Integer group id for each row of the horizontally stacked integer columns."""
    mats = [np.asarray(c).reshape(len(c), -1) for c in cols]
    stacked = np.concatenate(mats, axis=1)
    if stacked.shape[1] == 0:
        return np.zeros(len(stacked), dtype=np.int64)
    return np.unique(stacked, axis=0, return_inverse=True)[1].reshape(-1)


def _entropy(prob: np.ndarray, groups: np.ndarray) -> float:
    mass = np.bincount(groups, weights=prob)
    mass = mass[mass > 0]
    return float(-(mass * np.log(mass)).sum())


def _np(table: JointTable):
    """(probabilities, context ids, observed state ids, actions, options) as arrays.

    When observations carry the context, the observed state is the (cell,
    context) pair, so X reveals C exactly as the observation vectors do.
    """
    b = table.batch
    cells = b.cells.numpy()
    if table.spec.context_in_obs:
        cells = cells * table.spec.context_dim + table.context_index[:, None]
    return (table.prob.detach().numpy(), table.context_index, cells, b.actions.numpy(), b.options.numpy())


def exact_mutual_info(table: JointTable) -> float:
    """I(X_{0:T}; C) by direct summation."""
    p, c, cells, acts, _ = _np(table)
    x = _group(cells, acts)
    return _entropy(p, c) + _entropy(p, x) - _entropy(p, _group(c, x))


def exact_directed_info(table: JointTable) -> float:
    """sum_t [H(Z_t | Z_{0:t-1}, C) - H(Z_t | X_{0:t}, Z_{0:t-1}, C)]."""
    p, c, cells, acts, opts = _np(table)
    total = 0.0
    for t in range(1, opts.shape[1]):
        g_prior = _group(c, opts[:, :t])
        g_post = _group(c, opts[:, :t], cells[:, : t + 1], acts[:, :t])
        zt = opts[:, t]
        h_prior = _entropy(p, _group(g_prior, zt)) - _entropy(p, g_prior)
        h_post = _entropy(p, _group(g_post, zt)) - _entropy(p, g_post)
        total += h_prior - h_post
    return total


@dataclass
class ExactPosteriors:
    task: np.ndarray     # (K, |C|) P(C | X) at each path's trajectory
    option: np.ndarray   # (K, T, N) P(Z_t = n | X_{0:t}, Z_{0:t-1}, C) at each path's history

    def task_logprob(self, table: JointTable) -> torch.Tensor:
        return torch.as_tensor(np.log(self.task[np.arange(len(table)), table.context_index]), dtype=DTYPE)

    def option_logprob(self, table: JointTable) -> torch.Tensor:
        z = table.batch.options[:, 1:].numpy()
        K, T = z.shape
        vals = self.option[np.arange(K)[:, None], np.arange(T)[None, :], z]
        return torch.as_tensor(np.log(vals), dtype=DTYPE)


def exact_posteriors(table: JointTable) -> ExactPosteriors:
    p, c, cells, acts, opts = _np(table)
    K, T = acts.shape
    n_ctx = table.spec.context_dim
    x = _group(cells, acts)
    mass = np.zeros((x.max() + 1, n_ctx))
    np.add.at(mass, (x, c), p)
    task = mass[x] / mass[x].sum(axis=1, keepdims=True)
    N = table.num_options
    option = np.zeros((K, T, N))
    for t in range(1, T + 1):
        g = _group(c, opts[:, :t], cells[:, : t + 1], acts[:, :t])
        m = np.zeros((g.max() + 1, N))
        np.add.at(m, (g, opts[:, t]), p)
        option[:, t - 1] = m[g] / m[g].sum(axis=1, keepdims=True)
    return ExactPosteriors(task, option)


# --- exact objectives and gradients ----------------------------------------------------

def exact_objective(policy: HierPolicy, table: JointTable, log_ppsi: torch.Tensor, log_pw: torch.Tensor,
                    r_il: torch.Tensor, w: ObjectiveWeights, featurizer: Featurizer | None = None,
                    context_entropy: float = 0.0) -> torch.Tensor:
    """L = a1 L^MI + a2 L^DI + a3 L^IL as an exact, differentiable sum over paths.

    Posterior terms and R_IL are fixed inputs; pi_theta inside L^DI stays live.
    """
    featurizer = featurizer or Featurizer(table.spec)
    lh, ll = step_logprobs(policy, table.batch, featurizer)
    p = torch.exp(table.log_prior + lh.sum(-1) + ll.sum(-1))
    integrand = (w.alpha_mi * (context_entropy + log_ppsi.detach())
                 + w.alpha_di * (log_pw.detach() - lh).sum(-1)
                 + w.alpha_il * r_il.detach().sum(-1))
    return (p * integrand).sum()


def exact_gradient(policy: HierPolicy, table: JointTable, log_ppsi, log_pw, r_il, w: ObjectiveWeights,
                   featurizer: Featurizer | None = None) -> tuple["OrderedDict[str, torch.Tensor]", "OrderedDict[str, torch.Tensor]"]:
    """(grad_theta, grad_phi) of the exact objective."""
    L = exact_objective(policy, table, log_ppsi, log_pw, r_il, w, featurizer)
    grads = reverse_grad(L, policy.params())
    theta = OrderedDict((n, g) for n, g in grads.items() if n.startswith(HierPolicy.HIGH_PREFIXES))
    phi = OrderedDict((n, g) for n, g in grads.items() if n.startswith(HierPolicy.LOW_PREFIXES))
    return theta, phi


# --- discriminator optimum ------------------------------------------------------------

@dataclass
class DiscOptimum:
    pairs: ExtendedPairs       # unique extended pairs (learner log-probs attached)
    occ_expert: torch.Tensor   # normalized occupancies
    occ_policy: torch.Tensor
    d_star: torch.Tensor
    contexts: torch.Tensor     # (P, d_C)


def _pair_occupancy(table: JointTable):
    b = table.batch
    K, T = b.actions.shape
    p = table.prob.detach().numpy()
    cols = np.stack([np.repeat(table.context_index, T), b.cells[:, :-1].reshape(-1).numpy(),
                     b.options[:, :-1].reshape(-1).numpy(), b.options[:, 1:].reshape(-1).numpy(),
                     b.actions.reshape(-1).numpy(), b.cells[:, 1:].reshape(-1).numpy()], axis=1)
    w = np.repeat(p, T) / T
    return cols, w


def exact_disc_optimum(spec: envlib.TaskSpec, policy: HierPolicy, expert: HierPolicy,
                       featurizer: Featurizer | None = None) -> DiscOptimum:
    """D* = occ_E / (occ_E + occ_pi) on every extended pair (C, S, Z, Z', A) visited by either policy."""
    featurizer = featurizer or Featurizer(spec)
    cols_e, w_e = _pair_occupancy(enumerate_joint(spec, expert, featurizer))
    cols_p, w_p = _pair_occupancy(enumerate_joint(spec, policy, featurizer))
    uniq, inv = np.unique(np.concatenate([cols_e, cols_p]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    occ_e = np.bincount(inv[: len(cols_e)], weights=w_e, minlength=len(uniq))
    occ_p = np.bincount(inv[len(cols_e):], weights=w_p, minlength=len(uniq))
    ctx = torch.as_tensor(np.eye(spec.context_dim)[uniq[:, 0]], dtype=DTYPE)
    cells, z, z_next, a, cells_next = (torch.as_tensor(uniq[:, i]) for i in range(1, 6))
    feat = featurizer(cells, ctx)
    with torch.no_grad():
        lp = (logprob_categorical(policy.high_logits(feat, z), z_next)
              + logprob_categorical(policy.low_logits(feat, z_next), a))
    pairs = ExtendedPairs(feat, z, z_next, a, featurizer(cells_next, ctx), lp)
    occ_e_t, occ_p_t = torch.as_tensor(occ_e, dtype=DTYPE), torch.as_tensor(occ_p, dtype=DTYPE)
    return DiscOptimum(pairs, occ_e_t, occ_p_t, occ_e_t / (occ_e_t + occ_p_t), ctx)

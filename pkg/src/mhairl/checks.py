"""Numerical verification suite: gradient checks and oracle comparisons on TinyChain.

Each check returns a :class:`CheckResult`; ``run_suite`` runs a selection and
``format_table`` renders the pass/fail table printed by ``oracle-check``.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import env as envlib
from . import oracle
from .diffcore import (DTYPE, MLP, GRUCell, Linear, MultiHeadAttention, entropy_categorical,
                       gru_step, log_softmax, logprob_categorical, logprob_gaussian, mha_forward)
from .discrim import (AIRL_RAW, AIRL_STATE_ONLY, GAIL, Discriminator, ExtendedPairs, d_prob, disc_loss, il_reward,
                      pairs_from_batch)
from .hppo import Baselines, clipped_surrogate
from .objective import ObjectiveWeights, assemble_returns
from .policy import Featurizer, HierPolicy, PolicyConfig, TrajBatch, rollout, step_logprobs
from .posterior import OptionPosterior, TaskPosterior, fit_posteriors, posterior_inputs

FAULTS = ("mi_bound", "di_bound", "gradient", "posterior_grad", "disc")


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


def format_table(results: Sequence[CheckResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  result  {'value':>12}  {'threshold':>10}  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{w}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:>12.4g}  "
                     f"{r.threshold:>10.3g}  {r.seconds:5.1f}s  {r.detail}")
    return "\n".join(lines)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --- gradient checks ---------------------------------------------------------------

GC_STEP = 1e-4
GC_TOL = 1e-5


def directional_error(fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor],
                      gen: torch.Generator, h: float = GC_STEP) -> float:
    """Worst relative error between autograd and a five-point central difference, one random direction per tensor."""
    for t in tensors:
        t.requires_grad_(True)
    grads = torch.autograd.grad(fn(), list(tensors), allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            v = torch.randn(t.shape, dtype=DTYPE, generator=gen)
            analytic = 0.0 if g is None else float((g * v).sum())
            base = t.detach().clone()
            vals = []
            for k in (2, 1, -1, -2):
                t.copy_(base + k * h * v)
                vals.append(float(fn()))
            t.copy_(base)
            numeric = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            denom = max(abs(analytic), abs(numeric), 1e-10)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def _rand(gen, *shape, scale=1.0):
    return scale * torch.randn(*shape, dtype=DTYPE, generator=gen)


def _proj(out, gen):
    r = _rand(gen, *out.shape)
    return (out * r).sum()


def _gc_cases() -> "OrderedDict[str, Callable[[torch.Generator], tuple]]":
    """name -> builder(gen) returning (scalar function, tensors to perturb)."""
    cases: "OrderedDict[str, Callable]" = OrderedDict()

    def linear(g):
        m, x = Linear(5, 3, g), _rand(g, 4, 5)
        m.bias.data = _rand(g, 3)
        r = _rand(g, 4, 3)
        return (lambda: (m(x) * r).sum()), [m.weight, m.bias, x]

    def mlp(g):
        m, x = MLP(4, (6, 5), 3, g), _rand(g, 7, 4)
        r = _rand(g, 7, 3)
        return (lambda: (m(x) * r).sum()), [*m.parameters(), x]

    def attention(g):
        mha, q, K, V = MultiHeadAttention(4, 6, 2, g), _rand(g, 5, 4), _rand(g, 3, 4), _rand(g, 3, 6)
        r = _rand(g, 5, 6)
        w = {"Wq": mha.Wq, "Wk": mha.Wk, "Wv": mha.Wv, "Wo": mha.Wo}
        return (lambda: (mha_forward(q, K, V, 2, w) * r).sum()), [*w.values(), q, K, V]

    def gru(g):
        cell, x, h = GRUCell(3, 4, g), _rand(g, 2, 3), _rand(g, 2, 4, scale=0.5)
        for b in (cell.bz, cell.br, cell.bh):
            b.data = _rand(g, 4, scale=0.3)
        r = _rand(g, 2, 4)
        return (lambda: (gru_step(x, h, cell.weights()) * r).sum()), [*cell.weights().values(), x, h]

    def gru_sequence(g):
        cell, x = GRUCell(3, 4, g), _rand(g, 2, 5, 3)
        h0 = torch.zeros(2, 4, dtype=DTYPE)
        r = _rand(g, 2, 5, 4)
        return (lambda: (cell.run(x, h0, reverse=True) * r).sum()), [*cell.parameters(), x]

    def logsoftmax(g):
        x, r = _rand(g, 3, 5, scale=2.0), _rand(g, 3, 5)
        return (lambda: (log_softmax(x) * r).sum()), [x]

    def categorical(g):
        x, idx, r = _rand(g, 6, 4, scale=2.0), torch.randint(4, (6,), generator=g), _rand(g, 6)
        return (lambda: (logprob_categorical(x, idx) * r).sum()), [x]

    def gaussian(g):
        m, s, x, r = _rand(g, 4, 3), _rand(g, 4, 3, scale=0.5), _rand(g, 4, 3), _rand(g, 4)
        return (lambda: (logprob_gaussian(m, s, x) * r).sum()), [m, s, x]

    def entropy(g):
        x, r = _rand(g, 4, 5, scale=2.0), _rand(g, 4)
        return (lambda: (entropy_categorical(x) * r).sum()), [x]

    def _policy(g):
        return HierPolicy(6, 3, PolicyConfig(3, 4, (5,), 2, zero_heads=False), g)

    def _frozen_embed(p):
        # the option embedding feeding query/low inputs is a constant copy of W_C
        frozen = p.W_C.detach().clone()
        p.embed = lambda z: frozen[z]
        return p

    def policy_high(g):
        p = _frozen_embed(_policy(g))
        feat, z = _rand(g, 5, 6), torch.randint(3, (5,), generator=g)
        r = _rand(g, 5, 3)
        return (lambda: (p.high_logits(feat, z) * r).sum()), [*p.high_params().values(), feat]

    def policy_low(g):
        p = _frozen_embed(_policy(g))
        feat, z = _rand(g, 5, 6), torch.randint(3, (5,), generator=g)
        r = _rand(g, 5, 3)
        return (lambda: (p.low_logits(feat, z) * r).sum()), [*p.low_params().values(), feat]

    def task_posterior(kind):
        def build(g):
            post = TaskPosterior(5, 2, kind, 4, g)
            x = _rand(g, 3, 4, 5)
            if kind == "discrete":
                c = torch.nn.functional.one_hot(torch.randint(2, (3,), generator=g), 2).to(DTYPE)
            else:
                c = _rand(g, 3, 2)
            r = _rand(g, 3)
            return (lambda: (post.log_prob(x, c) * r).sum()), [*post.parameters(), x]
        return build

    def option_posterior(g):
        post = OptionPosterior(5, 3, 2, 4, g)
        x, c = _rand(g, 3, 4, 5), _rand(g, 3, 2)
        z = torch.randint(3, (3, 4), generator=g)
        z[:, 0] = 0
        r = _rand(g, 3, 3)
        return (lambda: (post.log_probs(x, z, c) * r).sum()), [*post.parameters(), x, c]

    def discriminator(mode):
        def build(g):
            d = Discriminator(4, 3, 2, mode, 0.9, (5,), g)
            n = 6
            pairs = ExtendedPairs(_rand(g, n, 4), torch.randint(3, (n,), generator=g),
                                  torch.randint(3, (n,), generator=g), torch.randint(2, (n,), generator=g),
                                  _rand(g, n, 4), _rand(g, n))
            r = _rand(g, n)
            out = d.gail_logit if mode == GAIL else d.f_value
            inputs = [pairs.feat, pairs.feat_next] if mode == AIRL_STATE_ONLY else [pairs.feat]
            return (lambda: (out(pairs) * r).sum()), [*d.parameters(), *inputs]
        return build

    def disc_loss_case(mode):
        def build(g):
            d = Discriminator(4, 3, 2, mode, 0.9, (5,), g)

            def pairs(n):
                return ExtendedPairs(_rand(g, n, 4), torch.randint(3, (n,), generator=g),
                                     torch.randint(3, (n,), generator=g), torch.randint(2, (n,), generator=g),
                                     _rand(g, n, 4), _rand(g, n), torch.rand(n, dtype=DTYPE, generator=g) + 0.1)
            e, q = pairs(5), pairs(7)
            return (lambda: disc_loss(d, e, q)), list(d.parameters())
        return build

    def baselines(g):
        b = Baselines(4, 3, (5,), g, zero_last=False)
        feat, zp, z = _rand(g, 6, 4), torch.randint(3, (6,), generator=g), torch.randint(3, (6,), generator=g)
        r1, r2 = _rand(g, 6), _rand(g, 6)
        return (lambda: ((lambda bh, bl: (bh * r1 + bl * r2).sum())(*b(feat, zp, z)))), [*b.parameters(), feat]

    cases.update({
        "linear": linear, "mlp": mlp, "attention": attention, "gru_step": gru, "gru_sequence": gru_sequence,
        "log_softmax": logsoftmax, "logprob_categorical": categorical, "logprob_gaussian": gaussian,
        "entropy_categorical": entropy, "policy_high": policy_high, "policy_low": policy_low,
        "task_posterior_discrete": task_posterior("discrete"),
        "task_posterior_continuous": task_posterior("continuous"), "option_posterior": option_posterior,
        "disc_airl_raw": discriminator(AIRL_RAW), "disc_airl_state_only": discriminator(AIRL_STATE_ONLY),
        "disc_gail": discriminator(GAIL), "disc_loss_airl": disc_loss_case(AIRL_STATE_ONLY),
        "disc_loss_gail": disc_loss_case(GAIL), "baselines": baselines,
    })
    return cases


@_timed
def check_gradients(points: int = 100, seed: int = 0, fault: str | None = None) -> CheckResult:
    """Every primitive and network against central differences at ``points`` random points."""
    worst: dict[str, float] = {}
    for name, build in _gc_cases().items():
        g = torch.Generator().manual_seed(seed)
        err = 0.0
        for _ in range(points):
            fn, tensors = build(g)
            if fault == "gradient" and name == "linear":
                base = fn
                fn = lambda base=base, t=tensors[0]: base() + 1e-3 * (t.detach() ** 2).sum()
            err = max(err, directional_error(fn, tensors, g))
        worst[name] = err
    value = max(worst.values())
    bad = [k for k, v in worst.items() if v >= GC_TOL]
    detail = f"{len(worst)} objects x {points} points" + (f"; failing: {', '.join(bad)}" if bad else "")
    return CheckResult("gradcheck", value < GC_TOL, value, GC_TOL, detail, extra={"per_object": worst})


# --- TinyChain fixtures --------------------------------------------------------------

def tiny_policy(spec: envlib.TaskSpec, gen: torch.Generator, num_options: int = 2, scale: float = 1.0,
                embed_dim: int = 4, hidden=(8,), heads: int = 2) -> HierPolicy:
    """A random policy with nonzero heads; ``scale`` stretches every parameter."""
    f = Featurizer(spec)
    p = HierPolicy(f.dim, spec.n_actions, PolicyConfig(num_options, embed_dim, hidden, heads, zero_heads=False), gen)
    with torch.no_grad():
        for t in p.parameters():
            t.mul_(scale)
    return p


def random_posteriors(spec: envlib.TaskSpec, num_options: int, gen: torch.Generator, hidden: int = 6):
    x_dim = spec.n_actions + spec.obs_dim
    task = TaskPosterior(x_dim, spec.context_dim, spec.context_kind, hidden, gen)
    opt = OptionPosterior(x_dim, num_options, spec.context_dim, hidden, gen)
    with torch.no_grad():
        for m in (task.head, opt.head):
            m.bias.copy_(torch.randn(m.bias.shape, dtype=DTYPE, generator=gen))
    return task, opt


def posterior_terms(spec, table_batch: TrajBatch, task: TaskPosterior, opt: OptionPosterior):
    x = posterior_inputs(table_batch, spec.n_actions)
    with torch.no_grad():
        return task.log_prob(x, table_batch.contexts), opt.log_probs(x, table_batch.options, table_batch.contexts)


# --- lower-bound inequalities --------------------------------------------------------

BOUND_SLACK = -1e-9
EQUALITY_TOL = 1e-9


@_timed
def check_bounds(draws: int = 100, seed: int = 0, fault: str | None = None) -> CheckResult:
    """Exact-expectation L^MI <= I(X;C) and L^DI <= I(X->Z|C) over random draws; equality with exact posteriors."""
    min_mi = min_di = float("inf")
    max_eq = 0.0
    for ctx_in_obs in (True, False):
        spec = envlib.tinychain(context_in_obs=ctx_in_obs)
        h_c = envlib.context_entropy(spec)
        g = torch.Generator().manual_seed(seed + int(ctx_in_obs))
        for _ in range(draws):
            policy = tiny_policy(spec, g, scale=float(torch.empty(()).uniform_(0.5, 3.0, generator=g)))
            table = oracle.enumerate_joint(spec, policy)
            task, opt = random_posteriors(spec, policy.num_options, g)
            log_ppsi, log_pw = posterior_terms(spec, table.batch, task, opt)
            p = table.prob
            l_mi = float((p * (h_c + log_ppsi)).sum())
            l_di = float((p * (log_pw - table.batch.logp_high).sum(-1)).sum())
            if fault == "mi_bound":
                l_mi += 1.0
            if fault == "di_bound":
                l_di += 1.0
            mi, di = oracle.exact_mutual_info(table), oracle.exact_directed_info(table)
            min_mi, min_di = min(min_mi, mi - l_mi), min(min_di, di - l_di)
            exact = oracle.exact_posteriors(table)
            l_mi_exact = float((p * (h_c + exact.task_logprob(table))).sum())
            max_eq = max(max_eq, abs(l_mi_exact - mi))
    ok = min_mi >= BOUND_SLACK and min_di >= BOUND_SLACK and max_eq <= EQUALITY_TOL
    detail = (f"min slack MI {min_mi:.3g}, DI {min_di:.3g}; |L^MI(exact post) - I| max {max_eq:.2g}; "
              f"{2 * draws} draws")
    return CheckResult("lower_bounds", ok, min(min_mi, min_di), BOUND_SLACK, detail,
                       extra={"min_slack_mi": min_mi, "min_slack_di": min_di, "max_equality_error": max_eq})


# --- unbiasedness ----------------------------------------------------------------------

CHANNELS = OrderedDict([("mi", (1.0, 0.0, 0.0)), ("di", (0.0, 1.0, 0.0)), ("il", (0.0, 0.0, 1.0)),
                        ("combined", (1.0, 0.5, 1.0))])


def _path_index(table: oracle.JointTable) -> dict[tuple, int]:
    b = table.batch
    return {(int(table.context_index[k]), *b.options[k, 1:].tolist(), *b.actions[k].tolist()): k
            for k in range(len(table))}


def _per_path_grads(policy: HierPolicy, batch: TrajBatch, adv_h: torch.Tensor, adv_l: torch.Tensor,
                    featurizer: Featurizer) -> np.ndarray:
    """Gradient of the ratio-1 clipped surrogate for each path separately, (K, n_params)."""
    out = []
    params = list(policy.parameters())
    for k in range(batch.size):
        sub = batch.select([k])
        sh, sl = clipped_surrogate(policy, sub, adv_h[k:k + 1], adv_l[k:k + 1], 0.2, featurizer)
        grads = torch.autograd.grad((sh + sl).sum(), params, allow_unused=True)
        out.append(torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1)
                              for p, g in zip(params, grads)]).numpy())
    return np.stack(out)


@_timed
def check_unbiasedness(n_traj: int = 100_000, seed: int = 0, sigmas: float = 3.0,
                       fault: str | None = None) -> CheckResult:
    """Monte-Carlo means of the policy-gradient estimator and the baseline terms against the oracle.

    Trajectories are sampled by the rollout code; since the estimator is a
    deterministic function of the path, per-path gradients are computed once
    and weighted by the sampled path counts.
    """
    spec = envlib.tinychain(context_in_obs=False)
    g = torch.Generator().manual_seed(seed)
    policy = tiny_policy(spec, g, embed_dim=2, hidden=(3,), heads=1, scale=1.5)
    featurizer = Featurizer(spec)
    table = oracle.enumerate_joint(spec, policy, featurizer)
    index = _path_index(table)
    task, opt = random_posteriors(spec, policy.num_options, g)
    log_ppsi, log_pw = posterior_terms(spec, table.batch, task, opt)
    # R_IL from a random AIRL discriminator; policy log-probs enter as constants
    disc = Discriminator(featurizer.dim, policy.num_options, spec.n_actions, AIRL_RAW, 0.99, (4,), g)
    b = table.batch
    r_il = il_reward(disc, pairs_from_batch(b, featurizer, b.logp_high + b.logp_low)).reshape(b.size, -1)
    baselines = Baselines(featurizer.dim, policy.num_options, (4,), g, zero_last=False)
    with torch.no_grad():
        b_high, b_low = baselines.of_batch(b, featurizer)

    # sample trajectories with the rollout code and count paths
    rng = np.random.default_rng(seed + 1)
    gen = torch.Generator().manual_seed(seed + 2)
    counts = np.zeros(len(table))
    left, chunk = n_traj, 20_000
    while left > 0:
        n = min(chunk, left)
        batch = rollout(policy, spec, envlib.sample_tasks(spec, rng, n), gen, featurizer)
        ci = batch.contexts.argmax(-1).numpy()
        keys = np.concatenate([ci[:, None], batch.options[:, 1:].numpy(), batch.actions.numpy()], axis=1)
        for row in keys:
            counts[index[tuple(int(v) for v in row)]] += 1
        left -= n
    freq = counts / n_traj

    def mc_stats(per_path: np.ndarray):
        mean = freq @ per_path
        var = freq @ (per_path - mean) ** 2
        return mean, np.sqrt(var / n_traj)

    worst, report = 0.0, {}
    for name, alphas in CHANNELS.items():
        w = ObjectiveWeights(*alphas)
        ret = assemble_returns(log_ppsi, log_pw - b.logp_high, r_il, w).ret
        per_path = _per_path_grads(policy, b, ret, ret, featurizer)
        mean, se = mc_stats(per_path)
        th, ph = oracle.exact_gradient(policy, table, log_ppsi, log_pw, r_il, w, featurizer)
        exact = _reorder(policy, th, ph)
        if fault == "gradient":
            exact = exact + 1.0
        z = np.abs(mean - exact) / np.maximum(se, 1e-300)
        z[(se == 0) & (np.abs(mean - exact) < 1e-12)] = 0.0
        report[name] = float(z.max())
        worst = max(worst, float(z.max()))
    # baseline terms: sum_t grad log pi * b  should average to zero
    per_path_h = _per_path_grads(policy, b, b_high, b_low, featurizer)
    mean, se = mc_stats(per_path_h)
    z = np.abs(mean) / np.maximum(se, 1e-300)
    z[(se == 0) & (np.abs(mean) < 1e-12)] = 0.0
    report["baseline"] = float(z.max())
    worst = max(worst, report["baseline"])
    n_coord = per_path_h.shape[1]
    detail = (f"max |z| per channel: " + ", ".join(f"{k} {v:.2f}" for k, v in report.items())
              + f"; {n_coord} coordinates, {n_traj} trajectories")
    return CheckResult("unbiasedness", worst <= sigmas, worst, sigmas, detail, extra={"max_z": report})


def _reorder(policy: HierPolicy, th, ph) -> np.ndarray:
    """Exact gradient flattened in ``policy.parameters()`` order."""
    by_name = {**th, **ph}
    return torch.cat([by_name[n].reshape(-1) for n, _ in policy.named_parameters()]).numpy()


# --- posterior gradient identity ---------------------------------------------------------

class RecordingSGD(torch.optim.SGD):
    """SGD that keeps a copy of every gradient it was asked to apply."""

    def __init__(self, params, lr=1e-3):
        super().__init__(params, lr=lr)
        self.recorded: list[list[torch.Tensor]] = []

    def step(self, closure=None):
        self.recorded.append([p.grad.detach().clone() for grp in self.param_groups for p in grp["params"]])
        return super().step(closure)


@_timed
def check_posterior_gradient(seed: int = 0, batch_size: int = 64, fault: str | None = None) -> CheckResult:
    """The gradient applied by the posterior update is bitwise the autograd gradient of the MC log-likelihood."""
    mismatches, total = 0, 0
    for name in ("tinychain", "grid_multigoal"):
        spec = envlib.make_env(name)
        g = torch.Generator().manual_seed(seed)
        f = Featurizer(spec)
        policy = HierPolicy(f.dim, spec.n_actions, PolicyConfig(3, 4, (8,), 2, zero_heads=False), g)
        batch = rollout(policy, spec, envlib.sample_tasks(spec, np.random.default_rng(seed), batch_size), g, f)
        x = posterior_inputs(batch, spec.n_actions)
        task = TaskPosterior(x.shape[-1], spec.context_dim, spec.context_kind, 8, g)
        opt = OptionPosterior(x.shape[-1], 3, spec.context_dim, 8, g)
        params = list(task.parameters()) + list(opt.parameters())
        # reference: reverse-mode gradient of each negative log-likelihood on its own parameters
        ref_task = torch.autograd.grad(-task.log_prob(x, batch.contexts).mean(), list(task.parameters()))
        ref_opt = torch.autograd.grad(-opt.log_probs(x, batch.options, batch.contexts).sum(-1).mean(),
                                      list(opt.parameters()))
        recorder = RecordingSGD(params)
        fit_posteriors(task, opt, x, batch, 1, recorder)
        got = recorder.recorded[0]
        if fault == "posterior_grad":
            got[0] = got[0] + 1e-12
        for a, b_ in zip(got, [*ref_task, *ref_opt]):
            total += 1
            mismatches += int(not torch.equal(a, b_))
    return CheckResult("posterior_gradient", mismatches == 0, float(mismatches), 0.0,
                       f"{mismatches}/{total} parameter tensors differ bitwise")


# --- discriminator optimum ---------------------------------------------------------------

DISC_TOL = 0.05
DISC_MIN_OCC = 1e-3


@_timed
def check_disc_optimum(seed: int = 0, max_steps: int = 5000, lr: float = 1e-2,
                       fault: str | None = None) -> CheckResult:
    """Frozen learner and expert on TinyChain; the trained D approaches occ_E / (occ_E + occ_pi)."""
    spec = envlib.tinychain()
    g = torch.Generator().manual_seed(seed)
    f = Featurizer(spec)
    learner = tiny_policy(spec, g, scale=1.0)
    expert = tiny_policy(spec, g, scale=2.5)
    opt_table = oracle.exact_disc_optimum(spec, learner, expert, f)
    pairs = opt_table.pairs
    e_side = ExtendedPairs(**{**pairs.__dict__, "weight": opt_table.occ_expert})
    p_side = ExtendedPairs(**{**pairs.__dict__, "weight": opt_table.occ_policy})
    d = Discriminator(f.dim, learner.num_options, spec.n_actions, AIRL_RAW, 0.99, (32, 32), g)
    optim = torch.optim.Adam(d.parameters(), lr=lr)
    relevant = (opt_table.occ_expert + opt_table.occ_policy) > DISC_MIN_OCC
    dev, steps = float("inf"), 0
    for steps in range(1, max_steps + 1):
        optim.zero_grad()
        disc_loss(d, e_side, p_side).backward()
        optim.step()
        if steps % 100 == 0:
            with torch.no_grad():
                dev = float((d_prob(d, pairs) - opt_table.d_star)[relevant].abs().max())
            if fault == "disc":
                dev += 1.0
            if dev < DISC_TOL:
                break
    return CheckResult("disc_optimum", dev < DISC_TOL, dev, DISC_TOL,
                       f"{int(relevant.sum())} pairs with occupancy > {DISC_MIN_OCC}, {steps} Adam steps",
                       extra={"steps": steps})


# --- suite ------------------------------------------------------------------------------

SUITE = OrderedDict([("gradcheck", check_gradients), ("lower_bounds", check_bounds),
                     ("unbiasedness", check_unbiasedness), ("posterior_gradient", check_posterior_gradient),
                     ("disc_optimum", check_disc_optimum)])


def run_suite(names: Sequence[str] | None = None, seed: int = 0, fault: str | None = None,
              quick: bool = False) -> list[CheckResult]:
    """Run the named checks (all by default). ``quick`` shrinks sample sizes for smoke runs."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; expected one of {', '.join(FAULTS)}")
    names = list(SUITE) if names is None else list(names)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    kw_quick = {"gradcheck": {"points": 5}, "lower_bounds": {"draws": 5}}
    out = []
    for name in names:
        kw = {"seed": seed, "fault": fault, **(kw_quick.get(name, {}) if quick else {})}
        out.append(SUITE[name](**kw))
    return out

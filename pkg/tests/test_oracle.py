import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import SHARP, ChainExpert, small_policy
from mhairl import env as envlib
from mhairl import oracle
from mhairl.diffcore import DTYPE, ContractError, log_softmax
from mhairl.objective import ObjectiveWeights, l_di, l_mi
from mhairl.policy import Featurizer

CHAIN = envlib.make_env("tinychain")
CHAIN_BLIND = envlib.make_env("tinychain", context_in_obs=False)
LN2 = math.log(2)


class MirrorExpert(ChainExpert):
    """Right under context 0, left under context 1."""

    def low_logits(self, feat, z):
        return -super().low_logits(feat, z)


class OptionBlindLow(ChainExpert):
    """Random high level; low level a fixed soft function of the features only."""

    def __init__(self, spec, seed):
        super().__init__(spec)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=g, dtype=DTYPE))
        self.proj = torch.randn(Featurizer(spec).dim, spec.n_actions, generator=g, dtype=DTYPE)

    def low_logits(self, feat, z):
        return feat @ self.proj


class CyclingOptions(ChainExpert):
    """Z_t = (Z_{t-1} + 1) mod N almost surely."""

    def high_logits(self, feat, z_prev):
        target = torch.remainder(torch.as_tensor(z_prev) + 1, self.num_options)
        oh = torch.nn.functional.one_hot(target, self.num_options).to(DTYPE)
        return SHARP * oh.expand(*feat.shape[:-1], self.num_options)


def test_uniform_policy_path_count_and_probability():
    p, f = small_policy(CHAIN, zero_heads=True)
    table = oracle.enumerate_joint(CHAIN, p, f)
    assert len(table) == 128 == oracle.path_count(CHAIN, 2)
    torch.testing.assert_close(table.prob, torch.full((128,), 1 / 128, dtype=DTYPE), rtol=1e-14, atol=0.0)


@given(st.integers(0, 1000), st.integers(1, 3))
@settings(max_examples=10)
def test_total_mass_is_one(seed, n_opt):
    p, f = small_policy(CHAIN, seed=seed, num_options=n_opt)
    assert abs(float(oracle.enumerate_joint(CHAIN, p, f).prob.sum()) - 1.0) < 1e-10


def _flat_distribution(spec, low_logits_fn):
    """P(C, A_{0:T-1}) enumerated directly with env.step and a flat policy."""
    f = Featurizer(spec)
    out = {}
    for ci, pc in enumerate(spec.prior):
        ctx = np.eye(spec.context_dim)[ci]
        for acts in itertools.product(range(spec.n_actions), repeat=spec.horizon):
            state = envlib.reset(spec, envlib.TaskContext("discrete", ctx))
            prob = pc
            for a in acts:
                feat = f(torch.tensor([state.cell]), torch.as_tensor(ctx[None]))
                prob *= float(log_softmax(low_logits_fn(feat))[0, a].exp())
                state, _, _ = envlib.step(spec, state, a)
            out[(ci, acts)] = prob
    return out


def test_option_marginal_equals_flat_policy():
    p = OptionBlindLow(CHAIN, seed=3)
    table = oracle.enumerate_joint(CHAIN, p)
    marg = defaultdict(float)
    for k in range(len(table)):
        marg[(int(table.context_index[k]), tuple(table.batch.actions[k].tolist()))] += float(table.prob[k])
    flat = _flat_distribution(CHAIN, lambda feat: feat @ p.proj)
    assert marg.keys() == flat.keys()
    assert max(abs(marg[k] - flat[k]) for k in flat) < 1e-10


def test_deterministic_expert_identifies_task():
    table = oracle.enumerate_joint(CHAIN_BLIND, ChainExpert(CHAIN_BLIND))
    assert oracle.exact_mutual_info(table) == pytest.approx(LN2, abs=1e-12)


def test_independent_options_carry_no_directed_information():
    p = OptionBlindLow(CHAIN_BLIND, seed=1)
    with torch.no_grad():
        p.high_out.weight.zero_()
        p.high_out.bias.zero_()
    table = oracle.enumerate_joint(CHAIN_BLIND, p)
    assert abs(oracle.exact_directed_info(table)) < 1e-12


def _dict_mi(table):
    """I(X; C) from dictionaries keyed by the raw trajectory tuple."""
    pc, px, pcx = defaultdict(float), defaultdict(float), defaultdict(float)
    for k in range(len(table)):
        c = int(table.context_index[k])
        x = (tuple(table.batch.cells[k].tolist()), tuple(table.batch.actions[k].tolist()))
        if table.spec.context_in_obs:
            x = x + (c,)
        w = float(table.prob[k])
        pc[c] += w
        px[x] += w
        pcx[(c, x)] += w
    return sum(w * math.log(w / (pc[c] * px[x])) for (c, x), w in pcx.items() if w > 0)


def _dict_di(table):
    """sum_t I(X_{0:t}; Z_t | Z_{0:t-1}, C) from dictionaries."""
    T = table.spec.horizon
    total = 0.0
    for t in range(1, T + 1):
        joint = defaultdict(float)   # (c, zhist, xhist, z_t)
        for k in range(len(table)):
            c = int(table.context_index[k])
            zh = tuple(table.batch.options[k, :t].tolist())
            xh = (tuple(table.batch.cells[k, :t + 1].tolist()), tuple(table.batch.actions[k, :t].tolist()))
            joint[(c, zh, xh, int(table.batch.options[k, t]))] += float(table.prob[k])
        czx, cz, czz = defaultdict(float), defaultdict(float), defaultdict(float)
        for (c, zh, xh, z), w in joint.items():
            czx[(c, zh, xh)] += w
            cz[(c, zh)] += w
            czz[(c, zh, z)] += w
        total += sum(w * math.log(w * cz[(c, zh)] / (czx[(c, zh, xh)] * czz[(c, zh, z)]))
                     for (c, zh, xh, z), w in joint.items() if w > 0)
    return total


@pytest.mark.parametrize("spec", [CHAIN, CHAIN_BLIND], ids=["with_context", "blind"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_information_matches_dictionary_computation(spec, seed):
    p, f = small_policy(spec, seed=seed, num_options=3, use_context=True)
    table = oracle.enumerate_joint(spec, p, f)
    assert oracle.exact_mutual_info(table) == pytest.approx(_dict_mi(table), abs=1e-12)
    assert oracle.exact_directed_info(table) == pytest.approx(_dict_di(table), abs=1e-12)


def test_information_bounds_hold_for_arbitrary_posteriors():
    rng = np.random.default_rng(0)
    for seed in range(5):
        p, f = small_policy(CHAIN_BLIND, seed=seed, num_options=2)
        table = oracle.enumerate_joint(CHAIN_BLIND, p, f)
        b = table.batch
        # random conditional tables that depend only on their declared arguments
        task_tab, opt_tab = {}, {}
        log_ppsi = torch.empty(len(table), dtype=DTYPE)
        log_pw = torch.empty(len(table), 3, dtype=DTYPE)
        for k in range(len(table)):
            x = (tuple(b.cells[k].tolist()), tuple(b.actions[k].tolist()))
            dist = task_tab.setdefault(x, rng.dirichlet(np.ones(2)))
            log_ppsi[k] = math.log(dist[table.context_index[k]])
            for t in range(1, 4):
                key = (int(table.context_index[k]), tuple(b.options[k, :t].tolist()),
                       tuple(b.cells[k, :t + 1].tolist()), tuple(b.actions[k, :t].tolist()))
                d = opt_tab.setdefault(key, rng.dirichlet(np.ones(2)))
                log_pw[k, t - 1] = math.log(d[int(b.options[k, t])])
        lmi = l_mi(log_ppsi, envlib.context_entropy(CHAIN_BLIND), table.prob).item()
        ldi = l_di(log_pw, b.logp_high, weights=table.prob).item()
        assert lmi <= oracle.exact_mutual_info(table) + 1e-12
        assert ldi <= oracle.exact_directed_info(table) + 1e-12


def test_exact_posteriors_attain_mutual_information():
    for spec in (CHAIN, CHAIN_BLIND):
        p, f = small_policy(spec, seed=7)
        table = oracle.enumerate_joint(spec, p, f)
        post = oracle.exact_posteriors(table)
        lmi = l_mi(post.task_logprob(table), envlib.context_entropy(spec), table.prob).item()
        assert lmi == pytest.approx(oracle.exact_mutual_info(table), abs=1e-12)


def test_context_blind_policy_gives_uninformative_task_posterior():
    p, f = small_policy(CHAIN_BLIND, seed=2, use_context=False)
    post = oracle.exact_posteriors(oracle.enumerate_joint(CHAIN_BLIND, p, f))
    np.testing.assert_allclose(post.task, 0.5, rtol=0, atol=1e-12)


def test_deterministic_options_give_point_mass_posteriors():
    table = oracle.enumerate_joint(CHAIN, CyclingOptions(CHAIN, num_options=3))
    post = oracle.exact_posteriors(table)
    assert np.all(np.abs(post.option.max(axis=-1) - 1.0) < 1e-12)
    np.testing.assert_allclose(post.option.sum(-1), 1.0, atol=1e-12)


def test_exact_gradient_vanishes_for_constant_integrands():
    p, f = small_policy(CHAIN, seed=5, zero_heads=False)
    table = oracle.enumerate_joint(CHAIN, p, f)
    K, T = table.batch.actions.shape
    zeros = torch.zeros(K, T, dtype=DTYPE)
    th, ph = oracle.exact_gradient(p, table, torch.zeros(K, dtype=DTYPE), zeros, zeros,
                                   ObjectiveWeights(0.0, 0.0, 1.0), f)
    assert max(float(g.abs().max()) for g in [*th.values(), *ph.values()]) == 0.0
    th, _ = oracle.exact_gradient(p, table, torch.full((K,), math.log(0.5), dtype=DTYPE), zeros, zeros,
                                  ObjectiveWeights(1.0, 0.0, 0.0), f)
    assert max(float(g.abs().max()) for g in th.values()) < 1e-14


def test_exact_gradient_matches_finite_differences():
    p, f = small_policy(CHAIN, seed=6, zero_heads=False)
    table = oracle.enumerate_joint(CHAIN, p, f)
    g = torch.Generator().manual_seed(0)
    K, T = table.batch.actions.shape
    r_il = torch.randn(K, T, generator=g, dtype=DTYPE)
    log_pw = -torch.rand(K, T, generator=g, dtype=DTYPE)
    log_ppsi = -torch.rand(K, generator=g, dtype=DTYPE)
    w = ObjectiveWeights(0.5, 0.7, 1.0)
    th, ph = oracle.exact_gradient(p, table, log_ppsi, log_pw, r_il, w, f)
    grads = {**th, **ph}
    h = 1e-5
    for name, param in p.named_parameters():
        if name == "W_C":
            continue   # the low level reads a detached copy of W_C, so only part of its dependence is differentiated
        idx = (0,) * param.dim()
        with torch.no_grad():
            old = param[idx].item()
            param[idx] = old + h
            up = oracle.exact_objective(p, table, log_ppsi, log_pw, r_il, w, f).item()
            param[idx] = old - h
            down = oracle.exact_objective(p, table, log_ppsi, log_pw, r_il, w, f).item()
            param[idx] = old
        assert grads[name][idx].item() == pytest.approx((up - down) / (2 * h), abs=1e-7), name


def test_disc_optimum_examples():
    e = ChainExpert(CHAIN)
    same = oracle.exact_disc_optimum(CHAIN, e, e)
    torch.testing.assert_close(same.d_star, torch.full_like(same.d_star, 0.5), rtol=0, atol=0)
    opp = oracle.exact_disc_optimum(CHAIN, MirrorExpert(CHAIN), e)
    expert_only = opp.occ_expert > 1e-6
    assert bool(expert_only.any())
    assert float((1.0 - opp.d_star[expert_only]).abs().max()) < 1e-12
    assert float(opp.occ_expert.sum()) == pytest.approx(1.0, abs=1e-12)


def test_refusals():
    p, f = small_policy(CHAIN, num_options=2)
    with pytest.raises(ContractError, match="budget"):
        oracle.enumerate_joint(CHAIN, p, f, budget=100)
    grid = envlib.make_env("grid_multigoal")
    gp, gf = small_policy(grid, kind="coords")
    with pytest.raises(ContractError, match="enumerable"):
        oracle.enumerate_joint(grid, gp, gf)


def test_oracle_is_pure():
    p, f = small_policy(CHAIN, seed=9)
    a, b = oracle.enumerate_joint(CHAIN, p, f), oracle.enumerate_joint(CHAIN, p, f)
    assert torch.equal(a.logp, b.logp)
    assert oracle.exact_mutual_info(a) == oracle.exact_mutual_info(b)
    assert oracle.exact_directed_info(a) == oracle.exact_directed_info(b)

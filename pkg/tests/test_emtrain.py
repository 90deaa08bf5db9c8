import csv
import dataclasses

import numpy as np
import pytest
import torch

from mhairl import env as envlib
from mhairl.diffcore import ContractError
from mhairl.emtrain import (METRIC_FIELDS, ConfigError, PosteriorSnapshot, Trainer, TrainConfig, build_config,
                            demo_batch, e_step, echo_config, load_config, parse_config_text, run)
from mhairl.expert import generate_dataset, write_demos
from mhairl.posterior import OptionPosterior, TaskPosterior, posterior_inputs

CHAIN = envlib.make_env("tinychain")
GRID = envlib.make_env("grid_multigoal")
BASE = {"env": "tinychain", "variant": "mh-airl", "demos": "", "episodes": "3", "seed": "0",
        "num_options": "2", "alpha_mi": "1.0", "alpha_di": "0.01", "alpha_il": "1.0", "ratio": "1:3:10"}
SMALL = {"hidden": "8", "embed_dim": "4", "posterior_hidden": "8", "n_traj": "4", "eval_tasks": "4",
         "eval_every": "2", "disc_minibatch": "16", "epochs": "1", "baseline_steps": "2"}


def small_cfg(**kw):
    return build_config({**BASE, **SMALL, **{k: str(v) for k, v in kw.items()}})


# --- configuration -----------------------------------------------------------------

def test_config_text_parsing():
    text = "# comment\nenv = grid_multigoal  # trailing\n\nratio = 1:3:10\n"
    assert parse_config_text(text) == {"env": "grid_multigoal", "ratio": "1:3:10"}
    with pytest.raises(ConfigError, match="cfg:2"):
        parse_config_text("env = tinychain\nbroken line", "cfg")


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match="bogus"):
        build_config({**BASE, "bogus": "1"})
    with pytest.raises(ConfigError, match="ratio"):
        build_config({**BASE, "ratio": "1:3"})
    with pytest.raises(ConfigError, match="variant"):
        build_config({**BASE, "variant": "vae"})
    with pytest.raises(ConfigError, match="episodes"):
        build_config({**BASE, "episodes": "many"})
    with pytest.raises(ConfigError, match="alpha_il"):
        build_config({**BASE, "alpha_il": "0"})
    missing = dict(BASE)
    del missing["seed"]
    with pytest.raises(ConfigError, match="seed"):
        build_config(missing, require=True)


def test_config_file_overrides_and_echo(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in BASE.items()))
    cfg = load_config(path, {"seed": "7", "hidden": "16,16"})
    assert cfg.seed == 7 and cfg.hidden == (16, 16) and cfg.ratio == (1, 3, 10)
    assert build_config(parse_config_text(echo_config(cfg))) == cfg
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_h_airl_drops_the_context_channel():
    cfg = small_cfg(variant="h-airl")
    assert cfg.weights().alpha_mi == 0.0
    t = Trainer(cfg, generate_dataset(CHAIN, 4, 0))
    assert t.task_post is None and t.featurizer.dim == CHAIN.n_cells
    row = t.train_episode()
    assert row["l_mi"] == 0.0 and row["post_task_nll"] == 0.0


# --- E-step ------------------------------------------------------------------------

def _snapshot(num_options=4, zero_head=True, seed=0):
    x_dim = GRID.n_actions + GRID.obs_dim
    g = torch.Generator().manual_seed(seed)
    task = TaskPosterior(x_dim, GRID.context_dim, GRID.context_kind, 8, g, zero_head=zero_head)
    opt = OptionPosterior(x_dim, num_options, GRID.context_dim, 8, g, zero_head=zero_head)
    return PosteriorSnapshot.take(task, opt)


def test_e_step_bypasses_annotated_demos():
    demos = generate_dataset(CHAIN, 5, 0, annotate=True)
    snap = PosteriorSnapshot.take(TaskPosterior(2 + CHAIN.obs_dim, 2, "discrete", 4),
                                  OptionPosterior(2 + CHAIN.obs_dim, 2, 2, 4))
    assert e_step(snap, demos, CHAIN, torch.Generator()) is demos


def test_e_step_uniform_heads_give_uniform_options():
    demos = generate_dataset(GRID, 420, 0)
    out = e_step(_snapshot(), demos, GRID, torch.Generator().manual_seed(0))
    assert out.annotated and len(out) == len(demos)
    z = np.stack([d.options for d in out])
    assert np.all(z[:, 0] == 0)
    freq = np.bincount(z[:, 1:].ravel(), minlength=4) / z[:, 1:].size
    assert z[:, 1:].size >= 10_000
    np.testing.assert_allclose(freq, 0.25, atol=0.02)


def test_e_step_is_deterministic_and_preserves_inputs():
    demos = generate_dataset(GRID, 6, 1)
    snap = _snapshot(zero_head=False, seed=3)
    a = e_step(snap, demos, GRID, torch.Generator().manual_seed(5))
    b = e_step(snap, demos, GRID, torch.Generator().manual_seed(5))
    assert a.demos == b.demos
    assert all(np.array_equal(x.states, y.states) and np.array_equal(x.actions, y.actions)
               for x, y in zip(a, demos))
    assert demos.annotated is False


def test_snapshot_is_frozen_while_live_posteriors_train():
    t = Trainer(small_cfg(variant="mh-airl"), generate_dataset(CHAIN, 8, 0))
    snap = PosteriorSnapshot.take(t.task_post, t.opt_post)
    frozen = {k: v.clone() for k, v in snap.option.state_dict().items()}
    t.train_episode()
    assert all(torch.equal(frozen[k], v) for k, v in snap.option.state_dict().items())
    assert any(not torch.equal(frozen[k], v) for k, v in t.opt_post.state_dict().items())
    assert all(not p.requires_grad for p in snap.option.parameters())


def test_supervised_path_never_samples_expert_annotations():
    t = Trainer(small_cfg(), generate_dataset(CHAIN, 8, 0, annotate=True))
    for _ in range(2):
        t.train_episode()
    assert t.supervised and t.estep_calls == 0
    t = Trainer(small_cfg(), generate_dataset(CHAIN, 8, 0))
    t.train_episode()
    assert t.estep_calls == 1


def test_zero_posterior_steps_freeze_posteriors():
    t = Trainer(small_cfg(ratio="1:3:0"), generate_dataset(CHAIN, 8, 0))
    before = {k: v.clone() for k, v in t.state().items() if k.startswith(("task_post", "opt_post"))}
    pol = {k: v.clone() for k, v in t.policy.state_dict().items()}
    t.train_episode()
    after = t.state()
    assert all(torch.equal(v, after[k]) for k, v in before.items())
    assert any(not torch.equal(v, t.policy.state_dict()[k]) for k, v in pol.items())


def test_demo_batch_rejects_wrong_environment():
    with pytest.raises(ContractError, match="grid_multigoal"):
        demo_batch(GRID, generate_dataset(CHAIN, 2, 0))


# --- runs --------------------------------------------------------------------------

def test_two_runs_write_identical_metrics(tmp_path):
    demos = tmp_path / "d.jsonl"
    write_demos(generate_dataset(CHAIN, 8, 0), demos)
    cfg = small_cfg(demos=demos)
    r1, r2 = run(cfg, tmp_path / "a"), run(cfg, tmp_path / "b")
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
    rows = list(csv.reader(a.decode().splitlines()))
    assert tuple(rows[0]) == METRIC_FIELDS and len(rows) == 1 + cfg.episodes
    assert r1["final"] == r2["final"]
    for name in ("config.echo", "report.json", "trajs.jsonl", "ckpt_policy.npz", "ckpt_final.npz"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "trajs.jsonl").read_bytes() == (tmp_path / "b" / "trajs.jsonl").read_bytes()
    # re-running from the echoed configuration reproduces the run
    echo = build_config(parse_config_text((tmp_path / "a" / "config.echo").read_text()))
    run(echo, tmp_path / "c")
    assert (tmp_path / "c" / "metrics.csv").read_bytes() == a


def test_missing_demo_file_names_the_path(tmp_path):
    missing = tmp_path / "absent.jsonl"
    with pytest.raises(ConfigError, match="absent.jsonl"):
        run(small_cfg(demos=missing), tmp_path / "r")


def test_tinychain_from_annotated_demonstrations_matches_expert():
    cfg = build_config({**BASE, "episodes": "200"})
    t = Trainer(cfg, generate_dataset(CHAIN, 50, 0, annotate=True))
    for _ in range(cfg.episodes):
        t.train_episode()
    ev = t.evaluate()
    assert ev["mean_return"] >= 0.95 * ev["expert_return"]


def test_single_option_single_task_reduces_to_flat_airl():
    spec = dataclasses.replace(CHAIN, prior=(0.0, 1.0))
    cfg = build_config({**BASE, "variant": "h-airl", "num_options": "1", "episodes": "60"})
    t = Trainer(cfg, generate_dataset(spec, 50, 0), spec)
    for _ in range(cfg.episodes):
        row = t.train_episode()
    assert row["l_di"] == 0.0 and row["l_mi"] == 0.0
    ev = t.evaluate()
    assert ev["mean_return"] >= 0.95 * ev["expert_return"]

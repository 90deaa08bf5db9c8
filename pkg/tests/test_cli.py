import json

import numpy as np
import pytest

from _helpers import small_policy
from mhairl import env as envlib
from mhairl.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main, parse_overrides
from mhairl.emtrain import ConfigError, dump_trajectories
from mhairl.expert import read_demos

BASE = ("env = tinychain\nvariant = mh-airl\ndemos = {demos}\nepisodes = 2\nseed = 0\nnum_options = 2\n"
        "alpha_mi = 1.0\nalpha_di = 0.01\nalpha_il = 1.0\nratio = 1:3:10\nhidden = 8\nembed_dim = 4\n"
        "posterior_hidden = 8\nn_traj = 4\neval_tasks = 4\n")


def test_parse_overrides():
    assert parse_overrides(["--seed", "3", "--lr-policy=1e-3"]) == {"seed": "3", "lr_policy": "1e-3"}
    with pytest.raises(ConfigError):
        parse_overrides(["seed", "3"])
    with pytest.raises(ConfigError, match="--seed"):
        parse_overrides(["--seed"])


def test_gen_expert_train_eval_roundtrip(tmp_path, capsys):
    demos = tmp_path / "demos.jsonl"
    assert main(["gen-expert", "--env", "tinychain", "--n", "6", "--seed", "1", "--out", str(demos)]) == EXIT_OK
    assert len(read_demos(demos)) == 6
    cfg = tmp_path / "chain.cfg"
    cfg.write_text(BASE.format(demos=demos))
    run_dir = tmp_path / "run"
    assert main(["train", str(cfg), "--run-dir", str(run_dir), "--seed", "4"]) == EXIT_OK
    assert "seed = 4" in (run_dir / "config.echo").read_text()
    assert main(["eval", "--run-dir", str(run_dir)]) == EXIT_OK
    report = json.loads((run_dir / "eval_report.json").read_text())
    assert len(report["tasks"]) == 4
    for task in report["tasks"]:
        segs = task["option_segments"]
        assert segs[0][0] == 1 and segs[-1][1] == 3
    assert "mean return" in capsys.readouterr().out


def test_eval_untrained_grid_policy(tmp_path, capsys):
    demos = tmp_path / "g.jsonl"
    main(["gen-expert", "--n", "2", "--out", str(demos)])
    cfg = tmp_path / "grid.cfg"
    cfg.write_text(BASE.replace("tinychain", "grid_multigoal").replace("num_options = 2", "num_options = 4")
                   .format(demos=demos))
    out = tmp_path / "eval.json"
    assert main(["eval", "--config", str(cfg), "--tasks", "8", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["checkpoint"] is None and len(report["tasks"]) == 8
    assert 0.0 <= report["mean_return"] <= report["expert_mean_return"]
    assert "options" in report


def test_configuration_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE.format(demos=tmp_path / "none.jsonl"))
    assert main(["train", str(cfg), "--bogus-key", "1"]) == EXIT_CONFIG
    assert "bogus_key" in capsys.readouterr().err
    assert main(["train", str(cfg), "--run-dir", str(tmp_path / "r")]) == EXIT_CONFIG
    assert "none.jsonl" in capsys.readouterr().err
    assert main(["train", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["eval", "--run-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["oracle-check", "--checks", "nonsense"]) == EXIT_CONFIG


def test_oracle_check_with_injected_fault_exits_3(capsys):
    assert main(["oracle-check", "--checks", "lower_bounds", "--quick", "--inject-fault", "mi_bound"]) == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


def test_oracle_check_quick_bounds_pass(capsys):
    assert main(["oracle-check", "--checks", "lower_bounds", "--quick"]) == EXIT_OK


def test_dump_trajectories(tmp_path):
    spec = envlib.make_env("grid_multigoal")
    p, f = small_policy(spec, seed=1, num_options=4, kind="coords")
    ctx = envlib.sample_tasks(spec, np.random.default_rng(0), 8)
    path = tmp_path / "t.jsonl"
    assert dump_trajectories(p, spec, ctx, path, f) == 8
    lines = path.read_text().splitlines()
    assert len(lines) == 8
    for line in lines:
        rec = json.loads(line)
        assert len(rec["options"]) == spec.horizon + 1 and rec["options"][0] == 0
        assert len(rec["states"]) == spec.horizon + 1 and len(rec["actions"]) == spec.horizon
        assert set(rec) == {"context", "goal", "states", "actions", "options", "rewards"}
    first = path.read_bytes()
    dump_trajectories(p, spec, ctx, path, f)
    assert path.read_bytes() == first
    with pytest.raises(OSError, match="cannot write"):
        dump_trajectories(p, spec, ctx, tmp_path / "no" / "dir" / "t.jsonl", f)

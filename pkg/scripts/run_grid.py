"""GridMultiGoal pipeline: demonstrations, then MH-AIRL, H-AIRL and MH-GAIL over five seeds.

Finished runs are reused when their config.echo matches. Writes
runs/grid/summary.json with final held-out returns and option statistics.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from mhairl import emtrain
from mhairl import env as envlib
from mhairl.expert import generate_dataset, read_demos, write_demos

VARIANTS = ("mh-airl", "h-airl", "mh-gail")
DEMO_SEED = 12345


def ensure_demos(path: Path, n: int) -> None:
    if path.exists():
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    write_demos(generate_dataset(envlib.make_env("grid_multigoal"), n, DEMO_SEED), path)


def run_one(cfg: emtrain.TrainConfig, run_dir: Path, demos) -> dict:
    report_path = run_dir / "report.json"
    echo = run_dir / "config.echo"
    if report_path.exists() and echo.exists() and echo.read_text() == emtrain.echo_config(cfg):
        return json.loads(report_path.read_text())
    return emtrain.run(cfg, run_dir, demos, progress=True)


def summarize(reports: dict[str, list[dict]]) -> dict:
    out = {}
    for variant, reps in reports.items():
        finals = [r["final"] for r in reps]
        learner = [f["mean_return"] for f in finals]
        expert = [f["expert_return"] for f in finals]
        row = {"seeds": [r["config"]["seed"] for r in reps], "final_return": learner, "expert_return": expert,
               "mean_final_return": float(np.mean(learner)), "mean_expert_return": float(np.mean(expert)),
               "fraction_of_expert": float(np.mean(learner) / np.mean(expert)),
               "wall_clock_s": [r["wall_clock_s"] for r in reps]}
        if "options" in finals[0]:
            row["nmi"] = [f["options"]["nmi"] for f in finals]
            row["distinct_majorities"] = [f["options"]["distinct_majorities"] for f in finals]
        out[variant] = row
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/grid_mhairl.cfg")
    ap.add_argument("--out", default="runs/grid")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--episodes", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = emtrain.load_config(args.config)
    demo_path = Path(base.demos)
    ensure_demos(demo_path, 100)
    demos = read_demos(demo_path)
    reports: dict[str, list[dict]] = {}
    for variant in args.variants.split(","):
        for seed in range(args.seeds):
            over = {"variant": variant, "seed": seed, "name": f"{variant}_s{seed}"}
            if args.episodes is not None:
                over["episodes"] = args.episodes
            cfg = emtrain.build_config(emtrain.parse_config_text(Path(args.config).read_text()), over)
            run_dir = Path(args.out) / cfg.name
            logging.info("run %s", run_dir)
            rep = run_one(cfg, run_dir, demos)
            logging.info("%s: final %.2f / expert %.2f in %.0fs", cfg.name, rep["final"]["mean_return"],
                         rep["final"]["expert_return"], rep["wall_clock_s"])
            reports.setdefault(variant, []).append(rep)
    summary = summarize(reports)
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for variant, row in summary.items():
        print(f"{variant:8s} final {row['mean_final_return']:.2f} / expert {row['mean_expert_return']:.2f} "
              f"({100 * row['fraction_of_expert']:.1f}%)")


if __name__ == "__main__":
    main()

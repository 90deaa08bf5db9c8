"""Transfer protocol: HPPO from a trained MH-AIRL checkpoint vs from scratch on PointRoom and PointMaze.

Uses the low level and W_C of runs/grid/mh-airl_s0 by default and writes
runs/transfer/transfer.json.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from mhairl import experiments


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run-dir", default="runs/grid/mh-airl_s0")
    ap.add_argument("--out", default="runs/transfer/transfer.json")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    def progress(res):
        logging.info("%s goal %d seed %d: init %s scratch %s", res["env"], res["goal"], res["seed"],
                     res["init"]["episodes_to_success"], res["scratch"]["episodes_to_success"])

    result = experiments.transfer_experiment(args.run_dir, seeds=range(args.seeds), episodes=args.episodes,
                                             progress=progress)
    experiments.write_json(result, Path(args.out))
    for env_name, s in result["summary"].items():
        logging.info("%s: median episodes to first success init %.1f vs scratch %.1f", env_name,
                     s["median_init"], s["median_scratch"])


if __name__ == "__main__":
    main()

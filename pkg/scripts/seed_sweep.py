"""Closed-loop effect of TinyFC across seeds.

Runs the full pipeline (without HPO) once per seed and prints the
augmented/PI overshoot ratio and the avg-deviation change for both cases.
Use it to judge how much of an improvement is down to the seed.

    python scripts/seed_sweep.py --seeds 0 1 2 3 --out /tmp/sweep
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from nnfoc.config import SEED_KEYS, default_config, load_config
from nnfoc.pipeline import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--config", help="base config (default: built-in)")
    ap.add_argument("--out", default="sweep")
    args = ap.parse_args()
    base = load_config(args.config) if args.config else default_config(0)
    rows = []
    for s in args.seeds:
        cfg = replace(base, seeds={k: s for k in SEED_KEYS})
        doc = run_experiment(cfg, Path(args.out) / f"seed{s}", hpo=False)
        for case in ("case1", "case2"):
            pi, aug = doc["loop_metrics"][case]["PI"], doc["loop_metrics"][case]["TinyFC"]
            ratio = None if not pi["max_overshoot"] or aug["max_overshoot"] is None else aug["max_overshoot"] / pi["max_overshoot"]
            rows.append({"seed": s, "case": case, "overshoot_ratio": ratio,
                         "avg_dev_change": aug["change"]["avg_deviation"]})
            print(json.dumps(rows[-1]))


if __name__ == "__main__":
    main()

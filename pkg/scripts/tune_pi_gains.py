"""Scan speed-loop PI settings on the case 1 profile (PI only).

Prints overshoot and deviation for each (zeta, omega_n, speed_limit)
combination, plus the time to settle a 0.5 pu step within 1e-3. The
defaults were picked from this table: overshoot at or above 0.05 pu and
clean settling on the constant-reference check.

    python scripts/tune_pi_gains.py --zeta 0.5 0.6 0.8 --omega-n 20 30 40 --limit 5 8
"""

import argparse
import itertools

import numpy as np

from nnfoc.config import ControlConfig, default_config
from nnfoc.control import run_closed_loop
from nnfoc.metrics import compute_metrics
from nnfoc.profiles import case1_profile, constant_profile


def settle_time(loop, plant, target=0.5, tol=1e-3, duration=10.0):
    """First time after which |error| stays below tol; None if it never does."""
    tr = run_closed_loop(constant_profile(target, duration), loop, plant)
    outside = np.flatnonzero(np.abs(tr.omega_meas - target) >= tol)
    if len(outside) == 0:
        return 0.0
    last = outside[-1]
    return None if last + 1 >= len(tr) else float(tr.t[last + 1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--zeta", type=float, nargs="+", default=[0.5, 0.6, 0.8])
    ap.add_argument("--omega-n", type=float, nargs="+", default=[20.0, 30.0, 40.0])
    ap.add_argument("--limit", type=float, nargs="+", default=[5.0, 8.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = default_config(args.seed)
    prof = case1_profile(args.seed)
    print(f"{'zeta':>5} {'wn':>5} {'limit':>5} | {'overshoot':>9} {'avg dev':>8} {'max dev':>8} | settle 0.5 (s)")
    for z, wn, lim in itertools.product(args.zeta, args.omega_n, args.limit):
        loop = ControlConfig(zeta=z, omega_n=wn, speed_limit=lim).loop_config(cfg.plant)
        m = compute_metrics(run_closed_loop(prof, loop, cfg.plant))
        st = settle_time(loop, cfg.plant)
        ov = "n/a" if m.max_overshoot is None else f"{m.max_overshoot:.4f}"
        print(f"{z:5.2f} {wn:5.1f} {lim:5.1f} | {ov:>9} {m.avg_deviation:8.4f} {m.max_deviation:8.4f} | "
              f"{'never' if st is None else f'{st:.3f}'}")


if __name__ == "__main__":
    main()

"""Step response of the voltage loop across grid strengths, with the gain
scheduled from the dQ/dV probe and with the gain frozen at the strong-grid
value.

    python scripts/gain_scheduling.py [--csv out.csv]
"""
import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from statcom_eval.gaintune import gain_from_dqdv, probe_dqdv
from statcom_eval.simcore import GridEquivalent, StatcomParams, StatcomState, simulate, step_metrics


def step(p, l_henry, gain, v0=1.01, v1=0.99):
    g = GridEquivalent(l_henry=l_henry, v_src=v1)
    start = StatcomState.initial(p, v0, g.s_scc)
    return step_metrics(simulate(replace(p, gain=gain), g, 1.5, state=start), start.q_act)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", help="also write the table as CSV")
    ap.add_argument("--points", type=int, default=7)
    args = ap.parse_args()

    p = StatcomParams(qcm_enabled=False)
    ls = np.linspace(0.01, 0.025, args.points)
    gains = [gain_from_dqdv(probe_dqdv(p, GridEquivalent(l_henry=l))) for l in ls]
    frozen = gains[0]
    rows = []
    for l_henry, gain in zip(ls, gains):
        ts, os_ = step(p, l_henry, gain)
        tf, of = step(p, l_henry, frozen)
        rows.append((l_henry, gain, ts, os_, tf, of))

    print(f"{'L (H)':>8} {'gain':>7} {'settle':>8} {'overshoot':>10} | {'frozen settle':>13} {'overshoot':>10}")
    for l_henry, gain, ts, os_, tf, of in rows:
        print(f"{l_henry:8.4f} {gain:7.3f} {ts:8.3f} {os_:10.1%} | {tf:13.3f} {of:10.1%}")
    settle = [r[2] for r in rows]
    print(f"\nscheduled settling spread: x{max(settle) / min(settle):.2f}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l_henry", "gain", "settle_s", "overshoot", "frozen_settle_s", "frozen_overshoot"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())

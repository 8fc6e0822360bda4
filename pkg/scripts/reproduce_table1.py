"""Probe dQ/dV across the three calibration reactances and compare with
the published table, the analytic short-circuit level and the gain law.

    python scripts/reproduce_table1.py [--extra 0.02454,0.0289]
"""
import argparse
import math
import warnings

from statcom_eval.gaintune import TABLE1, fit_gain_reactance, gain_from_dqdv, probe_dqdv, reactance_from_gain
from statcom_eval.simcore import GridEquivalent, StatcomParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--extra", default="0.02454,0.0289", help="additional reactances to probe (H)")
    args = ap.parse_args()

    p = StatcomParams()
    print(f"{'L (H)':>8} {'dQ/dV':>8} {'table':>8} {'analytic':>9} {'gain':>7} {'table':>7}")
    for pt in TABLE1.points:
        dqdv = probe_dqdv(p, GridEquivalent(l_henry=pt.l_henry))
        analytic = 230.0**2 / (2 * math.pi * 60 * pt.l_henry) / 1000
        print(f"{pt.l_henry:8.5f} {dqdv:8.3f} {pt.dqdv:8.3f} {analytic:9.3f} "
              f"{gain_from_dqdv(dqdv):7.3f} {pt.gain:7.2f}")

    for l_henry in (float(x) for x in args.extra.split(",") if x):
        dqdv = probe_dqdv(p, GridEquivalent(l_henry=l_henry))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gain = gain_from_dqdv(dqdv)
        print(f"{l_henry:8.5f} {dqdv:8.3f} {'':>8} {'':>9} {gain:7.3f}")

    fit = fit_gain_reactance(TABLE1)
    print("\ngain(L) coefficients:", ", ".join(f"{c:.6g}" for c in fit.coeffs))
    print(f"valid gain range: {fit.valid_gain_range[0]:.3f} to {fit.valid_gain_range[1]:.3f}")
    for gain in (14.2, 12.8):
        print(f"EMS gain {gain:5.2f} -> L = {reactance_from_gain(gain, fit):.5f} H")


if __name__ == "__main__":
    main()

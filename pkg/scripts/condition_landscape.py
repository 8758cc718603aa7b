"""Solvability-condition landscape over the coupling-parameter plane.

Sweeps nu1+nu2 against nu3+nu4 and writes a CSV of the three compressional
nondegeneracy quantities plus the variable-coefficient smallness bound, for
plotting the admissible region.
"""

import argparse
import csv
import sys

import numpy as np

from stresstomo.material import MaterialParams, check_pwave_conditions, check_variable_conditions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=-1.5)
    ap.add_argument("--hi", type=float, default=1.5)
    ap.add_argument("--steps", type=int, default=31)
    ap.add_argument("--diameter", type=float, default=2.0)
    ap.add_argument("--out", default="condition_landscape.csv")
    args = ap.parse_args()

    grid_vals = np.linspace(args.lo, args.hi, args.steps)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["nu12", "nu34", "weight_sum", "leading_weight", "trace_uniqueness",
             "smallness_bound", "all_pass"]
        )
        for n12 in grid_vals:
            for n34 in grid_vals:
                p = MaterialParams(nu=(float(n12), 0.0, float(n34), 0.0))
                c = check_pwave_conditions(p)
                try:
                    v = check_variable_conditions(p, args.diameter)
                    bound = v.values.get("smallness_bound", np.nan)
                    ok = c.all_pass and v.all_pass
                except ValueError:
                    bound, ok = np.nan, False
                w.writerow(
                    [n12, n34, c.values["weight_sum"], c.values["leading_weight"],
                     c.values["trace_uniqueness"], bound, int(ok)]
                )
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

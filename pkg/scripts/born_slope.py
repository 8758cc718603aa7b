"""Born-linearization remainder versus stress scale.

Writes a CSV table (scale, remainder, slope): the complex propagator
remainder ||U - E + i s L|| shrinks quadratically with the stress scale s,
so the slope column should sit near 2 per decade.
"""

import argparse
import csv
import sys

import numpy as np

from stresstomo.fields import Grid3, random_bump_sym
from stresstomo.forward import mixed_transform, rytov_family
from stresstomo.geometry import build_sphere_family
from stresstomo.material import MaterialParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=24)
    ap.add_argument("--directions", type=int, default=12)
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--scales", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--out", default="born_slope.csv")
    args = ap.parse_args()

    grid = Grid3.cube(args.n)
    rng = np.random.default_rng(args.seed)
    R = random_bump_sym(grid, rng, radius=0.7)
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    fam = build_sphere_family(grid, args.directions)
    lin = mixed_transform(R, params, fam).values
    eye = np.eye(2)

    rows, prev = [], None
    for s in args.scales:
        U = rytov_family(R, params, fam, scale=s).values
        rem = float(np.max(np.abs(U - eye + 1j * s * lin)))
        slope = "" if prev is None else float(np.log10(prev[1] / rem) / np.log10(prev[0] / s))
        rows.append((s, rem, slope))
        print(f"scale {s:.0e}: remainder {rem:.3e}" + (f", slope {slope:.3f}" if slope else ""))
        prev = (s, rem)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "remainder", "slope"])
        w.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

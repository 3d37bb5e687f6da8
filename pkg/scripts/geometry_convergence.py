"""Observed convergence orders of the discrete geometry against closed forms.

Errors are max-norms over the box [0.25, 0.75]^3, which one-sided edge
differences never reach. Needs sympy (a test extra) and reuses the test oracle.

    python3 scripts/geometry_convergence.py --sizes 16 32 64
"""
import argparse
import math
import sys
from pathlib import Path

import numpy as np
import sympy as s

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import T, X1, X2, GraphGeometry  # noqa: E402

from evflow.geometry import build_atlas  # noqa: E402
from evflow.model import Grid3  # noqa: E402

SURFACES = {
    "trig": 0.3 * s.sin(2 * X1 + T) * s.cos(1.5 * X2 - T / 2) + 0.1 * s.exp(X1 * X2),
    "bump": 0.2 * s.exp(-((X1 - 0.5 - 0.2 * T) ** 2 + (X2 - 0.5) ** 2) / 0.3),
    "narrow-bump": 0.2 * s.exp(-((X1 - 0.5 - 0.2 * T) ** 2 + (X2 - 0.5) ** 2) / 0.08),
}
QUANTITIES = ("gamma", "gamma0", "bigG", "v")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--surface", nargs="*", default=list(SURFACES), choices=list(SURFACES))
    args = ap.parse_args()
    for name in args.surface:
        oracle = GraphGeometry(SURFACES[name])
        errs = {q: [] for q in QUANTITIES}
        for n in args.sizes:
            g = Grid3.unit_cube(n, n, n)
            mesh = g.mesh()
            box = np.all([(c >= 0.25) & (c <= 0.75) for c in mesh], axis=0)
            atlas = build_atlas(GraphGeometry.evaluate(SURFACES[name], mesh), g)
            for q in QUANTITIES:
                errs[q].append(np.abs(getattr(atlas, q) - oracle.field(q, mesh))[box].max())
        print(f"[{name}]")
        for q, e in errs.items():
            orders = " ".join(f"{math.log2(a / b):5.2f}" for a, b in zip(e, e[1:]))
            print(f"  {q:7s} errors {' '.join(f'{x:.2e}' for x in e)}  orders {orders}")


if __name__ == "__main__":
    main()

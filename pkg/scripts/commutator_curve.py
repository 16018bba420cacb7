"""Commutator norm against omega for a gaussian and a homogeneous symbol."""

from __future__ import annotations

import argparse

import numpy as np

from oneshm.grid import TorusGrid, raised_cosine_bump
from oneshm.operators import commutation_decay_experiment
from oneshm.shell import c0_lift, homogeneous_lift


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--kmax", type=int, default=8, help="omega runs over 2^-2 .. 2^-kmax")
    args = ap.parse_args(argv)
    grid = TorusGrid(2, args.N)
    phi = raised_cosine_bump(grid, (0.5, 0.5), power=2)
    omegas = [2.0**-k for k in range(2, args.kmax + 1)]
    gauss = c0_lift(lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=1)), 2)
    hom = homogeneous_lift(lambda e: e[:, 0] + 0j, 2)
    a = commutation_decay_experiment(phi, gauss, omegas)
    b = commutation_decay_experiment(phi, hom, omegas)
    print("# omega gaussian homogeneous")
    for w, x, y in zip(omegas, a.norms, b.norms):
        print(f"{w:.6g} {x:.6e} {y:.6e}")
    print(f"# ratio gaussian {a.ratio:.3g} decaying={a.decaying}; "
          f"homogeneous {b.ratio:.3g} decaying={b.decaying}")


if __name__ == "__main__":
    main()

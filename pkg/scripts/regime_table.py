"""Cell placement of a plane wave under several omega schedules."""

from __future__ import annotations

import argparse

from oneshm.grid import TorusGrid, constant_window
from oneshm.measures import empirical_measure
from oneshm.sequences import PlaneWave, ScaleSchedule
from oneshm.shell import ShellBins


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--delta", type=float, default=0.15)
    ap.add_argument("--powers", type=float, nargs="+", default=[2.0, 1.5, 1.0, 0.75, 0.5])
    args = ap.parse_args(argv)
    grid = TorusGrid(2, args.N)
    bins = ShellBins(2, delta=args.delta)
    fam = PlaneWave(grid, (1, 0))
    print("# p kind dir_bin rad_bin fraction")
    for p in args.powers:
        em = empirical_measure(fam, [constant_window(grid)], ScaleSchedule.power(p), args.n, bins)
        c = em.dominant_cell()
        info = bins.cell_info(c)
        print(f"{p:g} {info['kind']} {info['dir_bin']} {info.get('rad_bin')} {em.fraction([c]):.6f}")


if __name__ == "__main__":
    main()

"""Regenerate the packaged calibration file.

Fits the composition constant M (ratio W[W[omega]^q] / W[omega] for the
unit-mass ball density of radius 0.3 on the unit ball) and the Wolff
bound constant kappa (u / W[omega] for the elliptic Dirac solution).

    python3 demos/calibrate.py [output.json]
"""
import os
import sys

import numpy as np

from plm.grid import RadialGrid, unit_ball_volume
from plm.measures import Atom, DiscreteMeasure
from plm.operators import OperatorSpec
from plm.potential import (Calibration, WolffConfig, density_measure, wolff_bound_check,
                           wolff_composition_check)
from plm.solver import solve_elliptic

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT = os.path.join(HERE, "..", "src", "plm", "data", "calibration.json")

CASES_M = [(3, 2.0, 1.5), (3, 2.0, 2.0), (3, 2.0, 2.5), (2, 1.5, 1.2)]
CASES_KAPPA = [(3, 2.0), (2, 1.5)]


def ball_density(grid, radius=0.3):
    c = 1.0 / (unit_ball_volume(grid.N) * radius ** grid.N)
    return density_measure(grid, lambda r: np.where(np.asarray(r) < radius, c, 0.0))


def main(path=DEFAULT):
    cal = Calibration(path)
    for N, p, q in CASES_M:
        g = RadialGrid(N, 1.0, 64)
        cfg = WolffConfig(p, N, quadrature=60)
        rep = wolff_composition_check([ball_density(g)], q, cfg, n_samples=6)
        cal.set(rep.constant, "M", N, p, q)
        print(f"M   N={N} p={p} q={q}: {rep.constant:.6g}")
    for N, p in CASES_KAPPA:
        g = RadialGrid(N, 1.0, 256)
        om = DiscreteMeasure(g, "omega", (Atom((0.0,), 1.0),))
        u = solve_elliptic(g, om, OperatorSpec(p))
        rep = wolff_bound_check([(u, om)], WolffConfig(p, N))
        cal.set(rep.constant, "kappa", N, p)
        print(f"kappa N={N} p={p}: {rep.constant:.6g}")
    cal.save(path)


if __name__ == "__main__":
    main(*sys.argv[1:])

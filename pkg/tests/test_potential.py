import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter, UnsupportedRegime
from plm.grid import Grid, RadialGrid
from plm.measures import Atom, DiscreteMeasure
from plm.potential import (Calibration, WolffConfig, ball_mass, bessel_point_criterion, delta0,
                           density_measure, elliptic_capacity, exp_integrability_check, h_eta,
                           maximal_fractional, wolff_bound_check, wolff_composition_check,
                           wolff_many, wolff_potential, as_potential_measure)
from plm.operators import OperatorSpec
from plm.solver import solve_elliptic


def _dirac3(w=1.0, n=32):
    g = RadialGrid(3, 1.0, n)
    return DiscreteMeasure(g, "omega", (Atom((0.0,), w),))


@given(st.floats(1.2, 2.8), st.floats(0.05, 0.9), st.floats(0.1, 10))
def test_dirac_closed_form(p, d, m):
    om = _dirac3(m)
    R = 1.0
    a = (p - 3) / (p - 1)
    exact = m ** (1 / (p - 1)) * (R ** a - d ** a) / a
    assert wolff_potential(om, d, WolffConfig(p, 3, R=R)) == pytest.approx(exact, rel=1e-12)


def test_infinite_at_atom_and_zero_outside():
    om = _dirac3()
    cfg = WolffConfig(2.0, 3, R=1.0)
    assert math.isinf(wolff_potential(om, 0.0, cfg))
    assert wolff_potential(om, 1.5, cfg) == 0.0


def test_uniform_density_center():
    g = RadialGrid(3, 1.0, 64)
    dens = density_measure(g, lambda r: np.ones_like(r))
    val = wolff_potential(dens, 0.0, WolffConfig(2.0, 3, R=0.5))
    assert val == pytest.approx(4 / 3 * math.pi * 0.25 / 2, rel=1e-3)


def test_ball_mass_radial_density():
    g = RadialGrid(3, 1.0, 64)
    dens = density_measure(g, lambda r: np.ones_like(r))
    m = ball_mass(dens, 0.0, np.array([0.25, 0.5]))
    assert np.allclose(m, 4 / 3 * math.pi * np.array([0.25, 0.5]) ** 3, rtol=1e-6)


def test_cartesian_cloud_scaling():
    g = Grid(2, 16, box=[(-1, 1), (-1, 1)])
    om = DiscreteMeasure(g, "omega", (Atom((0.3, 0.1), 0.5),), density=np.ones(g.n_nodes))
    cfg = WolffConfig(1.5, 2)
    X = np.array([[0.0, 0.0], [-0.5, 0.4]])
    a = wolff_many(om.scaled(3.0), X, cfg)
    assert np.allclose(a, 3.0 ** 2 * wolff_many(om, X, cfg), rtol=1e-10)


def test_config_regimes():
    with pytest.raises(UnsupportedRegime):
        WolffConfig(3.0, 2)
    with pytest.raises(UnsupportedRegime):
        WolffConfig(2.0, 2)
    assert WolffConfig(2.0, 2, borderline=True).borderline
    with pytest.raises(InvalidParameter):
        WolffConfig(2.0, 3, R=-1)


def test_borderline_logarithmic():
    g = Grid(2, 8, box=[(-1, 1), (-1, 1)])
    om = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),))
    cfg = WolffConfig(2.0, 2, R=1.0, borderline=True)
    assert wolff_potential(om, (0.5, 0.0), cfg) == pytest.approx(math.log(2.0))


def test_h_eta_and_maximal():
    assert h_eta(0.7, 2.0) == pytest.approx(math.log(2) ** -2)
    assert h_eta(0.1, 0.0) == 1.0
    assert h_eta(0.01, 1.0) == pytest.approx(1 / math.log(100))
    om = _dirac3()
    assert maximal_fractional(om, 0.5, 0.0, 1.0, 2.0) == pytest.approx(2.0)
    assert math.isinf(maximal_fractional(om, 0.0, 0.0, 1.0, 2.0))


def test_delta0_and_bessel():
    assert delta0(1.0, 2.0) == pytest.approx(math.log(2) / 6, abs=1e-15)
    assert delta0(2.0, 3.0) == pytest.approx((1 / 24) ** 2 * 3 * math.log(2))
    assert not bessel_point_criterion(2.0, 3, 2.5)["null"]
    assert bessel_point_criterion(2.0, 3, 3.0)["null"]
    assert bessel_point_criterion(2.0, 3, 4.0)["null"]


def test_capacity_ball_3d():
    # annulus condenser between radii 0.5 and 1: 4 pi r R / (R - r) = 4 pi
    g = RadialGrid(3, 1.0, 128)
    assert elliptic_capacity(("ball", 0.5), 2.0, g)["capacity"] == pytest.approx(4 * math.pi, rel=1e-3)


def test_point_capacity_3d_vanishes():
    caps = [elliptic_capacity(("points", [[0.0]]), 2.0, RadialGrid(3, 1.0, n))["capacity"]
            for n in (32, 64, 128)]
    assert caps[0] > caps[1] > caps[2]
    assert caps[1] / caps[2] == pytest.approx(2.0, rel=0.05)


def test_point_capacity_2d_logarithmic():
    inv = [1 / elliptic_capacity(("points", [[0.0]]), 2.0, RadialGrid(2, 1.0, n))["capacity"]
           for n in (16, 32, 64)]
    slopes = np.diff(inv) / math.log(2)
    assert np.allclose(slopes, 1 / (2 * math.pi), rtol=0.02)


def test_capacity_rejects_boundary():
    g = Grid(2, 16)
    with pytest.raises(InvalidParameter):
        elliptic_capacity(("ball", 0.6, [0.5, 0.5]), 2.0, g)


def test_capacity_monotone_in_set():
    g = Grid(2, 24, box=[(-1, 1), (-1, 1)])
    small = elliptic_capacity(("ball", 0.2), 3.0, g)["capacity"]
    big = elliptic_capacity(("ball", 0.4), 3.0, g)["capacity"]
    assert big > small > 0


def test_wolff_bound_check_radial():
    sols = []
    for w in (0.5, 2.0):
        om = _dirac3(w, 64)
        sols.append((solve_elliptic(om.grid, om, OperatorSpec(2.0)), om))
    r = wolff_bound_check(sols, WolffConfig(2.0, 3))
    assert r.verdict and r.extra["spread"] < 1e-6  # linear problem: kappa independent of mass
    assert r.constant == pytest.approx(1 / (4 * math.pi), rel=0.1)


def test_composition_exponents():
    g = RadialGrid(3, 1.0, 32)
    om = DiscreteMeasure(g, "omega", (Atom((0.0,), 1.0),))
    r = wolff_composition_check([om], 2.0, WolffConfig(2.0, 3), n_samples=4)
    assert r.extra["lhs_exponent"][0] == pytest.approx(2.0, rel=0.01)
    assert r.extra["rhs_exponent"][0] == pytest.approx(1.0, rel=0.01)
    bad = wolff_composition_check([om], 3.5, WolffConfig(2.0, 3))
    assert "hypothesis_violation" in bad.flags and not bad.verdict


def test_exp_integrability_calibrates_then_checks(tmp_path):
    g = Grid(2, 12, box=[(-1, 1), (-1, 1)])
    om = DiscreteMeasure(g, "omega", (), density=np.ones(g.n_nodes))
    cfg = WolffConfig(1.5, 2)
    cal = Calibration(str(tmp_path / "cal.json"))
    d0 = delta0(1.0, 1.5)
    r1 = exp_integrability_check(om, 1.0, 0.5 * d0, cfg, cal)
    assert "calibrated_here" in r1.flags and r1.verdict
    cal.save()
    again = Calibration(str(tmp_path / "cal.json"))
    r2 = exp_integrability_check(om.scaled(0.5), 1.0, 0.5 * d0, cfg, again)
    assert "calibrated_here" not in r2.flags
    with pytest.raises(InvalidParameter):
        exp_integrability_check(om, 1.0, 2 * d0, cfg, cal)


def test_packaged_calibration():
    cal = Calibration.packaged()
    assert cal.get("M", 3, 2.0, 2.0) > 0
    assert Calibration.key("M", 3, 2, 2) == "M|N=3|p=2.0|q=2.0|beta=-"


def test_negative_measure_rejected():
    g = RadialGrid(3, 1.0, 8)
    with pytest.raises(InvalidParameter):
        as_potential_measure(DiscreteMeasure(g, "omega", (Atom((0.0,), -1.0),)))

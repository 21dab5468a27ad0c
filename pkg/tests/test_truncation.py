import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter
from plm.grid import Grid
from plm.solver import Field, SpaceTimeField
from plm.truncation import (TruncationFamily, band_fraction, decreasing_rearrangement,
                            landes_approx, levelset_decay, singular_flux, steklov_average,
                            truncate, truncated_energy)

reals = st.floats(-10, 10)
pos = st.floats(0.1, 5)


def _deriv(f, r, h=1e-6):
    return (f(r + h) - f(r - h)) / (2 * h)


@given(reals, pos)
def test_tk_clamp_and_primitive(r, k):
    T = TruncationFamily("T", k=k)
    assert truncate(r, T) == pytest.approx(max(min(r, k), -k))
    Tb = TruncationFamily("Tbar", k=k)
    if abs(abs(r) - k) > 1e-4:
        assert _deriv(lambda s: truncate(s, Tb), r) == pytest.approx(truncate(r, T), abs=1e-5)
    assert truncate(r, Tb) >= 0


@given(reals, pos)
def test_tcal(r, k):
    # d/dr Tcal = T_k'(r) r
    Tc = TruncationFamily("Tcal", k=k)
    if abs(abs(r) - k) > 1e-4:
        expect = r if abs(r) < k else 0.0
        assert _deriv(lambda s: truncate(s, Tc), r) == pytest.approx(expect, abs=1e-5)


@given(reals, pos)
def test_cut_and_primitive(r, m):
    H = truncate(r, TruncationFamily("H", m=m))
    assert 0 <= H <= 1
    if abs(r) <= m:
        assert H == 1
    if abs(r) >= 2 * m:
        assert H == 0
    Hb = TruncationFamily("Hbar", m=m)
    if min(abs(abs(r) - m), abs(abs(r) - 2 * m)) > 1e-4:
        assert _deriv(lambda s: truncate(s, Hb), r) == pytest.approx(H, abs=1e-5)


@given(st.floats(0, 20), pos, st.floats(0, 3))
def test_ramp_s(r, m, ell):
    S = TruncationFamily("S", m=m, ell=ell)
    f = lambda s: truncate(s, S)  # noqa: E731
    assert f(r) >= 0
    assert _deriv(f, r) >= -1e-6 and _deriv(f, r) <= 1 + 1e-6
    if r <= m:
        assert f(r) == 0


@given(reals, pos, st.floats(0, 3))
def test_shifted_truncation(r, k, ell):
    v = truncate(r, TruncationFamily("Tkl", k=k, ell=ell))
    assert v == pytest.approx(np.clip(r - ell, 0, k) + np.clip(r + ell, -k, 0))


def test_family_validation():
    for kw in ({"kind": "T"}, {"kind": "H", "m": -1}, {"kind": "Tkl", "k": 1},
               {"kind": "H", "m": 1, "k": 1}, {"kind": "zz"}):
        with pytest.raises(InvalidParameter):
            TruncationFamily(**kw)


def test_band_fraction_linear():
    g = Grid(1, 10, box=[(0, 1)])
    u = g.nodes[:, 0]
    frac = band_fraction(g, u, 0.25, 0.6)
    assert np.sum(frac * g.elem_vol) == pytest.approx(0.35)


def test_truncated_energy_exact_for_linear():
    g = Grid(1, 10, box=[(0, 1)])
    u = Field(g, 2 * g.nodes[:, 0])  # |u'| = 2, {0.5 <= u <= 1.5} has length 0.5
    assert truncated_energy(u, 0.5, 1.0, 2.0) == pytest.approx(4 * 0.5)
    assert truncated_energy(u, 0.0, 10.0, 2.0) == pytest.approx(4.0)


def test_singular_flux_linear_and_empty():
    g = Grid(1, 20, box=[(0, 1)])
    u = Field(g, g.nodes[:, 0])
    assert singular_flux(u, 0.25) == pytest.approx(1.0)  # band length m, |u'|^2 = 1
    assert math.isnan(singular_flux(u, 5.0))


def test_levelset_decay_power_law():
    g = Grid(1, 4000, box=[(0, 1)], T=1.0, nt=1)
    x = g.nodes[:, 0]
    v = np.maximum(x, 1e-6) ** -0.5  # meas{v >= k} = k^-2
    u = SpaceTimeField(g, np.stack([v, v]))
    r = levelset_decay(u, np.geomspace(1.2, 40, 8), 2.0)
    assert r.slope == pytest.approx(-2.0, abs=0.05) and r.verdict
    assert not levelset_decay(u, np.geomspace(1.2, 40, 8), 3.0).verdict
    with pytest.raises(InvalidParameter):
        levelset_decay(u, [1, 2, 3, 4], 2.0)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_rearrangement_equimeasurable(vals):
    V = np.array(vals)
    rear = decreasing_rearrangement(V)
    assert np.all(np.diff(rear.values) <= 0)
    for t in (0.0, 1.0, 10.0):
        assert rear.distribution(t) == pytest.approx(np.sum(np.abs(V) > t))
    assert rear.integral(lambda s: s) == pytest.approx(np.sum(np.abs(V)))


def test_steklov_exact_for_linear():
    times = np.linspace(0, 1, 11)
    z = 3 * times[:, None]
    t, avg = steklov_average(z, 0.2, "+", times)
    assert np.allclose(avg[:, 0], 3 * (t + 0.1))
    t, avg = steklov_average(z, 0.2, "-", times)
    assert np.allclose(avg[:, 0], 3 * (t - 0.1))
    with pytest.raises(InvalidParameter):
        steklov_average(z, 2.0, "+", times)


def test_landes_constant_target():
    times = np.linspace(0, 1, 101)
    w = np.ones((101, 1))
    y = landes_approx(w, 5.0, np.zeros(1), times)
    assert np.allclose(y[:, 0], 1 - np.exp(-5 * times))


@given(st.floats(0.5, 50))
def test_landes_converges_with_nu(nu):
    times = np.linspace(0, 1, 51)
    w = np.sin(3 * times)[:, None]
    y = landes_approx(w, nu, w[0], times)
    y2 = landes_approx(w, 2 * nu, w[0], times)
    assert np.max(np.abs(y2 - w)) <= np.max(np.abs(y - w)) + 1e-12

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter
from plm.grid import Grid, RadialGrid, sphere_area, unit_ball_volume


def test_ball_constants():
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(2) == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("N,n", [(1, 7), (2, 5)])
def test_volumes(N, n):
    g = Grid(N, n, box=[(-1, 1)] * N)
    assert g.elem_vol.sum() == pytest.approx(2.0 ** N)
    assert g.lumped.sum() == pytest.approx(2.0 ** N)
    assert g.h == pytest.approx(2 / n)
    assert g.diam == pytest.approx(2 * math.sqrt(N))


def test_radial_volumes():
    g = RadialGrid(3, 1.0, 16)
    assert g.elem_vol.sum() == pytest.approx(4 * math.pi / 3)
    assert g.lumped.sum() == pytest.approx(4 * math.pi / 3)
    assert not g.interior[-1] and g.interior[0]


def test_gradient_exact_for_affine():
    g = Grid(2, 6, box=[(-1, 1), (-1, 1)])
    u = 3 * g.nodes[:, 0] - 2 * g.nodes[:, 1] + 1
    gr = g.grad(u)
    assert np.allclose(gr[..., 0], 3) and np.allclose(gr[..., 1], -2)


@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_hat_weights_partition(x, y):
    g = Grid(2, 8, box=[(-1, 1), (-1, 1)])
    idx, w = g.hat_weights((x, y))
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= -1e-12)
    assert np.allclose(w @ g.nodes[idx], (x, y))


def test_hat_weights_reject_outside():
    with pytest.raises(InvalidParameter):
        Grid(2, 4).hat_weights((1.5, 0.2))


@given(st.floats(-2, 2))
def test_fraction_below_linear_1d(s):
    g = Grid(1, 1 + 3, box=[(0, 1)])
    u = g.nodes[:, 0]
    frac = g.fraction_below(u, s)
    assert np.sum(frac * g.elem_vol) == pytest.approx(min(max(s, 0), 1), abs=1e-12)


@given(st.floats(-0.2, 2.2))
def test_fraction_below_linear_2d(s):
    g = Grid(2, 4)
    u = g.nodes[:, 0] + g.nodes[:, 1]  # area of {x + y <= s} in the unit square
    c = min(max(s, 0.0), 2.0)
    exact = c * c / 2 if c <= 1 else 1 - (2 - c) ** 2 / 2
    assert np.sum(g.fraction_below(u, s) * g.elem_vol) == pytest.approx(exact, abs=1e-12)


def test_norms_and_refinement():
    g = Grid(1, 64, box=[(0, 1)], T=1.0, nt=4)
    v = np.ones((5, g.n_nodes))
    assert g.lp_norm(v, 2) == pytest.approx(1.0)
    r = g.refined()
    assert r.n == 128 and r.nt == 4 and r.box == g.box
    assert g.with_time(2.0, 8).dt == pytest.approx(0.25)


@pytest.mark.parametrize("args", [(3, 4), (2, 1), (2, 4, [(0, 1), (0, 2)])])
def test_rejects(args):
    with pytest.raises(InvalidParameter):
        Grid(*args)


def test_time_axis():
    g = Grid(1, 4, T=0.5, nt=5)
    assert g.dt == pytest.approx(0.1)
    assert np.allclose(g.times, np.linspace(0, 0.5, 6))

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter, UnsupportedRegime
from plm.grid import Grid, RadialGrid
from plm.measures import Atom, DiscreteMeasure, tensor_product
from plm.operators import AbsorptionSpec, OperatorSpec
from plm.potential import WolffConfig
from plm.schemes import (IterationTrace, absorption_solve, beta_p, c_p, compute_thresholds,
                         exponential_iteration, monotone_source_iteration, picard_subcritical,
                         potential_recursion)


def test_threshold_oracles():
    t = compute_thresholds(2.0, 2.0, K=1.0, M=1.0, diam=1.0, N=2, tau=1.0, kappa=1.0, beta=1.0)
    assert t.A1 == pytest.approx(8.0, abs=1e-12)
    assert t.lambda0 == pytest.approx(0.125, abs=1e-12)
    assert t.b0 == pytest.approx(1 / (8 * math.pi), rel=1e-12)
    assert t.delta0 == pytest.approx(math.log(2) / 6, abs=1e-15)
    assert t.M0 == pytest.approx(math.log(2) / 6, abs=1e-15)
    assert (beta_p(2), beta_p(1.5), c_p(2), c_p(1.5)) == (1.0, pytest.approx(3.0), 2.0, pytest.approx(4.0))


@given(st.floats(1.2, 4), st.floats(0.1, 3), st.floats(1.01, 4), st.floats(0.1, 10))
def test_thresholds_decrease_in_M_and_K(p, extra, K, M):
    q = p - 1 + extra
    t = compute_thresholds(p, q, K, M)
    assert compute_thresholds(p, q, K, 2 * M).lambda0 < t.lambda0
    t2 = compute_thresholds(p, q, 2 * K, M)
    assert t2.lambda0 < t.lambda0 and t2.b0 < t.b0


@given(st.floats(1.05, 6))
def test_lambda0_p2_closed_form(q):
    # at p = 2, K = M = 1 the threshold is 2^{-2 - 1/(q - 1)}, increasing in q
    assert compute_thresholds(2.0, q, 1.0, 1.0).lambda0 == pytest.approx(2 ** (-2 - 1 / (q - 1)))


def test_thresholds_validation_and_calibration():
    with pytest.raises(InvalidParameter):
        compute_thresholds(2.0, 0.5, 1.0, 1.0)
    with pytest.raises(InvalidParameter):
        compute_thresholds(2.0, 7.7, 1.0)  # no calibrated M
    t = compute_thresholds(2.0, 2.0, 1.0, N=3)
    assert t.M_provenance.startswith("calibration:") and t.M > 0


def test_trace_bookkeeping():
    tr = IterationTrace("x")
    l1 = lambda v: float(np.sum(np.abs(v)))  # noqa: E731
    tr.record(np.array([1.0, 2.0]), None, l1, 3.0, True)
    tr.record(np.array([0.5, 2.0]), np.array([1.0, 2.0]), l1, 3.0, False)
    assert len(tr) == 2 and not tr.monotone and tr.first_violation == 2
    assert tr.rows()[1] == (2, 2.0, 0.5, 3.0, "fail")
    assert tr.to_dict()["scheme"] == "x"


def test_potential_recursion_small_and_large():
    g = RadialGrid(3, 1.0, 32)
    cfg = WolffConfig(2.0, 3)
    small = potential_recursion(DiscreteMeasure(g, "omega", (Atom((0.0,), 0.05),)), 0.1, 0.0, 2.0, cfg)
    assert small.converged and small.extra["smallness_ok"]
    assert all(np.diff(small.sup) >= -1e-12)
    big = potential_recursion(DiscreteMeasure(g, "omega", (Atom((0.0,), 50.0),)), 0.1, 0.0, 2.0, cfg)
    assert not big.converged and big.first_violation is not None


@pytest.fixture(scope="module")
def small_grid():
    return Grid(2, 24, box=[(-1, 1), (-1, 1)], T=0.5, nt=8)


def _dirac(g, w):
    return tensor_product(DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), w),)), 1.0)


def test_monotone_source(small_grid):
    tr, u = monotone_source_iteration(_dirac(small_grid, 0.5), None, 3.0, small_grid, OperatorSpec(2.0))
    assert tr.converged and tr.monotone and tr.bound_respected
    assert u.values.shape == (small_grid.nt + 1, small_grid.n_nodes)


def test_picard(small_grid):
    G = AbsorptionSpec.power(1.5, source=True)
    tr, u = picard_subcritical(_dirac(small_grid, 0.3), None, 0.5, G, small_grid, OperatorSpec(2.0))
    assert tr.converged and tr.extra["K_bounded"]
    tr0, _ = picard_subcritical(_dirac(small_grid, 0.3), None, 0.0, G, small_grid, OperatorSpec(2.0))
    assert len(tr0) == 1
    with pytest.raises(UnsupportedRegime):
        picard_subcritical(_dirac(small_grid, 0.3), None, 0.5, AbsorptionSpec.power(2.5, source=True),
                           small_grid, OperatorSpec(2.0))


def test_exponential(small_grid):
    tr, _ = exponential_iteration(_dirac(small_grid, 0.3), None, 1.0, 1.0, 2, small_grid, OperatorSpec(2.0))
    assert tr.converged and tr.monotone
    assert tr.extra["maximal_condition_ok"]
    with pytest.raises(InvalidParameter):
        exponential_iteration(_dirac(small_grid, 0.3), None, 1.0, 1.0, 1, small_grid, OperatorSpec(2.0))


def test_absorption_budget_and_sweep():
    g = RadialGrid(3, 1.0, 32)
    om = DiscreteMeasure(g, "omega", (Atom((0.0,), 1.0),))
    u = absorption_solve(om, None, AbsorptionSpec.power(2.0), g, OperatorSpec(2.0))
    assert u.meta["budget_ok"]
    u4 = absorption_solve(om, None, AbsorptionSpec.power(4.0), g, OperatorSpec(2.0))
    sweep = u4.meta["refinement_sweep"]
    assert sweep["collapsing"] and sweep["verdict"] == "expected-nonexistence"

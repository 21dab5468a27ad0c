import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter
from plm.exponents import (ExpEnvelope, PowerEnvelope, TabulatedEnvelope, ZeroEnvelope,
                           compute_exponents, exp_remainder, subcritical_integral, tail_bound)


def test_frozen_values():
    e = compute_exponents(2.0, 3)
    assert (e.p1, e.pc, e.mc, e.pe) == (1.75, pytest.approx(5 / 3), 1.25, 3.0)
    e = compute_exponents(2.0, 2)
    assert e.pc == 2.0 and math.isinf(e.pe) and e.borderline
    assert compute_exponents(1.5, 1).p1 == 1.5


@given(st.floats(1.01, 6.0), st.integers(1, 5))
def test_range_equivalence(p, N):
    e = compute_exponents(p, N)
    assert e.gradient_integrable == (e.mc > 1)
    assert e.valid_range == (p > e.p1)
    assert (e.mc > 1) == (p > e.p1)
    assert e.pc > e.mc - 1e-12  # pc - mc = p/N + N/(N+1) - 1 > 0


@pytest.mark.parametrize("p,N", [(1.0, 2), (0.5, 1), (2.0, 0), (2.0, 1.5), (float("nan"), 2)])
def test_rejects(p, N):
    with pytest.raises(InvalidParameter):
        compute_exponents(p, N)


def test_exp_remainder_oracles():
    assert exp_remainder(0.0, 1) == 0.0
    assert exp_remainder(1.0, 2) == pytest.approx(math.e - 2, abs=1e-15)
    assert exp_remainder(1e-8, 3) == pytest.approx(1e-24 / 6, rel=1e-10)


@given(st.floats(-5, 5), st.integers(1, 5))
def test_exp_remainder_matches_definition(s, l):
    ref = math.exp(s) - sum(s ** j / math.factorial(j) for j in range(l))
    assert exp_remainder(s, l) == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_power_integral_closed_form():
    assert subcritical_integral(PowerEnvelope(1.0), 2.0) == pytest.approx(1.0)
    assert math.isinf(subcritical_integral(PowerEnvelope(2.0), 2.0))
    assert math.isinf(subcritical_integral(ExpEnvelope(1.0, 1.0), 2.0))
    assert subcritical_integral(ZeroEnvelope(), 2.0) == 0.0


def test_generic_envelope_matches_power():
    val = subcritical_integral(lambda s: np.asarray(s) ** 1.5, 2.0)
    assert val == pytest.approx(2.0, rel=1e-6)
    assert math.isinf(subcritical_integral(lambda s: np.asarray(s) ** 2.0, 2.0))


def test_tabulated_tail():
    s = np.geomspace(1, 100, 50)
    tab = TabulatedEnvelope(s, s ** 1.2)
    assert subcritical_integral(tab, 2.0) == pytest.approx(1 / 0.8, rel=1e-3)


def test_tail_bound_rules():
    assert tail_bound(PowerEnvelope(1.0), 1.0, 2.0, 2.0) == pytest.approx(1.0)
    with pytest.raises(InvalidParameter):
        tail_bound(PowerEnvelope(1.0), 1.0, 1.0, 2.0)
    with pytest.raises(InvalidParameter):
        subcritical_integral(lambda s: -np.asarray(s), 2.0)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import InvalidParameter
from plm.exponents import exp_remainder
from plm.operators import AbsorptionSpec, OperatorSpec


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_flux_is_energy_gradient(p, rng):
    op = OperatorSpec(p, eps_reg=0.0)
    xi = rng.normal(size=(20, 2))
    h = 1e-6
    num = np.stack([(op.energy_density(xi + h * e) - op.energy_density(xi - h * e)) / (2 * h)
                    for e in np.eye(2)], axis=-1)
    assert np.allclose(num, op.flux(xi), rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("p", [1.3, 2.0, 4.0])
def test_structure_checks(p):
    op = OperatorSpec(p)
    assert op.check_monotone() and op.check_growth()


def test_default_regularization():
    assert OperatorSpec(2.0).eps_reg == 0.0
    assert OperatorSpec(3.0, data_scale=2.0).eps_reg == pytest.approx(2e-6)


def test_weighted_form():
    op = OperatorSpec(2.0, c1=0.5, c2=2.0, weight=np.array([1.0, 1.5]))
    assert op.form == "weighted"
    with pytest.raises(InvalidParameter):
        OperatorSpec(2.0, c1=0.5, c2=2.0, weight=3.0)


@pytest.mark.parametrize("kw", [{"p": 1.0}, {"p": 2.0, "c1": 2.0, "c2": 1.0}, {"p": 2.0, "a": -1.0},
                                {"p": 2.0, "eps_reg": -1.0}])
def test_operator_rejects(kw):
    with pytest.raises(InvalidParameter):
        OperatorSpec(**kw)


def test_hessian_matches_flux(rng):
    op = OperatorSpec(3.0, eps_reg=0.0)
    xi = rng.normal(size=(5, 2))
    alpha, gamma = op.hessian_parts(xi)
    h = 1e-6
    for j, e in enumerate(np.eye(2)):
        num = (op.flux(xi + h * e) - op.flux(xi - h * e)) / (2 * h)
        ana = alpha[:, None] * e + gamma[:, None] * xi * xi[:, j:j + 1]
        assert np.allclose(num, ana, rtol=1e-5)


@given(st.floats(-3, 3), st.floats(0.5, 4))
def test_power_absorption(r, q):
    G = AbsorptionSpec.power(q)
    assert G(r) * r >= 0
    assert AbsorptionSpec.power(q, source=True)(r) == pytest.approx(-G(r))
    assert G.prim_value(r) == pytest.approx(abs(r) ** (q + 1) / (q + 1))


@given(st.floats(-2, 2), st.integers(1, 3), st.floats(1, 2))
def test_exponential_absorption(r, l, beta):
    G = AbsorptionSpec.exponential(1.0, beta, l)
    assert G(r) == pytest.approx(np.sign(r) * exp_remainder(abs(r) ** beta, l), abs=1e-14)
    # antiderivative by Gauss quadrature
    s = np.linspace(0, abs(r), 2001)
    ref = np.trapezoid(exp_remainder(s ** beta, l), s)
    assert G.prim_value(r) == pytest.approx(ref, rel=1e-4, abs=1e-10)


def test_derivative_matches(rng):
    for G in (AbsorptionSpec.power(2.5), AbsorptionSpec.exponential(0.7, 1.5, 2)):
        r = rng.uniform(0.1, 2, 10)
        h = 1e-6
        assert np.allclose(G.deriv_value(r), (G(r + h) - G(r - h)) / (2 * h), rtol=1e-5)


def test_absorption_flags():
    assert AbsorptionSpec().is_none and not AbsorptionSpec().is_source
    assert AbsorptionSpec.power(2, source=True).is_source
    assert AbsorptionSpec.power(2).monotone
    with pytest.raises(InvalidParameter):
        AbsorptionSpec(kind="bogus")
    with pytest.raises(InvalidParameter):
        AbsorptionSpec(kind="custom")

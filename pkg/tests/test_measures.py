import numpy as np
import pytest
from hypothesis import given, strategies as st

from plm.errors import BudgetInfeasible, InvalidParameter
from plm.grid import Grid, RadialGrid
from plm.measures import (Atom, DiscreteMeasure, approximation_schedule, classify_diffuse,
                          decompose, inf_measure, measure_from_json, mollify_sequence,
                          narrow_action, tensor_product)


def _grid():
    return Grid(2, 16, box=[(-1, 1), (-1, 1)], T=0.5, nt=5)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0.01, 10))
def test_atom_load_preserves_mass(x, y, w):
    g = _grid()
    om = DiscreteMeasure(g, "omega", (Atom((x, y), w),))
    assert om.load().sum() == pytest.approx(w)
    assert om.total_variation == pytest.approx(w)


def test_tensor_product_masses():
    g = _grid()
    om = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 2.0),), density=np.ones(g.n_nodes))
    mu = tensor_product(om, lambda t: 2 * t)  # int_0^T 2t = T^2
    assert mu.atom_mass(mu.atoms[0]) == pytest.approx(2.0 * 0.25)
    dens_mass = g.dt * sum(g.lumped @ mu.density[n] for n in range(g.nt))
    assert dens_mass == pytest.approx(4.0 * 0.25)
    assert mu.total_variation == pytest.approx(0.5 + 1.0)


def test_tensor_product_rejects():
    g = _grid()
    om = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),))
    with pytest.raises(InvalidParameter):
        tensor_product(om, lambda t: -1.0)
    with pytest.raises(InvalidParameter):
        tensor_product(tensor_product(om, 1.0), 1.0)


def test_timed_atom_lands_in_one_slab():
    g = _grid()
    mu = DiscreteMeasure(g, "Q", (Atom((0.0, 0.0), 1.0, t=0.25),))
    loads = mu.loads()
    assert np.count_nonzero(loads.sum(axis=1)) == 1
    assert g.dt * loads.sum() == pytest.approx(1.0)
    with pytest.raises(InvalidParameter):
        DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0, t=0.25),))


def test_signed_mass_and_scaling():
    g = _grid()
    om = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0), Atom((0.5, 0.5), -0.4)))
    assert om.mass == pytest.approx(0.6)
    assert om.total_variation == pytest.approx(1.4)
    assert not om.is_nonnegative
    assert om.scaled(2.0).total_variation == pytest.approx(2.8)
    assert (om + om).mass == pytest.approx(1.2)


def test_mollify_preserves_mass():
    g = _grid()
    mu = tensor_product(DiscreteMeasure(g, "omega", (Atom((0.1, -0.2), 1.5),)), 1.0)
    seq = mollify_sequence(mu, [0.5, 0.25, 0.125])
    for m in seq:
        assert m.total_variation == pytest.approx(mu.total_variation, rel=1e-12)
        assert not m.atoms
    with pytest.raises(InvalidParameter):
        mollify_sequence(mu, [0.1, 0.2])


def test_mollified_converge_narrowly():
    g = Grid(2, 64, box=[(-1, 1), (-1, 1)], T=0.5, nt=2)
    mu = tensor_product(DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),)), 1.0)
    ref = narrow_action(mu)
    errs = [np.max(np.abs(narrow_action(m) - ref)) for m in mollify_sequence(mu, [0.4, 0.2, 0.1])]
    assert errs[0] > errs[1] > errs[2]


def test_decompose_budgets_and_loads():
    g = _grid()
    dens = 1.0 + 0.5 * np.cos(g.nodes[:, 0])
    flux = 0.1 * g.centroids
    mu0 = DiscreteMeasure(g, "Q", (), np.tile(dens, (g.nt, 1)), np.tile(flux, (g.nt, 1, 1)))
    for eps in (0.01, 0.1):
        d = decompose(mu0, eps)
        assert d.budgets_hold()
        rebuilt = d.measure()
        inner = g.interior
        for n in range(1, g.nt + 1):
            assert np.allclose(rebuilt.load(None, n)[inner], mu0.load(None, n)[inner], atol=1e-10)


def test_decompose_signed_is_infeasible():
    g = _grid()
    flux = 0.3 * np.random.default_rng(1).normal(size=(g.n_elem, 2))
    mu0 = DiscreteMeasure(g, "Q", (), np.ones((g.nt, g.n_nodes)), np.tile(flux, (g.nt, 1, 1)))
    with pytest.raises(BudgetInfeasible):
        decompose(mu0, 0.01)


def test_schedule_budgets():
    g = _grid()
    mu = tensor_product(DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),),
                                        density=np.full(g.n_nodes, 0.5)), 1.0)
    entries = approximation_schedule(mu, 4, 0.1)
    ref = 1.1 * mu.total_variation
    for e in entries:
        assert e.budget_total <= ref * (1 + 1e-10)
        assert e.budget_gh <= 0.1 + 1e-12
        assert np.all(e.rho >= 0) and np.all(e.eta >= 0)
    scales = [e.scale for e in entries]
    assert all(a > b for a, b in zip(scales, scales[1:]))


def test_classification():
    g = Grid(2, 8, box=[(-1, 1), (-1, 1)])
    om = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),), density=np.ones(g.n_nodes))
    c = classify_diffuse(om, 2.0)
    assert c["points_cap_null"] and not c["diffuse"]
    assert classify_diffuse(om, 2.5)["diffuse"]
    gr = RadialGrid(3, 1.0, 8)
    o3 = DiscreteMeasure(gr, "omega", (Atom((0.0,), 1.0),))
    assert classify_diffuse(o3, 2.0, q=2.5)["admissible"]  # pe = 3
    assert not classify_diffuse(o3, 2.0, q=3.5)["admissible"]


def test_inf_measure():
    g = Grid(2, 8, box=[(-1, 1), (-1, 1)])
    a = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 1.0),), density=np.full(g.n_nodes, 2.0))
    b = DiscreteMeasure(g, "omega", (Atom((0.0, 0.0), 0.3), Atom((0.5, 0.0), 1.0)),
                        density=np.full(g.n_nodes, 1.0))
    m = inf_measure(a, b)
    assert len(m.atoms) == 1 and m.atoms[0].weight == pytest.approx(0.3)
    assert np.allclose(m.density, 1.0)


def test_from_json():
    g = _grid()
    mu = measure_from_json({"atoms": [{"x": [0, 0], "w": 2.0}, {"x": [0.5, 0], "w": 1.0, "t": 0.2}],
                            "density": "0*x + 1"}, g)
    assert mu.ambient == "Q" and len(mu.atoms) == 2
    om = measure_from_json({"ambient": "omega", "atoms": [{"x": [0, 0], "w": 2.0}]}, g)
    assert om.ambient == "omega" and om.mass == pytest.approx(2.0)

"""Bounded measures on a grid: atoms, densities, divergence and time-derivative
parts, their decompositions, approximating schedules and classification.

Every measure is tied to one mesh.  On ``Q = Omega x (0, T)`` the slab
``n`` is ``(t_{n-1}, t_n]``; densities and fluxes are stored slab-wise,
the time-derivative part ``h`` at the time levels.  ``load(grid, n)``
returns the nodal load of slab ``n`` per unit time, which is what the
solver consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import legendre
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .errors import BudgetInfeasible, InvalidParameter, SupportViolation
from .exponents import compute_exponents
from .grid import RadialGrid, smooth_test_set

__all__ = [
    "Atom",
    "DiscreteMeasure",
    "Decomposition",
    "ScheduleEntry",
    "tensor_product",
    "mollify_sequence",
    "decompose",
    "approximation_schedule",
    "inf_measure",
    "classify_diffuse",
    "narrow_action",
    "measure_from_json",
]

_GX, _GW = legendre.leggauss(8)


def slab_integrals(F: Callable, times: np.ndarray) -> np.ndarray:
    """``int_{t_{n-1}}^{t_n} F`` for every slab (8-point Gauss per slab)."""
    a, b = times[:-1], times[1:]
    tq = 0.5 * (b - a)[:, None] * (_GX[None, :] + 1.0) + a[:, None]
    vals = np.asarray(np.vectorize(F, otypes=[float])(tq), dtype=float)
    if np.any(vals < 0):
        raise InvalidParameter("time profile must be nonnegative")
    return 0.5 * (b - a) * (vals @ _GW)


@dataclass(frozen=True)
class Atom:
    """Point mass ``weight * delta_x``.

    On ``Q`` an atom is either localized in time (``t`` set) or a tensor
    atom ``weight * delta_x (x) F`` with time profile ``profile`` (``None``
    means ``F = 1``).  ``singular`` overrides automatic classification.
    """
    x: tuple
    weight: float
    t: Optional[float] = None
    profile: Optional[Callable] = None
    singular: Optional[bool] = None

    def is_singular(self, p: float, N: int) -> bool:
        if self.singular is not None:
            return self.singular
        if self.t is not None:
            return True
        return p <= N


@dataclass
class DiscreteMeasure:
    """Measure on ``Omega`` (``ambient="omega"``) or ``Q`` (``ambient="Q"``).

    Parameters
    ----------
    grid : Grid or RadialGrid
    ambient : {"omega", "Q"}
    atoms : sequence of Atom
    density : array, optional
        ``(n_nodes,)`` on ``Omega``; ``(nt, n_nodes)`` slab values on ``Q``.
    flux : array, optional
        Element vector field ``g``: ``(n_elem, gdim)`` or ``(nt, n_elem, gdim)``.
    timeder : array, optional
        ``h`` at time levels, ``(nt + 1, n_nodes)`` (Q only).
    """
    grid: object
    ambient: str = "omega"
    atoms: tuple = ()
    density: Optional[np.ndarray] = None
    flux: Optional[np.ndarray] = None
    timeder: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        if self.ambient not in ("omega", "Q"):
            raise InvalidParameter("ambient must be 'omega' or 'Q'")
        g = self.grid
        self.atoms = tuple(self.atoms)
        for a in self.atoms:
            x = np.atleast_1d(np.asarray(a.x, dtype=float))
            g.hat_weights(x)  # raises for points outside the mesh
            if a.t is not None and (self.ambient != "Q" or not (0.0 <= a.t <= g.T)):
                raise InvalidParameter("time-localized atoms need a Q-measure and 0 <= t <= T")
        q = self.ambient == "Q"
        if self.density is not None:
            self.density = np.array(self.density, dtype=float)
            shape = (g.nt, g.n_nodes) if q else (g.n_nodes,)
            if q and self.density.shape == (g.n_nodes,):
                self.density = np.tile(self.density, (g.nt, 1))
            if self.density.shape != shape:
                raise InvalidParameter(f"density must have shape {shape}")
        if self.flux is not None:
            self.flux = np.array(self.flux, dtype=float)
            shape = (g.nt, g.n_elem, g.gdim) if q else (g.n_elem, g.gdim)
            if q and self.flux.shape == (g.n_elem, g.gdim):
                self.flux = np.tile(self.flux, (g.nt, 1, 1))
            if self.flux.shape != shape:
                raise InvalidParameter(f"flux must have shape {shape}")
        if self.timeder is not None:
            if not q:
                raise InvalidParameter("time-derivative part needs a Q-measure")
            self.timeder = np.array(self.timeder, dtype=float)
            if self.timeder.shape != (g.nt + 1, g.n_nodes):
                raise InvalidParameter("timeder must have shape (nt + 1, n_nodes)")

    # -- loads --------------------------------------------------------------
    def _atom_time_weights(self, a: Atom) -> np.ndarray:
        """Fraction of an atom's mass in each slab, times its F-mass."""
        g = self.grid
        if a.t is not None:
            w = np.zeros(g.nt)
            n = min(max(int(math.ceil(a.t / g.dt - 1e-12)), 1), g.nt)
            w[n - 1] = 1.0
            return w
        if a.profile is None:
            return np.full(g.nt, g.dt)
        cache = self.__dict__.setdefault("_profile_cache", {})
        key = id(a.profile)
        if key not in cache:
            cache[key] = (a.profile, slab_integrals(a.profile, g.times))
        return cache[key][1]

    def diffuse_load(self, n: Optional[int] = None) -> np.ndarray:
        g = self.grid
        out = np.zeros(g.n_nodes)
        idx = None if n is None else n - 1
        if self.density is not None:
            out += g.lumped * (self.density if idx is None else self.density[idx])
        if self.flux is not None:
            f = self.flux if idx is None else self.flux[idx]
            out += g.D.T @ (f * g.elem_vol[:, None]).ravel()
        if self.timeder is not None and idx is not None:
            out += g.lumped * (self.timeder[n] - self.timeder[n - 1]) / g.dt
        return out

    def load(self, grid=None, n: Optional[int] = None) -> np.ndarray:
        """Nodal load ``<mu, phi_i>``; on ``Q`` per unit time of slab ``n``."""
        g = self.grid
        if grid is not None and grid is not g:
            raise InvalidParameter("measure lives on a different grid")
        if self.ambient == "Q":
            if n is None or not 1 <= n <= g.nt:
                raise InvalidParameter("Q-measures need a slab index 1..nt")
        out = self.diffuse_load(n)
        for a in self.atoms:
            idx, w = g.hat_weights(np.atleast_1d(a.x))
            if self.ambient == "Q":
                tw = self._atom_time_weights(a)[n - 1] / g.dt
            else:
                tw = 1.0
            np.add.at(out, idx, a.weight * tw * w)
        return out

    def loads(self) -> np.ndarray:
        if self.ambient == "omega":
            return self.load()[None]
        return np.stack([self.load(None, n) for n in range(1, self.grid.nt + 1)])

    # -- masses -------------------------------------------------------------
    def atom_mass(self, a: Atom) -> float:
        if self.ambient == "omega":
            return a.weight
        return a.weight * float(np.sum(self._atom_time_weights(a)))

    def _diffuse_loads(self):
        g = self.grid
        if self.ambient == "omega":
            return self.diffuse_load()[None], np.ones(1)
        return (np.stack([self.diffuse_load(n) for n in range(1, g.nt + 1)]),
                np.full(g.nt, g.dt))

    @property
    def total_variation(self) -> float:
        """Atom masses plus the total variation of the diffuse nodal loads."""
        L, w = self._diffuse_loads()
        return float(sum(abs(self.atom_mass(a)) for a in self.atoms) + np.sum(w @ np.abs(L)))

    @property
    def mass(self) -> float:
        """Signed total ``mu(Q)`` against test functions equal to 1 inside."""
        L, w = self._diffuse_loads()
        inner = self.grid.interior
        return float(sum(self.atom_mass(a) for a in self.atoms) + np.sum(w @ L[:, inner]))

    @property
    def is_nonnegative(self) -> bool:
        if any(a.weight < 0 for a in self.atoms):
            return False
        if self.density is not None and np.any(self.density < 0):
            return False
        if self.flux is not None or self.timeder is not None:
            L, _ = self._diffuse_loads()
            return bool(np.all(L >= -1e-14 * max(1.0, np.abs(L).max())))
        return True

    @property
    def is_zero(self) -> bool:
        return self.total_variation == 0.0

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(
            self.grid, self.ambient,
            tuple(replace(a, weight=c * a.weight) for a in self.atoms),
            None if self.density is None else c * self.density,
            None if self.flux is None else c * self.flux,
            None if self.timeder is None else c * self.timeder,
            self.label)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.grid is not self.grid or other.ambient != self.ambient:
            raise InvalidParameter("measures live on different grids")

        def _sum(a, b):
            if a is None:
                return b
            return a if b is None else a + b
        return DiscreteMeasure(self.grid, self.ambient, self.atoms + other.atoms,
                               _sum(self.density, other.density), _sum(self.flux, other.flux),
                               _sum(self.timeder, other.timeder))

    def singular_atoms(self, p: float) -> tuple:
        N = self.grid.N
        return tuple(a for a in self.atoms if a.is_singular(p, N))

    def to_dict(self) -> dict:
        return {
            "ambient": self.ambient,
            "atoms": [{"x": [float(v) for v in np.atleast_1d(a.x)], "w": a.weight,
                       **({"t": a.t} if a.t is not None else {})} for a in self.atoms],
            "has_density": self.density is not None,
            "has_flux": self.flux is not None,
            "has_timeder": self.timeder is not None,
            "total_variation": self.total_variation,
        }


# -- constructors -----------------------------------------------------------

def tensor_product(omega: DiscreteMeasure, F, T: Optional[float] = None) -> DiscreteMeasure:
    """``omega (x) F`` on ``Q``; ``F`` is a callable or a constant.

    ``T`` is only a consistency check against ``omega.grid.T``.
    """
    if omega.ambient != "omega":
        raise InvalidParameter("tensor_product needs an Omega-measure")
    g = omega.grid
    if T is not None and not math.isclose(T, g.T):
        raise InvalidParameter("T does not match the grid horizon")
    Fc = (lambda t, c=float(F): c) if not callable(F) else F
    Fslab = slab_integrals(Fc, g.times)  # also rejects negative F
    atoms = tuple(replace(a, profile=Fc, t=None) for a in omega.atoms)
    dens = None if omega.density is None else (Fslab / g.dt)[:, None] * omega.density[None, :]
    flux = None if omega.flux is None else (Fslab / g.dt)[:, None, None] * omega.flux[None]
    return DiscreteMeasure(g, "Q", atoms, dens, flux, None, omega.label)


def _hat_kernel(grid, x0, s):
    r = grid.distance_to(np.atleast_1d(x0))
    k = np.clip(1.0 - r / s, 0.0, None)
    return k


def _mollified_atom_density(grid, a: Atom, s: float) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(a.x, dtype=float))
    if isinstance(grid, RadialGrid):
        if s >= grid.R:
            raise SupportViolation(f"scale {s} reaches the boundary")
    elif s >= grid.boundary_distance(x0):
        raise SupportViolation(f"scale {s} exceeds the atom-to-boundary distance")
    k = _hat_kernel(grid, x0, s)
    Z = float(k @ grid.lumped)
    if Z <= 0:
        raise SupportViolation(f"scale {s} catches no grid node near {x0}")
    return k / Z


def mollify_sequence(mu: DiscreteMeasure, scales: Sequence[float]) -> list:
    """Replace every atom by the normalized hat kernel of radius ``s``.

    Mass is preserved exactly (discrete normalization).  Time-localized
    atoms are spread over slabs by a hat of the same radius in time.
    Density, flux and time-derivative parts are kept.
    """
    scales = [float(s) for s in scales]
    if any(s <= 0 for s in scales):
        raise InvalidParameter("scales must be positive")
    if any(b > a for a, b in zip(scales, scales[1:])):
        raise InvalidParameter("scales must be nonincreasing")
    g = mu.grid
    out = []
    for s in scales:
        if mu.ambient == "omega":
            dens = np.zeros(g.n_nodes) if mu.density is None else mu.density.copy()
            for a in mu.atoms:
                dens += a.weight * _mollified_atom_density(g, a, s)
            out.append(DiscreteMeasure(g, "omega", (), dens, mu.flux, None, mu.label))
            continue
        dens = np.zeros((g.nt, g.n_nodes)) if mu.density is None else mu.density.copy()
        for a in mu.atoms:
            k = _mollified_atom_density(g, a, s)
            if a.t is not None:
                tw = _time_hat(g, a.t, s)
            else:
                tw = mu._atom_time_weights(a)
            dens += a.weight * (tw / g.dt)[:, None] * k[None, :]
        out.append(DiscreteMeasure(g, "Q", (), dens, mu.flux, mu.timeder, mu.label))
    return out


def _time_hat(grid, t0, s):
    """Slab fractions of a unit hat of radius ``s`` centred at ``t0`` (clipped to (0, T))."""
    t = grid.times

    def cdf(x):
        z = np.clip((x - t0) / s, -1.0, 1.0)
        return np.where(z < 0, 0.5 * (1 + z) ** 2, 1.0 - 0.5 * (1 - z) ** 2)
    w = np.diff(cdf(t))
    tot = w.sum()
    if tot <= 0:
        w = np.zeros(grid.nt)
        n = min(max(int(math.ceil(t0 / grid.dt - 1e-12)), 1), grid.nt)
        w[n - 1] = 1.0
        return w
    return w / tot


def narrow_action(mu: DiscreteMeasure, test_set=None) -> np.ndarray:
    """``<mu, psi_j>`` for the fixed smooth test set (time-independent ``psi``)."""
    phis = smooth_test_set(mu.grid) if test_set is None else np.atleast_2d(test_set)
    if mu.ambient == "omega":
        return phis @ mu.load()
    return mu.grid.dt * np.sum(mu.loads() @ phis.T, axis=0)


# -- decomposition ----------------------------------------------------------

@dataclass
class Decomposition:
    """``mu0 = f - div g + h_t`` plus singular atoms."""
    grid: object
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    mu_s_plus: tuple = ()
    mu_s_minus: tuple = ()
    budget_total: float = 0.0
    budget_gh: float = 0.0
    reference_mass: float = 0.0
    eps: float = 0.0
    theta: float = 0.0
    p: float = 2.0

    def measure(self, include_singular: bool = True) -> DiscreteMeasure:
        atoms = self.mu_s_plus + tuple(replace(a, weight=-a.weight) for a in self.mu_s_minus)
        return DiscreteMeasure(self.grid, "Q", atoms if include_singular else (),
                               self.f, self.g, self.h)

    def budgets_hold(self, eps=None, tol=1e-12) -> bool:
        eps = self.eps if eps is None else eps
        ok1 = self.budget_total <= (1 + eps) * self.reference_mass * (1 + tol) + tol
        ok2 = self.budget_gh <= eps * (1 + tol) + tol
        return bool(ok1 and ok2)


def _norms(grid, f, g, h, p):
    """``||f||_1``, ``||g||_{p'}``, ``||h||_X`` on slabs 1..nt."""
    dt = grid.dt
    pp = p / (p - 1.0)
    nf = float(dt * np.sum(np.abs(f[:, grid.interior]) @ grid.lumped[grid.interior]))
    ng = float((dt * np.sum(np.sum(g * g, axis=-1) ** (pp / 2) @ grid.elem_vol)) ** (1 / pp))
    nh = grid.lp_norm(h, p) + grid.grad_lp_norm(h, p)
    return nf, ng, nh


def decompose(mu0: DiscreteMeasure, eps: float, p: float = 2.0) -> Decomposition:
    """Split a diffuse Q-measure as ``(f, g, h)`` meeting the budgets

        ||f||_1 + ||g||_{p'} + ||h||_X <= (1 + eps) mu0(Q),   ||g||_{p'} + ||h||_X <= eps.

    The given flux and time-derivative parts are kept with a factor
    ``theta``; the rest is moved into ``f`` through the exact discrete
    divergence and time difference, so the slab loads are reproduced.
    ``theta`` is the largest value meeting both budgets.
    """
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if mu0.ambient != "Q":
        raise InvalidParameter("decompose works on Q-measures")
    grid = mu0.grid
    nt, nn = grid.nt, grid.n_nodes
    # diffuse atoms enter f through their hat interpolants
    f0 = np.zeros((nt, nn)) if mu0.density is None else mu0.density.copy()
    for a in mu0.atoms:
        if a.t is not None:
            raise InvalidParameter("time-localized atoms are singular; not a diffuse measure")
        idx, w = grid.hat_weights(np.atleast_1d(a.x))
        tw = mu0._atom_time_weights(a) / grid.dt
        f0[:, idx] += a.weight * tw[:, None] * (w / grid.lumped[idx])[None, :]
    g0 = np.zeros((nt, grid.n_elem, grid.gdim)) if mu0.flux is None else mu0.flux
    h0 = np.zeros((nt + 1, nn)) if mu0.timeder is None else mu0.timeder
    rest = np.zeros((nt, nn))
    if mu0.flux is not None:
        for n in range(nt):
            rest[n] += grid.D.T @ (g0[n] * grid.elem_vol[:, None]).ravel()
    if mu0.timeder is not None:
        rest += grid.lumped * np.diff(h0, axis=0) / grid.dt
    with np.errstate(divide="ignore", invalid="ignore"):
        rest_density = np.where(grid.lumped > 0, rest / grid.lumped, 0.0)
    _, cg, ch = _norms(grid, np.zeros((nt, nn)), g0, h0, p)
    c_gh = cg + ch
    ref = float(grid.dt * np.sum((f0 + rest_density)[:, grid.interior] @ grid.lumped[grid.interior]))

    def parts(theta):
        f = f0 + (1.0 - theta) * rest_density
        f[:, ~grid.interior] = 0.0
        return f, theta * g0, theta * h0

    def cost(theta):
        f, g, h = parts(theta)
        nf, ng, nh = _norms(grid, f, g, h, p)
        return nf + ng + nh

    budget = (1.0 + eps) * ref
    slack = 1e-12 * max(1.0, abs(ref))
    theta_max = 1.0 if c_gh <= eps else eps / c_gh
    if cost(theta_max) <= budget + slack:
        theta = theta_max
    else:
        res = minimize_scalar(cost, bounds=(0.0, theta_max), method="bounded",
                              options={"xatol": 1e-12})
        lo = float(res.x) if cost(res.x) < cost(0.0) else 0.0
        if cost(lo) > budget + slack:
            raise BudgetInfeasible(
                f"eps={eps}: minimal cost {cost(lo):.6g} exceeds (1+eps) mu(Q) = {budget:.6g}")
        hi = theta_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if cost(mid) <= budget + slack:
                lo = mid
            else:
                hi = mid
        theta = lo
    f, g, h = parts(theta)
    nf, ng, nh = _norms(grid, f, g, h, p)
    return Decomposition(grid, f, g, h, (), (), nf + ng + nh, ng + nh, ref, eps, theta, p)


# -- approximation schedule -------------------------------------------------

@dataclass
class ScheduleEntry:
    n: int
    scale: float
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    rho: np.ndarray  # slab densities of the mollified positive singular part
    eta: np.ndarray  # same for the negative part
    budget_total: float
    budget_gh: float
    l1_to_base: float
    grid: object = field(repr=False, default=None)

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.grid, "Q", (), self.f + self.rho - self.eta, self.g, self.h)


def _kernel_matrix(points, weights, s):
    """Sparse column-normalized hat kernel ``K_ij = k_ij w_j / Z_j``."""
    tree = cKDTree(points)
    pairs = tree.sparse_distance_matrix(tree, s, output_type="ndarray")
    k = np.clip(1.0 - pairs["v"] / s, 0.0, None)
    n = points.shape[0]
    K = sp.csr_matrix((k, (pairs["i"], pairs["j"])), shape=(n, n))
    Z = weights @ K
    return K @ sp.diags(weights / np.where(Z > 0, Z, 1.0))


def _smoothing_operator(grid, s):
    """Mass-preserving L^1 contraction ``f -> K_s f`` with a hat kernel."""
    K = _kernel_matrix(grid.nodes, grid.lumped, s)

    def apply(v):
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, grid.n_nodes)
        return (K @ flat.T).T.reshape(v.shape)
    return apply


def _smooth_elements(grid, g, s):
    """Smooth an element field by the same kernel acting on centroids."""
    K = _kernel_matrix(grid.centroids, grid.elem_vol, s)
    out = np.empty_like(g)
    for n in range(g.shape[0]):
        out[n] = K @ g[n]
    return out


def approximation_schedule(mu: DiscreteMeasure, n_max: int, eps: float, p: float = 2.0,
                           s0: Optional[float] = None, base: Optional[Decomposition] = None):
    """Data ``(f_n, g_n, h_n, rho_n, eta_n)`` for ``n = 1..n_max``.

    Entry ``n`` smooths the diffuse decomposition at scale ``s0 2^{-n}``
    (the last entry keeps the base decomposition unchanged) and mollifies
    the singular atoms at scale ``s0 2^{-(n-1)}``.  The budgets

        ||f_n||_1 + ||g_n||_{p'} + ||h_n||_X + rho_n(Q) <= (1 + eps) |mu|(Q),
        ||g_n||_{p'} + ||h_n||_X <= eps

    are checked for every ``n``.
    """
    if n_max < 1:
        raise InvalidParameter("n_max must be >= 1")
    if mu.ambient != "Q":
        raise InvalidParameter("schedules are built for Q-measures")
    grid = mu.grid
    N = grid.N
    sing = tuple(a for a in mu.atoms if a.is_singular(p, N))
    diff_atoms = tuple(a for a in mu.atoms if not a.is_singular(p, N))
    mu0 = DiscreteMeasure(grid, "Q", diff_atoms, mu.density, mu.flux, mu.timeder)
    plus = DiscreteMeasure(grid, "Q", tuple(a for a in sing if a.weight > 0))
    minus = DiscreteMeasure(grid, "Q", tuple(replace(a, weight=-a.weight) for a in sing if a.weight < 0))
    if base is None:
        if mu0.total_variation > 0:
            base = decompose(mu0, eps, p)
        else:
            z = np.zeros((grid.nt, grid.n_nodes))
            base = Decomposition(grid, z, np.zeros((grid.nt, grid.n_elem, grid.gdim)),
                                 np.zeros((grid.nt + 1, grid.n_nodes)), eps=eps, p=p)
    base.mu_s_plus, base.mu_s_minus = plus.atoms, minus.atoms
    if s0 is None:
        s0 = 0.25 * (grid.R if isinstance(grid, RadialGrid) else grid.L)
    ref = (1.0 + eps) * (base.reference_mass + plus.total_variation + minus.total_variation)
    entries = []
    zero_slab = np.zeros((grid.nt, grid.n_nodes))
    for n in range(1, n_max + 1):
        s_diff = s0 * 2.0 ** (-n)
        s_atom = s0 * 2.0 ** (-(n - 1))
        if n == n_max or not np.any(base.f) and not np.any(base.g) and not np.any(base.h):
            f, g, h = base.f, base.g, base.h
        else:
            K = _smoothing_operator(grid, s_diff)
            f = K(base.f)
            f[:, ~grid.interior] = 0.0
            g = _smooth_elements(grid, base.g, s_diff) if np.any(base.g) else base.g
            h = K(base.h) if np.any(base.h) else base.h
        rho = mollify_sequence(plus, [s_atom])[0].density if plus.atoms else zero_slab
        eta = mollify_sequence(minus, [s_atom])[0].density if minus.atoms else zero_slab
        nf, ng, nh = _norms(grid, f, g, h, p)
        rho_mass = float(grid.dt * np.sum((rho + eta) @ grid.lumped))
        tot = nf + ng + nh + rho_mass
        if tot > ref * (1 + 1e-10) + 1e-14 or ng + nh > eps * (1 + 1e-10):
            raise BudgetInfeasible(f"schedule entry {n} breaks the budget ({tot:.6g} > {ref:.6g})")
        l1 = float(grid.dt * np.sum(np.abs(f - base.f) @ grid.lumped))
        entries.append(ScheduleEntry(n, s_atom, f, g, h, rho, eta, tot, ng + nh, l1, grid))
    return entries


# -- inf and classification -------------------------------------------------

def _atom_key(a: Atom):
    return (tuple(np.round(np.atleast_1d(a.x).astype(float), 12)), a.t, id(a.profile) if a.profile else None)


def inf_measure(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    """Atomwise and pointwise minimum of two nonnegative measures.

    Atoms are compared with atoms (same location, time and profile),
    densities with densities.
    """
    if mu.grid is not nu.grid or mu.ambient != nu.ambient:
        raise InvalidParameter("measures live on different grids")
    for m in (mu, nu):
        if not m.is_nonnegative:
            raise InvalidParameter("inf_measure needs nonnegative measures")
        if m.flux is not None or m.timeder is not None:
            raise InvalidParameter("inf_measure supports atoms and densities only")
    nu_atoms = {}
    for a in nu.atoms:
        nu_atoms[_atom_key(a)] = nu_atoms.get(_atom_key(a), 0.0) + a.weight
    mu_atoms = {}
    order = []
    for a in mu.atoms:
        k = _atom_key(a)
        if k not in mu_atoms:
            order.append(a)
        mu_atoms[k] = mu_atoms.get(k, 0.0) + a.weight
    atoms = []
    for a in order:
        k = _atom_key(a)
        if k in nu_atoms:
            w = min(mu_atoms[k], nu_atoms[k])
            if w > 0:
                atoms.append(replace(a, weight=w))
    if mu.density is None or nu.density is None:
        dens = None
    else:
        dens = np.minimum(mu.density, nu.density)
    return DiscreteMeasure(mu.grid, mu.ambient, tuple(atoms), dens)


def classify_diffuse(omega: DiscreteMeasure, p: float, N: Optional[int] = None,
                     q: Optional[float] = None) -> dict:
    """Diffuse/singular verdicts for the parts of an Omega-measure.

    Densities are diffuse.  Points have zero elliptic capacity iff
    ``p <= N``, so atoms are elliptically singular then, and so are their
    lifts ``delta (x) F`` in ``Q``.  With ``q`` given, atoms are admissible
    for the absorption problem iff ``p q / (q + 1 - p) > N``, i.e. ``q < pe``.
    """
    N = omega.grid.N if N is None else int(N)
    e = compute_exponents(p, N)
    if q is not None and not q > p - 1:
        raise InvalidParameter("q must exceed p - 1")
    point_null = p <= N
    parts = []
    if omega.density is not None and np.any(omega.density != 0):
        parts.append({"part": "density", "elliptic": "diffuse", "parabolic": "diffuse"})
    for a in omega.atoms:
        rec = {"part": "atom", "x": [float(v) for v in np.atleast_1d(a.x)], "weight": a.weight,
               "elliptic": "singular" if point_null else "diffuse",
               "parabolic": "singular" if (a.t is not None or point_null) else "diffuse"}
        parts.append(rec)
    out = {"p": p, "N": N, "pe": e.pe, "points_cap_null": point_null, "parts": parts,
           "diffuse": all(r["elliptic"] == "diffuse" for r in parts)}
    if q is not None:
        val = p * q / (q + 1.0 - p)
        out["q"] = q
        out["bessel_index"] = val
        out["admissible"] = (val > N) or not omega.atoms
    return out


# -- JSON description -------------------------------------------------------

_SAFE = {k: getattr(np, k) for k in ("sin", "cos", "exp", "log", "sqrt", "abs", "pi",
                                      "minimum", "maximum", "where", "tanh", "ones_like")}


def _eval_expr(expr: str, **vars_):
    return eval(expr, {"__builtins__": {}}, {**_SAFE, **vars_})  # noqa: S307


def measure_from_json(desc: dict, grid) -> DiscreteMeasure:
    """Build a measure from ``{atoms: [{x, t?, w}], density: expr|path, profile: expr}``.

    Without ``profile`` or time-localized atoms the result is an Omega-measure
    when ``desc["ambient"] == "omega"``, otherwise the tensor lift with
    ``F = 1``.
    """
    atoms = tuple(Atom(tuple(a["x"]), float(a["w"]), a.get("t")) for a in desc.get("atoms", []))
    dens = None
    d = desc.get("density")
    if isinstance(d, str) and d.endswith(".npy"):
        dens = np.load(d)
    elif isinstance(d, str):
        X = grid.nodes
        names = {"x": X[:, 0], "r": X[:, 0]}
        if X.shape[1] > 1:
            names["y"] = X[:, 1]
        dens = np.broadcast_to(np.asarray(_eval_expr(d, **names), dtype=float), (grid.n_nodes,)).copy()
    ambient = desc.get("ambient", "Q")
    timed = tuple(a for a in atoms if a.t is not None)
    spatial = tuple(a for a in atoms if a.t is None)
    omega = DiscreteMeasure(grid, "omega", spatial, dens)
    if ambient == "omega":
        if timed:
            raise InvalidParameter("time-localized atoms need a Q-measure")
        return omega
    prof = desc.get("profile")
    F = (lambda t: float(_eval_expr(prof, t=t))) if prof else 1.0
    mu = tensor_product(omega, F)
    if timed:
        mu = mu + DiscreteMeasure(grid, "Q", timed)
    return mu

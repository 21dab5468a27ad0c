"""Wolff potentials, fractional maximal functions, capacities and the
potential-based inequalities.

Ball masses ``omega(B(x, t))`` (open balls) come from three sources:

* atoms, counted exactly;
* point clouds (nodal or cell-centred densities on Cartesian grids), whose
  ball mass is a step function of ``t``;
* radial densities on a :class:`~plm.grid.RadialGrid`, whose ball mass is
  integrated over spherical caps.

With only atoms and clouds the integrand of ``W`` is a step function times
a power of ``t`` and is integrated in closed form between breakpoints.
Radial densities use Gauss quadrature in ``log t`` on ``quadrature``
panels with the small-``t`` power handled analytically.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre

from .errors import InvalidParameter, StepFailure, UnsupportedRegime
from .exponents import compute_exponents
from .grid import Grid, RadialGrid, sphere_area, unit_ball_volume
from .operators import OperatorSpec
from .solver import _element_hessian
from .truncation import EstimateReport

__all__ = [
    "WolffConfig",
    "PotentialMeasure",
    "as_potential_measure",
    "density_measure",
    "ball_mass",
    "wolff_potential",
    "wolff_many",
    "maximal_fractional",
    "h_eta",
    "elliptic_capacity",
    "bessel_point_criterion",
    "wolff_bound_check",
    "wolff_composition_check",
    "exp_integrability_check",
    "delta0",
    "Calibration",
]

_GX4, _GW4 = legendre.leggauss(4)
_GX6, _GW6 = legendre.leggauss(6)


@dataclass(frozen=True)
class WolffConfig:
    """Parameters of ``W^R_{1,p}``.

    ``R = None`` means ``2 diam(Omega)`` of the measure's grid.  ``p > N``
    is rejected; ``p = N`` (logarithmic potentials) needs ``borderline=True``.
    """
    p: float
    N: int
    R: Optional[float] = None
    quadrature: int = 200
    borderline: bool = False

    def __post_init__(self):
        if not self.p > 1 or self.N < 1:
            raise InvalidParameter("need p > 1 and N >= 1")
        if self.R is not None and not self.R > 0:
            raise InvalidParameter("R must be positive")
        if self.p > self.N or (self.p == self.N and not self.borderline):
            raise UnsupportedRegime(f"p = {self.p} >= N = {self.N}: potential is degenerate")
        if self.quadrature < 4:
            raise InvalidParameter("quadrature needs at least 4 panels")

    def radius(self, grid=None) -> float:
        if self.R is not None:
            return float(self.R)
        if grid is None:
            raise InvalidParameter("R needs a grid to default to 2 diam")
        return 2.0 * grid.diam


@dataclass
class PotentialMeasure:
    """Nonnegative measure in the form consumed by the potential routines.

    ``radial`` measures are radially symmetric about the origin; their
    evaluation points are radii.
    """
    N: int
    atoms_x: np.ndarray
    atoms_w: np.ndarray
    cloud_x: np.ndarray
    cloud_w: np.ndarray
    radial_f: Optional[Callable] = None
    radial_edges: Optional[np.ndarray] = None
    grid: object = None

    @property
    def is_radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    @property
    def total(self) -> float:
        tot = float(self.atoms_w.sum() + self.cloud_w.sum())
        if self.radial_f is not None:
            r, w = self._radial_points()
            tot += float(np.sum(w * self.radial_f(r)))
        return tot

    def scaled(self, c: float) -> "PotentialMeasure":
        f = None if self.radial_f is None else (lambda r, f=self.radial_f: c * f(r))
        return PotentialMeasure(self.N, self.atoms_x, c * self.atoms_w, self.cloud_x,
                                c * self.cloud_w, f, self.radial_edges, self.grid)

    def _radial_points(self):
        e = self.radial_edges
        a, b = e[:-1, None], e[1:, None]
        r = 0.5 * (b - a) * (_GX6[None] + 1) + a
        w = 0.5 * (b - a) * _GW6[None] * sphere_area(self.N) * r ** (self.N - 1)
        return r.ravel(), w.ravel()

    @property
    def is_zero(self) -> bool:
        return self.total == 0.0


def _check_nonneg(w):
    if np.any(np.asarray(w) < 0):
        raise InvalidParameter("potentials need a nonnegative measure")


def as_potential_measure(omega) -> PotentialMeasure:
    """Convert an Omega :class:`~plm.measures.DiscreteMeasure`."""
    if getattr(omega, "ambient", "omega") != "omega":
        raise InvalidParameter("potentials act on Omega-measures")
    if omega.flux is not None:
        raise InvalidParameter("divergence parts have no ball masses")
    grid = omega.grid
    N = grid.N
    ax = np.array([np.atleast_1d(a.x) for a in omega.atoms], dtype=float).reshape(-1, grid.nodes.shape[1])
    aw = np.array([a.weight for a in omega.atoms], dtype=float)
    _check_nonneg(aw)
    if isinstance(grid, RadialGrid):
        f = None
        if omega.density is not None and np.any(omega.density):
            _check_nonneg(omega.density)
            vals = omega.density.copy()
            r_nodes = grid.r
            f = lambda r: np.interp(r, r_nodes, vals)  # noqa: E731
        return PotentialMeasure(N, np.zeros((len(aw), 1)), aw, np.zeros((0, 1)), np.zeros(0),
                                f, grid.r.copy(), grid)
    cx, cw = np.zeros((0, grid.nodes.shape[1])), np.zeros(0)
    if omega.density is not None:
        _check_nonneg(omega.density)
        w = omega.density * grid.lumped
        keep = w > 0
        cx, cw = grid.nodes[keep], w[keep]
    return PotentialMeasure(N, ax, aw, cx, cw, None, None, grid)


def density_measure(grid, func: Callable) -> PotentialMeasure:
    """Absolutely continuous measure ``func dx`` (cell summation on Cartesian grids)."""
    if isinstance(grid, RadialGrid):
        return PotentialMeasure(grid.N, np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)), np.zeros(0),
                                func, grid.r.copy(), grid)
    pts, vol = grid.cell_centers()
    w = np.asarray(func(pts), dtype=float) * vol
    _check_nonneg(w)
    keep = w > 0
    return PotentialMeasure(grid.N, np.zeros((0, grid.N)), np.zeros(0), pts[keep], w[keep], None, None, grid)


# -- ball masses ------------------------------------------------------------

def _cap_fraction(N, r, rho, t):
    """Measure of ``{|y| = r} cap B(x, t)`` with ``|x| = rho``, divided by ``|S^{N-1}| r^{N-1}``."""
    r, rho, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(rho, float), np.asarray(t, float))
    inside = r + rho < t
    outside = (np.abs(r - rho) >= t)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.clip((r * r + rho * rho - t * t) / (2.0 * r * rho), -1.0, 1.0)
    if N == 3:
        part = 0.5 * (1.0 - c)
    elif N == 2:
        part = np.arccos(c) / math.pi
    else:
        part = 0.5 * np.ones_like(c)  # exactly one of +-r lies in the interval
    return np.where(inside, 1.0, np.where(outside, 0.0, part))


def _step_data(pm: PotentialMeasure, x):
    """Sorted distances and masses of atoms and cloud points from ``x``."""
    if pm.is_radial:
        rho = float(np.atleast_1d(x)[0])
        d = np.full(pm.atoms_w.size, abs(rho))
        return d, pm.atoms_w.copy()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.concatenate([np.linalg.norm(pm.atoms_x - x, axis=1), np.linalg.norm(pm.cloud_x - x, axis=1)])
    w = np.concatenate([pm.atoms_w, pm.cloud_w])
    order = np.argsort(d, kind="stable")
    return d[order], w[order]


def ball_mass(pm: PotentialMeasure, x, t) -> np.ndarray:
    """``omega(B(x, t))`` for an array of radii ``t`` (open balls)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    d, w = _step_data(pm, x)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    out = cum[np.searchsorted(d, t, side="left")]
    if pm.radial_f is not None:
        rho = abs(float(np.atleast_1d(x)[0]))
        if rho == 0.0:
            # centred balls: clip the cells at t and integrate exactly
            e = pm.radial_edges
            a = np.broadcast_to(e[:-1], (t.size, e.size - 1))
            b = np.minimum(e[1:][None, :], t[:, None])
            span = np.clip(b - a, 0.0, None)
            r = 0.5 * span[..., None] * (_GX6 + 1) + a[..., None]
            w = 0.5 * span[..., None] * _GW6 * sphere_area(pm.N) * r ** (pm.N - 1)
            return out + np.sum(w * pm.radial_f(r.reshape(-1)).reshape(r.shape), axis=(1, 2))
        r, wr = pm._radial_points()
        fr = pm.radial_f(r) * wr
        frac = _cap_fraction(pm.N, r[None, :], rho, t[:, None])
        out = out + frac @ fr
    return out


# -- Wolff potential --------------------------------------------------------

def _power_primitive(a, t):
    with np.errstate(divide="ignore"):
        return np.log(t) if a == 0 else t ** a / a


def _wolff_steps(d, w, p, N, R):
    """Exact integral for a step mass function with jumps at ``d``."""
    e = 1.0 / (p - 1.0)
    a = (p - N) / (p - 1.0)
    cum = np.cumsum(w)
    sel = d < R
    if not np.any(sel):
        return 0.0
    if d[0] == 0.0 and w[0] > 0:
        return math.inf
    lo = d[sel]
    hi = np.minimum(np.concatenate([d[1:], [np.inf]])[sel], R)
    M = cum[sel]
    val = np.sum(M ** e * (_power_primitive(a, hi) - _power_primitive(a, lo)))
    return float(val)


def wolff_potential(omega, x, cfg: WolffConfig) -> float:
    """``W^R_{1,p}[omega](x) = int_0^R (t^{p-N} omega(B(x,t)))^{1/(p-1)} dt / t``.

    ``+inf`` when an atom sits at ``x``.
    """
    pm = omega if isinstance(omega, PotentialMeasure) else as_potential_measure(omega)
    p, N = cfg.p, cfg.N
    if pm.N != N:
        raise InvalidParameter("dimension mismatch between measure and config")
    R = cfg.radius(pm.grid)
    if pm.radial_f is None:
        d, w = _step_data(pm, x)
        return _wolff_steps(d, w, p, N, R)
    return _wolff_quadrature(pm, x, cfg, R)


def _wolff_quadrature(pm, x, cfg, R):
    p, N = cfg.p, cfg.N
    e = 1.0 / (p - 1.0)
    rho = abs(float(np.atleast_1d(x)[0]))
    if pm.atoms_w.sum() > 0 and rho == 0.0:
        return math.inf
    h = pm.grid.h
    t_lo = min(1e-6 * R, 1e-3 * h)
    edges = np.geomspace(t_lo, R, cfg.quadrature + 1)
    brk = [b for b in (rho,) if t_lo < b < R]
    edges = np.unique(np.concatenate([edges, brk]))
    a, b = np.log(edges[:-1]), np.log(edges[1:])
    s = 0.5 * (b - a)[:, None] * (_GX4[None] + 1) + a[:, None]
    ts = np.exp(s).ravel()
    m = ball_mass(pm, rho, ts)
    integ = (ts ** (p - N) * m) ** e
    val = float(np.sum((0.5 * (b - a)[:, None] * _GW4[None]).ravel() * integ))
    # small-t piece: omega(B) ~ f(x) |B_1| t^N (no atom at x)
    f0 = float(pm.radial_f(np.array([rho]))[0]) if pm.radial_f is not None else 0.0
    val += (f0 * unit_ball_volume(N)) ** e * t_lo ** (p * e) / (p * e)
    return val


def wolff_many(omega, X, cfg: WolffConfig) -> np.ndarray:
    pm = omega if isinstance(omega, PotentialMeasure) else as_potential_measure(omega)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.array([wolff_potential(pm, x, cfg) for x in X])


# -- maximal function -------------------------------------------------------

def h_eta(t, eta: float):
    """``min((-ln t)^{-eta}, (ln 2)^{-eta})``; the second branch for ``t >= 1/2``."""
    t = np.asarray(t, dtype=float)
    if eta == 0:
        return np.ones_like(t)
    cap = math.log(2.0) ** (-eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (-np.log(t)) ** (-eta)
    return np.where(t >= 0.5, cap, np.minimum(val, cap))


def maximal_fractional(omega, x, eta: float, R: float, p: float, N: Optional[int] = None) -> float:
    """``sup_{0 < t < R} omega(B(x,t)) / (t^{N-p} h_eta(t))``.

    For atoms and clouds the sup is attained just above a jump of the
    ball mass and is evaluated there; radial densities are sampled on a
    log-spaced set of radii.
    """
    if eta < 0:
        raise InvalidParameter("eta must be nonnegative")
    pm = omega if isinstance(omega, PotentialMeasure) else as_potential_measure(omega)
    N = pm.N if N is None else N
    if p > N:
        raise UnsupportedRegime("p > N")
    if pm.is_zero:
        return 0.0
    d, w = _step_data(pm, x)
    cands = []
    if d.size:
        cum = np.cumsum(w)
        sel = d < R
        if np.any(sel & (d == 0)) and p < N:
            return math.inf
        dd = d[sel]
        with np.errstate(divide="ignore"):
            den = dd ** (N - p) * h_eta(np.maximum(dd, 1e-300), eta)
        cands.append(np.max(np.where(den > 0, cum[sel] / den, np.inf)) if dd.size else 0.0)
    if pm.radial_f is not None:
        ts = np.geomspace(1e-4 * R, R * (1 - 1e-12), 400)
        m = ball_mass(pm, x, ts)
        cands.append(np.max(m / (ts ** (N - p) * h_eta(ts, eta))))
    return float(max(cands)) if cands else 0.0


# -- capacity ---------------------------------------------------------------

def _capacity_nodes(K, grid):
    kind = K[0] if isinstance(K, (tuple, list)) else K
    X = grid.nodes
    if kind == "interior":
        return grid.interior.copy()
    if kind == "ball":
        center = np.zeros(X.shape[1]) if isinstance(grid, RadialGrid) else np.atleast_1d(K[2] if len(K) > 2 else np.zeros(grid.N))
        r = float(K[1])
        if isinstance(grid, RadialGrid):
            mask = grid.r <= r + 1e-12 * grid.R
            if r >= grid.R:
                raise InvalidParameter("K touches the boundary")
            return mask
        if grid.boundary_distance(center) <= r:
            raise InvalidParameter("K touches the boundary")
        return np.linalg.norm(X - center, axis=1) <= r + 1e-12
    if kind == "points":
        pts = np.atleast_2d(np.asarray(K[1], dtype=float))
        mask = np.zeros(grid.n_nodes, dtype=bool)
        for x in pts:
            if isinstance(grid, RadialGrid):
                if np.linalg.norm(x) > 1e-14:
                    raise InvalidParameter("radial grids only hold the origin")
                mask[0] = True
                continue
            if grid.boundary_distance(x) <= 0:
                raise InvalidParameter("K touches the boundary")
            i = int(np.argmin(np.linalg.norm(X - x, axis=1)))
            mask[i] = True
        return mask
    raise InvalidParameter(f"unknown compact set {K!r}")


def _energy(grid, op, phi):
    return float(np.sum(grid.elem_vol * op.energy_density(grid.grad(phi))))


def _energy_gradient(grid, op, phi):
    return grid.D.T @ (op.flux(grid.grad(phi)) * grid.elem_vol[:, None]).ravel()


def _minimize_on(grid, op, phi, fidx, tol, max_iter, scale):
    """Damped Newton on the nodes ``fidx`` with the others frozen."""
    Df = grid.D[:, fidx].tocsr()
    for it in range(max_iter + 1):
        g = _energy_gradient(grid, op, phi)[fidx]
        res = np.linalg.norm(g)
        if res <= tol * scale or fidx.size == 0:
            return phi, it
        if it == max_iter:
            break
        H = (Df.T @ _element_hessian(grid, op, grid.grad(phi)) @ Df).tocsc()
        d = spla.spsolve(H, -g)
        E0 = _energy(grid, op, phi)
        alpha = 1.0
        while True:
            trial = phi.copy()
            trial[fidx] += alpha * d
            if _energy(grid, op, trial) <= E0 + 1e-4 * alpha * float(g @ d) + 1e-13 * abs(E0):
                break
            alpha *= 0.5
            if alpha < 1e-12:
                if res <= 1e-6 * scale:
                    return phi, it
                raise StepFailure("capacity line search failed", res / scale)
        phi = trial
    raise StepFailure("capacity Newton did not converge", res / scale)


def elliptic_capacity(K, p: float, grid, eps_reg: Optional[float] = None,
                      tol: float = 1e-9, max_iter: int = 200) -> dict:
    """Discrete ``c_p(K) = inf { int |grad phi|^p : phi >= chi_K, phi = 0 on dOmega }``.

    ``K`` is ``("ball", r[, center])``, ``("points", [x, ...])`` or
    ``"interior"``.  Projected Newton with an active set for the obstacle
    ``chi_K``; returns ``{"capacity", "active_nodes", "iterations", ...}``.
    """
    Kmask = _capacity_nodes(K, grid)
    if not np.any(Kmask & grid.interior):
        raise InvalidParameter("K contains no interior grid node")
    if K != "interior" and np.any(Kmask & ~grid.interior):
        raise InvalidParameter("K touches the boundary")
    op = OperatorSpec(p, eps_reg=eps_reg)
    psi = (Kmask & grid.interior).astype(float)
    phi = psi.copy()
    active = psi > 0
    scale = max(float(np.linalg.norm(_energy_gradient(grid, op, psi))), 1e-300)
    iters = 0
    for _ in range(50):
        fidx = np.flatnonzero(grid.interior & ~active)
        phi, it = _minimize_on(grid, op, phi, fidx, tol, max_iter, scale)
        iters += it
        g = _energy_gradient(grid, op, phi)
        viol = grid.interior & ~active & (phi < psi - 1e-12)
        # multiplier sign: releasing helps only where the energy pushes phi upward
        release = active & (g > 1e-12 * scale) & (psi == 0)
        if not np.any(viol) and not np.any(release):
            break
        active = (active | viol) & ~release
        phi = np.maximum(phi, psi)
    grad = np.linalg.norm(grid.grad(phi), axis=-1)
    cap = float(np.sum(grid.elem_vol * grad ** p))
    return {"capacity": cap, "active_nodes": int(np.sum(active)), "iterations": iters,
            "eps_reg": op.eps_reg, "h": grid.h, "phi": phi}


def bessel_point_criterion(p: float, N: int, q: float) -> dict:
    """Points are ``C_{p, q/(q+1-p)}``-null iff ``p q / (q + 1 - p) <= N`` (iff ``q >= pe``)."""
    if not p > 1 or not q > p - 1 or not p < N:
        raise InvalidParameter("need p > 1, q > p - 1 and p < N")
    val = p * q / (q + 1.0 - p)
    pe = compute_exponents(p, N).pe
    null = val <= N * (1 + 1e-12)
    return {"null": bool(null), "index": val, "N": N, "pe": pe, "q": q}


# -- calibration ------------------------------------------------------------

class Calibration:
    """Fitted constants keyed by ``(kind, N, p, q, beta)`` in a JSON file."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.data = {}
        if path and os.path.exists(path):
            with open(path) as fh:
                self.data = json.load(fh)

    @classmethod
    def packaged(cls) -> "Calibration":
        """The calibration shipped with the package (``plm/data/calibration.json``)."""
        return cls(os.path.join(os.path.dirname(__file__), "data", "calibration.json"))

    @staticmethod
    def key(kind, N, p, q=None, beta=None) -> str:
        def fmt(v):
            return "-" if v is None else repr(float(v))
        return f"{kind}|N={int(N)}|p={fmt(p)}|q={fmt(q)}|beta={fmt(beta)}"

    def get(self, kind, N, p, q=None, beta=None):
        return self.data.get(self.key(kind, N, p, q, beta))

    def set(self, value, kind, N, p, q=None, beta=None):
        self.data[self.key(kind, N, p, q, beta)] = float(value)

    def save(self, path: Optional[str] = None):
        path = path or self.path
        if path is None:
            return
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- inequality checks ------------------------------------------------------

def _atom_distance(pm: PotentialMeasure, grid):
    if pm.atoms_w.size == 0:
        return np.full(grid.n_nodes, np.inf)
    if isinstance(grid, RadialGrid):
        return grid.r.copy()
    d = np.linalg.norm(grid.nodes[:, None, :] - pm.atoms_x[None, :, :], axis=-1)
    return d.min(axis=1)


def wolff_bound_check(solutions: Sequence, cfg: WolffConfig, tol: float = 0.10,
                      name: str = "wolff_bound") -> EstimateReport:
    """Fit ``kappa = sup u / W[omega^+]`` away from atoms for each solve.

    ``solutions`` is a list of ``(field, omega)`` pairs (e.g. refinement
    levels or masses).  Verdict: every fitted ``kappa`` is within ``tol``
    of the first, ``u <= kappa W`` at all sampled nodes, and
    ``u >= -kappa W[omega^-]`` (nonnegative data: ``u >= 0``).
    """
    kappas, lower_ok, flags = [], True, []
    for u, omega in solutions:
        grid = u.grid
        pm = as_potential_measure(omega)
        if pm.is_zero:
            kappas.append(0.0)
            lower_ok &= bool(np.all(np.abs(u.values) <= 1e-12))
            continue
        dist = _atom_distance(pm, grid)
        sel = (dist > 3 * grid.h) & grid.interior
        X = grid.nodes[sel]
        W = wolff_many(pm, X, cfg)
        ok = np.isfinite(W) & (W > 0)
        ratio = u.values[sel][ok] / W[ok]
        kappas.append(float(np.max(ratio)))
        lower_ok &= bool(np.all(u.values[sel] >= -1e-12 * np.max(np.abs(u.values))))
    k = np.array(kappas)
    if np.all(k == 0):
        return EstimateReport(name, k, k, 0.0, verdict=True, flags=["zero_measure"],
                              tolerances={"stability": tol})
    ref = k[0]
    spread = float(np.max(np.abs(k - ref)) / ref) if ref > 0 else math.inf
    if len(k) == 1:
        flags.append("single_level")
    verdict = bool(spread <= tol and lower_ok)
    return EstimateReport(name, k, np.full_like(k, ref * (1 + tol)), float(ref),
                          verdict=verdict, tolerances={"stability": tol},
                          flags=flags, extra={"spread": spread, "lower_bound_ok": lower_ok})


def wolff_composition_check(omega_list: Sequence, q: float, cfg: WolffConfig, tol: float = 0.15,
                            scale: float = 2.0, n_samples: int = 12,
                            name: str = "wolff_composition") -> EstimateReport:
    """Compare ``W[(W[omega])^q dx]`` with ``W[omega]`` on sample points.

    ``omega_list`` holds the same measure on successive refinement levels.
    The fitted constant ``max lhs / rhs`` must be stable within ``tol``.
    The mass-scaling exponents of both sides are fitted from a second run
    with ``scale * omega`` and compared with ``q/(p-1)^2`` and ``1/(p-1)``
    to 1%.  Atoms with ``q >= pe`` make ``(W[omega])^q`` non-integrable,
    which is reported as a hypothesis violation.
    """
    p, N = cfg.p, cfg.N
    pe = compute_exponents(p, N).pe
    consts, exps_l, exps_r, flags = [], [], [], []
    for omega in omega_list:
        pm = omega if isinstance(omega, PotentialMeasure) else as_potential_measure(omega)
        grid = pm.grid
        if pm.is_zero:
            consts.append(0.0)
            continue
        if pm.atoms_w.sum() > 0 and q >= pe:
            flags.append("hypothesis_violation")
            return EstimateReport(name, np.array([]), np.array([]), math.nan, verdict=False,
                                  flags=flags, extra={"reason": "(W[omega])^q not integrable near atoms",
                                                      "pe": pe, "q": q})
        R = cfg.radius(grid)
        samples = _sample_points(grid, pm, n_samples)

        def composite(m):
            if isinstance(grid, RadialGrid):
                dens = density_measure(grid, lambda r: np.where(
                    r > 0, np.array([wolff_potential(m, ri, cfg) for ri in np.atleast_1d(r)]) ** q, 0.0))
            else:
                pts, _ = grid.cell_centers()
                Wc = wolff_many(m, pts, cfg) ** q
                lookup = {tuple(np.round(x, 12)): v for x, v in zip(pts, Wc)}
                dens = density_measure(grid, lambda P: np.array([lookup[tuple(np.round(x, 12))] for x in P]))
            lhs = wolff_many(dens, samples, cfg)
            rhs = wolff_many(m, samples, cfg)
            return lhs, rhs

        lhs, rhs = composite(pm)
        lhs2, rhs2 = composite(pm.scaled(scale))
        ok = rhs > 0
        consts.append(float(np.max(lhs[ok] / rhs[ok])))
        exps_l.append(float(np.median(np.log(lhs2[ok] / lhs[ok]) / math.log(scale))))
        exps_r.append(float(np.median(np.log(rhs2[ok] / rhs[ok]) / math.log(scale))))
    c = np.array(consts)
    if np.all(c == 0):
        return EstimateReport(name, c, c, 0.0, verdict=True, flags=["zero_measure"])
    spread = float(np.max(np.abs(c - c[0])) / c[0])
    el, er = q / (p - 1.0) ** 2, 1.0 / (p - 1.0)
    exp_ok = all(abs(a - el) <= 0.01 * el for a in exps_l) and all(abs(b - er) <= 0.01 * er for b in exps_r)
    verdict = bool(spread <= tol and exp_ok)
    return EstimateReport(name, c, np.full_like(c, c[0] * (1 + tol)), float(c[0]), verdict=verdict,
                          tolerances={"stability": tol, "exponent": 0.01}, flags=flags,
                          extra={"spread": spread, "lhs_exponent": exps_l, "rhs_exponent": exps_r,
                                 "expected_lhs_exponent": el, "expected_rhs_exponent": er,
                                 "checked_on": "points and balls family"})


def _sample_points(grid, pm, n):
    if isinstance(grid, RadialGrid):
        return np.linspace(0.1 * grid.R, 0.8 * grid.R, n)[:, None]
    rng = np.random.default_rng(12345)
    lo = np.array([a for a, _ in grid.box])
    pts = lo + grid.L * (0.1 + 0.8 * rng.random((4 * n, grid.N)))
    d = np.min(np.linalg.norm(pts[:, None] - pm.atoms_x[None], axis=-1), axis=1) if pm.atoms_w.size else np.inf
    pts = pts[np.broadcast_to(d, (pts.shape[0],)) > 3 * grid.h]
    return pts[:n]


def delta0(beta: float, p: float) -> float:
    """``((12 beta)^{-1})^beta p ln 2``."""
    if not beta > 0 or not p > 1:
        raise InvalidParameter("need beta > 0, p > 1")
    return (1.0 / (12.0 * beta)) ** beta * p * math.log(2.0)


def exp_integrability_check(omega, beta: float, delta: float, cfg: WolffConfig,
                            calibration: Optional[Calibration] = None, tol: float = 0.10,
                            name: str = "exp_integrability") -> EstimateReport:
    """``int_Omega exp(delta W^beta / ||M^eta||_inf^{beta/(p-1)})`` by cell summation.

    ``eta = (p - 1)/beta'``.  The constant ``C`` of the bound
    ``C / (delta0 - delta)`` is fitted on first use for ``(N, p, beta)``
    and stored in ``calibration``; later calls check against it.
    """
    p, N = cfg.p, cfg.N
    d0 = delta0(beta, p)
    if not 0 < delta < d0:
        raise InvalidParameter(f"need 0 < delta < delta0 = {d0}")
    pm = omega if isinstance(omega, PotentialMeasure) else as_potential_measure(omega)
    grid = pm.grid
    pts, vol = grid.cell_centers()
    if pm.is_zero:
        I = float(np.sum(vol))
        return EstimateReport(name, np.array([I]), np.array([I]), 0.0, verdict=True,
                              flags=["zero_measure"], extra={"delta0": d0})
    R = cfg.radius(grid)
    eta = 0.0 if beta == 1 else (p - 1.0) * (beta - 1.0) / beta
    Mx = np.array([maximal_fractional(pm, x, eta, R, p, N) for x in pts])
    Mnorm = float(np.max(Mx))
    if not math.isfinite(Mnorm) or Mnorm <= 0:
        return EstimateReport(name, np.array([math.inf]), np.array([math.nan]), verdict=False,
                              flags=["maximal_function_unbounded"])
    W = wolff_many(pm, pts, cfg)
    I = float(np.sum(vol * np.exp(delta * W ** beta / Mnorm ** (beta / (p - 1.0)))))
    cal = calibration if calibration is not None else Calibration()
    C = cal.get("exp", N, p, None, beta)
    flags = []
    if C is None:
        C = I * (d0 - delta)
        cal.set(C, "exp", N, p, None, beta)
        flags.append("calibrated_here")
    bound = C * (1 + tol) / (d0 - delta)
    return EstimateReport(name, np.array([I]), np.array([bound]), float(C),
                          verdict=bool(math.isfinite(I) and I <= bound), tolerances={"calibration": tol},
                          flags=flags, extra={"delta0": d0, "eta": eta, "M_norm": Mnorm})

"""Constructive iteration schemes with explicit smallness thresholds.

* :func:`potential_recursion` iterates the potential map
  ``u -> K W[u^q + omega] + b`` directly;
* :func:`monotone_source_iteration` and :func:`exponential_iteration`
  solve the parabolic problem repeatedly with the previous iterate fed
  into a power or exponential source;
* :func:`picard_subcritical` does the same for a signed subcritical term;
* :func:`absorption_solve` treats a monotone absorption implicitly and
  checks the L1 absorption budget.

Each scheme returns an :class:`IterationTrace`; the pointwise Wolff-type
bounds use a constant ``kappa`` fitted from the first iterate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidParameter, UnsupportedRegime
from .exponents import compute_exponents, exp_remainder, subcritical_integral
from .grid import RadialGrid, unit_ball_volume
from .measures import Atom, DiscreteMeasure, classify_diffuse
from .operators import AbsorptionSpec, OperatorSpec
from .potential import (Calibration, PotentialMeasure, WolffConfig, as_potential_measure, delta0,
                        maximal_fractional, wolff_many, wolff_potential)
from .solver import Field, SpaceTimeField, solve_elliptic, solve_parabolic
from .truncation import levelset_decay

__all__ = [
    "Thresholds",
    "compute_thresholds",
    "IterationTrace",
    "potential_recursion",
    "monotone_source_iteration",
    "picard_subcritical",
    "exponential_iteration",
    "absorption_solve",
]

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9
REL_STOP = 1e-6
BLOWUP = 1e100


# -- thresholds -------------------------------------------------------------

@dataclass
class Thresholds:
    """Closed-form constants of the small-data iterations."""
    p: float
    q: float
    K: float
    M: float
    diam: float
    N: int
    beta_p: float
    c_p: float
    A1: float
    A2: float
    lambda0: float
    b0: float
    M0: Optional[float] = None
    delta0: Optional[float] = None
    M_provenance: str = "supplied"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def beta_p(p: float) -> float:
    return max(1.0, 3.0 ** ((2.0 - p) / (p - 1.0)))


def c_p(p: float) -> float:
    return 2.0 * max(1.0, 2.0 ** ((2.0 - p) / (p - 1.0)))


def compute_thresholds(p: float, q: float, K: float = 1.0, M: Optional[float] = None, diam: float = 1.0,
                       N: int = 2, tau: Optional[float] = None, kappa: Optional[float] = None,
                       beta: Optional[float] = None, M_provenance: str = "supplied",
                       calibration: Optional[Calibration] = None) -> Thresholds:
    """Evaluate ``beta_p, c_p, A1, A2, lambda0, b0`` (and ``M0`` when
    ``tau, kappa, beta`` are given).

    ``M`` is the constant of the composition inequality, which is only
    known to exist.  Without an explicit value the fitted ``M`` for
    ``(N, p, q)`` is read from ``calibration`` (default: the packaged file).
    """
    if not p > 1:
        raise InvalidParameter("p must exceed 1")
    if not q > p - 1:
        raise InvalidParameter("need q > p - 1")
    if M is None:
        cal = calibration if calibration is not None else Calibration.packaged()
        M = cal.get("M", N, p, q)
        if M is None:
            raise InvalidParameter(f"no calibrated M for N={N}, p={p}, q={q}; pass M explicitly")
        M_provenance = f"calibration:{cal.key('M', N, p, q)}"
    if not (K > 0 and M > 0 and diam > 0):
        raise InvalidParameter("K, M and diam must be positive")
    bp = beta_p(p)
    pp = p / (p - 1.0)
    A1 = (2.0 ** (q - 1.0) * (2.0 * bp) ** q * K ** q) ** (1.0 / (p - 1.0))
    A2 = (bp * K * 2.0 ** (q / (p - 1.0)) * unit_ball_volume(N) ** (1.0 / (p - 1.0))
          / pp * (2.0 * diam) ** pp)
    e = q - p + 1.0
    lam0 = (A1 * M) ** (-(p - 1.0) ** 2 / e)
    b0 = A2 ** (-(p - 1.0) / e)
    M0 = d0 = None
    if tau is not None and kappa is not None and beta is not None:
        if not (tau > 0 and kappa > 0 and beta > 0):
            raise InvalidParameter("tau, kappa and beta must be positive")
        d0 = delta0(beta, p)
        M0 = (d0 / (tau * kappa ** beta)) ** ((p - 1.0) / beta)
    return Thresholds(p, q, K, M, diam, N, bp, c_p(p), A1, A2, lam0, b0, M0, d0, M_provenance)


# -- traces -----------------------------------------------------------------

@dataclass
class IterationTrace:
    """Per-iterate summaries of one scheme run.

    ``sup``, ``l1`` and ``l1_diff`` are indexed by iterate (``l1_diff[0]``
    is ``||u_1||_1``); ``bound`` is the sup of the pointwise bound on the
    checked nodes and ``bound_ok`` the per-iterate verdict.
    """
    scheme: str
    sup: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    l1_diff: list = field(default_factory=list)
    sup_diff: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    bound_ok: list = field(default_factory=list)
    K_n: list = field(default_factory=list)
    monotone: bool = True
    bound_respected: bool = True
    converged: bool = False
    stop_reason: str = ""
    first_violation: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sup)

    def record(self, u, prev, l1_norm, bound_value=math.nan, bound_ok=True, check_monotone=True):
        self.sup.append(float(np.max(u)))
        self.l1.append(float(l1_norm(u)))
        if prev is None:
            self.l1_diff.append(self.l1[-1])
            self.sup_diff.append(float(np.max(np.abs(u))))
        else:
            self.l1_diff.append(float(l1_norm(u - prev)))
            self.sup_diff.append(float(np.max(np.abs(u - prev))))
            if check_monotone and np.any(u < prev - MONOTONE_TOL):
                self.monotone = False
        self.bound.append(float(bound_value))
        self.bound_ok.append(bool(bound_ok))
        if not bound_ok and self.bound_respected:
            self.bound_respected = False
            self.first_violation = len(self.sup)

    @property
    def iterations(self) -> int:
        return len(self.sup)

    def rows(self) -> list:
        """``(m, sup, l1_diff, bound, verdict)`` rows for CSV output."""
        return [(m + 1, self.sup[m], self.l1_diff[m], self.bound[m], "pass" if self.bound_ok[m] else "fail")
                for m in range(len(self.sup))]

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return repr(v)
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v
        return clean({k: getattr(self, k) for k in self.__dataclass_fields__})


# -- helpers ----------------------------------------------------------------

def _wolff_cfg(p, N, cfg=None):
    if cfg is not None:
        return cfg
    return WolffConfig(p, N, borderline=(p == N))


def _omega_of(mu, omega=None):
    """Spatial majorant ``omega`` with ``mu <= omega (x) 1``."""
    if omega is not None:
        return omega
    g = mu.grid
    if mu.ambient == "omega":
        return mu
    if mu.flux is not None or mu.timeder is not None:
        raise InvalidParameter("pass omega explicitly for measures with divergence parts")
    atoms = []
    for a in mu.atoms:
        if a.t is not None:
            raise InvalidParameter("time-localized atoms have no majorant omega (x) 1")
        atoms.append(Atom(a.x, a.weight * float(np.max(mu._atom_time_weights(a)) / g.dt)))
    dens = None if mu.density is None else np.max(np.clip(mu.density, 0.0, None), axis=0)
    return DiscreteMeasure(g, "omega", tuple(atoms), dens)


def _nodal_wolff(omega, cfg):
    pm = as_potential_measure(omega)
    g = omega.grid
    if pm.is_zero:
        return np.zeros(g.n_nodes), pm
    return wolff_many(pm, g.nodes, cfg), pm


def _fit_kappa(u1_sup, W, dist, h, offset):
    sel = np.isfinite(W) & (W > 0) & (dist > 3 * h)
    if not np.any(sel):
        return 0.0
    return float(np.max(np.clip(u1_sup[sel] - offset, 0.0, None) / W[sel]))


def _atom_dist(omega):
    g = omega.grid
    if not omega.atoms:
        return np.full(g.n_nodes, np.inf)
    return np.min([g.distance_to(np.atleast_1d(a.x)) for a in omega.atoms], axis=0)


def _slab_measure(grid, dens):
    return DiscreteMeasure(grid, "Q", (), dens)


# -- potential recursion ----------------------------------------------------

def _radial_density(r_nodes, vals):
    """Interpolant of nodal values; power-law continuation on the first cell
    so that a singular value at the origin is never sampled."""
    v = np.asarray(vals, dtype=float)
    r1, r2 = r_nodes[1], r_nodes[2]
    v1, v2 = v[1], v[2]
    if v1 > 0 and v2 > 0:
        s = math.log(v2 / v1) / math.log(r2 / r1)
    else:
        s = 0.0
    tail = v[1:]

    def f(r):
        r = np.asarray(r, dtype=float)
        near = r < r1
        out = np.interp(r, r_nodes[1:], tail)
        with np.errstate(divide="ignore"):
            out = np.where(near, v1 * (np.maximum(r, 1e-300) / r1) ** s, out)
        return out
    return f


def potential_recursion(omega, K: float, b: float, q: float, cfg: Optional[WolffConfig] = None,
                        m_max: int = 20, thresholds: Optional[Thresholds] = None,
                        rel_tol: float = 1e-8) -> IterationTrace:
    """Iterate ``u_{m+1} = K W[u_m^q dx + omega] + b`` with ``u_1 = K W[omega] + b``.

    Values live at the radii of a :class:`RadialGrid` or the cell centres of
    a Cartesian grid.  Every iterate is checked against
    ``2 beta_p K W[omega] + 2 b``; the first violating ``m`` is recorded and
    the run continues (or stops on blow-up).  The smallness condition is
    reported as ``A1 * rho <= 1`` with ``rho = max W[W[omega]^q] / W[omega]``
    and ``b <= b0``.
    """
    if not (K > 0 and b >= 0):
        raise InvalidParameter("need K > 0 and b >= 0")
    g = omega.grid
    N = g.N
    cfg = cfg if cfg is not None else WolffConfig(2.0, N)
    p = cfg.p
    if not q > p - 1:
        raise InvalidParameter("need q > p - 1")
    th = thresholds or compute_thresholds(p, q, K, 1.0, g.diam, N, M_provenance="unit placeholder")
    pm0 = as_potential_measure(omega)
    radial = isinstance(g, RadialGrid)
    if radial:
        X = g.r[:, None]
        vol = g.lumped
    else:
        X, vol = g.cell_centers()

    def W_of(dens_vals):
        if dens_vals is None or not np.any(dens_vals > 0):
            pm = pm0
        elif radial:
            pm = PotentialMeasure(N, pm0.atoms_x, pm0.atoms_w, pm0.cloud_x, pm0.cloud_w,
                                  _radial_density(g.r, dens_vals), g.r.copy(), g)
        else:
            w = dens_vals * vol
            keep = w > 0
            pm = PotentialMeasure(N, pm0.atoms_x, pm0.atoms_w,
                                  np.concatenate([pm0.cloud_x, X[keep]]),
                                  np.concatenate([pm0.cloud_w, w[keep]]), None, None, g)
        return wolff_many(pm, X, cfg)

    W0 = W_of(None)
    fin = np.isfinite(W0)
    bound = 2.0 * th.beta_p * K * W0 + 2.0 * b
    trace = IterationTrace("potential")

    def l1(v):
        return float(np.sum(vol[fin] * np.abs(v[fin])))

    # smallness diagnostic from the first composite
    rho = math.nan
    if not pm0.is_zero:
        Wq = W_of(np.where(fin, W0, 0.0) ** q)
        ok = fin & (W0 > 0)
        rho = float(np.max(Wq[ok] / W0[ok]))
    trace.extra.update(thresholds=th.to_dict(), rho=rho,
                       smallness_ok=bool((math.isnan(rho) or th.A1 * rho <= 1.0) and b <= th.b0),
                       points="radii" if radial else "cell centres")
    u = K * W0 + b
    prev = None
    for m in range(1, m_max + 1):
        uf = np.where(fin, u, 0.0)
        ok = bool(np.all(uf[fin] <= bound[fin] * (1 + 1e-12) + 1e-300))
        trace.record(uf, prev, l1, float(np.max(bound[fin])), ok)
        if not np.all(np.isfinite(uf)) or np.max(uf) > BLOWUP:
            trace.stop_reason = "blowup"
            break
        if prev is not None and trace.sup_diff[-1] <= rel_tol * max(trace.sup[-1], 1e-300):
            trace.converged, trace.stop_reason = True, "converged"
            break
        if m == m_max:
            trace.stop_reason = "m_max"
            break
        prev = uf
        with np.errstate(over="ignore"):
            dens = np.where(fin, u, 0.0) ** q
        if not np.all(np.isfinite(dens)):
            trace.stop_reason = "blowup"
            break
        u = K * W_of(dens) + b
    return trace


# -- parabolic iterations ---------------------------------------------------

def _check_data(mu, u0, grid):
    if mu is not None and mu.grid is not grid:
        raise InvalidParameter("mu lives on a different grid")
    u0 = np.zeros(grid.n_nodes) if u0 is None else np.asarray(u0, dtype=float)
    if u0.shape != (grid.n_nodes,):
        raise InvalidParameter("u0 has the wrong shape")
    return u0


def _source_iteration(name, mu, u0, grid, op, source, m_max, omega, cfg, bound_factor, offset_factor,
                      nonneg=True):
    """Shared loop: ``u_{m+1}`` solves with ``source(u_m) + mu``."""
    u0 = _check_data(mu, u0, grid)
    if nonneg and (np.any(u0 < 0) or (mu is not None and not mu.is_nonnegative)):
        raise InvalidParameter("monotone iterations need nonnegative data")
    trace = IterationTrace(name)
    b = float(np.max(np.abs(u0))) if u0.size else 0.0
    zero = (mu is None or mu.is_zero) and b == 0.0
    if zero:
        u = SpaceTimeField(grid, np.zeros((grid.nt + 1, grid.n_nodes)), {"scheme": name})
        trace.record(u.values, None, lambda v: grid.lp_norm(v, 1), 0.0, True)
        trace.converged, trace.stop_reason = True, "zero data"
        return trace, u
    om = _omega_of(mu, omega) if mu is not None else DiscreteMeasure(grid, "omega")
    cfg = _wolff_cfg(op.p, grid.N, cfg)
    W, _ = _nodal_wolff(om, cfg)
    dist = _atom_dist(om)
    fin = np.isfinite(W)

    def l1(v):
        return grid.lp_norm(v, 1)

    u = solve_parabolic(grid, mu, u0, op)
    usup = np.max(u.values, axis=0)
    kappa = _fit_kappa(usup, W, dist, grid.h, b)
    bound = bound_factor * kappa * W + offset_factor * b
    trace.extra.update(kappa=kappa, b=b, omega_mass=om.total_variation,
                       bound_shape=f"{bound_factor:g} kappa W[omega] + {offset_factor:g} ||u0||_inf")

    def check(vals):
        s = np.max(vals, axis=0)
        ok = bool(np.all(s[fin] <= bound[fin] * (1 + 1e-9) + 1e-12))
        return ok, float(np.max(bound[fin])) if np.any(fin) else math.nan

    ok, bmax = check(u.values)
    trace.record(u.values, None, l1, bmax, ok)
    n1 = trace.l1[0]
    for m in range(2, m_max + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            dens = source(u.values[1:])
        if not np.all(np.isfinite(dens)) or np.max(dens) > BLOWUP:
            trace.stop_reason = "blowup"
            break
        extra = _slab_measure(grid, dens)
        rhs = extra if mu is None else (mu + extra)
        prev = u.values
        try:
            u_new = solve_parabolic(grid, rhs, u0, op)
        except Exception as exc:  # noqa: BLE001 - reported in the trace
            trace.stop_reason = f"solver failure: {exc}"
            break
        u = u_new
        ok, bmax = check(u.values)
        trace.record(u.values, prev, l1, bmax, ok)
        if np.max(u.values) > BLOWUP:
            trace.stop_reason = "blowup"
            break
        if trace.l1_diff[-1] < REL_STOP * n1:
            trace.converged, trace.stop_reason = True, "converged"
            break
    else:
        trace.stop_reason = "m_max"
    if not trace.stop_reason:
        trace.stop_reason = "m_max"
    u.meta.update(scheme=name, iterations=len(trace), kappa=kappa)
    return trace, u


def monotone_source_iteration(mu, u0, q: float, grid, op: OperatorSpec, m_max: int = 50,
                              omega=None, cfg: Optional[WolffConfig] = None):
    """``u_1`` solves with ``mu``; ``u_{m+1}`` solves with ``u_m^q + mu``.

    Checks nodewise monotonicity and ``sup_t u_m <= 2 beta_p kappa W[omega] + 2 ||u0||_inf``
    with ``kappa`` fitted from ``u_1`` away from atoms.  Returns
    ``(trace, field)``; the field is the last iterate.
    """
    if not q > op.p - 1:
        raise InvalidParameter("need q > p - 1")
    bp = beta_p(op.p)
    trace, u = _source_iteration("source", mu, u0, grid, op,
                                 lambda v: np.clip(v, 0.0, None) ** q, m_max, omega, cfg, 2.0 * bp, 2.0)
    trace.extra.update(q=q, beta_p=bp)
    return trace, u


def exponential_iteration(mu, u0, tau: float, beta: float, l: int, grid, op: OperatorSpec,
                          m_max: int = 50, omega=None, cfg: Optional[WolffConfig] = None):
    """Monotone iteration with source ``E(tau u_m^beta) + mu``.

    Needs ``beta >= 1`` and ``l beta > p - 1``.  Each iterate is checked
    against ``kappa c_p W[omega] + 2 ||u0||_inf``; the maximal-function
    condition is reported against ``M0 = (delta0 / (tau kappa^beta))^{(p-1)/beta}``.
    """
    p = op.p
    if not (tau > 0 and beta >= 1 and int(l) == l and l >= 1):
        raise InvalidParameter("need tau > 0, beta >= 1 and integer l >= 1")
    if not l * beta > p - 1:
        raise InvalidParameter("need l beta > p - 1")
    cp = c_p(p)
    trace, u = _source_iteration("exponential", mu, u0, grid, op,
                                 lambda v: exp_remainder(tau * np.clip(v, 0.0, None) ** beta, int(l)),
                                 m_max, omega, cfg, cp, 2.0)
    kappa = trace.extra.get("kappa", 0.0)
    trace.extra.update(tau=tau, beta=beta, l=int(l), c_p=cp)
    if mu is not None and not mu.is_zero and kappa > 0:
        om = _omega_of(mu, omega)
        cfg_ = _wolff_cfg(p, grid.N, cfg)
        pm = as_potential_measure(om)
        eta = (p - 1.0) * (beta - 1.0) / beta
        R = cfg_.radius(grid)
        pts = grid.nodes[grid.interior]
        if pm.atoms_w.size:
            pts = np.concatenate([pts, pm.atoms_x])
        Mnorm = max(maximal_fractional(pm, x, eta, R, p, grid.N) for x in pts)
        d0 = delta0(beta, p)
        M0 = (d0 / (tau * kappa ** beta)) ** ((p - 1.0) / beta)
        trace.extra.update(M_norm=Mnorm, M0=M0, maximal_condition_ok=bool(Mnorm <= M0))
    return trace, u


def picard_subcritical(mu, u0, lam: float, G: AbsorptionSpec, grid, op: OperatorSpec,
                       m_max: int = 50, k_levels: int = 8):
    """``u_{n+1}`` solves with right-hand side ``mu - lam G(u_n)``, ``G`` a source term.

    Rejected before iterating when ``int^inf G(s) s^{-1-pc} ds`` diverges.
    Records ``K_n = (||u0||_1 + |mu|(Q) + lam ||G(u_n)||_1)^{(p+N)/N}`` and
    a level-set decay report for every iterate.
    """
    if lam < 0:
        raise InvalidParameter("lambda must be nonnegative")
    if not G.is_source and not G.is_none:
        raise InvalidParameter("picard_subcritical expects a source-type G")
    p, N = op.p, grid.N
    ex = compute_exponents(p, N)
    if not G.is_none and not math.isfinite(subcritical_integral(G.envelope, ex.pc)):
        raise UnsupportedRegime(f"G is not subcritical for pc = {ex.pc:g}")
    u0 = _check_data(mu, u0, grid)
    trace = IterationTrace("picard")
    l1 = lambda v: grid.lp_norm(v, 1)  # noqa: E731
    mass = 0.0 if mu is None else mu.total_variation
    u0n = grid.lp_norm(u0, 1)
    eps = lam + mass + u0n
    trace.extra.update(lam=lam, pc=ex.pc, epsilon=eps, data_l1=mass + u0n)
    expo = (p + N) / N
    decay = []

    def Kn(values):
        Gn = grid.lp_norm(np.asarray(G(values[1:])), 1) if lam > 0 else 0.0
        return (u0n + mass + lam * Gn) ** expo

    u = solve_parabolic(grid, mu, u0, op)
    prev = None
    for n in range(1, m_max + 1):
        trace.record(u.values, prev, l1, math.nan, True, check_monotone=False)
        trace.K_n.append(float(Kn(u.values)))
        decay.append(_decay_verdict(u, ex.pc, k_levels))
        if lam == 0 or G.is_none:
            trace.converged, trace.stop_reason = True, "single solve"
            break
        if not math.isfinite(trace.K_n[-1]) or trace.K_n[-1] > 1e6 * trace.K_n[0]:
            trace.stop_reason = f"K_n diverging at iterate {n}"
            break
        if prev is not None and trace.l1_diff[-1] < REL_STOP * max(trace.l1[0], 1e-300):
            trace.converged, trace.stop_reason = True, "converged"
            break
        if n == m_max:
            trace.stop_reason = "m_max"
            break
        prev = u.values
        dens = -lam * np.asarray(G(u.values[1:]))
        if not np.all(np.isfinite(dens)):
            trace.stop_reason = f"K_n diverging at iterate {n}"
            break
        extra = _slab_measure(grid, dens)
        try:
            u = solve_parabolic(grid, extra if mu is None else mu + extra, u0, op)
        except Exception as exc:  # noqa: BLE001
            trace.stop_reason = f"solver failure: {exc}"
            break
    Ks = np.array(trace.K_n)
    trace.extra.update(K_bounded=bool(np.all(np.isfinite(Ks)) and Ks.max() <= 2.0 * Ks[0] + 1e-300),
                       levelset_verdicts=decay)
    u.meta.update(scheme="picard", iterations=len(trace))
    return trace, u


def _decay_verdict(u, exponent, k_levels):
    top = float(np.max(np.abs(u.values)))
    if top <= 0:
        return None
    ks = np.geomspace(top * 10 ** -1.6, 0.9 * top, k_levels)
    rep = levelset_decay(u, ks, exponent)
    return bool(rep.verdict)


# -- absorption -------------------------------------------------------------

def absorption_solve(mu, u0, G: AbsorptionSpec, grid, op: OperatorSpec, slack: float = 0.05,
                     sweep_levels: int = 3, sweep: Optional[bool] = None):
    """Solve with a monotone absorption treated implicitly.

    ``mu`` on ``Omega`` gives the stationary problem (``u0`` ignored).
    Checks ``||G(u)||_1 <= |mu| + ||u0||_1`` within ``slack``.  For atomic
    data with ``q >= pe`` a refinement sweep records the mass of ``u`` near
    the atom on successively finer grids; its collapse is reported as
    expected nonexistence (a diagnostic only).
    """
    if not G.monotone and not G.is_none:
        raise InvalidParameter("absorption_solve needs G(r) r >= 0")
    stationary = mu is not None and mu.ambient == "omega"
    if stationary:
        u = solve_elliptic(grid, mu, op, G)
        Gn = grid.lp_norm(np.asarray(G(u.values)), 1)
        data = mu.total_variation
    else:
        u0 = _check_data(mu, u0, grid)
        u = solve_parabolic(grid, mu, u0, op, G)
        Gn = grid.lp_norm(np.asarray(G(u.values[1:])), 1)
        data = (0.0 if mu is None else mu.total_variation) + grid.lp_norm(u0, 1)
    ok = bool(Gn <= (1.0 + slack) * data + 1e-14)
    u.meta.update(absorption_l1=Gn, data_l1=data, budget_ok=ok, budget_slack=slack)
    if mu is not None and mu.atoms and G.kind == "power":
        om = mu if stationary else _omega_of(mu)
        cls = classify_diffuse(om, op.p, grid.N, G.q) if G.q > op.p - 1 else None
        u.meta["classification"] = cls
        pe = compute_exponents(op.p, grid.N).pe
        do_sweep = (G.q >= pe) if sweep is None else sweep
        if do_sweep and stationary:
            u.meta["refinement_sweep"] = _refinement_sweep(mu, G, grid, op, sweep_levels)
    return u


def _refinement_sweep(mu, G, grid, op, levels):
    """Mass of ``u`` in a fixed ball around the atoms on refined grids."""
    r0 = 4.0 * grid.h
    rows = []
    g = grid
    for lev in range(levels):
        m = DiscreteMeasure(g, "omega", mu.atoms, None if lev or mu.density is None else mu.density)
        if lev and mu.density is not None:
            raise InvalidParameter("refinement sweep supports purely atomic data")
        u = solve_elliptic(g, m, op, G)
        d = np.min([g.distance_to(np.atleast_1d(a.x)) for a in mu.atoms], axis=0)
        near = d <= r0
        rows.append({"h": g.h, "near_mass": float(np.sum(g.lumped[near] * np.abs(u.values[near]))),
                     "sup": float(np.max(np.abs(u.values))),
                     "l1": float(np.sum(g.lumped * np.abs(u.values)))})
        g = g.refined()
    masses = [r["near_mass"] for r in rows]
    collapse = all(b < a for a, b in zip(masses, masses[1:]))
    return {"rows": rows, "radius": r0, "collapsing": bool(collapse),
            "verdict": "expected-nonexistence" if collapse else "inconclusive"}

"""Implicit Euler for ``u_t - div A(grad u) + G(u) = mu`` as a sequence of
convex minimizations, the elliptic companion problem, and the smoothed
renormalized weak residual.

Each step minimizes over zero-boundary nodal functions

    J(u) = sum_i m_i (u_i - u_prev_i)^2 / (2 dt) + sum_e |e| Phi(grad u|_e)
           - b . u + sum_i m_i Gbar(u_i)

with lumped masses ``m_i`` and ``b`` the slab load of the measure
(spatial load per unit time).  Newton with Armijo backtracking.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import BSpline

from .errors import InvalidParameter, StepFailure
from .grid import smooth_test_set
from .operators import AbsorptionSpec, OperatorSpec

__all__ = [
    "SpaceTimeField",
    "Field",
    "implicit_step",
    "solve_parabolic",
    "solve_elliptic",
    "weak_residual",
    "SmoothTruncation",
    "discrete_energy",
]

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-9
NEWTON_MAXIT = 200


@dataclass
class Field:
    """Stationary nodal field."""
    grid: object
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def grad(self):
        return self.grid.grad(self.values)


@dataclass
class SpaceTimeField:
    """Nodal values ``u(x_i, t_n)``, shape ``(nt + 1, n_nodes)``.

    Slab ``n`` is ``(t_{n-1}, t_n]`` and carries the value ``u^n``.
    """
    grid: object
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    _grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        v = self.values
        if v.shape != (self.grid.nt + 1, self.grid.n_nodes):
            raise InvalidParameter(f"values shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("field has non-finite values")

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = self.grid.grad(self.values)
        return self._grad


# -- Newton machinery -------------------------------------------------------

def _element_hessian(grid, op, gr):
    """Block-diagonal element Hessian weighted by element volumes."""
    alpha, gamma = op.hessian_parts(gr)
    vol = grid.elem_vol
    ne, d = gr.shape
    if d == 1:
        return sp.diags(vol * (alpha + gamma * gr[:, 0] ** 2))
    blocks = (alpha[:, None, None] * np.eye(d)[None]
              + gamma[:, None, None] * gr[:, :, None] * gr[:, None, :]) * vol[:, None, None]
    rows = np.repeat(np.arange(ne * d).reshape(ne, d), d, axis=1).ravel()
    cols = np.tile(np.arange(ne * d).reshape(ne, d), (1, d)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(ne * d, ne * d))


class _Problem:
    """Energy, gradient and Hessian restricted to the free nodes."""

    def __init__(self, grid, op, G, b, u_prev=None, dt=None, explicit_G=None):
        self.grid, self.op, self.G = grid, op, G
        self.free = np.flatnonzero(grid.interior)
        self.m = grid.lumped
        self.b = b
        self.u_prev = u_prev
        self.dt = dt
        self.implicit_G = G is not None and not G.is_none and explicit_G is None
        self.explicit = explicit_G
        self.Df = grid.D[:, self.free].tocsr()

    def full(self, uf):
        u = np.zeros(self.grid.n_nodes)
        u[self.free] = uf
        return u

    def energy(self, uf):
        u = self.full(uf)
        gr = (self.grid.D @ u).reshape(-1, self.grid.gdim)
        J = float(np.sum(self.grid.elem_vol * self.op.energy_density(gr))) - float(self.b @ u)
        if self.dt is not None:
            J += float(np.sum(self.m * (u - self.u_prev) ** 2)) / (2.0 * self.dt)
        if self.implicit_G:
            J += float(np.sum(self.m * self.G.prim_value(u)))
        if self.explicit is not None:
            J += float(self.explicit @ u)
        return J

    def gradient(self, uf):
        u = self.full(uf)
        gr = (self.grid.D @ u).reshape(-1, self.grid.gdim)
        flux = self.op.flux(gr) * self.grid.elem_vol[:, None]
        g = self.grid.D.T @ flux.ravel() - self.b
        if self.dt is not None:
            g = g + self.m * (u - self.u_prev) / self.dt
        if self.implicit_G:
            g = g + self.m * self.G(u)
        if self.explicit is not None:
            g = g + self.explicit
        return g[self.free], gr

    def hessian(self, uf, gr):
        u = self.full(uf)
        H = self.Df.T @ _element_hessian(self.grid, self.op, gr) @ self.Df
        diag = np.zeros(self.free.size)
        if self.dt is not None:
            diag += self.m[self.free] / self.dt
        if self.implicit_G:
            diag += self.m[self.free] * self.G.deriv_value(u[self.free])
        if np.any(diag != 0):
            H = H + sp.diags(diag)
        return H.tocsc()

    def scale(self):
        s = np.linalg.norm(self.b[self.free])
        if self.dt is not None:
            s = max(s, np.linalg.norm((self.m * self.u_prev)[self.free]) / self.dt)
        if self.explicit is not None:
            s = max(s, np.linalg.norm(self.explicit[self.free]))
        return max(s, 1e-300)


def _newton(prob, uf0, tol=NEWTON_TOL, max_iter=NEWTON_MAXIT, step=None):
    uf = uf0.copy()
    scale = prob.scale()
    J = prob.energy(uf)
    g, gr = prob.gradient(uf)
    res = np.linalg.norm(g)
    for it in range(max_iter + 1):
        if res <= tol * scale:
            return uf, {"newton_iterations": it, "residual": res / scale}
        if it == max_iter:
            break
        H = prob.hessian(uf, gr)
        try:
            d = spla.spsolve(H, -g)
        except RuntimeError as exc:  # singular factorization
            raise StepFailure(f"singular Newton system: {exc}", res / scale, step) from exc
        if not np.all(np.isfinite(d)):
            raise StepFailure("non-finite Newton direction", res / scale, step)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        alpha = 1.0
        slack = 1e-13 * (abs(J) + 1.0)
        accepted = False
        while alpha > 1e-12:
            trial = uf + alpha * d
            Jt = prob.energy(trial)
            if np.isfinite(Jt) and Jt <= J + 1e-4 * alpha * slope + slack:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # roundoff floor: no representable decrease left
            if res <= 1e-6 * scale:
                return uf, {"newton_iterations": it, "residual": res / scale, "stalled": True}
            raise StepFailure("line search failed", res / scale, step)
        uf = trial
        J = Jt
        g, gr = prob.gradient(uf)
        res = np.linalg.norm(g)
    raise StepFailure(f"Newton did not converge in {max_iter} iterations", res / scale, step)


# -- public solvers ---------------------------------------------------------

def _default_G(G):
    return AbsorptionSpec() if G is None else G


def implicit_step(grid, u_prev, dt, load, op: OperatorSpec, G: Optional[AbsorptionSpec] = None,
                  tol=NEWTON_TOL, max_iter=NEWTON_MAXIT, step=None):
    """One implicit Euler step; returns ``(u_next, info)``.

    ``load`` is the nodal load of the measure on the slab per unit time.
    A source-type ``G`` whose antiderivative breaks convexity of the step
    energy is treated semi-implicitly (evaluated at ``u_prev``), which is
    recorded in ``info["semi_implicit"]``.
    """
    if not dt > 0:
        raise InvalidParameter("dt must be positive")
    u_prev = np.asarray(u_prev, dtype=float)
    if not np.all(np.isfinite(u_prev)):
        raise InvalidParameter("u_prev must be finite")
    G = _default_G(G)
    load = np.asarray(load, dtype=float)
    explicit = None
    semi = False
    if G.is_source:
        curv = 1.0 / dt + G.deriv_value(u_prev[grid.interior])
        if np.any(curv <= 0):
            explicit = grid.lumped * G(u_prev)
            semi = True
    prob = _Problem(grid, op, G, load, u_prev=u_prev, dt=dt, explicit_G=explicit)
    try:
        uf, info = _newton(prob, u_prev[prob.free], tol, max_iter, step)
    except StepFailure:
        if not G.is_source or semi:
            raise
        prob = _Problem(grid, op, G, load, u_prev=u_prev, dt=dt,
                        explicit_G=grid.lumped * G(u_prev))
        uf, info = _newton(prob, u_prev[prob.free], tol, max_iter, step)
        semi = True
    info["semi_implicit"] = semi
    return prob.full(uf), info


def solve_parabolic(grid, mu, u0, op: OperatorSpec, G: Optional[AbsorptionSpec] = None,
                    tol=NEWTON_TOL, max_iter=NEWTON_MAXIT) -> SpaceTimeField:
    """March :func:`implicit_step` over all time levels.

    ``mu`` is a Q-measure (anything with ``load(grid, n)``) or ``None``;
    ``u0`` nodal values or ``None``.
    """
    G = _default_G(G)
    u = np.zeros(grid.n_nodes) if u0 is None else np.array(u0, dtype=float)
    if u.shape != (grid.n_nodes,):
        raise InvalidParameter("u0 has the wrong shape")
    u[~grid.interior] = 0.0
    values = np.empty((grid.nt + 1, grid.n_nodes))
    values[0] = u
    iters, residuals, semi = [], [], []
    for n in range(1, grid.nt + 1):
        load = np.zeros(grid.n_nodes) if mu is None else mu.load(grid, n)
        u, info = implicit_step(grid, u, grid.dt, load, op, G, tol, max_iter, step=n)
        values[n] = u
        iters.append(info["newton_iterations"])
        residuals.append(info["residual"])
        semi.append(info["semi_implicit"])
    meta = {
        "eps_reg": op.eps_reg, "newton_tol": tol, "newton_max_iter": max_iter,
        "newton_iterations": iters, "max_residual": max(residuals),
        "semi_implicit_steps": int(sum(semi)),
        "operator": op.to_dict(), "absorption": G.to_dict(),
    }
    return SpaceTimeField(grid, values, meta)


def solve_elliptic(grid, omega, op: OperatorSpec, G: Optional[AbsorptionSpec] = None,
                   tol=NEWTON_TOL, max_iter=NEWTON_MAXIT) -> Field:
    """Minimize ``int Phi(grad u) - <omega, u> + int Gbar(u)``.

    For ``p != 2`` Newton starts from the ``p = 2`` solution.  A source-type
    ``G`` is handled by a frozen-coefficient fixed point.
    """
    G = _default_G(G)
    load = np.zeros(grid.n_nodes) if omega is None else omega.load(grid)
    u0 = np.zeros(grid.n_nodes)
    free = np.flatnonzero(grid.interior)
    if op.p != 2:
        lin = OperatorSpec(2.0, eps_reg=0.0)
        prob = _Problem(grid, lin, AbsorptionSpec(), load)
        uf, _ = _newton(prob, u0[free], tol, max_iter)
        u0 = prob.full(uf)
    meta = {"eps_reg": op.eps_reg, "newton_tol": tol, "operator": op.to_dict(),
            "absorption": G.to_dict(), "fixed_point_iterations": 0}
    if G.is_source:
        u = u0
        for k in range(1, 201):
            prob = _Problem(grid, op, G, load, explicit_G=grid.lumped * G(u))
            uf, info = _newton(prob, u[free], tol, max_iter)
            un = prob.full(uf)
            diff = np.max(np.abs(un - u))
            u = un
            if diff <= 1e-10 * max(np.max(np.abs(u)), 1e-300):
                break
        meta.update(info, fixed_point_iterations=k)
        return Field(grid, u, meta)
    prob = _Problem(grid, op, G, load)
    uf, info = _newton(prob, u0[free], tol, max_iter)
    meta.update(info)
    return Field(grid, prob.full(uf), meta)


def discrete_energy(grid, u, op: OperatorSpec, G: Optional[AbsorptionSpec] = None) -> float:
    """``int Phi(grad u) + int Gbar(u)`` for one time level."""
    G = _default_G(G)
    gr = grid.grad(u)
    E = float(np.sum(grid.elem_vol * op.energy_density(gr)))
    if not G.is_none:
        E += float(np.sum(grid.lumped * G.prim_value(u)))
    return E


# -- smoothed truncations and the renormalized residual ---------------------

class SmoothTruncation:
    """``S_k = T_k * B`` with ``B`` the cubic B-spline kernel of width ``k/10``.

    ``S_k(r) = r`` exactly for ``|r| <= k - k/20``; ``k = inf`` is the
    identity.
    """

    def __init__(self, k: float):
        if not k > 0:
            raise InvalidParameter("k must be positive")
        self.k = float(k)
        if np.isfinite(self.k):
            d = self.k / 10.0
            self.half = d / 2.0
            knots = np.linspace(-self.half, self.half, 5)
            b = BSpline.basis_element(knots, extrapolate=False)
            self._scale = 4.0 / d
            self._b = b
            self._b1 = b.antiderivative(1)
            self._b2 = b.antiderivative(2)
            self._I_top = self._scale * float(self._b2(self.half))

    def _kernel(self, x):
        inside = np.abs(x) < self.half
        out = np.zeros_like(x)
        out[inside] = self._scale * self._b(x[inside])
        return out

    def _cdf(self, x):
        xc = np.clip(x, -self.half, self.half)
        out = self._scale * self._b1(xc)
        out = np.where(x >= self.half, 1.0, np.where(x <= -self.half, 0.0, out))
        return out

    def _icdf(self, x):
        xc = np.clip(x, -self.half, self.half)
        inner = self._scale * self._b2(xc)
        out = np.where(x >= self.half, self._I_top + (x - self.half), inner)
        return np.where(x <= -self.half, 0.0, out)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if not np.isfinite(self.k):
            return r.copy()
        k = self.k
        lin = np.abs(r) <= k - self.half
        val = self._icdf(r + k) - self._icdf(r - k) - (self._icdf(np.float64(k)) - self._icdf(np.float64(-k)))
        return np.where(lin, r, val)

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        if not np.isfinite(self.k):
            return np.ones_like(r)
        return self._cdf(r + self.k) - self._cdf(r - self.k)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        if not np.isfinite(self.k):
            return np.zeros_like(r)
        return self._kernel(r + self.k) - self._kernel(r - self.k)


def weak_residual(u: SpaceTimeField, mu, u0, op: OperatorSpec, G: Optional[AbsorptionSpec] = None,
                  test_set=None, k_list=(np.inf,)):
    """Defects of the renormalized weak form for ``psi = phi_j(x) (1 - t/T)``.

    For every test function ``phi_j`` and truncation level ``k`` returns
    ``-int S(u) psi_t - int S(u0) psi(0) + int S'(u) A.grad psi
    + int S''(u) psi A.grad u + int S'(u) G(u) psi - int S'(u) psi dmu``
    as a dict ``{(j, k): defect}``.
    """
    G = _default_G(G)
    grid = u.grid
    phis = smooth_test_set(grid) if test_set is None else np.atleast_2d(test_set)
    T, dt, nt = grid.T, grid.dt, grid.nt
    u0 = u.values[0] if u0 is None else np.asarray(u0, dtype=float)
    tmid = grid.times[1:] - 0.5 * dt
    wt = 1.0 - tmid / T  # time factor of psi on each slab
    vals = u.values[1:]
    grads = u.grad()[1:]  # (nt, ne, gdim)
    flux = op.flux(grads)
    umean = grid.elem_mean(vals)
    loads = np.zeros((nt, grid.n_nodes)) if mu is None else np.stack(
        [mu.load(grid, n) for n in range(1, nt + 1)])
    Gu = G(vals)
    phigrad = grid.grad(phis)  # (J, ne, gdim)
    phimean = grid.elem_mean(phis)
    vol = grid.elem_vol
    out = {}
    for k in k_list:
        S = SmoothTruncation(k)
        Su, S1, S1e, S2e = S(vals), S.d1(vals), S.d1(umean), S.d2(umean)
        Au_dot_gu = np.sum(flux * grads, axis=-1)  # (nt, ne)
        t1 = (dt / T) * np.einsum("ni,i,ji->j", Su, grid.lumped, phis)
        t2 = -np.einsum("i,i,ji->j", S(u0), grid.lumped, phis)
        flux_dot_phi = np.einsum("ned,jed->jne", flux, phigrad)
        t3 = dt * np.einsum("n,ne,jne,e->j", wt, S1e, flux_dot_phi, vol)
        t4 = dt * np.einsum("n,ne,ne,je,e->j", wt, S2e, Au_dot_gu, phimean, vol)
        t5 = dt * np.einsum("n,ni,ni,i,ji->j", wt, S1, Gu, grid.lumped, phis)
        t6 = -dt * np.einsum("n,ni,ni,ji->j", wt, S1, loads, phis)
        for j, val in enumerate(t1 + t2 + t3 + t4 + t5 + t6):
            out[(j, float(k))] = float(val)
    return out

"""Meshes: uniform Cartesian P1 grids (N = 1, 2) and radial grids (N = 1..3).

Both mesh types expose the same arrays to the solver:

* ``nodes`` -- node coordinates, ``(n_nodes, N)`` (radial: ``(n_nodes, 1)``
  holding ``r``);
* ``D`` -- sparse gradient operator mapping nodal values to element
  gradients, ``(n_elem * gdim, n_nodes)``, row ``e * gdim + c``;
* ``elem_vol`` -- element measures;
* ``lumped`` -- lumped nodal volumes (row sums of the P1 mass matrix);
* ``interior`` -- boolean mask of free (non-Dirichlet) nodes;
* ``T, nt, dt, times`` -- the time axis.

2-D grids split every square cell along the same diagonal, so for ``p = 2``
the stiffness matrix is the 5-point Laplacian and all off-diagonal
couplings are nonpositive.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .errors import InvalidParameter

__all__ = ["Grid", "RadialGrid", "unit_ball_volume", "sphere_area", "smooth_test_set"]


def unit_ball_volume(N: int) -> float:
    return math.pi ** (N / 2.0) / math.gamma(N / 2.0 + 1.0)


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N (``|S^0| = 2``)."""
    return N * unit_ball_volume(N)


class _Mesh:
    N: int
    gdim: int
    T: float
    nt: int

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elem(self) -> int:
        return self.elem_vol.shape[0]

    def grad(self, u) -> np.ndarray:
        """Element gradients ``(..., n_elem, gdim)`` of nodal values ``(..., n_nodes)``."""
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, self.n_nodes)
        g = (self.D @ flat.T).T
        return g.reshape(u.shape[:-1] + (self.n_elem, self.gdim))

    def integrate(self, v) -> np.ndarray:
        """Lumped integral over the domain of nodal values (last axis)."""
        return np.asarray(v, dtype=float) @ self.lumped

    def lp_norm(self, v, p: float) -> float:
        """Discrete ``L^p`` norm; space-time arrays are integrated over slabs 1..nt."""
        v = np.abs(np.asarray(v, dtype=float))
        if v.ndim == 2:
            return float((self.dt * np.sum(v[1:] ** p @ self.lumped)) ** (1.0 / p))
        return float(np.sum(v ** p * self.lumped) ** (1.0 / p))

    def grad_lp_norm(self, u, p: float) -> float:
        g = np.linalg.norm(self.grad(u), axis=-1)
        if g.ndim == 2:
            return float((self.dt * np.sum(g[1:] ** p @ self.elem_vol)) ** (1.0 / p))
        return float(np.sum(g ** p * self.elem_vol) ** (1.0 / p))

    def elem_mean(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u[..., self.elements].mean(axis=-1)

    def with_time(self, T: float, nt: int):
        raise NotImplementedError


class Grid(_Mesh):
    """Uniform grid on an axis-aligned cube ``box`` with ``n`` cells per axis.

    Parameters
    ----------
    N : int
        Spatial dimension, 1 or 2.
    n : int
        Cells per axis.
    box : sequence of (a, b), optional
        Defaults to the unit cube.  All sides must have equal length.
    T, nt : float, int
        Time horizon and number of implicit steps.
    """

    def __init__(self, N: int, n: int, box=None, T: float = 1.0, nt: int = 1):
        if N not in (1, 2):
            raise InvalidParameter("Cartesian grids support N = 1 or 2")
        if n < 2:
            raise InvalidParameter("need at least 2 cells per axis")
        if not (T > 0) or nt < 1:
            raise InvalidParameter("need T > 0 and nt >= 1")
        box = tuple((0.0, 1.0) for _ in range(N)) if box is None else tuple(
            (float(a), float(b)) for a, b in box)
        lengths = [b - a for a, b in box]
        if len(box) != N or min(lengths) <= 0 or max(lengths) - min(lengths) > 1e-12 * max(lengths):
            raise InvalidParameter("box must be a cube in R^N")
        self.N = N
        self.gdim = N
        self.n = int(n)
        self.box = box
        self.L = lengths[0]
        self.h = self.L / self.n
        self.T = float(T)
        self.nt = int(nt)
        self._build()

    def __repr__(self):
        return f"Grid(N={self.N}, n={self.n}, box={self.box}, T={self.T}, nt={self.nt})"

    def _build(self):
        n, h, N = self.n, self.h, self.N
        ax = [np.linspace(a, b, n + 1) for a, b in self.box]
        if N == 1:
            self.nodes = ax[0][:, None]
            i = np.arange(n)
            self.elements = np.stack([i, i + 1], axis=1)
        else:
            X, Y = np.meshgrid(ax[0], ax[1], indexing="xy")
            self.nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
            ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
            a = (ii + (n + 1) * jj).ravel()
            b, c, d = a + 1, a + (n + 1), a + n + 2
            t1 = np.stack([a, b, d], axis=1)
            t2 = np.stack([a, d, c], axis=1)
            # interleave so that cell k owns triangles 2k, 2k+1
            self.elements = np.stack([t1, t2], axis=1).reshape(-1, 3)
        self._simplex_operators()
        on_bnd = np.zeros(self.n_nodes, dtype=bool)
        for d in range(N):
            a, b = self.box[d]
            on_bnd |= np.isclose(self.nodes[:, d], a) | np.isclose(self.nodes[:, d], b)
        self.interior = ~on_bnd

    def _simplex_operators(self):
        el = self.elements
        V = self.nodes[el]  # (ne, N+1, N)
        B = V[:, 1:, :] - V[:, :1, :]  # (ne, N, N) rows are edge vectors
        det = np.linalg.det(B)
        self.elem_vol = np.abs(det) / math.factorial(self.N)
        Binv = np.linalg.inv(B)  # grad of barycentric k (k>=1) = column k-1 of Binv
        grads = np.empty((el.shape[0], self.N + 1, self.N))
        grads[:, 1:, :] = np.transpose(Binv, (0, 2, 1))
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        ne, k = el.shape
        rows = (np.arange(ne)[:, None, None] * self.N + np.arange(self.N)[None, None, :])
        rows = np.broadcast_to(rows, (ne, k, self.N))
        cols = np.broadcast_to(el[:, :, None], (ne, k, self.N))
        self.D = sp.csr_matrix(
            (grads.ravel(), (rows.ravel(), cols.ravel())),
            shape=(ne * self.N, self.n_nodes))
        lumped = np.zeros(self.n_nodes)
        np.add.at(lumped, el.ravel(), np.repeat(self.elem_vol / k, k))
        self.lumped = lumped
        self.centroids = V.mean(axis=1)

    # -- geometry -----------------------------------------------------------
    @property
    def diam(self) -> float:
        return self.L * math.sqrt(self.N)

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return all(a <= xi <= b for xi, (a, b) in zip(x, self.box))

    def boundary_distance(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(min(min(xi - a, b - xi) for xi, (a, b) in zip(x, self.box)))

    def cell_centers(self):
        """Centers and volumes of the square cells (for cell summation)."""
        c = [np.linspace(a + self.h / 2, b - self.h / 2, self.n) for a, b in self.box]
        if self.N == 1:
            pts = c[0][:, None]
        else:
            X, Y = np.meshgrid(c[0], c[1], indexing="xy")
            pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        return pts, np.full(pts.shape[0], self.h ** self.N)

    def hat_weights(self, x):
        """Node indices and P1 hat values ``phi_i(x)`` at the point ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.N,) or not self.contains(x):
            raise InvalidParameter(f"point {x} is not in the grid box")
        loc = [(xi - a) / self.h for xi, (a, b) in zip(x, self.box)]
        idx = [min(int(math.floor(t)), self.n - 1) for t in loc]
        fr = [t - i for t, i in zip(loc, idx)]
        if self.N == 1:
            i = idx[0]
            return np.array([i, i + 1]), np.array([1.0 - fr[0], fr[0]])
        n = self.n
        i, j = idx
        xi, eta = fr
        a = i + (n + 1) * j
        b, c, d = a + 1, a + n + 1, a + n + 2
        if xi >= eta:
            return np.array([a, b, d]), np.array([1.0 - xi, xi - eta, eta])
        return np.array([a, d, c]), np.array([1.0 - eta, xi, eta - xi])

    def interpolate(self, u, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0])
        for k, x in enumerate(points):
            idx, w = self.hat_weights(x)
            out[k] = np.dot(np.asarray(u)[..., idx], w)
        return out

    def distance_to(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.linalg.norm(self.nodes - x[None, :], axis=1)

    def fraction_below(self, u, s: float, strict: bool = False) -> np.ndarray:
        """Per-element measure fraction of ``{u <= s}`` (``{u < s}`` if strict)
        for the P1 interpolant of nodal values ``u``; exact for linear elements."""
        vals = np.asarray(u, dtype=float)[..., self.elements]
        if self.N == 1:
            return _interval_fraction(vals[..., 0], vals[..., 1], s, strict)
        return _triangle_fraction(vals, s, strict)

    def refined(self, factor: int = 2, time_factor: int = 1) -> "Grid":
        return Grid(self.N, self.n * factor, self.box, self.T, self.nt * time_factor)

    def with_time(self, T: float, nt: int) -> "Grid":
        return Grid(self.N, self.n, self.box, T, nt)

    def normalized(self, pts=None) -> np.ndarray:
        pts = self.nodes if pts is None else np.atleast_2d(pts)
        lo = np.array([a for a, _ in self.box])
        return (pts - lo) / self.L


class RadialGrid(_Mesh):
    """Radially symmetric functions on the ball ``|x| < R`` in ``R^N``.

    Nodes are the radii ``r_i = i R / n``; the node at the origin is free
    and the node at ``r = R`` carries the Dirichlet condition.  Element
    measures include the ``|S^{N-1}| r^{N-1}`` Jacobian exactly.
    """

    def __init__(self, N: int, R: float, n: int, T: float = 1.0, nt: int = 1):
        if N not in (1, 2, 3):
            raise InvalidParameter("radial grids support N = 1, 2, 3")
        if not R > 0 or n < 2:
            raise InvalidParameter("need R > 0 and n >= 2")
        if not (T > 0) or nt < 1:
            raise InvalidParameter("need T > 0 and nt >= 1")
        self.N = N
        self.gdim = 1
        self.R = float(R)
        self.n = int(n)
        self.h = self.R / self.n
        self.T = float(T)
        self.nt = int(nt)
        r = np.linspace(0.0, self.R, self.n + 1)
        self.r = r
        self.nodes = r[:, None]
        i = np.arange(self.n)
        self.elements = np.stack([i, i + 1], axis=1)
        S = sphere_area(N)
        self.elem_vol = S * (r[1:] ** N - r[:-1] ** N) / N
        rows = np.repeat(i, 2)
        cols = self.elements.ravel()
        vals = np.tile([-1.0 / self.h, 1.0 / self.h], self.n)
        self.D = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n + 1))
        # exact lumped mass: int phi_i |S| r^{N-1} dr via 3-point Gauss
        gx, gw = legendre.leggauss(3)
        lumped = np.zeros(self.n + 1)
        for a_i in range(2):
            for xq, wq in zip(gx, gw):
                lam = 0.5 * (xq + 1.0)
                rq = r[:-1] + lam * self.h
                phi = (1.0 - lam) if a_i == 0 else lam
                np.add.at(lumped, self.elements[:, a_i],
                          0.5 * wq * self.h * phi * S * rq ** (N - 1))
        self.lumped = lumped
        self.interior = np.ones(self.n + 1, dtype=bool)
        self.interior[-1] = False
        self.centroids = (0.5 * (r[:-1] + r[1:]))[:, None]

    def __repr__(self):
        return f"RadialGrid(N={self.N}, R={self.R}, n={self.n}, T={self.T}, nt={self.nt})"

    @property
    def diam(self) -> float:
        return 2.0 * self.R

    def boundary_distance(self, x) -> float:
        return self.R - float(np.linalg.norm(np.atleast_1d(x)))

    def hat_weights(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.linalg.norm(x) > 1e-14:
            raise InvalidParameter("radial grids only carry atoms at the origin")
        return np.array([0]), np.array([1.0])

    def distance_to(self, x) -> np.ndarray:
        if np.linalg.norm(np.atleast_1d(x)) > 1e-14:
            raise InvalidParameter("radial distances are measured from the origin")
        return self.r.copy()

    def cell_centers(self):
        return self.centroids, self.elem_vol.copy()

    def fraction_below(self, u, s: float, strict: bool = False) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        ua, ub = u[..., :-1], u[..., 1:]
        ra, rb = self.r[:-1], self.r[1:]
        N = self.N
        flat = ua == ub
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.clip((s - ua) / (ub - ua), 0.0, 1.0)
        rs = ra + lam * (rb - ra)
        tot = rb ** N - ra ** N
        inc = (rs ** N - ra ** N) / tot
        frac = np.where(ub > ua, inc, 1.0 - inc)
        flat_val = (ua < s) if strict else (ua <= s)
        return np.where(flat, flat_val.astype(float), frac)

    def refined(self, factor: int = 2, time_factor: int = 1) -> "RadialGrid":
        return RadialGrid(self.N, self.R, self.n * factor, self.T, self.nt * time_factor)

    def with_time(self, T: float, nt: int) -> "RadialGrid":
        return RadialGrid(self.N, self.R, self.n, T, nt)

    def normalized(self, pts=None) -> np.ndarray:
        pts = self.nodes if pts is None else np.atleast_2d(pts)
        return pts / self.R


def _interval_fraction(a, b, s, strict):
    flat = a == b
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.clip((s - lo) / (hi - lo), 0.0, 1.0)
    flat_val = (a < s) if strict else (a <= s)
    return np.where(flat, flat_val.astype(float), frac)


def _triangle_fraction(vals, s, strict):
    v = np.sort(vals, axis=-1)
    u0, u1, u2 = v[..., 0], v[..., 1], v[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = (s - u0) ** 2 / ((u1 - u0) * (u2 - u0))
        upper = 1.0 - (u2 - s) ** 2 / ((u2 - u0) * (u2 - u1))
    frac = np.where(s <= u0, 0.0,
                    np.where(s >= u2, 1.0,
                             np.where(s <= u1, lower, upper)))
    flat = u0 == u2
    flat_val = (u0 < s) if strict else (u0 <= s)
    frac = np.where(flat, flat_val.astype(float), frac)
    return np.clip(np.nan_to_num(frac, nan=0.0), 0.0, 1.0)


def smooth_test_set(mesh) -> np.ndarray:
    """Sixteen smooth nodal test functions, ``(16, n_nodes)``.

    Tensor Legendre polynomials (degree < 4 per axis in 2-D, degree < 16 in
    1-D) times a bump vanishing on the Dirichlet boundary.
    """
    xi = mesh.normalized()
    if isinstance(mesh, RadialGrid):
        rho = xi[:, 0]
        bump = 1.0 - rho ** 2
        return np.stack([bump * legendre.legval(rho, np.eye(16)[j]) for j in range(16)])
    bump = np.prod(4.0 * xi * (1.0 - xi), axis=1)
    if mesh.N == 1:
        z = 2.0 * xi[:, 0] - 1.0
        return np.stack([bump * legendre.legval(z, np.eye(16)[j]) for j in range(16)])
    zx, zy = 2.0 * xi[:, 0] - 1.0, 2.0 * xi[:, 1] - 1.0
    out = []
    for a in range(4):
        for b in range(4):
            out.append(bump * legendre.legval(zx, np.eye(4)[a]) * legendre.legval(zy, np.eye(4)[b]))
    return np.stack(out)

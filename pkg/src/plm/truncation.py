"""Truncations, time averages and a priori estimate diagnostics.

All level-set quantities are exact for the piecewise linear interpolant
of the nodal values (element band fractions) except ``levelset_decay``,
which counts nodes with their lumped volumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameter

__all__ = [
    "TruncationFamily",
    "truncate",
    "EstimateReport",
    "steklov_average",
    "landes_approx",
    "truncated_energy",
    "levelset_decay",
    "singular_flux",
    "decreasing_rearrangement",
    "Rearrangement",
    "band_fraction",
]

_KINDS = ("T", "Tbar", "Tcal", "H", "Hbar", "S", "Tkl")


@dataclass(frozen=True)
class TruncationFamily:
    """One member of the truncation families.

    ``kind``: ``"T"`` clamp ``T_k``; ``"Tbar"`` its primitive; ``"Tcal"``
    ``int_0^r T_k'(s) s ds``; ``"H"`` the cut ``H_m``; ``"Hbar"`` its
    primitive; ``"S"`` the ramp ``S_{m,ell}`` (``ell=None`` gives ``S_m``);
    ``"Tkl"`` the shifted truncation ``T_{k,ell}``.  For ``"H"``/``"Hbar"``
    an optional ``k`` (and ``ell``) enforces ``m > k + ell``.
    """
    kind: str
    k: Optional[float] = None
    m: Optional[float] = None
    ell: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameter(f"unknown truncation {self.kind!r}")
        if self.kind in ("T", "Tbar", "Tcal", "Tkl") and not (self.k is not None and self.k > 0):
            raise InvalidParameter("k must be positive")
        if self.kind in ("H", "Hbar", "S") and not (self.m is not None and self.m > 0):
            raise InvalidParameter("m must be positive")
        if self.ell is not None and self.ell < 0:
            raise InvalidParameter("ell must be nonnegative")
        if self.kind == "Tkl" and self.ell is None:
            raise InvalidParameter("T_{k,ell} needs ell")
        if self.kind in ("H", "Hbar") and self.k is not None:
            if not self.m > self.k + (self.ell or 0.0):
                raise InvalidParameter("need m > k + ell")

    @property
    def lipschitz(self) -> float:
        return {"T": 1.0, "Tbar": self.k, "Tcal": self.k, "H": None, "Hbar": 1.0,
                "S": 1.0, "Tkl": 1.0}[self.kind] or 1.0 / self.m


def truncate(r, family: TruncationFamily):
    """Apply a truncation pointwise."""
    r = np.asarray(r, dtype=float)
    kind = family.kind
    if kind == "T":
        k = family.k
        return np.clip(r, -k, k)
    if kind == "Tbar":
        k = family.k
        a = np.abs(r)
        return np.where(a <= k, 0.5 * r * r, k * a - 0.5 * k * k)
    if kind == "Tcal":
        k = family.k
        return 0.5 * np.minimum(r * r, k * k)
    if kind == "H":
        m = family.m
        a = np.abs(r)
        return np.where(a <= m, 1.0, np.where(a <= 2 * m, (2 * m - a) / m, 0.0))
    if kind == "Hbar":
        m = family.m
        a = np.abs(r)
        mid = m + (2 * m * (a - m) - 0.5 * (a * a - m * m)) / m
        return np.sign(r) * np.where(a <= m, a, np.where(a <= 2 * m, mid, 1.5 * m))
    if kind == "Tkl":
        k, ell = family.k, family.ell
        return np.maximum(np.minimum(r - ell, k), 0.0) + np.minimum(np.maximum(r + ell, -k), 0.0)
    # S_{m,ell}: zero for r <= m
    m, ell = family.m, family.ell
    x = np.maximum(r, 0.0)
    ramp = (x - m) ** 2 / (2 * m)
    if ell is None:
        return np.where(x <= m, 0.0, np.where(x <= 2 * m, ramp, 0.5 * m + (x - 2 * m)))
    a = 2 * m + ell
    lin = 0.5 * m + (x - 2 * m)
    down = 0.5 * m + ell + (4 * a * x - x * x - 3 * a * a) / (2 * a)
    top = 0.5 * m + ell + 0.5 * a
    return np.where(x <= m, 0.0, np.where(x <= 2 * m, ramp,
                    np.where(x <= a, lin, np.where(x <= 2 * a, down, top))))


# -- reports ----------------------------------------------------------------

@dataclass
class EstimateReport:
    """Outcome of one sampled inequality ``lhs <= bound``."""
    name: str
    lhs: np.ndarray
    bound: np.ndarray
    constant: float = math.nan
    slope: float = math.nan
    r2: float = math.nan
    verdict: bool = False
    tolerances: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return [conv(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in v.items()}
            if isinstance(v, (float, np.floating)):
                v = float(v)
                return v if math.isfinite(v) else repr(v)
            if isinstance(v, np.integer):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v
        return conv({"name": self.name, "lhs": self.lhs, "bound": self.bound,
                     "constant": self.constant, "slope": self.slope, "r2": self.r2,
                     "verdict": self.verdict, "tolerances": self.tolerances,
                     "flags": self.flags, "extra": self.extra})


# -- helpers on fields ------------------------------------------------------

def _unpack(u):
    """Return ``(grid, values, time_weights)``; stationary fields get weight 1."""
    grid = u.grid
    v = np.asarray(u.values, dtype=float)
    if v.ndim == 2:
        return grid, v[1:], np.full(v.shape[0] - 1, grid.dt)
    return grid, v[None], np.ones(1)


def band_fraction(grid, values, a: float, b: float, upper_open: bool = False) -> np.ndarray:
    """Element fraction of ``{a <= u <= b}`` (``{a <= u < b}`` if upper_open)."""
    hi = grid.fraction_below(values, b, strict=upper_open)
    lo = grid.fraction_below(values, a, strict=True)
    return np.clip(hi - lo, 0.0, 1.0)


def truncated_energy(u, ell: float, k: float, p: float) -> float:
    """``int_{ell <= |u| <= ell + k} |grad u|^p`` over Q (or Omega)."""
    if k < 0 or ell < 0:
        raise InvalidParameter("need ell, k >= 0")
    grid, vals, tw = _unpack(u)
    g = np.linalg.norm(grid.grad(vals), axis=-1) ** p
    frac = band_fraction(grid, vals, ell, ell + k)
    if ell > 0:
        frac = frac + band_fraction(grid, -vals, ell, ell + k)
    else:
        frac = frac + band_fraction(grid, -vals, 0.0, k) - band_fraction(grid, vals, 0.0, 0.0)
    return float(np.sum(tw[:, None] * frac * g * grid.elem_vol[None, :]))


def singular_flux(u, m: float, phi=None, op=None) -> float:
    """``(1/m) int_{m <= u < 2m} phi A(grad u).grad u``; NaN flags an empty band."""
    if not m > 0:
        raise InvalidParameter("m must be positive")
    grid, vals, tw = _unpack(u)
    gr = grid.grad(vals)
    A = gr if op is None else op.flux(gr)
    integrand = np.sum(A * gr, axis=-1)
    frac = band_fraction(grid, vals, m, 2 * m, upper_open=True)
    if not np.any(frac > 0):
        return math.nan
    if phi is None:
        ph = np.ones(grid.n_elem)
    else:
        phn = phi(grid.nodes) if callable(phi) else np.broadcast_to(np.asarray(phi, float), (grid.n_nodes,))
        ph = grid.elem_mean(phn)
    return float(np.sum(tw[:, None] * frac * integrand * (ph * grid.elem_vol)[None, :]) / m)


# -- level sets -------------------------------------------------------------

def levelset_decay(u, k_list: Sequence[float], exponent: float, gradient: bool = False,
                   name: Optional[str] = None, slope_tol: float = 0.15) -> EstimateReport:
    """Measure ``meas{|u| >= k}`` (or ``|grad u|``) and fit the log-log slope.

    The fit drops saturated levels (zero measure) and the smallest ``k``.
    Verdict: ``slope <= -exponent + slope_tol``.  The fitted constant is the
    smallest ``C`` with ``meas <= C k^{-exponent}`` on the fit window.
    """
    ks = np.sort(np.asarray(k_list, dtype=float))
    if ks.size < 4 or np.any(ks <= 0):
        raise InvalidParameter("need at least 4 positive levels")
    if math.log10(ks[-1] / ks[0]) < 1.5 - 1e-9:
        raise InvalidParameter("levels must span at least 1.5 decades")
    grid, vals, tw = _unpack(u)
    if gradient:
        mag = np.linalg.norm(grid.grad(vals), axis=-1)
        w = tw[:, None] * grid.elem_vol[None, :]
    else:
        mag = np.abs(vals)
        w = tw[:, None] * grid.lumped[None, :]
    meas = np.array([float(np.sum(w[mag >= k])) for k in ks])
    flags = []
    fit = meas > 0
    if not np.all(fit):
        flags.append("saturated")
    idx = np.flatnonzero(fit)
    if idx.size and idx[0] == 0:
        idx = idx[1:]
    label = name or ("gradient_levelsets" if gradient else "levelsets")
    if idx.size < 3:
        flags.append("degenerate_fit")
        return EstimateReport(label, meas, np.full_like(meas, np.nan), verdict=False,
                              tolerances={"slope_tol": slope_tol}, flags=flags,
                              extra={"k": ks, "exponent": exponent})
    x, y = np.log(ks[idx]), np.log(meas[idx])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    C = float(np.max(meas[idx] * ks[idx] ** exponent))
    bound = C * ks ** (-exponent)
    return EstimateReport(label, meas, bound, C, float(slope), float(r2),
                          bool(slope <= -exponent + slope_tol),
                          {"slope_tol": slope_tol}, flags,
                          {"k": ks, "exponent": exponent, "fit_window": ks[idx]})


# -- rearrangement ----------------------------------------------------------

@dataclass
class Rearrangement:
    """Step function ``|V|*``: value ``values[i]`` on ``[edges[i], edges[i+1])``."""
    values: np.ndarray
    edges: np.ndarray

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        i = np.searchsorted(self.edges, s, side="right") - 1
        i = np.clip(i, 0, self.values.size - 1)
        out = self.values[i]
        return np.where((s < 0) | (s >= self.edges[-1]), 0.0, out)

    def integral(self, G) -> float:
        return float(np.sum(np.asarray(G(self.values), dtype=float) * np.diff(self.edges)))

    def tail(self, G, L: float) -> float:
        """``int_{|V| >= L} G(|V|)`` from the rearrangement."""
        sel = self.values >= L
        return float(np.sum(np.asarray(G(self.values[sel]), dtype=float) * np.diff(self.edges)[sel]))

    def distribution(self, t: float) -> float:
        """``meas{|V| > t}``."""
        return float(np.sum(np.diff(self.edges)[self.values > t]))


def decreasing_rearrangement(V, volumes=None) -> Rearrangement:
    """``|V|*(s) = inf{a : meas{|V| > a} <= s}`` for cell values with volumes."""
    V = np.abs(np.asarray(V, dtype=float)).ravel()
    if not np.all(np.isfinite(V)):
        raise InvalidParameter("field must be finite")
    vol = np.ones_like(V) if volumes is None else np.broadcast_to(
        np.asarray(volumes, dtype=float).ravel(), V.shape)
    order = np.lexsort((np.arange(V.size), -V))
    vals = V[order]
    edges = np.concatenate([[0.0], np.cumsum(vol[order])])
    return Rearrangement(vals, edges)


# -- time averages ----------------------------------------------------------

def _time_data(z, times):
    if hasattr(z, "grid") and times is None:
        return np.asarray(z.values, dtype=float), z.grid.times
    z = np.asarray(z, dtype=float)
    if times is None:
        raise InvalidParameter("times are required for raw arrays")
    times = np.asarray(times, dtype=float)
    if z.shape[0] != times.size:
        raise InvalidParameter("time axis mismatch")
    return z, times


def _primitive(z, times, t):
    """``int_0^t`` of the piecewise linear interpolant of ``z``."""
    dt = np.diff(times)
    cum = np.concatenate([np.zeros((1,) + z.shape[1:]),
                          np.cumsum(0.5 * dt.reshape((-1,) + (1,) * (z.ndim - 1)) * (z[1:] + z[:-1]), axis=0)])
    j = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
    s = (t - times[j]).reshape((-1,) + (1,) * (z.ndim - 1))
    h = dt[j].reshape(s.shape)
    return cum[j] + s * z[j] + 0.5 * s * s / h * (z[j + 1] - z[j])


def steklov_average(z, l: float, direction: str = "+", times=None):
    """Sliding average ``(1/l) int_t^{t+l} z`` (``"-"``: ``int_{t-l}^t``).

    Exact for the piecewise linear interpolant in time.  Returns
    ``(t_valid, values)`` on the time levels where the window fits.
    """
    if not l > 0:
        raise InvalidParameter("l must be positive")
    if direction not in ("+", "-"):
        raise InvalidParameter("direction must be '+' or '-'")
    z, times = _time_data(z, times)
    T0, T1 = times[0], times[-1]
    tol = 1e-12 * (T1 - T0)
    if direction == "+":
        sel = times + l <= T1 + tol
        t = times[sel]
        a, b = t, np.minimum(t + l, T1)
    else:
        sel = times - l >= T0 - tol
        t = times[sel]
        a, b = np.maximum(t - l, T0), t
    if not np.any(sel):
        raise InvalidParameter("window exceeds the time interval")
    return t, (_primitive(z, times, b) - _primitive(z, times, a)) / l


def landes_approx(w, nu: float, z_init, times=None):
    """Solve ``y_t = nu (w - y)``, ``y(0) = z_init`` with the exact exponential
    integrator, ``w`` frozen at its right value on each slab."""
    if not nu > 0:
        raise InvalidParameter("nu must be positive")
    wv, times = _time_data(w, times)
    z0 = np.asarray(z_init, dtype=float)
    if z0.shape != wv.shape[1:]:
        raise InvalidParameter("z_init shape mismatch")
    y = np.empty_like(wv)
    y[0] = z0
    for n in range(1, times.size):
        e = math.exp(-nu * (times[n] - times[n - 1]))
        y[n] = e * y[n - 1] + (1.0 - e) * wv[n]
    return y

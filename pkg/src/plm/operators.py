"""Leray-Lions operators and zero-order terms.

The flux is ``A(x, xi) = w(x) (|xi|^2 + eps^2)^{(p-2)/2} xi + a(x) xi / (|xi|^2 + eps^2)^{1/2}``,
the gradient of the convex element energy

    Phi(xi) = w (|xi|^2 + eps^2)^{p/2} / p + a (|xi|^2 + eps^2)^{1/2}.

``a`` is the growth offset; every verification run keeps ``a = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre

from .errors import InvalidParameter
from .exponents import ExpEnvelope, PowerEnvelope, ZeroEnvelope, exp_remainder

__all__ = ["OperatorSpec", "AbsorptionSpec"]


@dataclass
class OperatorSpec:
    """Weighted, regularized p-Laplacian.

    Parameters
    ----------
    p : float
    c1, c2 : float
        Coercivity and growth constants; a weight ``w`` must satisfy
        ``c1 <= w <= c2``.
    weight : array or float, optional
        Element weight ``w`` (``form="weighted"``).  Defaults to 1.
    a : array or float
        Element offset in the growth bound.
    eps_reg : float, optional
        Gradient regularization.  ``None`` picks 0 for ``p = 2`` and
        ``1e-6`` times ``data_scale`` otherwise.
    """

    p: float
    c1: float = 1.0
    c2: float = 1.0
    weight: object = None
    a: object = 0.0
    eps_reg: Optional[float] = None
    data_scale: float = 1.0
    form: str = field(init=False, default="p-laplacian")

    def __post_init__(self):
        if not self.p > 1:
            raise InvalidParameter("p must exceed 1")
        if not (0 < self.c1 <= self.c2):
            raise InvalidParameter("need 0 < c1 <= c2")
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            if np.any(w < self.c1 - 1e-14) or np.any(w > self.c2 + 1e-14):
                raise InvalidParameter("weight must lie in [c1, c2]")
            self.form = "weighted"
        if np.any(np.asarray(self.a, dtype=float) < 0):
            raise InvalidParameter("offset a must be nonnegative")
        if self.eps_reg is None:
            self.eps_reg = 0.0 if self.p == 2 else 1e-6 * float(self.data_scale)
        if self.eps_reg < 0:
            raise InvalidParameter("eps_reg must be >= 0")

    # element quantities; ``xi`` has shape (n_elem, gdim)
    def _w(self):
        return 1.0 if self.weight is None else np.asarray(self.weight, dtype=float)

    def energy_density(self, xi) -> np.ndarray:
        s = np.sum(xi * xi, axis=-1) + self.eps_reg ** 2
        out = self._w() * s ** (self.p / 2.0) / self.p
        a = np.asarray(self.a, dtype=float)
        if np.any(a != 0):
            out = out + a * np.sqrt(s)
        return out

    def flux(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        s = np.sum(xi * xi, axis=-1) + self.eps_reg ** 2
        coef = self._w() * _safe_pow(s, (self.p - 2.0) / 2.0)
        a = np.asarray(self.a, dtype=float)
        if np.any(a != 0):
            coef = coef + a * _safe_pow(s, -0.5)
        return coef[..., None] * xi

    def hessian_parts(self, xi):
        """Return ``(alpha, gamma)`` with element Hessian ``alpha I + gamma xi xi^T``."""
        s = np.sum(xi * xi, axis=-1) + self.eps_reg ** 2
        w = self._w()
        p = self.p
        alpha = w * _safe_pow(s, (p - 2.0) / 2.0) * np.ones_like(s)
        gamma = np.zeros_like(s)
        pos = s > 0
        if p != 2:
            gamma[pos] = (w * (p - 2.0) * np.ones_like(s))[pos] * s[pos] ** ((p - 4.0) / 2.0)
        a = np.asarray(self.a, dtype=float)
        if np.any(a != 0):
            alpha = alpha + a * _safe_pow(s, -0.5)
            gamma[pos] = gamma[pos] - (a * np.ones_like(s))[pos] * s[pos] ** -1.5
        return alpha, gamma

    def check_monotone(self, n_samples: int = 1000, dim: int = 2, seed: int = 0) -> bool:
        """Sampled strict monotonicity ``(A(xi) - A(zeta)).(xi - zeta) > 0``."""
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(n_samples, dim)) * rng.lognormal(size=(n_samples, 1))
        ze = rng.normal(size=(n_samples, dim)) * rng.lognormal(size=(n_samples, 1))
        spec = self if self.weight is None else OperatorSpec(self.p, self.c1, self.c2, None, 0.0, self.eps_reg)
        d = np.sum((spec.flux(xi) - spec.flux(ze)) * (xi - ze), axis=-1)
        return bool(np.all(d > 0))

    def check_growth(self, n_samples: int = 1000, dim: int = 2, seed: int = 0) -> bool:
        """Sampled coercivity ``A.xi >= c1 |xi|^p`` and growth ``|A| <= a + c2 |xi|^{p-1}``
        (at ``eps_reg = 0``)."""
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(n_samples, dim)) * rng.lognormal(size=(n_samples, 1))
        spec = OperatorSpec(self.p, self.c1, self.c2, None, 0.0, 0.0)
        A = spec.flux(xi)
        n = np.linalg.norm(xi, axis=-1)
        ok1 = np.all(np.sum(A * xi, axis=-1) >= self.c1 * n ** self.p * (1 - 1e-12))
        ok2 = np.all(np.linalg.norm(A, axis=-1) <= self.c2 * n ** (self.p - 1) * (1 + 1e-12))
        return bool(ok1 and ok2)

    def to_dict(self) -> dict:
        return {"p": self.p, "c1": self.c1, "c2": self.c2, "form": self.form,
                "eps_reg": self.eps_reg,
                "a": float(np.max(np.asarray(self.a, dtype=float)))}


def _safe_pow(s, e):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(s, e)
    if e == 0:
        return np.ones_like(out)
    return np.where(s > 0, out, 0.0 if e > 0 else np.inf)


_GX, _GW = legendre.leggauss(20)


@dataclass
class AbsorptionSpec:
    """Zero-order term ``G(u)``.

    ``kind`` is one of ``"none"``, ``"power"`` (``sign * c |r|^{q-1} r``),
    ``"exponential"`` (``sign * E(tau |r|^beta) sgn r``) or ``"custom"``.
    ``sign = +1`` is an absorption (``G(r) r >= 0``), ``sign = -1`` a source.
    Custom terms pass ``func``, ``prim`` (antiderivative) and ``deriv``.
    """

    kind: str = "none"
    q: float = 1.0
    c: float = 1.0
    sign: int = 1
    tau: float = 1.0
    beta: float = 1.0
    l: int = 1
    func: Optional[Callable] = None
    prim: Optional[Callable] = None
    deriv: Optional[Callable] = None
    envelope_fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("none", "power", "exponential", "custom"):
            raise InvalidParameter(f"unknown absorption kind {self.kind!r}")
        if self.sign not in (1, -1):
            raise InvalidParameter("sign must be +1 or -1")
        if self.kind == "power" and not self.q > 0:
            raise InvalidParameter("power needs q > 0")
        if self.kind == "exponential" and (self.tau < 0 or self.beta <= 0 or self.l < 1):
            raise InvalidParameter("exponential needs tau >= 0, beta > 0, l >= 1")
        if self.kind == "custom" and (self.func is None or self.prim is None or self.deriv is None):
            raise InvalidParameter("custom absorption needs func, prim and deriv")

    @classmethod
    def power(cls, q, c=1.0, source=False):
        return cls(kind="power", q=q, c=c, sign=-1 if source else 1)

    @classmethod
    def exponential(cls, tau, beta, l=1, source=False):
        return cls(kind="exponential", tau=tau, beta=beta, l=l, sign=-1 if source else 1)

    @property
    def is_none(self) -> bool:
        return self.kind == "none" or (self.kind == "power" and self.c == 0)

    @property
    def is_source(self) -> bool:
        return self.sign < 0 and not self.is_none

    @property
    def odd(self) -> bool:
        return self.kind in ("none", "power", "exponential")

    @property
    def monotone(self) -> bool:
        return self.sign > 0

    @property
    def envelope(self):
        if self.kind == "none":
            return ZeroEnvelope()
        if self.kind == "power":
            return PowerEnvelope(self.q, abs(self.c))
        if self.kind == "exponential":
            return ExpEnvelope(self.tau, self.beta, self.l)
        if self.envelope_fn is not None:
            return self.envelope_fn
        return lambda s: np.abs(self.func(np.asarray(s, dtype=float)))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "power":
            return self.sign * self.c * np.sign(r) * np.abs(r) ** self.q
        if self.kind == "exponential":
            return self.sign * np.sign(r) * exp_remainder(self.tau * np.abs(r) ** self.beta, self.l)
        return np.asarray(self.func(r), dtype=float)

    def prim_value(self, r):
        """Antiderivative ``Gbar(r) = int_0^r G``."""
        r = np.asarray(r, dtype=float)
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "power":
            return self.sign * self.c * np.abs(r) ** (self.q + 1.0) / (self.q + 1.0)
        if self.kind == "exponential":
            a = np.abs(r)
            nodes = 0.5 * (_GX + 1.0)
            s = a[..., None] * nodes
            vals = exp_remainder(self.tau * s ** self.beta, self.l)
            return self.sign * 0.5 * a * (vals @ _GW)
        return np.asarray(self.prim(r), dtype=float)

    def deriv_value(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "power":
            return self.sign * self.c * self.q * np.abs(r) ** (self.q - 1.0)
        if self.kind == "exponential":
            a = np.abs(r)
            s = self.tau * a ** self.beta
            inner = np.exp(s) if self.l == 1 else exp_remainder(s, self.l - 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = self.sign * inner * self.tau * self.beta * a ** (self.beta - 1.0)
            return np.where(a > 0, d, self.sign * self.tau * (self.l == 1 and self.beta == 1))
        return np.asarray(self.deriv(r), dtype=float)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "sign": self.sign}
        if self.kind == "power":
            d.update(q=self.q, c=self.c)
        elif self.kind == "exponential":
            d.update(tau=self.tau, beta=self.beta, l=self.l)
        return d

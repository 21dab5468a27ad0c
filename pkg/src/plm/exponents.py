"""Critical exponents and subcritical growth integrals.

The admissible range of ``p`` and the Marcinkiewicz exponents of solutions
with measure data depend only on ``(p, N)``.  Growth envelopes ``G`` of the
zero-order term are tested against ``u``'s exponent through the integral
``int_1^inf G(s) s^(-1-pc) ds``; divergence is returned as ``math.inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .errors import InvalidParameter

__all__ = [
    "Exponents",
    "compute_exponents",
    "PowerEnvelope",
    "ExpEnvelope",
    "TabulatedEnvelope",
    "ZeroEnvelope",
    "subcritical_integral",
    "tail_bound",
    "exp_remainder",
]

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class Exponents:
    p: float
    N: int
    p1: float
    pc: float
    mc: float
    pe: float
    valid_range: bool
    gradient_integrable: bool
    borderline: bool  # p == N

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if math.isinf(d["pe"]):
            d["pe"] = "inf"
        return d


def compute_exponents(p: float, N: int) -> Exponents:
    """Return ``p1, pc, mc, pe`` and the range flags for ``(p, N)``.

    >>> e = compute_exponents(2.0, 3)
    >>> e.p1, e.mc, e.pe
    (1.75, 1.25, 3.0)
    """
    if not (p > 1.0) or not math.isfinite(p):
        raise InvalidParameter(f"p must be > 1, got {p!r}")
    if int(N) != N or N < 1:
        raise InvalidParameter(f"N must be an integer >= 1, got {N!r}")
    N = int(N)
    p1 = 2.0 - 1.0 / (N + 1)
    pc = p - 1.0 + p / N
    mc = p - N / (N + 1.0)
    pe = N * (p - 1.0) / (N - p) if p < N else math.inf
    return Exponents(
        p=float(p), N=N, p1=p1, pc=pc, mc=mc, pe=pe,
        valid_range=p > p1,
        gradient_integrable=mc > 1.0,
        borderline=p == N,
    )


# -- growth envelopes -------------------------------------------------------

def exp_remainder(s, l: int):
    """``E(s) = e^s - sum_{j<l} s^j / j!`` evaluated without cancellation."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = np.abs(s) < 1.0
    # series tail for |s| < 1
    ss = s[small]
    term = ss ** l / math.factorial(l)
    acc = term.copy()
    j = l
    while ss.size and np.any(np.abs(term) > 1e-17 * np.abs(acc)):
        j += 1
        term = term * ss / j
        acc += term
    out[small] = acc
    sl = s[~small]
    partial = sum(sl ** j / math.factorial(j) for j in range(l))
    with np.errstate(over="ignore"):
        out[~small] = np.exp(sl) - partial
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PowerEnvelope:
    """``G(s) = c * s**q``."""
    q: float
    c: float = 1.0

    def __call__(self, s):
        return self.c * np.asarray(s, dtype=float) ** self.q


@dataclass(frozen=True)
class ExpEnvelope:
    """``G(s) = E(tau * s**beta)`` with the first ``l`` Taylor terms removed."""
    tau: float
    beta: float
    l: int = 1

    def __call__(self, s):
        return exp_remainder(self.tau * np.asarray(s, dtype=float) ** self.beta, self.l)


@dataclass(frozen=True)
class ZeroEnvelope:
    def __call__(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


class TabulatedEnvelope:
    """Piecewise-linear table, continued past the last node as a power law.

    The tail exponent is the log-log slope of the last two table entries.
    """

    def __init__(self, s, values):
        self.s = np.asarray(s, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.s.ndim != 1 or self.s.shape != self.values.shape or self.s.size < 2:
            raise InvalidParameter("table needs matching 1-D arrays of length >= 2")
        if np.any(np.diff(self.s) <= 0):
            raise InvalidParameter("table abscissae must be increasing")
        a, b = self.values[-2], self.values[-1]
        if a > 0 and b > 0:
            self.tail_q = math.log(b / a) / math.log(self.s[-1] / self.s[-2])
        else:
            self.tail_q = 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.interp(s, self.s, self.values)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = self.values[-1] * (s / self.s[-1]) ** self.tail_q
        return np.where(s > self.s[-1], tail, inside)


Envelope = Union[PowerEnvelope, ExpEnvelope, ZeroEnvelope, TabulatedEnvelope, Callable]


def _check_envelope(G) -> None:
    s = np.geomspace(1.0, 1e6, 400)
    with np.errstate(over="ignore"):
        v = np.asarray(G(s), dtype=float)
    finite = np.isfinite(v)
    if np.any(v[finite] < 0):
        raise InvalidParameter("envelope must be nonnegative")
    vf = v[finite]
    if np.any(np.diff(vf) < -1e-12 * np.maximum(1.0, np.abs(vf[:-1]))):
        raise InvalidParameter("envelope must be nondecreasing")


def _power_tail(c, q, L, pc):
    if c == 0.0:
        return 0.0
    if q - 1.0 - pc >= -1.0:
        return math.inf
    return c * L ** (q - pc) / (pc - q)


def _generic_tail(G, L, pc):
    """Sum dyadic blocks ``[L 2^j, L 2^{j+1}]`` until convergence or divergence."""
    total = 0.0
    prev = None
    ratios = []
    j = 0
    while True:
        a, b = L * 2.0 ** j, L * 2.0 ** (j + 1)
        if not math.isfinite(b):
            return math.inf
        block, _ = integrate.quad(lambda s: float(G(s)) * s ** (-1.0 - pc), a, b, limit=200)
        if not math.isfinite(block):
            return math.inf
        total += block
        if total > DIVERGENCE_THRESHOLD:
            return math.inf
        if prev is not None and prev > 0:
            ratios.append(block / prev)
        if block == 0.0 and prev == 0.0 and j > 60:
            return total
        if len(ratios) >= 20:
            recent = ratios[-20:]
            if min(recent) >= 1.0 - 1e-3:
                return math.inf
            if block <= 1e-15 * total and max(recent[-5:]) < 1.0:
                return total
        prev = block
        j += 1
        if j > 1000:
            return math.inf


def _tail_integral(G, L: float, pc: float) -> float:
    if isinstance(G, ZeroEnvelope):
        return 0.0
    if isinstance(G, PowerEnvelope):
        return _power_tail(G.c, G.q, L, pc)
    if isinstance(G, ExpEnvelope):
        return 0.0 if G.tau == 0.0 else math.inf
    if isinstance(G, TabulatedEnvelope):
        total = 0.0
        knots = G.s[G.s > L]
        if knots.size:
            pts = np.concatenate([[L], knots])
            for a, b in zip(pts[:-1], pts[1:]):
                val, _ = integrate.quad(lambda s: float(G(s)) * s ** (-1.0 - pc), a, b)
                total += val
            start = G.s[-1]
        else:
            start = L
        c_tail = float(G(start)) / start ** G.tail_q if start > 0 else 0.0
        return total + _power_tail(c_tail, G.tail_q, start, pc)
    return _generic_tail(G, L, pc)


def subcritical_integral(G: Envelope, pc: float) -> float:
    """``int_1^inf G(s) s^(-1-pc) ds``; ``math.inf`` signals divergence.

    Power, exponential and tabulated envelopes get closed-form tails; any
    other callable is integrated block by block.
    """
    _check_envelope(G)
    return _tail_integral(G, 1.0, pc)


def tail_bound(G: Envelope, M: float, L: float, pc: float) -> float:
    """Upper bound ``pc * M * int_L^inf G(s) s^(-1-pc) ds`` on
    ``int_{|V| >= L} G(|V|)`` for any ``V`` with
    ``meas{|V| >= t} <= M t^(-pc)`` for ``t >= 1``.
    """
    if not L > 1.0:
        raise InvalidParameter("L must exceed 1")
    if M < 0:
        raise InvalidParameter("M must be nonnegative")
    _check_envelope(G)
    val = _tail_integral(G, float(L), pc)
    if math.isinf(val):
        return math.inf if M > 0 else 0.0
    return pc * M * val

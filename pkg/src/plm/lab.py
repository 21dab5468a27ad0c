"""Stability experiments: perturbation families, distance tables and reports.

A family replaces a Q-measure ``mu`` by the approximations of
:func:`~plm.measures.approximation_schedule`.  Each member is solved, the
finest member serves as the limit proxy, and convergence is judged from
L1 Cauchy increments.  Almost-everywhere convergence is proxied by the L1
distance together with the nodal max distance away from atoms.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameter
from .exponents import compute_exponents
from .measures import DiscreteMeasure, ScheduleEntry, approximation_schedule
from .operators import AbsorptionSpec, OperatorSpec
from .solver import solve_parabolic
from .truncation import levelset_decay, truncated_energy

__all__ = [
    "PerturbationFamily",
    "build_perturbation_family",
    "oscillating_family",
    "StabilityReport",
    "run_stability_experiment",
    "emit_report",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = "1.0"
CAUCHY_FACTOR = 1.5
UNIFORMITY_FACTOR = 1.5
CSV_COLUMNS = ("n", "k", "scale", "l1_to_limit", "max_to_limit", "tk_dist", "cauchy_l1",
               "levelset_const", "energy_const", "flagged")


@dataclass
class PerturbationFamily:
    """Data ``mu_n, u0_n`` for ``n = 1..n_max`` approximating ``mu, u0``."""
    mu: DiscreteMeasure
    entries: list
    u0: list
    eps: float
    p: float = 2.0
    hypotheses: dict = field(default_factory=dict)
    kind: str = "schedule"

    @property
    def n_max(self) -> int:
        return len(self.entries)

    @property
    def grid(self):
        return self.mu.grid

    def measures(self) -> list:
        return [e.measure() for e in self.entries]

    def check_hypotheses(self) -> dict:
        """Per-n budgets, nonnegativity of the singular parts and the mass bound."""
        g = self.grid
        ref = (1.0 + self.eps) * self.mu.total_variation
        rows = []
        for e in self.entries:
            m = e.measure()
            rows.append({
                "n": e.n,
                "budget_total": e.budget_total,
                "budget_gh": e.budget_gh,
                "budgets_ok": bool(e.budget_total <= ref * (1 + 1e-10) + 1e-14
                                   and e.budget_gh <= self.eps * (1 + 1e-10)),
                "rho_eta_nonneg": bool(np.all(e.rho >= 0) and np.all(e.eta >= 0)),
                "mass": m.total_variation,
            })
        masses = np.array([r["mass"] for r in rows]) if rows else np.zeros(0)
        out = {
            "reference_mass": ref,
            "per_n": rows,
            "sup_mass": float(masses.max()) if masses.size else 0.0,
            "sup_mass_ok": bool(masses.size == 0 or masses.max() <= ref * (1 + 1e-10) + 1e-14),
            "violations": [r["n"] for r in rows if not (r["budgets_ok"] and r["rho_eta_nonneg"])],
            "weak_convergence": "strong proxy" if self.kind != "oscillating" else "oscillating family",
        }
        out["all_ok"] = bool(not out["violations"] and out["sup_mass_ok"])
        self.hypotheses = out
        return out

    def inflated(self, n: int, factor: float) -> "PerturbationFamily":
        """Negative control: member ``n`` multiplied by ``factor`` (no budget check)."""
        if not 1 <= n <= self.n_max:
            raise InvalidParameter("n out of range")
        entries = list(self.entries)
        e = entries[n - 1]
        entries[n - 1] = replace(e, f=factor * e.f, g=factor * e.g, h=factor * e.h, rho=factor * e.rho,
                                 eta=factor * e.eta, budget_total=factor * e.budget_total,
                                 budget_gh=factor * e.budget_gh)
        fam = PerturbationFamily(self.mu, entries, list(self.u0), self.eps, self.p, {}, self.kind)
        fam.check_hypotheses()
        return fam

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_max": self.n_max, "eps": self.eps, "p": self.p,
                "scales": [e.scale for e in self.entries], "hypotheses": self.hypotheses}


def build_perturbation_family(mu: DiscreteMeasure, u0=None, n_max: int = 6, eps: float = 0.1,
                              p: float = 2.0, s0: Optional[float] = None) -> PerturbationFamily:
    """Family from :func:`approximation_schedule`; budgets asserted for every ``n``.

    ``u0`` is a nodal array (used for every ``n``), a list of ``n_max``
    arrays, or ``None``.
    """
    if mu.ambient != "Q":
        raise InvalidParameter("stability families need a Q-measure")
    g = mu.grid
    entries = approximation_schedule(mu, n_max, eps, p, s0=s0)
    if u0 is None:
        u0s = [np.zeros(g.n_nodes)] * n_max
    elif isinstance(u0, (list, tuple)):
        if len(u0) != n_max:
            raise InvalidParameter("need one initial datum per n")
        u0s = [np.asarray(v, dtype=float) for v in u0]
    else:
        u0s = [np.asarray(u0, dtype=float)] * n_max
    fam = PerturbationFamily(mu, entries, u0s, eps, p)
    hyp = fam.check_hypotheses()
    if not hyp["all_ok"]:
        raise InvalidParameter(f"schedule violates the stability hypotheses at n = {hyp['violations']}")
    return fam


def oscillating_family(mu: DiscreteMeasure, n_max: int = 6, eps: float = 0.1, p: float = 2.0,
                       amplitude: float = 0.5, s0: Optional[float] = None) -> PerturbationFamily:
    """Schedule family whose densities carry the factor ``1 + a sin(2^{n+1} pi x_1)``.

    The factor converges weakly to 1 but not strongly, so ``f_n`` converges
    only weakly in L1.  Budgets are checked but not enforced.
    """
    if not 0 <= amplitude < 1:
        raise InvalidParameter("amplitude must lie in [0, 1)")
    g = mu.grid
    x = g.normalized()[:, 0]
    entries = []
    for e in approximation_schedule(mu, n_max, eps, p, s0=s0):
        osc = 1.0 + amplitude * np.sin(2.0 ** (e.n + 1) * math.pi * x)
        f = e.f * osc[None, :]
        extra = float(g.dt * np.sum((np.abs(f) - np.abs(e.f)) @ g.lumped))
        entries.append(replace(e, f=f, budget_total=e.budget_total + extra))
    fam = PerturbationFamily(mu, entries, [np.zeros(g.n_nodes)] * n_max, eps, p, kind="oscillating")
    fam.check_hypotheses()
    return fam


def constant_family(mu: DiscreteMeasure, n_max: int, eps: float = 0.1, p: float = 2.0) -> PerturbationFamily:
    """``mu_n = mu`` for all ``n`` (trivial control)."""
    e = approximation_schedule(mu, 1, eps, p)[0]
    entries = [replace(e, n=n) for n in range(1, n_max + 1)]
    fam = PerturbationFamily(mu, entries, [np.zeros(mu.grid.n_nodes)] * n_max, eps, p, kind="constant")
    fam.check_hypotheses()
    return fam


# -- experiment -------------------------------------------------------------

@dataclass
class StabilityReport:
    """Distance table and verdicts of one stability experiment."""
    n: list = field(default_factory=list)
    k_list: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    l1_to_limit: list = field(default_factory=list)
    max_to_limit: list = field(default_factory=list)
    tk_dist: dict = field(default_factory=dict)  # k -> list over n
    cauchy: list = field(default_factory=list)  # length n_max - 1
    levelset_const: list = field(default_factory=list)
    energy_const: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    cauchy_ratio: float = math.nan
    verdict: bool = False
    tk_decreasing: dict = field(default_factory=dict)
    uniform: bool = True
    hypotheses: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    partial: bool = False
    error: str = ""

    @property
    def all_pass(self) -> bool:
        return bool(self.verdict and all(self.tk_decreasing.values()) and self.uniform
                    and not self.partial)

    def rows(self) -> list:
        out = []
        for i, n in enumerate(self.n):
            for k in self.k_list:
                out.append((n, k, self.scales[i], self.l1_to_limit[i], self.max_to_limit[i],
                            self.tk_dist[k][i], self.cauchy[i] if i < len(self.cauchy) else math.nan,
                            self.levelset_const[i], self.energy_const[i], int(n in self.flagged)))
        return out

    def summary(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {str(a): clean(b) for a, b in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, (np.floating, float)):
                v = float(v)
                return v if math.isfinite(v) else repr(v)
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v
        return clean({
            "schema_version": SCHEMA_VERSION,
            "verdict": self.verdict,
            "all_pass": self.all_pass,
            "cauchy_ratio": self.cauchy_ratio,
            "cauchy_factor_required": CAUCHY_FACTOR,
            "cauchy_increments": self.cauchy,
            "tk_decreasing": self.tk_decreasing,
            "uniform": self.uniform,
            "flagged": self.flagged,
            "hypotheses": self.hypotheses,
            "partial": self.partial,
            "error": self.error,
            "proxies": {
                "ae_convergence": "L1 distance plus nodal max distance away from atoms",
                "limit": "finest member of the family",
            },
            "meta": self.meta,
        })


def _tk(v, k):
    return np.clip(v, -k, k)


def _x_norm(grid, v, p):
    return grid.lp_norm(v, p) + grid.grad_lp_norm(v, p)


def _geometric_ratio(c):
    c = np.asarray(c, dtype=float)
    if c.size < 2 or np.all(c == 0):
        return math.inf
    if np.any(c[1:] == 0):
        return math.inf
    return float(np.exp(np.mean(np.log(c[:-1] / c[1:]))))


def run_stability_experiment(family: PerturbationFamily, op: OperatorSpec,
                             G: Optional[AbsorptionSpec] = None, k_list: Sequence[float] = (1.0, 2.0, 4.0),
                             workers: int = 1, levels: Optional[Sequence[float]] = None) -> StabilityReport:
    """Solve every member, tabulate distances to the finest one and judge.

    Verdict: the L1 Cauchy increments shrink by a geometric-mean factor of
    at least 1.5 per level.  ``tk_decreasing[k]`` requires the X-distances
    of ``T_k`` to the limit to be nonincreasing.  The Marcinkiewicz constant
    ``max_k k^{pc} meas{|u_n| >= k}`` and the truncated-energy constant
    ``max_{l,k} E(l,k) / (k |mu|(Q))`` are compared across ``n``; members
    above 1.5 times the median are flagged.
    """
    g = family.grid
    p = op.p
    k_list = [float(k) for k in k_list]
    rep = StabilityReport(k_list=k_list)
    rep.hypotheses = family.hypotheses or family.check_hypotheses()
    rep.meta = {"family": family.to_dict(), "operator": op.to_dict(),
                "absorption": (G or AbsorptionSpec()).to_dict(), "grid": repr(g),
                "workers": int(workers)}
    measures = family.measures()

    def solve(i):
        return solve_parabolic(g, measures[i], family.u0[i], op, G)

    sols = [None] * family.n_max
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                sols = list(ex.map(solve, range(family.n_max)))
        else:
            sols = [solve(i) for i in range(family.n_max)]
    except Exception as exc:  # noqa: BLE001 - partial report
        rep.partial, rep.error = True, f"{type(exc).__name__}: {exc}"
        return rep
    ref = sols[-1].values
    atoms = family.mu.atoms
    if atoms:
        d = np.min([g.distance_to(np.atleast_1d(a.x)) for a in atoms], axis=0)
    else:
        d = np.full(g.n_nodes, np.inf)
    away = d > 3 * g.h
    pc = compute_exponents(p, g.N).pc
    mass = max(family.mu.total_variation, 1e-300)
    tops = [float(np.max(np.abs(s.values))) for s in sols]
    if levels is None:
        top = float(np.median(tops))
        levels = np.geomspace(top * 10 ** -1.5, top, 7) if top > 0 else np.array([])
    levels = np.asarray(levels, dtype=float)
    pairs = [(l, k) for l in (0.0, 0.25, 0.5) for k in (0.1, 0.2, 0.4)]
    for i, s in enumerate(sols):
        v = s.values
        rep.n.append(i + 1)
        rep.scales.append(family.entries[i].scale)
        rep.l1_to_limit.append(g.lp_norm(v - ref, 1))
        rep.max_to_limit.append(float(np.max(np.abs(v - ref)[:, away])) if np.any(away) else 0.0)
        for k in k_list:
            rep.tk_dist.setdefault(k, []).append(_x_norm(g, _tk(v, k) - _tk(ref, k), p))
        if levels.size:
            w = g.dt * g.lumped
            a = np.abs(v[1:])
            meas = np.array([float(np.sum(w[None, :] * (a >= kk))) for kk in levels])
            rep.levelset_const.append(float(np.max(levels ** pc * meas)))
        else:
            rep.levelset_const.append(0.0)
        scale = tops[-1] if tops[-1] > 0 else 1.0
        rep.energy_const.append(max(truncated_energy(s, l * scale, k * scale, p) / (k * scale * mass)
                                    for l, k in pairs))
    rep.cauchy = [g.lp_norm(sols[i + 1].values - sols[i].values, 1) for i in range(len(sols) - 1)]
    rep.cauchy_ratio = _geometric_ratio(rep.cauchy)
    rep.verdict = bool(rep.cauchy_ratio >= CAUCHY_FACTOR)
    for k in k_list:
        dist = np.array(rep.tk_dist[k])
        rep.tk_decreasing[k] = bool(np.all(np.diff(dist) <= 1e-12 * max(dist.max(), 1e-300)))
    flagged = set()
    for consts in (rep.levelset_const, rep.energy_const):
        c = np.array(consts)
        med = float(np.median(c))
        if med > 0:
            flagged.update(int(i + 1) for i in np.flatnonzero(c > UNIFORMITY_FACTOR * med))
    flagged.update(rep.hypotheses.get("violations", []))
    rep.flagged = sorted(flagged)
    rep.uniform = not rep.flagged
    rep.meta["levels"] = [float(x) for x in levels]
    rep.meta["decay_verdicts"] = [bool(levelset_decay(s, levels, pc).verdict) if levels.size >= 4 else None
                                  for s in sols]
    return rep


# -- output -----------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12e}"


def report_csv(report: StabilityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows():
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_report(report: StabilityReport, out_dir: str, formats: Sequence[str] = ("csv", "json", "dat"),
                stem: str = "stability") -> list:
    """Write ``<stem>.csv`` (one row per ``(n, k)``), ``<stem>.json`` and a
    whitespace-separated ``<stem>.dat`` for gnuplot.  Returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        if fmt == "csv":
            text = report_csv(report)
        elif fmt == "json":
            text = json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"
        elif fmt == "dat":
            lines = ["# " + " ".join(CSV_COLUMNS)]
            lines += [" ".join(_fmt(v) for v in row) for row in report.rows()]
            text = "\n".join(lines) + "\n"
        else:
            raise InvalidParameter(f"unknown format {fmt!r}")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths

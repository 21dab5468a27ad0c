"""Command line entry point ``plm``.

Every subcommand reads an optional JSON config (``--config``), writes its
outputs below ``--out`` and exits with 0 when all verdicts pass, 2 when a
verdict fails and 1 on errors.  The config schema is documented in the
README; unspecified sections fall back to the defaults in ``DEFAULTS``,
and the merged config is echoed into every JSON output.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .exponents import compute_exponents
from .grid import Grid, RadialGrid
from .lab import (SCHEMA_VERSION, build_perturbation_family, emit_report, oscillating_family,
                  run_stability_experiment)
from .measures import (DiscreteMeasure, _eval_expr, approximation_schedule, classify_diffuse,
                       decompose, measure_from_json)
from .operators import AbsorptionSpec, OperatorSpec
from .potential import (Calibration, WolffConfig, as_potential_measure, elliptic_capacity,
                        wolff_many)
from .schemes import (absorption_solve, exponential_iteration, monotone_source_iteration,
                      picard_subcritical)
from .solver import SpaceTimeField, solve_parabolic
from .truncation import levelset_decay, truncated_energy

log = logging.getLogger("plm")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULTS = {
    "grid": {"kind": "cartesian", "N": 2, "n": 32, "box": None, "R": 1.0, "T": 0.5, "nt": 10},
    "operator": {"p": 2.0, "c1": 1.0, "c2": 1.0, "eps_reg": None},
    "absorption": {"kind": "none"},
    "measure": {"atoms": [{"x": [0.0, 0.0], "w": 1.0}]},
    "u0": None,
    "solve": {"tol": 1e-9, "max_iter": 200},
    "verify": {"k_levels": 8, "tolerance": 0.15},
    "wolff": {"points": None, "n_points": 20, "R": None, "closed_form": False},
    "capacity": {"K": ["ball", 0.25], "p": None, "eps_reg": None},
    "iterate": {"scheme": "source", "q": None, "m_max": 50, "lambda": 0.5,
                "tau": 1.0, "beta": 1.0, "l": 2},
    "stability": {"kind": "schedule", "n_max": 6, "eps": 0.1, "k_list": [1.0, 2.0, 4.0], "s0": None,
                  "inflate": None, "amplitude": 0.5},
    "measures": {"eps": 0.1, "nmax": 4, "q": None},
    "calibration": None,
}


# -- config -----------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path):
    cfg = {}
    if path:
        with open(path) as fh:
            cfg = json.load(fh)
    cfg = _merge(DEFAULTS, cfg)
    mf = cfg.get("measure_file")
    if mf:
        base = os.path.dirname(os.path.abspath(path)) if path else ""
        with open(os.path.join(base, mf)) as fh:
            cfg["measure"] = json.load(fh)
    return cfg


def build_grid(gc):
    if gc["kind"] == "radial":
        return RadialGrid(int(gc["N"]), float(gc["R"]), int(gc["n"]), float(gc["T"]), int(gc["nt"]))
    box = gc.get("box")
    box = [(-1.0, 1.0)] * int(gc["N"]) if box is None else [tuple(b) for b in box]
    return Grid(int(gc["N"]), int(gc["n"]), box=box,
                T=float(gc["T"]), nt=int(gc["nt"]))


def build_operator(oc):
    return OperatorSpec(float(oc["p"]), float(oc.get("c1", 1.0)), float(oc.get("c2", 1.0)),
                        eps_reg=oc.get("eps_reg"))


def build_absorption(ac):
    kind = ac.get("kind", "none")
    if kind == "none":
        return AbsorptionSpec()
    if kind == "power":
        return AbsorptionSpec.power(float(ac["q"]), float(ac.get("c", 1.0)), bool(ac.get("source", False)))
    if kind == "exponential":
        return AbsorptionSpec.exponential(float(ac["tau"]), float(ac["beta"]), int(ac.get("l", 1)),
                                          bool(ac.get("source", False)))
    raise ValueError(f"unknown absorption kind {kind!r}")


def build_u0(expr, grid):
    if expr is None:
        return None
    X = grid.nodes
    names = {"x": X[:, 0], "r": X[:, 0]}
    if X.shape[1] > 1:
        names["y"] = X[:, 1]
    return np.broadcast_to(np.asarray(_eval_expr(expr, **names), dtype=float), (grid.n_nodes,)).copy()


# -- output helpers ---------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12e}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable({"schema_version": SCHEMA_VERSION, **obj}), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands ------------------------------------------------------------

def cmd_exponents(args, cfg):
    ps = args.p if args.p is not None else cfg.get("exponents", {}).get("p", [cfg["operator"]["p"]])
    Ns = args.N if args.N is not None else cfg.get("exponents", {}).get("N", [cfg["grid"]["N"]])
    ps = ps if isinstance(ps, list) else [ps]
    Ns = Ns if isinstance(Ns, list) else [Ns]
    recs = [compute_exponents(float(p), int(N)).to_dict() for p in ps for N in Ns]
    ok = all(r["gradient_integrable"] == r["valid_range"] for r in recs)
    if len(recs) == 1:
        print(json.dumps(recs[0], sort_keys=True))
    if args.out:
        cols = ("p", "N", "p1", "pc", "mc", "pe", "valid_range", "gradient_integrable", "borderline")
        write_csv(os.path.join(args.out, "exponents.csv"), cols,
                  [[math.inf if r[c] == "inf" else r[c] for c in cols] for r in recs])
    return ok


def cmd_measures(args, cfg):
    grid = build_grid(cfg["grid"])
    mu = measure_from_json(cfg["measure"], grid)
    mc = cfg["measures"]
    eps = args.eps if args.eps is not None else float(mc["eps"])
    nmax = args.nmax if args.nmax is not None else int(mc["nmax"])
    p = float(cfg["operator"]["p"])
    out = {"action": args.action, "config": cfg}
    ok = True
    if args.action == "classify":
        om = mu if mu.ambient == "omega" else DiscreteMeasure(grid, "omega", tuple(
            a for a in mu.atoms if a.t is None), None if mu.density is None else mu.density[0])
        res = classify_diffuse(om, p, grid.N, mc.get("q"))
        out["classification"] = res
        ok = bool(res.get("admissible", True))
    elif args.action == "decompose":
        dec = decompose(mu, eps, p)
        out.update(budget_total=dec.budget_total, budget_gh=dec.budget_gh, theta=dec.theta,
                   reference_mass=dec.reference_mass, budgets_ok=dec.budgets_hold())
        ok = dec.budgets_hold()
    else:
        entries = approximation_schedule(mu, nmax, eps, p)
        rows = [(e.n, e.scale, e.budget_total, e.budget_gh, e.l1_to_base) for e in entries]
        if args.out:
            write_csv(os.path.join(args.out, "schedule.csv"),
                      ("n", "scale", "budget_total", "budget_gh", "l1_to_base"), rows)
        out["entries"] = len(rows)
    if args.out:
        write_json(os.path.join(args.out, "measures.json"), out)
    return ok


def write_solution(out, u, cfg):
    """``u.bin`` (float64, little endian, row-major levels), ``index.csv`` and ``meta.json``."""
    os.makedirs(out, exist_ok=True)
    vals = np.ascontiguousarray(u.values, dtype="<f8")
    with open(os.path.join(out, "u.bin"), "wb") as fh:
        fh.write(vals.tobytes())
    g = u.grid
    n = g.n_nodes
    rows = [(i, t, i * n * 8, n) for i, t in enumerate(g.times)]
    write_csv(os.path.join(out, "index.csv"), ("level", "t", "offset_bytes", "count"), rows)
    write_json(os.path.join(out, "meta.json"), {"config": cfg, "grid": repr(g), "n_nodes": n,
                                                "levels": g.nt + 1, "dtype": "<f8", "solver": u.meta})


def read_solution(run_dir):
    with open(os.path.join(run_dir, "meta.json")) as fh:
        meta = json.load(fh)
    cfg = meta["config"]
    grid = build_grid(cfg["grid"])
    vals = np.fromfile(os.path.join(run_dir, "u.bin"), dtype="<f8").reshape(grid.nt + 1, grid.n_nodes)
    return SpaceTimeField(grid, vals, meta.get("solver", {})), cfg


def cmd_solve(args, cfg):
    grid = build_grid(cfg["grid"])
    mu = measure_from_json(cfg["measure"], grid)
    if mu.ambient != "Q":
        raise ValueError("solve needs a Q-measure (omit ambient or set it to 'Q')")
    u = solve_parabolic(grid, mu, build_u0(cfg["u0"], grid), build_operator(cfg["operator"]),
                        build_absorption(cfg["absorption"]), cfg["solve"]["tol"], cfg["solve"]["max_iter"])
    if args.out:
        write_solution(args.out, u, cfg)
    return True


def _verify_reports(u, cfg):
    grid = u.grid
    p = float(cfg["operator"]["p"])
    ex = compute_exponents(p, grid.N)
    nk = int(cfg["verify"]["k_levels"])
    tol = float(cfg["verify"]["tolerance"])
    reps = []
    top = float(np.max(np.abs(u.values)))
    if top > 0:
        ks = np.geomspace(top * 10 ** -1.6, 0.9 * top, nk)
        reps.append(levelset_decay(u, ks, ex.pc, slope_tol=tol))
        gtop = float(np.max(np.linalg.norm(u.grad(), axis=-1)))
        kg = np.geomspace(gtop * 10 ** -1.6, 0.9 * gtop, nk)
        reps.append(levelset_decay(u, kg, ex.mc, gradient=True, slope_tol=tol))
    return reps


def cmd_verify(args, cfg):
    run = args.run or cfg.get("verify", {}).get("run")
    if run:
        u, cfg = read_solution(run)
    else:
        grid = build_grid(cfg["grid"])
        mu = measure_from_json(cfg["measure"], grid)
        u = solve_parabolic(grid, mu, build_u0(cfg["u0"], grid), build_operator(cfg["operator"]),
                            build_absorption(cfg["absorption"]))
    reps = _verify_reports(u, cfg)
    if args.out:
        rows = []
        for r in reps:
            for k, m, b in zip(r.extra["k"], r.lhs, r.bound):
                rows.append((r.name, k, m, b))
        write_csv(os.path.join(args.out, "verify.csv"), ("report", "k", "measure", "bound"), rows)
        write_json(os.path.join(args.out, "verify.json"), {"config": cfg,
                                                           "reports": [r.to_dict() for r in reps]})
    return all(r.verdict for r in reps)


def cmd_wolff(args, cfg):
    grid = build_grid(cfg["grid"])
    md = dict(cfg["measure"], ambient="omega")
    omega = measure_from_json(md, grid)
    wc = cfg["wolff"]
    p = float(cfg["operator"]["p"])
    wcfg = WolffConfig(p, grid.N, wc.get("R"), borderline=(p == grid.N))
    pts = wc.get("points")
    if pts is None:
        rng = np.random.default_rng(0)
        m = int(wc["n_points"])
        if isinstance(grid, RadialGrid):
            pts = np.linspace(0.1, 0.9, m)[:, None] * grid.R
        else:
            lo = np.array([a for a, _ in grid.box])
            pts = lo + grid.L * (0.05 + 0.9 * rng.random((m, grid.N)))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    W = wolff_many(as_potential_measure(omega), pts, wcfg)
    ok = bool(np.all(W >= 0))
    rows = [tuple(x) + (w,) for x, w in zip(pts, W)]
    extra = {}
    if wc.get("closed_form") and p == 2 and len(omega.atoms) == 1 and omega.density is None:
        a = omega.atoms[0]
        R = wcfg.radius(grid)
        d = np.linalg.norm(pts - np.atleast_1d(a.x), axis=1)
        N = grid.N
        exact = a.weight * (d ** (2 - N) - R ** (2 - N)) / (N - 2) if N > 2 else a.weight * np.log(R / d)
        err = float(np.max(np.abs(W - exact) / np.abs(exact)))
        extra["closed_form_rel_error"] = err
        ok = ok and err <= 1e-6
    if args.out:
        cols = tuple(f"x{i}" for i in range(pts.shape[1])) + ("W",)
        write_csv(os.path.join(args.out, "wolff.csv"), cols, rows)
        write_json(os.path.join(args.out, "wolff.json"), {"config": cfg, **extra})
    return ok


def cmd_capacity(args, cfg):
    grid = build_grid(cfg["grid"])
    cc = cfg["capacity"]
    p = float(cc["p"] if cc.get("p") is not None else cfg["operator"]["p"])
    K = cc["K"]
    K = tuple(K) if isinstance(K, list) else K
    res = elliptic_capacity(K, p, grid, cc.get("eps_reg"))
    ok = bool(math.isfinite(res["capacity"]) and res["capacity"] >= 0)
    if args.out:
        write_csv(os.path.join(args.out, "capacity.csv"), ("h", "capacity", "active_nodes", "iterations"),
                  [(res["h"], res["capacity"], res["active_nodes"], res["iterations"])])
        write_json(os.path.join(args.out, "capacity.json"),
                   {"config": cfg, **{k: v for k, v in res.items() if k != "phi"}})
    cal = cfg.get("calibration")
    if cal:
        c = Calibration(cal)
        c.set(res["capacity"], "capacity", grid.N, p)
        c.save()
    return ok


def cmd_iterate(args, cfg):
    grid = build_grid(cfg["grid"])
    mu = measure_from_json(cfg["measure"], grid)
    u0 = build_u0(cfg["u0"], grid)
    op = build_operator(cfg["operator"])
    ic = cfg["iterate"]
    scheme = args.scheme or ic["scheme"]
    m_max = int(ic["m_max"])
    q = ic.get("q")
    q = SCHEME_Q.get(scheme) if q is None else float(q)
    if scheme == "source":
        trace, u = monotone_source_iteration(mu, u0, q, grid, op, m_max)
        ok = trace.monotone and trace.bound_respected and trace.converged
    elif scheme == "exponential":
        trace, u = exponential_iteration(mu, u0, float(ic["tau"]), float(ic["beta"]), int(ic["l"]),
                                         grid, op, m_max)
        ok = trace.monotone and trace.bound_respected and trace.converged
    elif scheme == "picard":
        G = AbsorptionSpec.power(q, source=True)
        trace, u = picard_subcritical(mu, u0, float(ic["lambda"]), G, grid, op, m_max)
        ok = trace.converged and trace.extra["K_bounded"]
    elif scheme == "absorption":
        G = build_absorption(cfg["absorption"])
        if G.is_none:
            G = AbsorptionSpec.power(q)
        u = absorption_solve(mu, u0, G, grid, op)
        trace = None
        ok = bool(u.meta["budget_ok"])
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if args.out:
        if trace is not None:
            write_csv(os.path.join(args.out, "trace.csv"), ("m", "sup", "l1diff", "bound", "verdict"),
                      trace.rows())
            summary = trace.to_dict()
        else:
            summary = {k: v for k, v in u.meta.items() if k not in ("newton_iterations",)}
            write_csv(os.path.join(args.out, "trace.csv"), ("m", "sup", "l1diff", "bound", "verdict"),
                      [(1, float(np.max(u.values)), grid.lp_norm(u.values, 1), u.meta["data_l1"],
                        "pass" if ok else "fail")])
        write_json(os.path.join(args.out, "iterate.json"), {"config": cfg, "scheme": scheme,
                                                            "trace": summary, "verdict": ok})
    return ok


def cmd_stability(args, cfg):
    grid = build_grid(cfg["grid"])
    mu = measure_from_json(cfg["measure"], grid)
    sc = cfg["stability"]
    op = build_operator(cfg["operator"])
    if sc.get("kind", "schedule") == "oscillating":
        fam = oscillating_family(mu, int(sc["n_max"]), float(sc["eps"]), op.p, float(sc["amplitude"]),
                                 sc.get("s0"))
    else:
        fam = build_perturbation_family(mu, build_u0(cfg["u0"], grid), int(sc["n_max"]), float(sc["eps"]),
                                        op.p, sc.get("s0"))
    inf = sc.get("inflate")
    if inf:
        fam = fam.inflated(int(inf["n"]), float(inf["factor"]))
    G = build_absorption(cfg["absorption"])
    rep = run_stability_experiment(fam, op, None if G.is_none else G, sc["k_list"], workers=args.workers)
    rep.meta["config"] = cfg
    if args.out:
        emit_report(rep, args.out)
    return rep.all_pass


SCHEME_Q = {"source": 3.0, "picard": 1.5, "absorption": 2.0}

COMMANDS = {
    "exponents": cmd_exponents,
    "measures": cmd_measures,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "wolff": cmd_wolff,
    "capacity": cmd_capacity,
    "iterate": cmd_iterate,
    "stability": cmd_stability,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="concurrent solves")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="plm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"plm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("exponents", parents=[common], help="critical exponents")
    s.add_argument("--p", type=float, nargs="+")
    s.add_argument("--N", type=int, nargs="+")
    s = sub.add_parser("measures", parents=[common], help="classify, decompose or schedule a measure")
    s.add_argument("action", choices=("classify", "decompose", "approx"))
    s.add_argument("--eps", type=float)
    s.add_argument("--nmax", type=int)
    sub.add_parser("solve", parents=[common], help="implicit Euler solve")
    s = sub.add_parser("verify", parents=[common], help="a priori estimate checks")
    s.add_argument("--run", help="output directory of a previous solve")
    sub.add_parser("wolff", parents=[common], help="Wolff potential at sample points")
    sub.add_parser("capacity", parents=[common], help="discrete elliptic capacity")
    s = sub.add_parser("iterate", parents=[common], help="iteration schemes")
    s.add_argument("--scheme", choices=("picard", "source", "exponential", "absorption"))
    sub.add_parser("stability", parents=[common], help="stability experiment")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        ok = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit code 1
        print(f"plm {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"plm {args.command}: {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

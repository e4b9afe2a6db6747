"""Command-line front end: ``fracpx {norm,solve,degiorgi,suite}``.

Exit codes: 0 ok, 1 configuration or input error, 2 assertion violation,
3 solver non-convergence. Every JSON artifact is validated against the
schema shipped in ``fracpx/schemas`` before it is written.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, function_from_config, load_config
from .degiorgi import degiorgi_on_solution, kstar_bound_check, verify_linf_bound
from .exponents import ExponentError, ScalarExponent
from .grid import GridFunction, from_csv, interpolate, sup_norm, to_csv
from .modular import check_norm_modular_relations, exponent_comparison, holder_pairing, luxemburg_norm
from .nonlocal_ops import combined_norms, imbedding_ratio, random_pinned_function
from .solver import (ModificationError, SolveOptions, beta_default, cutoff_default, estimate_c_imb,
                     minimize_energy, modified_nonlinearity, multistart_small_solutions, prototype_nonlinearity,
                     splus_probe, subspace_negativity, zero_nonlinearity)

SCHEMA_VERSION = "1"
OUT_ENV = "FRACPX_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_NONCONV = 0, 1, 2, 3
WEAK_RESIDUAL_TOL = 1e-5

log = logging.getLogger("fracpx")


# --- output helpers -------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats replaced by None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def load_schema(name: str) -> dict:
    return json.loads(resources.files("fracpx").joinpath("schemas", f"{name}.schema.json").read_text())


class Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def json(self, name: str, schema: str, payload: dict) -> dict:
        doc = _clean({"schema_version": SCHEMA_VERSION, "fracpx_version": __version__, **payload})
        jsonschema.validate(doc, load_schema(schema))
        self._put(name, json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
        return doc

    def text(self, name: str, text: str):
        self._put(name, text)

    def _put(self, name: str, text: str):
        path = self.out_dir / name
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        self.written.append(name)
        log.info("wrote %s", path)


def _history_csv(rep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "energy", "residual_norm"])
    for i, (e, r) in enumerate(zip(rep.energy_history, rep.residual_norm_history)):
        w.writerow([i, repr(e), repr(r)])
    return buf.getvalue()


# --- shared builders -------------------------------------------------------------------


def q_tilde(p, q: ScalarExponent) -> ScalarExponent:
    """Pointwise max{p(x, x), q(x)}."""
    return ScalarExponent(lambda x: np.maximum(p.trace(x), q(x)), (max(p.p_minus, q.lower), max(p.p_plus, q.upper)),
                          p.dim, name="q_tilde")


def base_nonlinearity(cfg: ExperimentConfig, lam: Optional[float] = None):
    if cfg.get("nonlinearity", "kind") == "zero":
        return zero_nonlinearity(cfg.domain().dim)
    lam = cfg.get("nonlinearity", "lambda") if lam is None else lam
    return prototype_nonlinearity(lam, cfg.scalar_exponent("r"), cfg.scalar_exponent("q"))


def build_cutoff(cfg: ExperimentConfig, p):
    c = cfg.values["cutoff"]
    c_imb = estimate_c_imb(p, cfg.domain(), c["c_imb_policy"], trials=c["c_imb_trials"], seed=cfg.seed)
    beta = beta_default(p, c_imb) if c["beta"] == "auto" else float(c["beta"])
    return cutoff_default(c["t2"], beta, c_imb)


def modified_problem(cfg: ExperimentConfig, p):
    """(cutoff, nonlinearity, note). Falls back to the base nonlinearity if the modification is rejected."""
    cut = build_cutoff(cfg, p)
    base = base_nonlinearity(cfg)
    try:
        return cut, modified_nonlinearity(base, cut, p.p_minus, cfg.domain()), None
    except ModificationError as exc:
        return cut, base, f"modification rejected ({exc}); base nonlinearity used"


def solve_options(cfg: ExperimentConfig, lower_order: bool, tol: Optional[float] = None) -> SolveOptions:
    s = cfg.values["solver"]
    return SolveOptions(tol=s["tol"] if tol is None else tol, max_iters=s["max_iters"], lower_order=lower_order)


def start_function(cfg: ExperimentConfig, grid) -> GridFunction:
    rng = np.random.default_rng(cfg.seed)
    g = random_pinned_function(grid.domain, rng)
    lo, hi = grid.domain.lower, grid.domain.upper
    a = cfg.get("solver", "start_amplitude")
    return interpolate(lambda x: a * (np.prod(np.sin(np.pi * (x - lo) / (hi - lo)), axis=-1) + 0.1 * g(x)),
                       grid, pin_boundary=True)


def kstar_for(cfg: ExperimentConfig, u: GridFunction, qt: ScalarExponent) -> tuple[float, Optional[dict]]:
    d = cfg.values["degiorgi"]
    mode, top = d["kstar_mode"], sup_norm(u)
    if mode == "value":
        return d["kstar_value"], None
    if mode == "sup_fraction":
        return (d["kstar_value"] * top if top > 0 else 1.0), None
    if top == 0.0:
        return 1.0, {"note": "zero function needs no bound"}
    consts = {k: d[k] for k in ("C16", "gamma1", "gamma2", "delta1", "delta2", "b")}
    check = kstar_bound_check(u, qt, consts)
    return check["k_star"], check


def degiorgi_traces(cfg: ExperimentConfig, u: GridFunction, qt: ScalarExponent):
    d = cfg.values["degiorgi"]
    k_star, check = kstar_for(cfg, u, qt)
    traces = [degiorgi_on_solution(u, qt, k_star, d["n_max"], d["fit_delta1"], d["fit_delta2"], negative=neg)
              for neg in (False, True)]
    return k_star, check, traces


# --- commands ---------------------------------------------------------------------------


def cmd_norm(cfg: ExperimentConfig, w: Writer) -> int:
    grid = cfg.grid()
    p, q = cfg.pair_exponent(), cfg.scalar_exponent("q")
    tol = cfg.values["tolerances"]
    u = function_from_config(cfg, grid)
    lux = luxemburg_norm(u, q, tol=tol["bisection"])
    rel = check_norm_modular_relations(u, q, rel_tol=tol["assertion"])
    semi = combined_norms(u, q, p, equiv_tol=tol["quadrature"], rel_tol=tol["assertion"])
    violations = list(rel.violations) + list(semi.assertions)
    w.json("norm.json", "norm", {
        "command": "norm", "config": cfg.to_dict(), "lebesgue": lux.to_dict(), "norm_modular": rel.to_dict(),
        "seminorm": semi.to_dict(), "violations": violations, "passed": not violations,
    })
    return EXIT_ASSERT if violations else EXIT_OK


def cmd_solve(cfg: ExperimentConfig, w: Writer) -> int:
    grid = cfg.grid()
    p = cfg.pair_exponent()
    problem = cfg.get("solver", "problem")
    note = None
    if problem == "plain" or cfg.get("nonlinearity", "kind") == "zero":
        nl = base_nonlinearity(cfg)
        cut_info = None
    else:
        cut, nl, note = modified_problem(cfg, p)
        cut_info = {"t2": cut.t2, "beta": cut.beta, "c_imb": cut.c_imb}
    rep = minimize_energy(start_function(cfg, grid), p, nl, solve_options(cfg, problem == "modified"))
    w.text("solution.csv", to_csv(rep.solution))
    w.text("history.csv", _history_csv(rep))
    w.json("solve.json", "solve", {
        "command": "solve", "config": cfg.to_dict(), "problem": problem, "nonlinearity": nl.tag,
        "cutoff": cut_info, "note": note, "report": rep.to_dict(),
    })
    return EXIT_OK if rep.converged else EXIT_NONCONV


def cmd_degiorgi(cfg: ExperimentConfig, w: Writer, solution: Path) -> int:
    grid = cfg.grid()
    try:
        u = from_csv(solution.read_text(), grid, pinned=True)
    except OSError as exc:
        raise ConfigError(f"cannot read solution: {exc.strerror}", None, str(solution)) from None
    except ValueError as exc:
        raise ConfigError(f"solution does not match the configured grid: {exc}", None, str(solution)) from None
    qt = q_tilde(cfg.pair_exponent(), cfg.scalar_exponent("q"))
    k_star, check, traces = degiorgi_traces(cfg, u, qt)
    for tr in traces:
        w.text(f"degiorgi_{'pos' if tr.side == '+' else 'neg'}.csv", tr.to_csv())
    violations = [f"{tr.side}: {v}" for tr in traces for v in tr.violations]
    w.json("degiorgi.json", "degiorgi", {
        "command": "degiorgi", "config": cfg.to_dict(), "k_star": k_star, "kstar_check": check,
        "traces": [tr.to_dict() for tr in traces], "verdict": traces[0].verdict,
        "violations": violations, "passed": not violations,
    })
    return EXIT_ASSERT if violations else EXIT_OK


def _stage(name: str, fn, stages: dict):
    log.info("stage %s", name)
    try:
        stages[name] = fn()
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        stages[name] = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
    log.info("stage %s passed=%s", name, stages[name]["passed"])


def cmd_suite(cfg: ExperimentConfig, w: Writer, threads: int = 1) -> int:
    grid = cfg.grid()
    dom = grid.domain
    p, q, r = cfg.pair_exponent(), cfg.scalar_exponent("q"), cfg.scalar_exponent("r")
    qt = q_tilde(p, q)
    S = cfg.values["suite"]
    tol = cfg.values["tolerances"]
    seed = cfg.seed
    stages: dict = {}
    shared: dict = {}

    def norms():
        rng = np.random.default_rng(seed)
        bad, skipped = [], 0
        for i in range(S["norm_trials"]):
            u = interpolate(random_pinned_function(dom, rng), grid, True) * float(np.exp(rng.uniform(-3, 3)))
            v = interpolate(random_pinned_function(dom, rng), grid, True)
            reps = [check_norm_modular_relations(u, q, rel_tol=tol["assertion"]),
                    holder_pairing(u, v, q, rel_tol=tol["assertion"])]
            comp = exponent_comparison(u, r, q, rel_tol=tol["assertion"])
            skipped += comp.skipped
            if not comp.skipped:
                reps.append(comp)
            bad += [f"trial {i}: {x}" for c in reps for x in c.violations]
            semi = combined_norms(u, q, p, equiv_tol=tol["quadrature"], rel_tol=tol["assertion"])
            bad += [f"trial {i}: {x}" for x in semi.assertions]
        return {"passed": not bad, "trials": S["norm_trials"], "comparison_skipped": skipped, "violations": bad}

    def probe():
        rep = splus_probe(p, S["probe_trials"], seed, grid)
        return {"passed": rep.passed, **rep.to_dict()}

    def multistart():
        cut, nl, note = modified_problem(cfg, p)
        sols = multistart_small_solutions(cfg.get("solver", "starts"), p, nl, cut, seed, grid,
                                          solve_options(cfg, True), threads=threads,
                                          dedup_tol=cfg.get("solver", "dedup_tol"),
                                          use_symmetry=cfg.get("solver", "use_symmetry"))
        good = [s for s in sols if s.sup_norm > 0 and s.genuine and s.report.converged
                and s.report.diagnostics["weak_residual_max"] <= WEAK_RESIDUAL_TOL]
        mono = all(b <= a for s in sols for a, b in zip(s.report.energy_history, s.report.energy_history[1:]))
        shared["small"] = [s.report.solution for s in good]
        shared["cut"], shared["nl"] = cut, nl
        return {"passed": len(good) >= S["min_solutions"] and mono, "note": note,
                "cutoff": {"t2": cut.t2, "beta": cut.beta, "c_imb": cut.c_imb},
                "distinct_nonzero": len(good), "energy_monotone": mono, "solutions": [s.to_dict() for s in sols]}

    def degiorgi():
        out, bad = [], []
        for i, u in enumerate(shared.get("small", [])):
            k_star, _, traces = degiorgi_traces(cfg, u, qt)
            for tr in traces:
                bad += [f"solution {i} {tr.side}: {v}" for v in tr.violations]
                if tr.vanish_level is None:
                    bad.append(f"solution {i} {tr.side}: trace does not vanish")
            out.append({"k_star": k_star, "verdicts": [tr.verdict for tr in traces],
                        "fitted": [[tr.fitted_K, tr.fitted_b] for tr in traces]})
        return {"passed": not bad and bool(out), "solutions": out, "violations": bad}

    def linf():
        sols, conv = [], []
        for lam in S["linf_lambdas"]:
            nl = base_nonlinearity(cfg, lam)
            rep = minimize_energy(start_function(cfg, grid), p, nl, solve_options(cfg, False, S["linf_tol"]))
            sols.append(rep.solution)
            conv.append(rep.converged)
        fit = verify_linf_bound(sols, qt)
        ok = not fit.violations and all(conv) and math.isfinite(fit.fitted_C)
        return {"passed": ok, "converged": conv, **fit.to_dict()}

    def subspace():
        cut, nl = shared.get("cut"), shared.get("nl")
        if cut is None:
            cut, nl, _ = modified_problem(cfg, p)
        reps = [subspace_negativity(n, p, nl, cut, grid, S["subspace_samples"], seed, S["subspace_const_samples"])
                for n in S["subspace_n"]]
        return {"passed": all(x.passed for x in reps), "per_n": [x.to_dict() for x in reps]}

    def sweep():
        rep = imbedding_ratio(q, r, p, S["sweep_trials"], seed, domain=dom, nodes=S["sweep_nodes"])
        table = [{"nodes": n, "max_ratio": v} for n, v in zip(rep.nodes, rep.per_level)]
        return {"passed": rep.stable, "table": table, "growth": rep.growth, "violations": rep.violations}

    for name, fn in (("norms", norms), ("splus_probe", probe), ("multistart", multistart),
                     ("degiorgi", degiorgi), ("linf_bound", linf), ("subspace", subspace)):
        _stage(name, fn, stages)
    if S["sweep_nodes"]:
        _stage("resolution_sweep", sweep, stages)
    passed = all(s["passed"] for s in stages.values())
    w.json("suite.json", "suite", {"command": "suite", "config": cfg.to_dict(), "stages": stages,
                                   "failed_stages": sorted(k for k, s in stages.items() if not s["passed"]),
                                   "passed": passed})
    return EXIT_OK if passed else EXIT_ASSERT


# --- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default",
                        help="config file, or a bundled name: default, negative_control, resolution_sweep")
    common.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_ENV} and the config)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads for multistart")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="fracpx", description="Variable-exponent fractional p-Laplacian toolkit")
    ap.add_argument("--version", action="version", version=f"fracpx {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("norm", parents=[common], help="modular, Luxemburg and Gagliardo reports for [function]")
    sub.add_parser("solve", parents=[common], help="minimise the energy from a seeded start")
    d = sub.add_parser("degiorgi", parents=[common], help="level traces of a solution CSV")
    d.add_argument("--solution", default=None, help="solution CSV (default: OUT/solution.csv)")
    sub.add_parser("suite", parents=[common], help="run every check and write suite.json")
    return ap


def resolve_out(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.get("run", "output_dir"))


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["run"]["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg.values["run"]["threads"] = args.threads
        out = resolve_out(args, cfg)
        w = Writer(out)
        if args.command == "norm":
            code = cmd_norm(cfg, w)
        elif args.command == "solve":
            code = cmd_solve(cfg, w)
        elif args.command == "degiorgi":
            code = cmd_degiorgi(cfg, w, Path(args.solution) if args.solution else out / "solution.csv")
        else:
            code = cmd_suite(cfg, w, cfg.get("run", "threads"))
    except (ConfigError, ExponentError) as exc:
        print(f"fracpx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"fracpx {args.command}: exit {code}; wrote {', '.join(w.written)} to {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())

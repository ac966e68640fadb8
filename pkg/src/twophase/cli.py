"""Command-line front end: ``twophase {run,verify,sweep,mesh-gen,mesh-stats}``.

Exit status: 0 on success, 1 when a solve or a gated check fails, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import verify as V
from .config import BACKENDS, load_config
from .cvfe import build_from_triangles
from .ddfv_mesh import build_from_polygons
from .errors import ConfigError, ContinuationFailed, InvalidMesh, TwoPhaseError
from .meshio import format_mesh, mesh_text_from, read_mesh
from .solver import continuation_solve, time_loop

log = logging.getLogger("twophase")

FIELD_HEADER = "x[-],y[-],p_g[-],p_w[-],s_g[-]"
TRACE_COLUMNS = ("step", "eps", "eta", "iterations", "residual_norm", "sat_min", "sat_max",
                 "p_norm", "xi_norm", "pc_norm", "pg_norm", "pw_norm", "distance", "inserted")
SWEEP_COLUMNS = ("value", "status", "iterations", "residual_norm", "sat_min", "sat_max",
                 "p_norm", "xi_norm", "pc_norm")


# ----------------------------------------------------------------------
def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def field_table(backend, state):
    xy = backend.dof_coordinates()
    rows = zip(xy[:, 0], xy[:, 1], state.p_g, state.p_w, state.s_g)
    return _csv(FIELD_HEADER.split(","), rows)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n"


def _energy_record(backend, state, prev, norm_fields, seed):
    rep = V.energy_decomposition(backend, state, prev, 0.0, 0.0, norm_fields, seed)
    rec = V.as_record("energy", rep)
    rec["sum_error"] = rep.sum_error
    return rec


# ----------------------------------------------------------------------
def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        for sec in ("mesh", "verify"):
            if not cfg.parser.has_section(sec):
                cfg.parser.add_section(sec)
            cfg.parser.set(sec, "seed", str(args.seed))
    return cfg


def _out_dir(args, cfg):
    return args.out or cfg.output_dir()


def cmd_run(args):
    cfg = _load(args)
    backend = cfg.build_backend(args.backend)
    state0 = cfg.initial_state(backend)
    t_final = cfg.t_final()
    opts = cfg.solver_options()
    ladder = cfg.ladder()
    out = _out_dir(args, cfg)
    norm_fields = cfg.get_int("verify", "norm_fields", 1000)
    seed = cfg.get_int("verify", "seed", 0)
    _atomic_write(os.path.join(out, "fields_0000.csv"), field_table(backend, state0))
    steps, trace_rows = [], []
    prev = {"state": state0}

    def on_step(n, state, trace):
        _atomic_write(os.path.join(out, f"fields_{n:04d}.csv"), field_table(backend, state))
        last = trace.rungs[-1]
        steps.append({"step": n, "time": n * backend.dt, "rungs": len(trace),
                      "newton_iterations": int(sum(r.iterations for r in trace)),
                      "residual_norm": last.residual_norm, "sat_min": last.sat_min,
                      "sat_max": last.sat_max,
                      "energy": _energy_record(backend, state, prev["state"], norm_fields, seed)})
        for r in trace.records():
            trace_rows.append([n] + [r[c] for c in TRACE_COLUMNS[1:]])
        prev["state"] = state
        log.info("step %d: %d rungs, %d Newton iterations, residual %.2e, s in [%.4f, %.4f]",
                 n, len(trace), steps[-1]["newton_iterations"], last.residual_norm,
                 last.sat_min, last.sat_max)

    status = 0
    summary = {"backend": args.backend or cfg.backend_name, "dof_per_phase": backend.dof_count,
               "dt": backend.dt, "t_final": t_final}
    try:
        time_loop(backend, state0, t_final, ladder=ladder, callback=on_step, **opts)
    except ContinuationFailed as err:
        summary["failure"] = {"step": err.step, "message": str(err)}
        log.error("continuation failed at step %s: %s", err.step, err)
        status = 1
    summary["steps"] = steps
    _atomic_write(os.path.join(out, "trace.csv"), _csv(TRACE_COLUMNS, trace_rows))
    _atomic_write(os.path.join(out, "summary.json"), _json(summary))
    return status


# ----------------------------------------------------------------------
def _variants(cfg, only):
    d = cfg.get_float("verify", "distortion", 0.3)
    out = []
    if only in (None, "ddfv"):
        out += [("ddfv-orthogonal", "ddfv", {"distortion": 0.0}),
                ("ddfv-distorted", "ddfv", {"distortion": d})]
    if only in (None, "cvfe"):
        out += [("cvfe-diagonal", "cvfe", {"split": "diagonal"}),
                ("cvfe-acute", "cvfe", {"split": "acute"})]
    return out


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def verify_variant(cfg, label, backend_name, overrides, norm_fields, seed, state_samples):
    """Solve one step on a mesh variant and run the scheme-level checks."""
    records = []

    def add(name, passed, margin, gated=True, **constants):
        records.append({"name": name, "variant": label, "passed": bool(passed), "gated": gated,
                        "margin": float(margin), "constants": constants})

    backend = cfg.build_backend(backend_name, **overrides)
    prev = cfg.initial_state(backend)
    tol = cfg.solver_options()["tol"]
    try:
        _, trace = continuation_solve(backend, prev, cfg.ladder(), tol=tol,
                                      max_iter=cfg.solver_options()["max_iter"],
                                      max_refinements=cfg.max_refinements())
    except ContinuationFailed as err:
        add("continuation", False, float("inf"), error=str(err))
        return records
    add("continuation", trace.rungs[-1].residual_norm <= tol, tol - trace.rungs[-1].residual_norm,
        rungs=len(trace))

    mp_ok, mp_margin = True, np.inf
    sum_ok, sum_margin = True, np.inf
    g3_ok, g3_err = True, 0.0
    g2_ok, g2_err, g2_viol, nu_min = True, 0.0, 0, np.inf
    if backend_name == "ddfv":
        g2_exact = bool(np.all(backend.mesh.diamonds.eta == 0))
    else:
        g2_exact = bool(np.all(backend.mesh.coeffs >= 0))
    for r in trace:
        st = r.state
        if r.eps == 0:
            mp = V.check_max_principle(backend, st)
            mp_ok &= mp.passed
            mp_margin = min(mp_margin, mp.sat_min, 1 - mp.sat_max)
        e = V.energy_decomposition(backend, st, prev, r.eps, r.eta, norm_fields, seed)
        root_ok = abs(e.direct_pairing) <= 10 * tol * e.g_norm
        sum_ok &= e.sum_identity_ok and root_ok
        sum_margin = min(sum_margin, 1e-9 * (1 + abs(e.direct_pairing)) - e.sum_error)
        if r.eta > 0:
            err = _rel(e.gamma3, e.gamma3_expected)
            g3_err = max(g3_err, err)
            g3_ok &= err <= 1e-10
        err = _rel(e.gamma2, e.gamma2_form) if e.gamma2_form or e.gamma2 else 0.0
        g2_err = max(g2_err, err)
        g2_ok &= err <= 1e-10
        if r.eps > 0:
            nu = V.coercivity_ratio(e)
            nu_min = min(nu_min, nu)
            if g2_exact and e.gamma2 < backend.dt * r.eps * e.pressure_form * (1 - 1e-12):
                g2_viol += 1
    add("max_principle", mp_ok, mp_margin)
    add("energy_identity", sum_ok, sum_margin)
    add("gamma3_identity", g3_ok, 1e-10 - g3_err, max_rel_error=g3_err)
    add("gamma2_identity", g2_ok and g2_viol == 0, 1e-10 - g2_err, gated=g2_exact,
        max_rel_error=g2_err, lower_bound_violations=g2_viol, nu_min=float(nu_min))
    mon = V.continuation_monitors(trace)
    add("continuation_monitors", mon.passed, 0.0, eps_ladder_max=mon.eps_ladder_max,
        eta_ladder_zeta_max=mon.eta_ladder_zeta_max)
    reg = V.regularization_consistency(backend, state_samples, seed=seed)
    add("regularization", reg.passed, 0.0, K_estimate=reg.K_estimate)
    fx = backend.energy_terms(trace.rungs[-1].state, prev)["fluxes"]
    negative = getattr(fx, "negative_branch", 0)
    add("negative_coefficient_branch", True, float(negative), gated=False, count=negative)
    e = V.energy_decomposition(backend, trace.rungs[-1].state, prev, 0.0, 0.0, norm_fields, seed)
    add("energy_constants", True, 0.0, gated=False, C_n=e.C_n, C_gamma1=e.C_gamma1)
    return records


def cmd_verify(args):
    cfg = _load(args)
    seed = cfg.get_int("verify", "seed", 0)
    norm_fields = cfg.get_int("verify", "norm_fields", 1000)
    state_samples = cfg.get_int("verify", "state_samples", 50)
    fluid = cfg.fluid()
    records = []
    for label, name, overrides in _variants(cfg, args.backend):
        log.info("verifying %s", label)
        records += verify_variant(cfg, label, name, overrides, norm_fields, seed, state_samples)
    n = cfg.get_int("verify", "lem1_samples", 10_000)
    lem = V.check_lem1(fluid, n, seed=seed)
    records.append({"name": "lem1", "variant": "fluid", "passed": lem.passed, "gated": True,
                    "margin": 1.0 - lem.worst_ratio, "constants": {"m0": lem.m0, "samples": n,
                                                                   "violations": lem.violations}})
    cb = V.check_corrective_bounds(fluid, n, seed=seed)
    records.append({"name": "corrective_bounds", "variant": "fluid", "passed": cb.passed,
                    "gated": True, "margin": 1.0 - cb.worst_ratio,
                    "constants": {"violations": cb.violations}})
    out = _out_dir(args, cfg)
    _atomic_write(os.path.join(out, "verify_report.json"), _json(records))
    failed = [f"{r['variant']}:{r['name']}" for r in records if r["gated"] and not r["passed"]]
    for r in records:
        log.info("%-5s %-16s %-28s margin %.3e", "PASS" if r["passed"] else "FAIL",
                 r["variant"], r["name"], r["margin"])
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# ----------------------------------------------------------------------
def sweep_ladder(cfg, param, value):
    """Default ladder truncated at ``value`` of ``param`` (``dt`` keeps it whole)."""
    full = cfg.ladder()
    eta0 = full[0][1]
    if param == "dt":
        return full
    if param == "eps":
        rungs = [r for r in full if r[1] == eta0 and r[0] > value]
        return rungs + [(value, eta0)]
    rungs = [r for r in full if r[1] == eta0] + [r for r in full if r[0] == 0 and r[1] > value]
    return rungs + ([(0.0, value)] if value < eta0 else [])


def cmd_sweep(args):
    cfg = _load(args)
    if not args.values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    status = 0
    for value in args.values:
        if args.param == "dt":
            if not value > 0:
                raise ConfigError("dt values must be positive")
            if not cfg.parser.has_section("time"):
                cfg.parser.add_section("time")
            cfg.parser.set("time", "dt", repr(value))
        backend = cfg.build_backend(args.backend)
        prev = cfg.initial_state(backend)
        try:
            st, trace = continuation_solve(backend, prev, sweep_ladder(cfg, args.param, value),
                                           max_refinements=cfg.max_refinements(),
                                           **cfg.solver_options())
            r = trace.rungs[-1]
            rows.append([value, "ok", sum(x.iterations for x in trace), r.residual_norm,
                         r.sat_min, r.sat_max, r.p_norm, r.xi_norm, r.pc_norm])
        except ContinuationFailed as err:
            log.warning("value %g failed: %s", value, err)
            rows.append([value, "failed"] + [float("nan")] * (len(SWEEP_COLUMNS) - 2))
            status = 1
    out = _out_dir(args, cfg)
    _atomic_write(os.path.join(out, f"sweep_{args.param}.csv"), _csv(SWEEP_COLUMNS, rows))
    return status


# ----------------------------------------------------------------------
def cmd_mesh_gen(args):
    cfg = _load(args)
    backend = cfg.build_backend(args.backend)
    out = _out_dir(args, cfg)
    _atomic_write(os.path.join(out, "mesh.txt"), format_mesh(mesh_text_from(backend.mesh)))
    _atomic_write(os.path.join(out, "mesh_stats.json"), _json(backend.mesh.stats()))
    return 0


def cmd_mesh_stats(args):
    if args.mesh:
        mt = read_mesh(args.mesh)
        kind = args.backend or ("cvfe" if all(len(c) == 3 for c in mt.cells) else "ddfv")
        builder = build_from_polygons if kind == "ddfv" else build_from_triangles
        mesh = builder(mt.vertices, mt.cells, mt.dirichlet_map())
    elif args.config:
        mesh = _load(args).build_backend(args.backend).mesh
    else:
        raise ConfigError("mesh-stats needs --mesh FILE or --config PATH")
    print(_json(mesh.stats()), end="")
    return 0


# ----------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog="twophase", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="case configuration (INI)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [output])")
    common.add_argument("--seed", type=int, help="mesh and sampling seed")
    common.add_argument("--backend", choices=BACKENDS, help="override [mesh] backend")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="time loop, fields and run summary")
    sub.add_parser("verify", parents=[common], help="structural checks on one time step")
    sw = sub.add_parser("sweep", parents=[common], help="one solve per parameter value")
    sw.add_argument("--param", choices=("eps", "eta", "dt"), required=True)
    sw.add_argument("--values", type=float, nargs="+", required=True)
    sub.add_parser("mesh-gen", parents=[common], help="write the configured mesh")
    ms = sub.add_parser("mesh-stats", parents=[common], help="print mesh statistics")
    ms.add_argument("--mesh", metavar="FILE", help="mesh text file")
    return parser


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep,
            "mesh-gen": cmd_mesh_gen, "mesh-stats": cmd_mesh_stats}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.command != "mesh-stats" and not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except InvalidMesh as err:
        print(f"mesh error: {err}", file=sys.stderr)
        return 2
    except TwoPhaseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

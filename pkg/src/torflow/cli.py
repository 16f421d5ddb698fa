"""Command-line driver: ``torflow run|oracle|check|stability <config>``."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import os
import sys

import numpy as np

from . import checks
from .config import RunConfig, build_domain, build_state
from .diagnostics import decay_fit, trajectory_records
from .domain import ConformalState, FromDivergence, Grid, volume
from .errors import ConfigError, StepFailure, TorflowError
from .flow import run
from .io import read_field, write_diagnostics_csv, write_field
from .operators import lambda1
from .stationary import aligned_difference, flat_oracle, hyperbolic_oracle, stability_classify

logger = logging.getLogger("torflow")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summarize(states, records, termination):
    """Summary dict; a pure function of the samples, so it can be recomputed offline."""
    final = states[-1]
    vols = np.array([r.volume for r in records])
    target = 4 * math.pi * final.chi
    summary = {
        "backend": "grid" if isinstance(final.domain, Grid) else "mesh",
        "chi": int(final.chi),
        "termination": termination,
        "n_samples": len(states),
        "t_final": float(final.t),
        "r": records[-1].r,
        "volume_initial": records[0].volume,
        "volume_final": records[-1].volume,
        "max_relative_volume_drift": float(np.max(np.abs(vols - vols[0])) / vols[0]),
        "max_gauss_bonnet_error": max(abs(r.gauss_bonnet_quadrature - target) for r in records),
        "final_max_abs_R_minus_r": records[-1].sup_abs_R_minus_r,
        "bound_checks": {"pass": sum(r.bound_pass for r in records),
                         "fail": sum(not r.bound_pass for r in records)},
        "max_divv_identity_error": max(r.divv_identity_error for r in records),
        "lambda1_final": lambda1(final),
    }
    times = [r.t for r in records]
    series = [r.sup_abs_R_minus_r for r in records]
    try:
        fit = decay_fit(times, series)
        summary["decay_fit"] = {"series": "sup_abs_R_minus_r", "rate": fit.rate,
                                "amplitude": fit.amplitude, "residual": fit.residual,
                                "window": list(fit.window)}
    except ValueError as exc:
        summary["decay_fit"] = None
        summary["decay_fit_note"] = str(exc)
    return summary


def _snapshot_name(k):
    return f"u_{k:06d}.fld"


def _out_dir(cfg, args):
    out = args.out if args.out else cfg["outputs.dir"]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_run(cfg, args):
    state = build_state(cfg)
    out = _out_dir(cfg, args)
    traj = run(state, cfg.flow_config())
    d = state.domain
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    for old in glob.glob(os.path.join(snap_dir, "u_*.fld")):
        os.remove(old)
    keep = range(len(traj.states)) if cfg["outputs.snapshots"] == "all" else [len(traj.states) - 1]
    for k in keep:
        s = traj.states[k]
        write_field(os.path.join(snap_dir, _snapshot_name(k)), s.u, d, s.t)
    write_field(os.path.join(out, "u_final.fld"), traj.final.u, d, traj.final.t)
    write_field(os.path.join(out, "torsion_d0.fld"), state.d0, d, 0.0)
    write_diagnostics_csv(os.path.join(out, "diagnostics.csv"), traj.records)
    summary = summarize(traj.states, traj.records, traj.termination)
    summary["snapshots"] = cfg["outputs.snapshots"]
    _write_json(os.path.join(out, "summary.json"), summary)
    if not args.quiet:
        print(f"{traj.termination} at t={traj.final.t:.6g}, "
              f"max|R-r|={summary['final_max_abs_R_minus_r']:.3e}, "
              f"bound failures={summary['bound_checks']['fail']}; outputs in {out}")
    if traj.termination == "step_failure":
        logger.error("flow aborted after repeated step failures")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_oracle(cfg, args):
    state = build_state(cfg)
    if state.chi > 0:
        raise ConfigError("no oracle for positive Euler characteristic")
    out = _out_dir(cfg, args)
    d, vol = state.domain, volume(state)
    if state.chi == 0:
        sol, kind = flat_oracle(d, state.torsion, vol), "flat"
    else:
        sol, kind = hyperbolic_oracle(d, state.torsion, vol, cfg["oracle.tol"]), "hyperbolic"
    logger.info("%s oracle: %d iterations, max|R - r| = %.3e", kind, sol.iterations,
                sol.achieved_R_deviation)
    write_field(os.path.join(out, "u_star.fld"), sol.u_star, d, 0.0)
    report = {"kind": kind, "iterations": sol.iterations,
              "achieved_R_deviation": sol.achieved_R_deviation, "target_volume": vol}
    final = os.path.join(out, "u_final.fld")
    if os.path.isfile(os.path.join(out, "summary.json")) and os.path.isfile(final):
        u_flow, _, t = read_field(final)
        if u_flow.shape != d.shape:
            raise ConfigError(f"{final} does not match the configured domain")
        report["flow_comparison"] = {"t_final": t,
                                     "aligned_max_difference": aligned_difference(u_flow, sol.u_star, d)}
    _write_json(os.path.join(out, "oracle.json"), report)
    if not args.quiet:
        msg = f"{kind} oracle: {sol.iterations} iterations, max|R-r|={sol.achieved_R_deviation:.3e}"
        if "flow_comparison" in report:
            msg += f", flow difference {report['flow_comparison']['aligned_max_difference']:.3e}"
        print(msg)
    return EXIT_OK


def _offline_recompute(cfg, out):
    """Rebuild records and summary from emitted snapshots and compare."""
    summary_path = os.path.join(out, "summary.json")
    if not os.path.isfile(summary_path):
        return None
    with open(summary_path) as fh:
        summary = json.load(fh)
    if summary.get("snapshots") != "all":
        return {"status": "skip", "detail": "only the final snapshot was kept"}
    d = build_domain(cfg)
    d0, _, _ = read_field(os.path.join(out, "torsion_d0.fld"))
    torsion = FromDivergence(d, d0, mean_tol=1e-8)
    paths = sorted(glob.glob(os.path.join(out, "snapshots", "u_*.fld")))
    states = []
    for p in paths:
        u, _, t = read_field(p)
        states.append(ConformalState(d, u, torsion, t))
    records = trajectory_records(states)
    tmp = os.path.join(out, ".recomputed.csv")
    write_diagnostics_csv(tmp, records)
    with open(tmp, "rb") as a, open(os.path.join(out, "diagnostics.csv"), "rb") as b:
        same_csv = a.read() == b.read()
    os.remove(tmp)
    again = summarize(states, records, summary["termination"])
    again["snapshots"] = summary["snapshots"]
    same_summary = json.loads(json.dumps(again, sort_keys=True)) == summary
    ok = same_csv and same_summary
    return {"status": "pass" if ok else "fail",
            "detail": f"csv identical: {same_csv}, summary identical: {same_summary}"}


def cmd_check(cfg, args):
    state = build_state(cfg)
    out = _out_dir(cfg, args)
    ctx = checks.CheckContext(state, t_max=cfg["check.t_max"], oracle_tol=cfg["oracle.tol"],
                              marginal_tol=cfg["stability.marginal_tol"], seed=cfg["seed"])
    report = checks.run_checks(ctx)
    offline = _offline_recompute(cfg, out)
    if offline is not None:
        report["summary_recompute"] = offline
    report = dict(sorted(report.items()))
    failed = [k for k, v in report.items() if v["status"] == "fail"]
    result = {"checks": report, "passed": not failed}
    _write_json(os.path.join(out, "check_report.json"), result)
    if not args.quiet:
        print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_stability(cfg, args):
    state = build_state(cfg)
    if state.chi != 2:
        raise ConfigError(f"stability classification needs a sphere (chi = 2), got chi = {state.chi}")
    out = _out_dir(cfg, args)
    try:
        rep = stability_classify(state, cfg["stability.marginal_tol"])
    except TorflowError as exc:
        logger.info("initial state not near-stationary (%s); flowing first", exc)
        traj = run(state, cfg.flow_config(), with_records=False)
        state = traj.final
        rep = stability_classify(state, cfg["stability.marginal_tol"])
    result = {"label": rep.label, "lambda1": rep.lambda1, "r": rep.r, "gap": rep.gap,
              "hersch_bound": rep.hersch_bound, "hersch_ok": rep.hersch_ok, "t": float(state.t)}
    _write_json(os.path.join(out, "stability.json"), result)
    if not args.quiet:
        print(f"{rep.label}: lambda1={rep.lambda1:.8g}, r={rep.r:.8g}, "
              f"Hersch bound {rep.hersch_bound:.8g} ({'ok' if rep.hersch_ok else 'violated'})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "oracle": cmd_oracle, "check": cmd_check, "stability": cmd_stability}


def build_parser():
    p = argparse.ArgumentParser(prog="torflow",
                                description="Normalized Ricci flow with fixed vectorial torsion on surfaces.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="key = value configuration file")
    p.add_argument("--out", help="output directory (overrides outputs.dir)")
    p.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"torflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TorflowError, StepFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"torflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

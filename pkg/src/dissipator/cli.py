"""Command-line surface: run, verify, schedule, spectrum, audit.

Exit codes: 0 success, 1 verification failure, 2 configuration problem,
3 resolution exhausted (partial report still written), 4 numerical abort.
Threads come from --threads, else the DISSIPATOR_THREADS environment
variable, else single-threaded FFTs.
"""

import argparse
import json
import math
import os
import sys
import types

import numpy as np

from ._fft import set_workers
from .errors import ConfigError, DissipatorError, ResolutionError
from .fields import PeriodicField, c1_norm, trace6
from .operators import divergence_values
from .beltrami import PhasePartition, build_basis
from .iteration import (
    EulerReynoldsState,
    ScheduleParameters,
    parameters_from_override,
    perturbation_for_state,
    run_schedule,
    spectrum_prediction,
    theta_bound,
)
from .diagnostics import (
    energy_band_check,
    estimate_audit,
    increments_from_states,
    residual_norms_values,
)
from .config import energy_from_block, load_config
from .report import (
    render_json,
    report_document,
    spectrum_csv_lines,
    spectrum_rows,
    spectrum_summary,
    write_text,
)
from .snapshots import read_snapshot, write_snapshot
from .figures import render_run_figures


def _divisor_near_sqrt(lam):
    """Largest divisor d of lam with d*d <= lam (so lam/2 <= d*d*1 is close)."""
    best = 1
    for d in range(1, int(math.isqrt(lam)) + 1):
        if lam % d == 0:
            best = d
    return best


def _ladder_overrides(cfg):
    """Fill stages without explicit overrides from the doubling ladder.

    Scheduled frequency selection targets windows far beyond any desk grid,
    so command-line runs pin lam = lambda0 * 2**n per stage (mu the largest
    divisor below sqrt(lam), mollification off) unless the config overrides
    a stage explicitly.  Range violations surface as recorded warnings.
    """
    merged = dict(cfg.overrides)
    if cfg.lambda0 is None:
        return merged
    for n in range(cfg.schedule.n_steps):
        if n in merged:
            continue
        lam = cfg.lambda0 * 2 ** n
        entry = {"lam": lam, "mu": _divisor_near_sqrt(lam), "ell": 0.0}
        if cfg.l_v is not None:
            entry["l_v"] = cfg.l_v
        if cfg.lambda_v is not None:
            entry["lambda_v"] = cfg.lambda_v
        merged[n] = entry
    return merged


def cmd_run(args):
    cfg = load_config(args.config)
    override_mode = args.override_mode or cfg.override_mode
    tol_scale = (args.tolerance_scale if args.tolerance_scale is not None
                 else cfg.tolerance_scale)
    overrides = _ladder_overrides(cfg)
    states, run_rep = run_schedule(
        cfg.energy, cfg.schedule, cfg.grid, overrides=overrides,
        override_mode=override_mode, eta=cfg.eta, m_const=cfg.m_const,
        tolerance_scale=tol_scale, l_v=cfg.l_v, lambda_v=cfg.lambda_v)

    os.makedirs(cfg.output_dir, exist_ok=True)
    summary = spectrum_summary(states, run_rep.steps)
    doc = report_document(cfg.raw, run_rep, summary,
                          include_timing=cfg.include_timing)
    report_path = os.path.join(cfg.output_dir, cfg.report_name)
    write_text(report_path, render_json(doc))
    csv_path = os.path.join(cfg.output_dir, cfg.spectrum_csv_name)
    write_text(csv_path, "\n".join(spectrum_csv_lines(summary)) + "\n")
    written = [report_path, csv_path]
    if cfg.write_snapshots:
        for i, st in enumerate(states):
            for name, values, kind in ((f"v_{i}.dfld", st.v, "vector3"),
                                       (f"p_{i}.dfld", st.p, "scalar"),
                                       (f"stress_{i}.dfld", st.r_ring6,
                                        "sym_tensor3")):
                path = os.path.join(cfg.output_dir, name)
                write_snapshot(path, values, cfg.grid, kind)
                written.append(path)
    if cfg.render_figures:
        band = energy_band_check(states[-1].v, cfg.energy, states[-1].delta,
                                 cfg.grid)
        written.extend(render_run_figures(cfg.output_dir, summary,
                                          run_rep.steps, band))

    for rep in run_rep.steps:
        for line in rep.lines():
            print(line)
    for warning in run_rep.warnings:
        print(f"warning: {warning}")
    print(f"stop reason: {run_rep.stop_reason}")
    for path in written:
        print(f"wrote {path}")
    return 0 if run_rep.stop_reason == "completed" else ResolutionError.exit_code


def _read_typed(path, kind):
    values, grid, found = read_snapshot(path)
    if found != kind:
        raise ConfigError(f"{path}: expected a {kind} snapshot, found {found}")
    return values, grid


def cmd_verify(args):
    v, grid = _read_typed(args.velocity, "vector3")
    p, grid_p = _read_typed(args.pressure, "scalar")
    r6, grid_r = _read_typed(args.stress, "sym_tensor3")
    if grid_p != grid or grid_r != grid:
        raise ConfigError(
            f"snapshot grids do not match: velocity {grid}, pressure "
            f"{grid_p}, stress {grid_r}")
    _, norms = residual_norms_values(grid, v, p, r6,
                                     space_oversample=args.oversample,
                                     time_oversample=args.oversample)
    div_sup = float(np.max(np.abs(divergence_values(v, grid))))
    trace_sup = float(np.max(np.abs(trace6(r6))))
    print(f"residual sup: {norms.sup:.6e}")
    print(f"divergence sup: {div_sup:.6e}")
    print(f"trace sup: {trace_sup:.6e}")
    print(f"tolerance: {args.tolerance:.6e}")
    ok = max(norms.sup, div_sup, trace_sup) <= args.tolerance
    print("verdict: pass" if ok else "verdict: FAIL")
    return 0 if ok else 1


def cmd_schedule(args):
    sched = ScheduleParameters(a=args.a, eps=args.eps, n_steps=args.n,
                               b=args.b)
    deltas = sched.deltas()
    print("n delta envelope lambda E")
    slope = None
    for n in range(args.n + 1):
        freq, energy, slope = spectrum_prediction(args.a, args.b, sched.c, n)
        print(f"{n} {deltas[n]:.9e} {sched.envelope(n):.9e} "
              f"{freq:.9e} {energy:.9e}")
    print(f"theta bound: {float(theta_bound(args.eps)):.6f}")
    print(f"spectrum slope: {slope:.6f}")
    return 0


def cmd_spectrum(args):
    if len(args.velocity) != len(args.lams) + 1:
        raise ConfigError(
            f"need one more velocity snapshot than frequencies, got "
            f"{len(args.velocity)} snapshots for {len(args.lams)} frequencies")
    loaded = []
    grid = None
    for path in args.velocity:
        values, g = _read_typed(path, "vector3")
        if grid is None:
            grid = g
        elif g != grid:
            raise ConfigError(f"{path}: grid {g} differs from {grid}")
        loaded.append(types.SimpleNamespace(v=values))
    increments = increments_from_states(loaded)
    summary = spectrum_rows(args.lams, increments)
    text = "\n".join(spectrum_csv_lines(summary)) + "\n"
    if args.out:
        write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if summary["slope"] is not None:
        print(f"slope: {summary['slope']:.6f}")
    return 0


def cmd_audit(args):
    with open(args.report, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    steps = doc.get("run", {}).get("steps", [])
    if not 0 <= args.stage < len(steps):
        raise ConfigError(
            f"stage {args.stage} not in report ({len(steps)} recorded steps)")
    srow = steps[args.stage]
    energy = energy_from_block(doc["config"]["energy"])
    eps = float(doc["config"]["scheme"]["eps"])

    v, grid = _read_typed(
        os.path.join(args.snapshots, f"v_{args.stage}.dfld"), "vector3")
    p, grid_p = _read_typed(
        os.path.join(args.snapshots, f"p_{args.stage}.dfld"), "scalar")
    r6, grid_r = _read_typed(
        os.path.join(args.snapshots, f"stress_{args.stage}.dfld"),
        "sym_tensor3")
    if grid_p != grid or grid_r != grid:
        raise ConfigError("stage snapshot grids do not match")
    state = EulerReynoldsState(grid, v, p, r6, generation=args.stage,
                               delta=srow["delta"], d_bound=srow["d_bound"])
    params = parameters_from_override(
        srow["delta"], srow["delta_bar"], eps, srow["d_bound"],
        {"lam": srow["lam"], "mu": srow["mu"], "ell": srow["ell"]},
        eta=srow["eta"], m_const=srow["m_const"])
    basis = build_basis(5)
    partition = PhasePartition()
    bundle, _, _ = perturbation_for_state(state, params.delta_bar, params,
                                          basis, partition, energy)

    new_r6 = None
    stress_c1 = None
    new_path = os.path.join(args.snapshots, f"stress_{args.stage + 1}.dfld")
    if os.path.exists(new_path):
        new_r6, grid_n = _read_typed(new_path, "sym_tensor3")
        if grid_n != grid:
            raise ConfigError("updated stress snapshot grid does not match")
        stress_c1 = c1_norm(PeriodicField(grid, "sym_tensor3", new_r6,
                                          _validate=False))
    rows = estimate_audit(bundle, params, energy=energy,
                          v_values=state.v + bundle.w, new_stress6=new_r6,
                          stress_c1=stress_c1)
    print(f"stage {args.stage}: lam={params.lam} mu={params.mu} "
          f"ell={params.ell:.6g} delta={params.delta:.6g} "
          f"delta_bar={params.delta_bar:.6g}")
    for row in rows:
        print(f"{row.name}: measured={row.measured:.6e} "
              f"combo={row.combo:.6e} ratio={row.ratio:.6e}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dissipator",
        description="Iterated correction runs for the incompressible Euler "
                    "balance on the periodic space-time box, with audits.")
    parser.add_argument("--threads", type=int, default=None,
                        help="FFT worker threads (default: DISSIPATOR_THREADS"
                             " or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured schedule run")
    p_run.add_argument("--config", required=True, help="JSON config path")
    p_run.add_argument("--tolerance-scale", type=float, default=None,
                       dest="tolerance_scale",
                       help="override the config tolerance scale")
    p_run.add_argument("--override-mode", choices=("fail", "warn"),
                       default=None, dest="override_mode",
                       help="range-violation handling for pinned frequencies")
    p_run.set_defaults(handler=cmd_run)

    p_ver = sub.add_parser("verify",
                           help="check a velocity/pressure/stress triple")
    p_ver.add_argument("--velocity", required=True)
    p_ver.add_argument("--pressure", required=True)
    p_ver.add_argument("--stress", required=True)
    p_ver.add_argument("--tolerance", type=float, default=1e-8)
    p_ver.add_argument("--oversample", type=int, default=1,
                       help="evaluation refinement for the residual")
    p_ver.set_defaults(handler=cmd_verify)

    p_sch = sub.add_parser("schedule",
                           help="print the amplitude/frequency schedule")
    p_sch.add_argument("--eps", type=float, required=True)
    p_sch.add_argument("--a", type=float, required=True)
    p_sch.add_argument("--n", type=int, required=True)
    p_sch.add_argument("--b", type=float, default=1.5)
    p_sch.set_defaults(handler=cmd_schedule)

    p_spec = sub.add_parser("spectrum",
                            help="increment spectrum from velocity snapshots")
    p_spec.add_argument("--velocity", nargs="+", required=True,
                        help="snapshots in stage order")
    p_spec.add_argument("--lams", nargs="+", type=float, required=True,
                        help="stage frequencies (one fewer than snapshots)")
    p_spec.add_argument("--out", default=None, help="CSV output path")
    p_spec.set_defaults(handler=cmd_spectrum)

    p_aud = sub.add_parser("audit",
                           help="re-derive one stage's estimate audit from "
                                "snapshots")
    p_aud.add_argument("--report", required=True, help="run report JSON")
    p_aud.add_argument("--snapshots", required=True, help="snapshot directory")
    p_aud.add_argument("--stage", type=int, required=True)
    p_aud.set_defaults(handler=cmd_audit)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        set_workers(args.threads)
    try:
        return args.handler(args)
    except DissipatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

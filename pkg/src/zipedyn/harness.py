"""Sweep orchestration, result persistence, figures, and the CLI.

`run_sweep` executes the scenario matrix (families x compositions x line
models x load scales), writing one eigenvalue CSV and/or one trace CSV per
scenario plus a manifest that records every scenario's outcome, wall time,
and state counts.  Failed scenarios are recorded with an error category,
never dropped.  Scenario work is process-parallel; the manifest is
assembled single-threaded at the end.

CLI: `zipedyn sim|eig|sweep|plot`.  A diverging transient is a recorded
physics outcome (exit 0); solver or configuration breakdowns are failures
(exit 1) and malformed invocations or case files exit 2.
"""

import argparse
import csv
import glob
import json
import os
import sys
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dae, netdata, smallsignal, svgfig, transient
from .devices import NetworkSolveError
from .netdata import CaseParseError, CaseValidationError
from .powerflow import PowerFlowError, heaviest_loaded_branch

EIG_HEADER = ("scenario_id,family,x,line_model,load_scale,re,im,freq_hz,"
              "damping_ratio,is_reference_mode")


@dataclass(frozen=True)
class SweepSpec:
    families: tuple = ("zip", "zie")
    xs: tuple = tuple(round(0.1 * k, 1) for k in range(11))
    line_models: tuple = ("statpi", "dynpi")
    load_scales: tuple = (0.2, 0.5, 0.8)
    analyses: tuple = ("smallsignal",)
    output_dir: str = "out"
    parallelism: int = 1
    trip: str = "auto"
    t_trip: float = transient.DEFAULT_T_TRIP
    horizon: float = transient.DEFAULT_HORIZON
    rtol: float = transient.DEFAULT_RTOL

    def __post_init__(self):
        if not (self.families and self.xs and self.line_models and self.load_scales):
            raise ValueError("families, xs, line_models, load_scales must be non-empty")
        if any(not 0.0 <= x <= 1.0 for x in self.xs):
            raise ValueError("composition fractions must lie in [0, 1]")
        bad = set(self.analyses) - {"smallsignal", "transient"}
        if bad:
            raise ValueError(f"unknown analyses: {sorted(bad)}")


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def eigen_rows(scenario_id, sc, report):
    rows = []
    for k, lam in enumerate(report.eigenvalues):
        rows.append({
            "scenario_id": scenario_id, "family": sc.family, "x": sc.x,
            "line_model": sc.line_model, "load_scale": sc.load_scale,
            "re": lam.real, "im": lam.imag,
            "freq_hz": report.freq_hz[k],
            "damping_ratio": report.damping_ratio[k],
            "is_reference_mode": bool(report.is_reference_mode[k]),
        })
    return rows


def eigen_csv(rows):
    lines = [EIG_HEADER]
    for r in rows:
        lines.append(f"{r['scenario_id']},{r['family']},{r['x']:.9g},"
                     f"{r['line_model']},{r['load_scale']:.9g},{r['re']:.9g},"
                     f"{r['im']:.9g},{r['freq_hz']:.9g},{r['damping_ratio']:.9g},"
                     f"{str(r['is_reference_mode']).lower()}")
    return "\n".join(lines) + "\n"


def read_eigen_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def _resolve_trip(trip, pf):
    if trip == "auto":
        return heaviest_loaded_branch(pf)
    return trip


def run_scenario(case_text, sc: dae.ScenarioSpec, spec: SweepSpec):
    """Execute one scenario; writes artifacts, returns its manifest entry."""
    entry = {
        "scenario_id": sc.label(),
        "scenario": {
            "family": sc.family, "x": sc.x, "line_model": sc.line_model,
            "load_scale": sc.load_scale,
            "generation_portfolio": sc.generation_portfolio,
        },
        "status": "ok", "error": None, "error_category": None,
        "artifacts": [], "wall_time_s": None, "n_diff": None, "n_alg": None,
    }
    wall0 = _time.perf_counter()
    try:
        case = netdata.load_case(case_text)
        system = dae.assemble(case, sc)
        entry["n_diff"] = system.n_diff
        entry["n_alg"] = system.n_alg
        pf = dae.scenario_power_flow(system)
        eq = dae.initialize(system, pf)

        if "smallsignal" in spec.analyses:
            report = smallsignal.analyze(system, eq)
            rows = eigen_rows(sc.label(), sc, report)
            name = f"eig_{sc.label()}.csv"
            _atomic_write(os.path.join(spec.output_dir, name), eigen_csv(rows))
            entry["artifacts"].append(name)
            entry["stable"] = report.stable
            entry["max_real_part"] = report.max_real_part
            entry["g_y_condition"] = report.g_y_condition

        if "transient" in spec.analyses:
            branch = _resolve_trip(spec.trip, pf)
            res = transient.simulate(system, eq, event=(branch, spec.t_trip),
                                     horizon=spec.horizon, rtol=spec.rtol)
            name = f"trace_{sc.label()}.csv"
            _atomic_write(os.path.join(spec.output_dir, name), res.to_csv())
            meta_name = f"trace_{sc.label()}.meta.json"
            _atomic_write(os.path.join(spec.output_dir, meta_name),
                          json.dumps(res.metadata, indent=2, default=float))
            entry["artifacts"] += [name, meta_name]
            entry["outcome"] = res.outcome.kind
            if res.outcome.kind == "diverged":
                entry["t_fail"] = res.outcome.t_fail
    except Exception as exc:  # recorded, never silently dropped
        entry["status"] = "failed"
        entry["error"] = str(exc)
        entry["error_category"] = type(exc).__name__
    entry["wall_time_s"] = _time.perf_counter() - wall0
    return entry


def _run_scenario_job(args):
    case_text, sc_kwargs, spec_kwargs = args
    return run_scenario(case_text, dae.ScenarioSpec(**sc_kwargs),
                        SweepSpec(**spec_kwargs))


def run_sweep(spec: SweepSpec, case: netdata.NetworkCase):
    """Execute the full scenario matrix and write the manifest."""
    os.makedirs(spec.output_dir, exist_ok=True)
    case_text = netdata.serialize(case)
    scenarios = [
        dae.ScenarioSpec(family=f, x=x, line_model=lm, load_scale=ls)
        for f in spec.families for x in spec.xs
        for lm in spec.line_models for ls in spec.load_scales
    ]
    if spec.parallelism > 1:
        jobs = [(case_text, asdict(s), asdict(spec)) for s in scenarios]
        with ProcessPoolExecutor(max_workers=spec.parallelism) as pool:
            entries = list(pool.map(_run_scenario_job, jobs))
    else:
        entries = [run_scenario(case_text, s, spec) for s in scenarios]
    manifest = {
        "sweep": asdict(spec),
        "n_scenarios": len(scenarios),
        "entries": entries,
    }
    _atomic_write(os.path.join(spec.output_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, default=float))
    return manifest


def emit_eigen_map(rows, title="Eigenvalue map"):
    """SVG scatter from eigenvalue CSV rows (dicts)."""
    return svgfig.eigen_map(rows, title=title)


def emit_traces(traces, signal="bus3_inverter_current_mag",
                title="Bus 3 inverter current magnitude"):
    """SVG overlay from trace records {label, family, x, t, values, diverged}."""
    return svgfig.trace_plot(traces, signal, title=title)


# ---------------------------------------------------------------------------
# sweep-level analysis protocols
# ---------------------------------------------------------------------------

def _eigen_at(case, family, x, line_model, load_scale, warm=None):
    sc = dae.ScenarioSpec(family=family, x=x, line_model=line_model,
                          load_scale=load_scale)
    system = dae.assemble(case, sc)
    pf = dae.scenario_power_flow(system, warm_start=warm)
    eq = dae.initialize(system, pf)
    return smallsignal.analyze(system, eq), pf


def instability_onset(case, family, x, line_model, lo=0.1, hi=2.0, step=0.1,
                      tol_ls=0.01):
    """Smallest unstable load scale, bisected to tol_ls.

    Scans upward from `lo` in `step` increments until the first unstable
    point, then bisects the bracketing interval.  Returns None when the
    sweep stays stable up to `hi` or becomes unevaluable (loadability edge)
    before any instability appears.
    """
    warm = None
    prev = lo
    rep, pf = _eigen_at(case, family, x, line_model, lo)
    if not rep.stable:
        return lo
    warm = pf
    ls = lo + step
    bracket = None
    while ls <= hi + 1e-12:
        try:
            rep, pf = _eigen_at(case, family, x, line_model, ls, warm)
        except Exception:
            return None
        if not rep.stable:
            bracket = (prev, ls)
            break
        warm, prev = pf, ls
        ls = round(ls + step, 12)
    if bracket is None:
        return None
    lo_b, hi_b = bracket
    while hi_b - lo_b > tol_ls:
        mid = 0.5 * (lo_b + hi_b)
        try:
            rep, pf = _eigen_at(case, family, x, line_model, mid, warm)
        except Exception:
            hi_b = mid
            continue
        if rep.stable:
            lo_b, warm = mid, pf
        else:
            hi_b = mid
    return hi_b


def statpi_singularity_sweep(case, family="zip", x=1.0, start=0.2, step=0.05,
                             hi=3.0):
    """Push loading upward until the algebraic reduction becomes singular.

    Returns (ladder, error): `ladder` is the left-side approach as a list of
    (load_scale, condition estimate), strictly increasing in both; `error`
    is the AlgebraicSingularityError that terminated the sweep.  The ladder
    brackets the singular crossing by bisection on sign(det(g_y)) so the
    condition estimate is driven through the explicit failure threshold
    rather than stepping silently past the crossing.
    """
    def blocks_at(ls, warm):
        sc = dae.ScenarioSpec(family=family, x=x, line_model="statpi",
                              load_scale=ls)
        system = dae.assemble(case, sc)
        pf = dae.scenario_power_flow(system, warm_start=warm)
        eq = dae.initialize(system, pf)
        return smallsignal.jacobian(system, eq), pf

    ladder = []
    warm = None
    prev_ls, prev_sign = None, None
    ls = start
    while ls <= hi + 1e-12:
        blocks, pf = blocks_at(ls, warm)
        sign = float(np.sign(np.linalg.det(blocks.g_y)))
        try:
            _, cond = smallsignal.reduce(blocks)
        except smallsignal.AlgebraicSingularityError as exc:
            ladder.append((ls, exc.condition))
            return ladder, exc
        if prev_sign is not None and sign != prev_sign:
            break
        ladder.append((ls, cond))
        warm, prev_ls, prev_sign = pf, ls, sign
        ls = round(ls + step, 12)
    else:
        raise RuntimeError(f"no algebraic singularity found up to load scale {hi}")

    lo_b, hi_b = prev_ls, ls
    while True:
        mid = 0.5 * (lo_b + hi_b)
        if mid in (lo_b, hi_b):
            raise RuntimeError("bisection exhausted float resolution before "
                               "the condition threshold tripped")
        blocks, pf = blocks_at(mid, warm)
        sign = float(np.sign(np.linalg.det(blocks.g_y)))
        try:
            _, cond = smallsignal.reduce(blocks)
        except smallsignal.AlgebraicSingularityError as exc:
            ladder.append((mid, exc.condition))
            return ladder, exc
        if sign == prev_sign:
            ladder.append((mid, cond))
            lo_b, warm = mid, pf
        else:
            hi_b = mid


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _load_case_arg(path):
    if path is None:
        return netdata.case9()
    with open(path) as f:
        return netdata.load_case(f.read())


def _scenario_from_args(args):
    return dae.ScenarioSpec(family=args.family, x=args.x,
                            line_model=args.line, load_scale=args.load_scale)


def _add_scenario_flags(p):
    p.add_argument("--case", default=None, help="case JSON (default: embedded 9-bus)")
    p.add_argument("--family", choices=("zip", "zie"), default="zip")
    p.add_argument("--x", type=float, default=0.0, help="composition fraction in [0,1]")
    p.add_argument("--line", choices=("statpi", "dynpi"), default="dynpi")
    p.add_argument("--load-scale", dest="load_scale", type=float, default=1.0)


def cmd_sim(args):
    case = _load_case_arg(args.case)
    sc = _scenario_from_args(args)
    system = dae.assemble(case, sc)
    pf = dae.scenario_power_flow(system)
    eq = dae.initialize(system, pf)
    branch = _resolve_trip(args.trip, pf)
    res = transient.simulate(system, eq, event=(branch, args.t_trip),
                             horizon=args.horizon, rtol=args.tol)
    os.makedirs(args.out, exist_ok=True)
    label = sc.label()
    _atomic_write(os.path.join(args.out, f"trace_{label}.csv"), res.to_csv())
    _atomic_write(os.path.join(args.out, f"trace_{label}.meta.json"),
                  json.dumps(res.metadata, indent=2, default=float))
    sig = "bus3_inverter_current_mag"
    if sig not in res.signals:
        sig = sorted(res.signals)[0]
    svg = emit_traces([{
        "label": label, "family": sc.family, "x": sc.x,
        "t": res.t, "values": res.signals[sig],
        "diverged": res.outcome.kind == "diverged",
    }], signal=sig)
    _atomic_write(os.path.join(args.out, f"trace_{label}.svg"), svg)
    print(f"{label}: trip {branch} at t={args.t_trip}s -> {res.outcome.kind}"
          + (f" (t_fail={res.outcome.t_fail:.4f}s)" if res.outcome.kind == "diverged" else ""))
    return 0


def cmd_eig(args):
    case = _load_case_arg(args.case)
    sc = _scenario_from_args(args)
    system = dae.assemble(case, sc)
    pf = dae.scenario_power_flow(system)
    eq = dae.initialize(system, pf)
    report = smallsignal.analyze(system, eq)
    os.makedirs(args.out, exist_ok=True)
    rows = eigen_rows(sc.label(), sc, report)
    _atomic_write(os.path.join(args.out, f"eig_{sc.label()}.csv"), eigen_csv(rows))
    _atomic_write(os.path.join(args.out, f"eig_{sc.label()}.svg"),
                  emit_eigen_map(rows, title=f"Eigenvalues {sc.label()}"))
    print(f"{sc.label()}: stable={report.stable} "
          f"max_real_part={report.max_real_part:.6g} "
          f"n_modes={len(report.eigenvalues)}")
    return 0


def cmd_sweep(args):
    case = _load_case_arg(args.case)
    analyses = tuple(args.analyses.split(","))
    spec = SweepSpec(
        families=tuple(args.families.split(",")),
        xs=tuple(float(v) for v in args.xs.split(",")),
        line_models=tuple(args.lines.split(",")),
        load_scales=tuple(float(v) for v in args.load_scales.split(",")),
        analyses=analyses, output_dir=args.out, parallelism=args.jobs,
        trip=args.trip, t_trip=args.t_trip, horizon=args.horizon, rtol=args.tol,
    )
    manifest = run_sweep(spec, case)
    n_fail = sum(1 for e in manifest["entries"] if e["status"] == "failed")
    print(f"sweep: {manifest['n_scenarios']} scenarios, {n_fail} failed, "
          f"manifest at {os.path.join(spec.output_dir, 'manifest.json')}")
    return 1 if n_fail else 0


def cmd_plot(args):
    made = 0
    eig_rows = []
    for path in sorted(glob.glob(os.path.join(args.out, "eig_*.csv"))):
        eig_rows += read_eigen_csv(path)
    if eig_rows:
        _atomic_write(os.path.join(args.out, "eigen_map.svg"),
                      emit_eigen_map(eig_rows))
        made += 1
    traces = []
    for path in sorted(glob.glob(os.path.join(args.out, "trace_*.csv"))):
        with open(path) as f:
            rdr = csv.reader(f)
            header = next(rdr)
            data = np.array([[float(v) for v in row] for row in rdr])
        if "bus3_inverter_current_mag" not in header:
            continue
        col = header.index("bus3_inverter_current_mag")
        label = os.path.basename(path)[len("trace_"):-len(".csv")]
        family = "zie" if label.startswith("zie") else "zip"
        try:
            x = float(label.split("_x")[1].split("_")[0])
        except (IndexError, ValueError):
            x = 1.0
        meta_path = path[:-4] + ".meta.json"
        diverged = False
        if os.path.exists(meta_path):
            with open(meta_path) as f:
                diverged = "failure" in json.load(f)
        traces.append({"label": label, "family": family, "x": x,
                       "t": data[:, 0], "values": data[:, col],
                       "diverged": diverged})
    if traces:
        _atomic_write(os.path.join(args.out, "traces.svg"), emit_traces(traces))
        made += 1
    print(f"plot: wrote {made} figure(s) under {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="zipedyn",
        description="Dynamic power-system studies with ZIP / ZIP-E composite loads")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sim", help="single transient with a branch trip")
    _add_scenario_flags(ps)
    ps.add_argument("--trip", default="auto",
                    help="branch id like 4-5, or 'auto' for the heaviest loaded line")
    ps.add_argument("--t-trip", dest="t_trip", type=float, default=transient.DEFAULT_T_TRIP)
    ps.add_argument("--horizon", type=float, default=transient.DEFAULT_HORIZON)
    ps.add_argument("--tol", type=float, default=transient.DEFAULT_RTOL,
                    help="relative integration tolerance")
    ps.add_argument("--out", default="out")
    ps.set_defaults(fn=cmd_sim)

    pe = sub.add_parser("eig", help="single small-signal analysis")
    _add_scenario_flags(pe)
    pe.add_argument("--out", default="out")
    pe.set_defaults(fn=cmd_eig)

    pw = sub.add_parser("sweep", help="scenario matrix")
    pw.add_argument("--case", default=None)
    pw.add_argument("--families", default="zip,zie")
    pw.add_argument("--xs", default=",".join(f"{0.1 * k:.1f}" for k in range(11)))
    pw.add_argument("--lines", default="statpi,dynpi")
    pw.add_argument("--load-scales", dest="load_scales", default="0.2,0.5,0.8")
    pw.add_argument("--analyses", default="smallsignal",
                    help="comma list of smallsignal,transient")
    pw.add_argument("--trip", default="auto")
    pw.add_argument("--t-trip", dest="t_trip", type=float, default=transient.DEFAULT_T_TRIP)
    pw.add_argument("--horizon", type=float, default=transient.DEFAULT_HORIZON)
    pw.add_argument("--tol", type=float, default=transient.DEFAULT_RTOL)
    pw.add_argument("--jobs", type=int, default=1)
    pw.add_argument("--out", default="out")
    pw.set_defaults(fn=cmd_sweep)

    pp = sub.add_parser("plot", help="re-emit SVG figures from CSV artifacts")
    pp.add_argument("--out", default="out")
    pp.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (CaseParseError, CaseValidationError, dae.ConfigError, ValueError,
            FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (PowerFlowError, dae.InitializationError, NetworkSolveError,
            smallsignal.AlgebraicSingularityError) as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

    srflow validate   --scenario S             structural checks and (A1) constants
    srflow check      --scenario S --out DIR   inequality suite, report.csv + summary.json
    srflow curvature  --scenario S             K*(t) per grid time as CSV
    srflow transport  --scenario S --mu M --nu N   W_t table and E2 margins
    srflow list                                shipped scenario names

``S`` is a path to a TOML scenario or the name of a shipped one.  Exit codes:
0 when verdicts match, 1 on a verdict mismatch, 2 on an input error.

Dynamic convexity of the entropy along W_t-geodesics (E1) is not checked:
finite spaces carry no W2-geodesics of measures.  The E2 rows (Wasserstein
contraction of the dual heat flow) are its operational surrogate.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import FlowError, ScenarioError
from .flow import circle_points, ellipticity_report, validate_a1, validate_structure

E1_NOTE = ("E1 (dynamic convexity along W_t-geodesics) is not checked: finite spaces carry no "
           "W2-geodesics of measures. E2 is reported as its operational surrogate.")

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ScenarioError, FlowError, KeyError, TypeError, ValueError, OSError)
REPORT_COLUMNS = ("inequality", "u", "s", "t", "witness", "margin", "tol", "verdict", "graded")


class InputError(Exception):
    pass


def _num(x) -> str:
    # shortest repr that round-trips, so reports are lossless and stable
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _load(args):
    from .scenarios import load_scenario

    try:
        return load_scenario(args.scenario)
    except INPUT_ERRORS as exc:
        raise InputError(f"scenario {args.scenario}: {exc}") from None


def _out_dir(args) -> Path | None:
    if not getattr(args, "out", None):
        return None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc.strerror}") from None
    return out


# ---- validate ----

def cmd_validate(args) -> int:
    sc = _load(args)
    flow = sc.flow
    try:
        validate_structure(flow)
        reps = [validate_a1(flow, time_stride=args.stride), ellipticity_report(flow, time_stride=args.stride)]
    except FlowError as exc:
        print(f"structure,fail,{exc}")
        return EXIT_MISMATCH
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["check", "margin", "tol", "verdict", "witness"])
    writer.writerow(["structure", "0.0", "0.0", "pass", "{}"])
    for rep in reps:
        writer.writerow([rep.inequality, _num(rep.margin), _num(rep.tol), rep.verdict,
                         json.dumps(_jsonable(dict(rep.witness)), sort_keys=True, separators=(",", ":"))])
    print(f"# lipschitz {_num(flow.lipschitz)}")
    return EXIT_OK if all(r.passed for r in reps) else EXIT_MISMATCH


# ---- check ----

def report_rows(result) -> list[list[str]]:
    rows = []
    for rep in result.rows:
        w = dict(rep.witness)
        uid = w.pop("u", "")
        if "g" in w:
            uid = f"{uid}|{w.pop('g')}"
        s = w.pop("s", "")
        t = w.pop("t", "")
        rows.append([
            rep.inequality,
            uid,
            "" if s == "" else _num(s),
            "" if t == "" else _num(t),
            json.dumps(_jsonable(w), sort_keys=True, separators=(",", ":")),
            _num(rep.margin),
            _num(rep.tol),
            rep.verdict,
            "false" if rep.informational else "true",
        ])
    return rows


def write_report(result, handle) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(report_rows(result))


def summary(run, args) -> dict:
    sc, res = run.scenario, run.result
    ineq = {}
    for name, rep in res.reports.items():
        ineq[name] = {
            "margin": rep.margin,
            "tol": rep.tol,
            "verdict": rep.verdict,
            "graded": not rep.informational,
            "expected": sc.expected.get(name),
            "witness": dict(rep.witness),
        }
    return {
        "scenario": sc.name,
        "provenance": sc.provenance,
        "backend": sc.flow.backend,
        "n": sc.flow.n,
        "grid": sc.flow.grid.describe(),
        "seed": sc.bank_seed if args.seed is None else args.seed,
        "tol_override": args.tol,
        "curvature": sc.curvature,
        "matched": run.matched,
        "mismatches": run.mismatches,
        "inequalities": ineq,
        "implications": res.implications,
        "notes": [E1_NOTE],
    }


def _write_trajectories(sc, res, out: Path) -> None:
    from .propagator import adjoint, forward

    flow, bank = sc.flow, res.bank
    s, t = flow.grid.t_start, flow.grid.t_end
    j = bank.nonconstant()[0]
    fwd = forward(flow, s, t, bank.fields[:, j])
    adj = adjoint(flow, t, s, bank.positive[:, j])
    (out / "trajectory_forward.csv").write_text(fwd.to_csv())
    (out / "trajectory_adjoint.csv").write_text(adj.to_csv())


def cmd_check(args) -> int:
    from .scenarios import run_scenario

    sc = _load(args)
    out = _out_dir(args)
    try:
        run = run_scenario(sc, seed=args.seed, jobs=args.jobs, tol=args.tol)
    except INPUT_ERRORS as exc:
        raise InputError(f"scenario {sc.name}: {exc}") from None
    res = run.result
    if out is not None:
        with open(out / "report.csv", "w", newline="") as fh:
            write_report(res, fh)
        (out / "summary.json").write_text(_dumps(summary(run, args)))
        if args.trajectories:
            _write_trajectories(sc, res, out)
        if not args.no_plots:
            from .plotting import plot_margins

            plot_margins(res.reports, out / "margins.png", title=sc.name)
    print("inequality,margin,tol,verdict,graded,expected")
    for name, rep in res.reports.items():
        print(f"{name},{_num(rep.margin)},{_num(rep.tol)},{rep.verdict},"
              f"{'false' if rep.informational else 'true'},{sc.expected.get(name, '')}")
    for name, imp in res.implications.items():
        print(f"# implication {name}: {'holds' if imp['holds'] else 'fails'}")
    print(f"# {E1_NOTE}")
    for name, mm in run.mismatches.items():
        print(f"# mismatch {name}: expected {mm['expected']}, observed {mm['observed']}", file=sys.stderr)
    return EXIT_OK if run.matched else EXIT_MISMATCH


# ---- curvature ----

def curvature_table(flow, stride: int = 1):
    from .gamma import snapshot_any
    from .inequalities.curvature import curvature_profile

    times = flow.grid.times[::stride]
    if times[-1] != flow.grid.t_end:
        times = np.append(times, flow.grid.t_end)
    profiles = {}
    first = None
    for t in times:
        if flow.static and first is not None:
            profiles[float(t)] = first
            continue
        prof = curvature_profile(snapshot_any(flow, float(t)))
        first = first or prof
        profiles[float(t)] = prof
    return profiles


def cmd_curvature(args) -> int:
    sc = _load(args)
    out = _out_dir(args)
    profiles = curvature_table(sc.flow, max(1, args.stride))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "K", "argmin"])
    for t, prof in profiles.items():
        writer.writerow([_num(t), _num(prof.K), prof.argmin])
    sys.stdout.write(buf.getvalue())
    if out is not None:
        (out / "curvature.csv").write_text(buf.getvalue())
        if not args.no_plots:
            from .plotting import plot_curvature

            times = list(profiles)
            first = profiles[times[0]]
            pts = circle_points(sc.flow) if sc.flow.backend == "circle1d" else None
            plot_curvature(times, [p.K for p in profiles.values()], out / "curvature.png",
                           profile=first.values, points=pts, title=sc.name)
    return EXIT_OK


# ---- transport ----

def parse_measure(spec: str, n: int) -> np.ndarray:
    """'delta:x', 'uniform', comma-separated weights, or a text file of weights."""
    spec = spec.strip()
    if spec == "uniform":
        return np.full(n, 1.0 / n)
    if spec.startswith("delta:"):
        try:
            x = int(spec[6:])
        except ValueError:
            raise InputError(f"bad delta spec {spec!r}") from None
        if not 0 <= x < n:
            raise InputError(f"delta state {x} outside 0..{n - 1}")
        w = np.zeros(n)
        w[x] = 1.0
        return w
    path = Path(spec)
    try:
        w = np.loadtxt(path, delimiter=",", ndmin=1) if path.exists() else np.array(
            [float(v) for v in spec.split(",")])
    except ValueError:
        raise InputError(f"cannot parse measure {spec!r}") from None
    if w.shape != (n,):
        raise InputError(f"measure {spec!r} has {w.size} weights, need {n}")
    if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise InputError(f"measure {spec!r} must be finite, nonnegative and nonzero")
    return w / w.sum()


def transport_table(flow, mu, nu, p: int, stride: int = 1, tol=None):
    from .inequalities.checks import default_tol
    from .transport import check_E2

    s = flow.grid.t_start
    times = flow.grid.times[stride::stride]
    if times.size == 0 or times[-1] != flow.grid.t_end:
        times = np.append(times, flow.grid.t_end)
    tol = default_tol(flow, "E2") if tol is None else tol
    return [check_E2(flow, s, float(t), mu, nu, p=p, tol=tol) for t in times]


def cmd_transport(args) -> int:
    sc = _load(args)
    flow = sc.flow
    out = _out_dir(args)
    mu = parse_measure(args.mu, flow.n)
    nu = parse_measure(args.nu, flow.n)
    p = args.p or (2 if flow.backend == "circle1d" else 1)
    try:
        reps = transport_table(flow, mu, nu, p, max(1, args.stride), args.tol)
    except INPUT_ERRORS as exc:
        raise InputError(str(exc)) from None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "t", f"W{p}_t", f"W{p}_s", "margin", "tol", "verdict", "mass_defect"])
    for rep in reps:
        d = rep.details
        writer.writerow([_num(rep.witness["s"]), _num(rep.witness["t"]), _num(d["W_t"]), _num(d["W_s"]),
                         _num(rep.margin), _num(rep.tol), rep.verdict, _num(d["mass_defect"])])
    sys.stdout.write(buf.getvalue())
    print(f"# {E1_NOTE}")
    if out is not None:
        (out / "transport.csv").write_text(buf.getvalue())
        if not args.no_plots:
            from .plotting import plot_wasserstein

            plot_wasserstein([r.witness["t"] for r in reps], [r.details["W_t"] for r in reps],
                             [r.details["W_s"] for r in reps], out / "wasserstein.png", p=p, title=sc.name)
    return EXIT_OK


def cmd_list(args) -> int:
    from .scenarios import load_recipe, shipped_scenarios

    for name in shipped_scenarios():
        rec = load_recipe(name)
        print(f"{name},{rec.get('flow', {}).get('backend', '')}")
    return EXIT_OK


# ---- entry point ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srflow", description=__doc__.split("\n\n")[0].strip(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=E1_NOTE)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario TOML path or shipped name")
        if out:
            p.add_argument("--out", help="output directory")
            p.add_argument("--no-plots", action="store_true", help="skip figures")

    p = sub.add_parser("validate", help="structural checks and Lipschitz constants")
    common(p, out=False)
    p.add_argument("--stride", type=int, default=1, help="grid stride for the (A1) sweep")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("check", help="run the inequality suite", epilog=E1_NOTE)
    common(p)
    p.add_argument("--tol", type=float, help="override every tolerance")
    p.add_argument("--seed", type=int, help="test-function bank seed")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--trajectories", action="store_true", help="write trajectory_*.csv")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("curvature", help="K*(t) per grid time")
    common(p)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("transport", help="W_t table and E2 margins", epilog=E1_NOTE)
    common(p)
    p.add_argument("--mu", required=True, help="delta:x | uniform | w0,w1,... | weights file")
    p.add_argument("--nu", required=True)
    p.add_argument("--p", type=int, choices=(1, 2), help="Wasserstein exponent (default: graded one)")
    p.add_argument("--tol", type=float)
    p.add_argument("--stride", type=int, default=10)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("list", help="shipped scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

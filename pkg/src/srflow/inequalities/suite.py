"""Batch evaluation of all checks over a bank and a set of (s, t) pairs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..flow import CIRCLE, FlowSpec, TimeGrid
from ..report import CheckReport, combine
from ..transport import wasserstein
from ..flow import ProbabilityMeasure
from .bank import TestFunctionBank, make_bank
from .checks import (
    POSITIVE_INPUT,
    PairContext,
    default_tol,
    e4_margins,
    bochner_terms,
    is_informational,
    jensen_row,
    margin_array,
    pair_contexts,
    parse_id,
    reduce_margins,
)
from .static import VARIANTS, static_margins
from ..gamma import frozen_semigroup, snapshot_any

ALPHAS = (2, 4, 8, 16)
PAIR_CHECKS = ("E3", "E6", "E7", "E8", "uniform-bound", "E9", "E10", "E12")
ALL_CHECKS = ("E2",) + PAIR_CHECKS + ("E11", "E4", "E5", "static")


def default_pairs(grid: TimeGrid, count: int = 3) -> list[tuple[float, float]]:
    """Pairs spanning the grid: starts at 0, N/4, N/2 and ends at a short lag, the
    midpoint of the remaining window, and the final time."""
    N = grid.n_steps
    out = []
    for ks in sorted({0, N // 4, N // 2}):
        if ks >= N:
            continue
        lags = sorted({ks + max(1, N // 8), (ks + N) // 2, N} - {ks})
        for kt in lags[:count]:
            if kt > ks:
                out.append((grid.time(ks), grid.time(kt)))
    return sorted(set(out))


def default_delta_pairs(flow: FlowSpec, limit: int | None = None) -> list[tuple[int, int]]:
    """All pairs on small graphs; otherwise pairs centred on ``limit`` equispaced
    states at three separations."""
    n = flow.n
    if limit is None:
        limit = 4 if flow.backend == CIRCLE else 8
    if flow.backend != CIRCLE and n * (n - 1) // 2 <= 3 * limit:
        return [(x, y) for x in range(n) for y in range(x + 1, n)]
    starts = np.linspace(0, n, limit, endpoint=False).astype(int)
    pairs = {(int(x), int((x + 1) % n)) for x in starts}
    for k in sorted({1, max(2, n // 32), max(3, n // 16)}):
        pairs |= {(int((x - k) % n), int((x + k) % n)) for x in starts}
    return sorted(tuple(sorted(p)) for p in pairs)


@dataclass
class SuiteResult:
    flow: FlowSpec
    bank: TestFunctionBank
    pairs: list
    rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    implications: dict = field(default_factory=dict)

    def verdicts(self) -> dict:
        return {k: ("informational" if r.informational else r.verdict) for k, r in self.reports.items()}

    def margin(self, inequality: str) -> float:
        return self.reports[inequality].margin


def _selected(checks, name: str) -> bool:
    return name in checks or parse_id(name)[0] in checks


def _pair_rows(ctx: PairContext, bank: TestFunctionBank, checks, alphas, tols, jensen_tol):
    U, V = bank.fields, bank.positive
    ids = bank.ids
    rows, arrays = [], {}
    names = [c for c in PAIR_CHECKS if c in checks]
    if "E11" in checks:
        names += [f"E11[{a:g}]" for a in alphas]
    for name in names:
        base = parse_id(name)[0]
        data = V if base in POSITIVE_INPUT or base == "uniform-bound" else U
        arr = margin_array(ctx, name, data)
        arrays[name] = arr
        info = is_informational(ctx.flow, name)
        for j in range(len(ids)):
            rows.append(reduce_margins(name, arr[..., j : j + 1], [ids[j]], ctx, tols[base], info))
    extra = {}
    if "E3" in arrays and "E6" in arrays:
        extra["jensen"] = jensen_row(arrays["E6"], arrays["E3"], jensen_tol)
    return rows, extra


def _e2_rows(ctx: PairContext, delta_pairs, tol, p_graded):
    flow = ctx.flow
    rows = []
    exps = [(p_graded, "E2", False)]
    if flow.backend != CIRCLE:
        exps.append((2, "E2[W2]", True))
    for x, y in delta_pairs:
        mu = ProbabilityMeasure.delta(flow.n, x)
        nu = ProbabilityMeasure.delta(flow.n, y)
        pmu = ProbabilityMeasure.normalized(ctx.dual(mu.weights))
        pnu = ProbabilityMeasure.normalized(ctx.dual(nu.weights))
        for p, name, info in exps:
            w_t = wasserstein(flow, ctx.t, mu, nu, p).distance
            w_s = wasserstein(flow, ctx.s, pmu, pnu, p).distance
            rows.append(CheckReport(
                inequality=name, margin=float(w_t - w_s),
                witness={"s": ctx.s, "t": ctx.t, "x": x, "y": y, "u": f"delta{x}-delta{y}"},
                tol=tol, grid=flow.grid.describe(), informational=info,
                details={"W_t": w_t, "W_s": w_s, "p": p},
            ))
    return rows


def _bochner_rows(flow: FlowSpec, bank: TestFunctionBank, n_g: int, max_times: int):
    U = bank.fields
    gids = list(bank.ids[: n_g])
    G = bank.positive[:, :n_g]
    rows = []
    S, T = flow.grid.t_start, flow.grid.t_end
    tol4, tol5 = default_tol(flow, "E4"), default_tol(flow, "E5")
    if flow.grid.n_steps >= 2:
        times, arr = e4_margins(flow, S, T, U, G)
        for k, uid in enumerate(bank.ids):
            sub = arr[:, :, k]
            i, j = np.unravel_index(int(np.argmin(sub)), sub.shape)
            rows.append(CheckReport("E4", float(sub[i, j]),
                                    {"s": S, "t": T, "r": float(times[i]), "u": uid, "g": gids[j]},
                                    tol4, flow.grid.describe()))
    stride = max(1, flow.grid.n_steps // max(1, max_times - 1))
    inner = flow.grid.times[1:-1] if not flow.static else flow.grid.times
    for r in inner[::stride]:
        arr = np.stack([2.0 * bochner_terms(flow, r, U, G[:, j]) for j in range(G.shape[1])])
        for k, uid in enumerate(bank.ids):
            j = int(np.argmin(arr[:, k]))
            rows.append(CheckReport("E5", float(arr[j, k]), {"t": float(r), "u": uid, "g": gids[j]},
                                    tol5, flow.grid.describe()))
    return rows


def _static_rows(flow: FlowSpec, bank: TestFunctionBank, K: float, durations, alpha: float = 2.0):
    t = flow.grid.t_start
    snap = snapshot_any(flow, t)
    d = np.asarray(flow.d_at(t))
    rows = []
    for r in durations:
        P = frozen_semigroup(snap, r, np.eye(flow.n))
        for variant in VARIANTS:
            data = bank.fields if variant in ("iia", "iib") else bank.positive
            arr = static_margins(P, snap, d, K, r, data, variant, alpha)
            info = variant not in ("iia", "iib") and is_informational(flow, "E9")
            for j, uid in enumerate(bank.ids):
                sub = arr[..., j]
                idx = np.unravel_index(int(np.argmin(sub)), sub.shape)
                w = {"t": t, "duration": float(r), "x": int(idx[0])}
                if sub.ndim == 2:
                    w["y"] = int(idx[1])
                w["u"] = uid
                rows.append(CheckReport(f"static-{variant}", float(sub[idx]), w, default_tol(flow),
                                        f"frozen at t={t:g}", info, {"K": K}))
    return rows


def _implications(reports: dict, extra_jensen: float, jensen_tol: float, alphas) -> dict:
    def ok(*names):
        present = [reports[n].passed for n in names if n in reports]
        return bool(present) and all(present)

    def have(*names):
        return all(n in reports for n in names)

    out = {}

    def add(name, ant, cons, needed):
        if have(*needed):
            out[name] = {"antecedent": ant, "consequent": cons, "holds": (not ant) or cons}

    add("E3=>E7&E8", ok("E3"), ok("E7", "E8"), ("E3", "E7", "E8"))
    add("E7&E8=>E3", ok("E7", "E8"), ok("E3"), ("E3", "E7", "E8"))
    if "E3=>E7&E8" in out:
        out["E3<=>E7&E8"] = {"antecedent": ok("E3"), "consequent": ok("E7", "E8"),
                             "holds": ok("E3") == ok("E7", "E8")}
    if math.isfinite(extra_jensen) or have("E6", "E3"):
        out["E6=>E3"] = {"antecedent": ok("E6"), "consequent": extra_jensen >= -jensen_tol,
                         "holds": extra_jensen >= -jensen_tol, "margin": extra_jensen}
    add("E6=>E9&E10", ok("E6"), ok("E9", "E10"), ("E6", "E9", "E10"))
    a24 = [f"E11[{a:g}]" for a in alphas if a in (2, 4)]
    add("E6=>E11[2]&E11[4]", ok("E6"), ok(*a24), ("E6", *a24))
    a_all = [f"E11[{a:g}]" for a in alphas]
    add("E11=>E12", ok(*a_all), ok("E12"), (*a_all, "E12"))
    add("E11[2]=>E11[4]", ok("E11[2]"), ok("E11[4]"), ("E11[2]", "E11[4]"))
    add("E8=>E4", ok("E8"), ok("E4"), ("E8", "E4"))
    add("E8=>uniform-bound", ok("E8"), ok("uniform-bound"), ("E8", "uniform-bound"))
    return out


def run_suite(flow: FlowSpec, bank: TestFunctionBank | None = None, pairs=None, checks=ALL_CHECKS,
              alphas=ALPHAS, tol: float | None = None, jobs: int = 1, delta_pairs=None,
              e2_exponent: int | None = None, static_K: float | None = None, seed: int = 0,
              bochner_g: int = 5, bochner_times: int = 11) -> SuiteResult:
    """Evaluate every selected check; row order and reductions are deterministic."""
    bank = bank or make_bank(flow, seed=seed)
    pairs = list(pairs) if pairs is not None else default_pairs(flow.grid)
    base_tols = {c: default_tol(flow, c) if tol is None else tol
                 for c in ("E2", "E3", "E6", "E7", "E8", "E9", "E10", "E11", "E12", "uniform-bound")}
    jensen_tol = base_tols["E3"]
    need_adj = "E2" in checks
    ctxs = pair_contexts(flow, pairs, with_adjoint=need_adj)
    if delta_pairs is None:
        delta_pairs = default_delta_pairs(flow)
    p_graded = e2_exponent or (2 if flow.backend == CIRCLE else 1)

    def work(ctx):
        rows, extra = _pair_rows(ctx, bank, checks, alphas, base_tols, jensen_tol)
        if need_adj:
            rows = _e2_rows(ctx, delta_pairs, base_tols["E2"], p_graded) + rows
        return rows, extra

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, ctxs))
    else:
        results = [work(c) for c in ctxs]

    rows = [r for rs, _ in results for r in rs]
    jensen = min((e.get("jensen", math.inf) for _, e in results), default=math.inf)
    if "E4" in checks or "E5" in checks:
        brows = _bochner_rows(flow, bank, bochner_g, bochner_times)
        rows += [r for r in brows if r.inequality in checks]
    if "static" in checks and flow.static and static_K is not None:
        durations = sorted({round(t - s, 12) for s, t in pairs})
        rows += _static_rows(flow, bank, static_K, durations)

    reports = {}
    for row in rows:
        reports.setdefault(row.inequality, []).append(row)
    reports = {k: combine(v) for k, v in reports.items()}
    return SuiteResult(flow, bank, pairs, rows, reports, _implications(reports, jensen, jensen_tol, alphas))


def reevaluate(flow: FlowSpec, bank: TestFunctionBank, report: CheckReport) -> float:
    """Recompute a pair-check margin at its witness from scratch."""
    w = report.witness
    ctx = pair_contexts(flow, [(w["s"], w["t"])])[0]
    name = report.inequality
    base = parse_id(name)[0]
    data = bank.positive if base in POSITIVE_INPUT or base == "uniform-bound" else bank.fields
    arr = margin_array(ctx, name, data)
    j = bank.ids.index(w["u"])
    idx = (w["x"], w["y"], j) if "y" in w else (w["x"], j)
    return float(arr[idx])

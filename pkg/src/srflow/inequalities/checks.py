"""Dynamic gradient, Poincare, log-Sobolev, Harnack and Bochner checks.

Every checker works on a block of test functions U of shape (n, k) and an
(s, t) pair.  Margins are right-hand side minus left-hand side; the report
keeps the minimum and the location attaining it.  Pair evaluations share
one dense propagator matrix per (s, t), so re-evaluating a witness runs the
same arithmetic and reproduces the margin exactly.
"""

from __future__ import annotations

import math
from collections import defaultdict
from functools import cached_property

import numpy as np

from ..errors import OrderingError
from ..flow import CIRCLE, FlowSpec
from ..gamma import dt_gamma_extrapolated, gamma, snapshot_any
from ..propagator import adjoint, adjoint_matrices, forward, propagator_matrices
from ..report import CheckReport

GRAPH_TOL = 1e-9
EPS_REL = 1e-8
# acceptance-graded on the circle only: the discrete square field has no chain rule
CHAIN_RULE_CHECKS = ("E6", "E9", "E10", "E11", "E12")


def default_tol(flow: FlowSpec, inequality: str = "") -> float:
    dt = flow.grid.dt
    if flow.backend == CIRCLE:
        h = flow.h
        return max(5e-3, 10 * h * h + 10 * dt * dt)
    if inequality in ("E4", "E5") and not flow.static:
        # dGamma/dt is an extrapolated difference quotient, not an exact identity
        return GRAPH_TOL + 10 * dt * dt
    return GRAPH_TOL


def is_informational(flow: FlowSpec, inequality: str) -> bool:
    base = inequality.split("[")[0]
    return flow.backend != CIRCLE and base in CHAIN_RULE_CHECKS


def clamp(U: np.ndarray):
    """u v eps with eps = 1e-8 ||u||_inf per column."""
    U = np.asarray(U, dtype=float)
    eps = EPS_REL * np.max(np.abs(U), axis=0)
    eps = np.where(eps > 0, eps, EPS_REL)
    return np.maximum(U, eps), eps


def _block(u):
    u = np.asarray(u, dtype=float)
    return (u[:, None], True) if u.ndim == 1 else (u, False)


class PairContext:
    """Propagator data for one (s, t) pair."""

    def __init__(self, flow: FlowSpec, s: float, t: float, P=None, Pstar=None):
        if s >= t:
            raise OrderingError(f"checks need s < t, got s={s!r}, t={t!r}")
        self.flow, self.s, self.t = flow, float(s), float(t)
        self._P, self._Pstar = P, Pstar

    @property
    def tau(self) -> float:
        return self.t - self.s

    @property
    def P(self) -> np.ndarray:
        if self._P is None:
            self._P = propagator_matrices(self.flow, self.s, [self.t])[self.t]
        return self._P

    @property
    def Pstar(self) -> np.ndarray:
        if self._Pstar is None:
            self._Pstar = adjoint_matrices(self.flow, self.t, [self.s])[self.s]
        return self._Pstar

    @cached_property
    def snap_s(self):
        return snapshot_any(self.flow, self.s)

    @cached_property
    def snap_t(self):
        return snapshot_any(self.flow, self.t)

    @cached_property
    def d_t(self) -> np.ndarray:
        return np.asarray(self.flow.d_at(self.t))

    def dual(self, weights) -> np.ndarray:
        """hat P_{t,s} applied to a measure (unnormalized)."""
        w = np.asarray(weights, dtype=float)
        return (self.Pstar @ (w / self.flow.weights_at(self.t))) * self.flow.weights_at(self.s)


def pair_contexts(flow: FlowSpec, pairs, with_adjoint: bool = False) -> list[PairContext]:
    """Contexts for many pairs; one block run per distinct start (or end) time."""
    pairs = [(float(s), float(t)) for s, t in pairs]
    by_s, by_t = defaultdict(set), defaultdict(set)
    for s, t in pairs:
        by_s[s].add(t)
        by_t[t].add(s)
    fwd = {s: propagator_matrices(flow, s, ts) for s, ts in by_s.items()}
    adj = {t: adjoint_matrices(flow, t, ss) for t, ss in by_t.items()} if with_adjoint else {}
    return [PairContext(flow, s, t, fwd[s][t], adj[t][s] if with_adjoint else None) for s, t in pairs]


# ---- margin arrays: (n, k) per state, (n, n, k) per state pair (x, y) ----

def margins_E3(ctx: PairContext, U) -> np.ndarray:
    return ctx.P @ gamma(ctx.snap_s, U) - gamma(ctx.snap_t, ctx.P @ U)


def margins_E6(ctx: PairContext, U) -> np.ndarray:
    return ctx.P @ np.sqrt(gamma(ctx.snap_s, U)) - np.sqrt(gamma(ctx.snap_t, ctx.P @ U))


def _variance(ctx: PairContext, U):
    PU = ctx.P @ U
    return ctx.P @ (U * U) - PU * PU, PU


def margins_E7(ctx: PairContext, U) -> np.ndarray:
    var, _ = _variance(ctx, U)
    return 2 * ctx.tau * (ctx.P @ gamma(ctx.snap_s, U)) - var


def margins_E8(ctx: PairContext, U) -> np.ndarray:
    var, PU = _variance(ctx, U)
    return var - 2 * ctx.tau * gamma(ctx.snap_t, PU)


def margins_uniform_bound(ctx: PairContext, U) -> np.ndarray:
    """||u||_inf^2 / (2(t-s)) - Gamma_t(P u)."""
    M = np.max(np.abs(U), axis=0)
    return M**2 / (2 * ctx.tau) - gamma(ctx.snap_t, ctx.P @ U)


def _ent(ctx: PairContext, U):
    V, _ = clamp(U)
    PV = ctx.P @ V
    return ctx.P @ (V * np.log(V)) - PV * np.log(PV), V, PV


def margins_E9(ctx: PairContext, U) -> np.ndarray:
    ent, V, _ = _ent(ctx, U)
    return ctx.tau * (ctx.P @ (gamma(ctx.snap_s, V) / V)) - ent


def margins_E10(ctx: PairContext, U) -> np.ndarray:
    ent, _, PV = _ent(ctx, U)
    return ent - ctx.tau * gamma(ctx.snap_t, PV) / PV


def harnack_exponent(alpha: float, d, tau: float):
    """alpha d^2 / (4 (alpha - 1) tau)."""
    return alpha * np.asarray(d) ** 2 / (4.0 * (alpha - 1.0) * tau)


def margins_E11(ctx: PairContext, U, alpha: float) -> np.ndarray:
    """log P(u^a)(x) + a d_t(x,y)^2 / (4(a-1)(t-s)) - a log Pu(y), indexed [x, y, k]."""
    if alpha <= 1:
        raise ValueError("Harnack exponent must exceed 1")
    V, _ = clamp(U)
    lhs = alpha * np.log(ctx.P @ V)
    rhs = np.log(ctx.P @ V**alpha)
    return rhs[:, None, :] + harnack_exponent(alpha, ctx.d_t, ctx.tau)[:, :, None] - lhs[None, :, :]


def margins_E12(ctx: PairContext, U) -> np.ndarray:
    """log Pu(y) + d_t(x,y)^2 / (4(t-s)) - P(log u)(x), indexed [x, y, k]."""
    V, _ = clamp(U)
    rhs = np.log(ctx.P @ V)
    lhs = ctx.P @ np.log(V)
    return rhs[None, :, :] + (ctx.d_t**2 / (4.0 * ctx.tau))[:, :, None] - lhs[:, None, :]


MARGINS = {
    "E3": margins_E3,
    "E6": margins_E6,
    "E7": margins_E7,
    "E8": margins_E8,
    "E9": margins_E9,
    "E10": margins_E10,
    "E12": margins_E12,
    "uniform-bound": margins_uniform_bound,
}
POSITIVE_INPUT = ("E9", "E10", "E11", "E12")


def parse_id(inequality: str):
    """'E11[2]' -> ('E11', 2.0); 'E3' -> ('E3', None)."""
    if "[" in inequality:
        base, arg = inequality.rstrip("]").split("[")
        return base, float(arg)
    return inequality, None


def margin_array(ctx: PairContext, inequality: str, U) -> np.ndarray:
    base, arg = parse_id(inequality)
    if base == "E11":
        return margins_E11(ctx, U, arg)
    return MARGINS[base](ctx, U)


def reduce_margins(inequality: str, arr: np.ndarray, ids, ctx: PairContext, tol: float,
                   informational: bool = False, details=None) -> CheckReport:
    """Minimum of a margin array with its (x[, y], u) location; first occurrence wins."""
    k = int(np.argmin(arr))
    idx = np.unravel_index(k, arr.shape)
    witness = {"s": ctx.s, "t": ctx.t, "x": int(idx[0])}
    if arr.ndim == 3:
        witness["y"] = int(idx[1])
    witness["u"] = ids[idx[-1]]
    return CheckReport(
        inequality=inequality,
        margin=float(arr[idx]),
        witness=witness,
        tol=tol,
        grid=ctx.flow.grid.describe(),
        informational=informational,
        details=dict(details or {}),
    )


def _check(inequality, flow, s, t, u, tol, uid, ctx):
    ctx = ctx or PairContext(flow, s, t)
    U, single = _block(u)
    ids = [uid] if single else [f"{uid}{j}" for j in range(U.shape[1])]
    tol = default_tol(flow, inequality) if tol is None else tol
    details = {}
    if parse_id(inequality)[0] in POSITIVE_INPUT:
        details["eps"] = float(np.max(clamp(U)[1]))
    return reduce_margins(inequality, margin_array(ctx, inequality, U), ids, ctx, tol,
                          is_informational(flow, inequality), details)


def check_E3(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """L2 gradient estimate Gamma_t(Pu) <= P(Gamma_s u)."""
    return _check("E3", flow, s, t, u, tol, uid, ctx)


def check_E6(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """L1 gradient estimate sqrt(Gamma_t(Pu)) <= P(sqrt(Gamma_s u))."""
    return _check("E6", flow, s, t, u, tol, uid, ctx)


def check_E7(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """Local Poincare P(u^2) - (Pu)^2 <= 2(t-s) P(Gamma_s u)."""
    return _check("E7", flow, s, t, u, tol, uid, ctx)


def check_E8(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """Reverse local Poincare P(u^2) - (Pu)^2 >= 2(t-s) Gamma_t(Pu)."""
    return _check("E8", flow, s, t, u, tol, uid, ctx)


def check_uniform_bound(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    return _check("uniform-bound", flow, s, t, u, tol, uid, ctx)


def check_E9(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """Local log-Sobolev P(u log u) - Pu log Pu <= (t-s) P(Gamma_s u / u)."""
    return _check("E9", flow, s, t, u, tol, uid, ctx)


def check_E10(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """Reverse local log-Sobolev P(u log u) - Pu log Pu >= (t-s) Gamma_t(Pu) / Pu."""
    return _check("E10", flow, s, t, u, tol, uid, ctx)


def check_E11(flow, s, t, u, alpha: float = 2.0, tol=None, uid="u", ctx=None) -> CheckReport:
    """Dimension-free Harnack inequality over all state pairs, in log form."""
    return _check(f"E11[{alpha:g}]", flow, s, t, u, tol, uid, ctx)


def check_E12(flow, s, t, u, tol=None, uid="u", ctx=None) -> CheckReport:
    """Log-Harnack inequality over all state pairs."""
    return _check("E12", flow, s, t, u, tol, uid, ctx)


# ---- Bochner forms ----

def bochner_terms(flow: FlowSpec, r: float, U, g) -> np.ndarray:
    """Gamma_2 form of each column of U tested against g, minus 1/2 int dGamma/dt g dm.

    The time derivative is the extrapolated central quotient, so r must be an
    interior grid time of a non-static flow.
    """
    snap = snapshot_any(flow, r)
    g = np.asarray(g, dtype=float)
    LU = snap.laplacian(U)
    a = 0.5 * snap.integrate(gamma(snap, U) * snap.laplacian(g)[:, None])
    b = snap.integrate(LU**2 * g[:, None])
    c = snap.integrate(gamma(snap, U, g[:, None]) * LU)
    rate = dt_gamma_extrapolated(flow, r, U)
    return a + b + c - 0.5 * snap.integrate(rate * g[:, None])


def e4_margins(flow: FlowSpec, S: float, T: float, U, G) -> tuple[np.ndarray, np.ndarray]:
    """Bochner margins at interior grid times r of [S, T] with u_r = P_{r,S}u and
    g_r = P*_{T,r}g.  Returns (times, array[r, g, u])."""
    U, _ = _block(U)
    G, _ = _block(G)
    fwd = forward(flow, S, T, U)
    adj = adjoint(flow, T, S, G)
    inner = range(1, len(fwd.times) - 1)
    if not len(inner):
        raise OrderingError("the window needs at least one interior grid time")
    out = np.empty((len(inner), G.shape[1], U.shape[1]))
    for i, k in enumerate(inner):
        r = fwd.times[k]
        for j in range(G.shape[1]):
            out[i, j] = bochner_terms(flow, r, fwd.trajectory[k], adj.trajectory[k][:, j])
    return fwd.times[1:-1], out


def check_E4(flow, S, T, u, g, tol=None, uid="u", gid="g") -> CheckReport:
    """Integrated dynamic Bochner inequality along the propagator trajectories."""
    times, arr = e4_margins(flow, S, T, u, g)
    i, j, k = np.unravel_index(int(np.argmin(arr)), arr.shape)
    U, single_u = _block(u)
    G, single_g = _block(g)
    return CheckReport(
        inequality="E4",
        margin=float(arr[i, j, k]),
        witness={"s": float(S), "t": float(T), "r": float(times[i]),
                 "u": uid if single_u else f"{uid}{k}", "g": gid if single_g else f"{gid}{j}"},
        tol=default_tol(flow, "E4") if tol is None else tol,
        grid=flow.grid.describe(),
    )


def check_E5(flow, t, u, g, tol=None, uid="u", gid="g") -> CheckReport:
    """Pointwise-in-time dynamic Bochner inequality at one time (twice the E4 integrand)."""
    U, single_u = _block(u)
    G, single_g = _block(g)
    arr = np.stack([2.0 * bochner_terms(flow, t, U, G[:, j]) for j in range(G.shape[1])])
    j, k = np.unravel_index(int(np.argmin(arr)), arr.shape)
    return CheckReport(
        inequality="E5",
        margin=float(arr[j, k]),
        witness={"t": float(t), "u": uid if single_u else f"{uid}{k}",
                 "g": gid if single_g else f"{gid}{j}"},
        tol=default_tol(flow, "E5") if tol is None else tol,
        grid=flow.grid.describe(),
    )


def jensen_row(e6: np.ndarray, e3: np.ndarray, tol: float) -> float:
    """Worst E3 margin among the entries where E6 holds (inf if none)."""
    mask = e6 >= -tol
    return float(e3[mask].min()) if np.any(mask) else math.inf

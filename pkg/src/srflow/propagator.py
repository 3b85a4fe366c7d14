"""Heat propagators of a time-dependent finite mm-space.

Forward runs solve d/dr u_r = Delta_r u_r; adjoint runs solve
d/dr v_r = -Delta_r v_r + v_r d/dr f_r backwards from v_t = g.  Each substep
[a, b] applies exp((b - a) A) by uniformization, where A is the Simpson
average of the generator over the substep (second-order Magnus truncation).
For the adjoint the averaged potential term is (f_b - f_a)/(b - a), i.e. the
central difference of f at the substep midpoint.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import OrderingError
from .flow import FlowSpec, ProbabilityMeasure
from .gamma import dirichlet_form, gamma, snapshot_any
from .uniformize import as_operator, expm_action, expm_matrix

FORWARD = "forward"
ADJOINT = "adjoint"


@dataclass(frozen=True, eq=False)
class PropagatorRun:
    """Trajectory of a forward or adjoint run, stored at increasing times.

    ``trajectory[i]`` is the field at ``times[i]``; for a forward run
    ``times[0] == s`` holds the initial datum, for an adjoint run
    ``times[-1] == t`` holds the terminal datum.
    """

    flow: FlowSpec
    s: float
    t: float
    times: np.ndarray
    trajectory: np.ndarray
    direction: str
    substeps: int
    max_truncation: int

    @property
    def result(self) -> np.ndarray:
        """P_{t,s}u for forward runs, P*_{t,s}g for adjoint runs."""
        return self.trajectory[-1] if self.direction == FORWARD else self.trajectory[0]

    def at(self, r: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - r)))
        if abs(self.times[i] - r) > 1e-9 * max(1.0, abs(r)):
            raise KeyError(f"time {r!r} was not stored in this run")
        return self.trajectory[i]

    def to_csv(self, handle=None) -> str:
        """Columns r, state, value (plus column for block runs)."""
        out = handle if handle is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        block = self.trajectory.ndim == 3
        writer.writerow(["r", "state", "column", "value"] if block else ["r", "state", "value"])
        for r, field in zip(self.times, self.trajectory):
            for x in range(field.shape[0]):
                if block:
                    for j in range(field.shape[1]):
                        writer.writerow([repr(float(r)), x, j, repr(float(field[x, j]))])
                else:
                    writer.writerow([repr(float(r)), x, repr(float(field[x]))])
        return out.getvalue() if handle is None else ""


def _step_generator(flow: FlowSpec, a: float, b: float) -> np.ndarray:
    if flow.static:
        return snapshot_any(flow, flow.grid.t_start).L_matrix
    mid = 0.5 * (a + b)
    return (
        snapshot_any(flow, a).L_matrix
        + 4.0 * snapshot_any(flow, mid).L_matrix
        + snapshot_any(flow, b).L_matrix
    ) / 6.0


def _substeps(flow: FlowSpec, k0: int, k1: int, substeps: int, kept=None):
    """Yield (a, b, grid_index_of_b or None) for every substep between grid indices.

    A static flow has a single generator, so exp((b - a) Delta) is exact for any
    b - a and the run jumps straight between the stored grid times.
    """
    grid = flow.grid
    if flow.static and kept is not None:
        stops = sorted(k for k in kept if k0 < k <= k1) or [k1]
        prev = k0
        for k in stops:
            yield grid.time(prev), grid.time(k), k
            prev = k
        return
    for k in range(k0, k1):
        a0, b0 = grid.time(k), grid.time(k + 1)
        for j in range(substeps):
            a = a0 + (b0 - a0) * j / substeps
            b = b0 if j == substeps - 1 else a0 + (b0 - a0) * (j + 1) / substeps
            yield a, b, (k + 1 if j == substeps - 1 else None)


def _ordered(flow: FlowSpec, s: float, t: float) -> tuple[int, int]:
    ks, kt = flow.grid.index_of(s), flow.grid.index_of(t)
    if ks >= kt:
        raise OrderingError(f"propagators need s < t, got s={s!r}, t={t!r}")
    return ks, kt


def _keep_set(flow: FlowSpec, keep, ks: int, kt: int) -> set[int]:
    if keep is None:
        return set(range(ks, kt + 1))
    return {flow.grid.index_of(r) for r in keep} | {ks, kt}


class _StepCache:
    """Per-run cache of step operators; a static flow reuses one operator."""

    def __init__(self, flow: FlowSpec, adjoint: bool):
        self.flow = flow
        self.adjoint = adjoint
        self._static = None

    def __call__(self, a: float, b: float):
        if self.flow.static and self._static is not None:
            return self._static
        A = _step_generator(self.flow, a, b)
        if self.adjoint and not self.flow.static:
            rate = (self.flow.f_at(b) - self.flow.f_at(a)) / (b - a)
            A = A - np.diag(rate)
        op = as_operator(A)
        if self.flow.static:
            self._static = op
        return op


def forward(flow: FlowSpec, s: float, t: float, u, substeps: int = 1, keep=None) -> PropagatorRun:
    """u_r = P_{r,s} u for grid times r in [s, t]."""
    ks, kt = _ordered(flow, s, t)
    kept = _keep_set(flow, keep, ks, kt)
    ops = _StepCache(flow, adjoint=False)
    cur = np.array(u, dtype=float)
    times, traj, trunc = [flow.grid.time(ks)], [cur.copy()], 0
    for a, b, k in _substeps(flow, ks, kt, substeps, kept):
        cur, terms = expm_action(ops(a, b), b - a, cur, return_terms=True)
        trunc = max(trunc, terms)
        if k is not None and k in kept:
            times.append(flow.grid.time(k))
            traj.append(cur.copy())
    return PropagatorRun(flow, float(s), float(t), np.array(times), np.stack(traj), FORWARD, substeps, trunc)


def adjoint(flow: FlowSpec, t: float, s: float, g, substeps: int = 1, keep=None) -> PropagatorRun:
    """g_r = P*_{t,r} g for grid times r in [s, t], integrated backwards."""
    ks, kt = _ordered(flow, s, t)
    kept = _keep_set(flow, keep, ks, kt)
    ops = _StepCache(flow, adjoint=True)
    cur = np.array(g, dtype=float)
    times, traj, trunc = [flow.grid.time(kt)], [cur.copy()], 0
    steps = list(_substeps(flow, ks, kt, substeps, kept))
    for a, b, _ in reversed(steps):
        cur, terms = expm_action(ops(a, b), b - a, cur, return_terms=True)
        trunc = max(trunc, terms)
        k = flow.grid.index_of(a) if flow.grid.contains(a) else None
        if k is not None and k in kept:
            times.append(flow.grid.time(k))
            traj.append(cur.copy())
    return PropagatorRun(
        flow, float(s), float(t), np.array(times[::-1]), np.stack(traj[::-1]), ADJOINT, substeps, trunc
    )


def propagator_matrices(flow: FlowSpec, s: float, targets, substeps: int = 1) -> dict[float, np.ndarray]:
    """Dense matrices P_{t,s} for several end times t > s, from one block run."""
    targets = sorted(set(float(t) for t in targets))
    if flow.static:
        # one generator: scaling and squaring, each matrix independent of the other targets
        L = snapshot_any(flow, flow.grid.t_start).L_matrix
        return {t: expm_matrix(L, t - s) for t in targets if _ordered(flow, s, t)}
    run = forward(flow, s, targets[-1], np.eye(flow.n), substeps=substeps, keep=targets)
    return {t: run.at(t) for t in targets}


def adjoint_matrices(flow: FlowSpec, t: float, starts, substeps: int = 1) -> dict[float, np.ndarray]:
    """Dense matrices P*_{t,s} for several start times s < t, from one block run."""
    starts = sorted(set(float(s) for s in starts))
    if flow.static:
        # f does not move, so the adjoint generator is Delta itself
        L = snapshot_any(flow, flow.grid.t_start).L_matrix
        return {s: expm_matrix(L, t - s) for s in starts if _ordered(flow, s, t)}
    run = adjoint(flow, t, starts[0], np.eye(flow.n), substeps=substeps, keep=starts)
    return {s: run.at(s) for s in starts}


def duality_check(flow: FlowSpec, s: float, t: float, h, g, substeps: int = 1) -> float:
    """|int P_{t,s}h g dm_t - int h P*_{t,s}g dm_s|."""
    ph = forward(flow, s, t, h, substeps=substeps, keep=()).result
    pg = adjoint(flow, t, s, g, substeps=substeps, keep=()).result
    lhs = float(np.sum(ph * np.asarray(g, float) * flow.weights_at(t)))
    rhs = float(np.sum(np.asarray(h, float) * pg * flow.weights_at(s)))
    return abs(lhs - rhs)


def observed_orders(values, factor: float = 2.0) -> list[float]:
    """log_factor of successive error ratios."""
    out = []
    for a, b in zip(values, values[1:]):
        out.append(math.log(a / b, factor) if a > 0 and b > 0 else math.inf)
    return out


def duality_refinement(flow: FlowSpec, s: float, t: float, h, g, levels=(1, 2, 4)) -> dict:
    """Duality defect on successively refined grids and the observed orders."""
    defects = [duality_check(flow.refined(k) if k > 1 else flow, s, t, h, g) for k in levels]
    return {"levels": tuple(levels), "defects": defects, "orders": observed_orders(defects)}


def dual_on_measures(flow: FlowSpec, t: float, s: float, mu, substeps: int = 1) -> ProbabilityMeasure:
    """hat P_{t,s} mu = (P*_{t,s}(d mu / d m_t)) m_s.

    The returned measure is renormalized; the integrator's mass defect before
    renormalization is kept in ``mass_defect``.
    """
    weights = np.asarray(getattr(mu, "weights", mu), dtype=float)
    density = weights / flow.weights_at(t)
    v = adjoint(flow, t, s, density, substeps=substeps, keep=()).result
    out = np.clip(v, 0.0, None) * flow.weights_at(s)
    return ProbabilityMeasure.normalized(out, mass_defect=abs(out.sum() - weights.sum()))


@dataclass(frozen=True)
class RegularityReport:
    C_min: float
    lhs: float
    energy_drop: float
    bound: float
    violated: bool


def regularity_report(run: PropagatorRun) -> RegularityReport:
    """Smallest C with int int |Delta u_r|^2 dm_r dr <= C (E_s(u_s) - E_t(u_t)).

    Both sides are evaluated by trapezoidal quadrature over the stored times;
    violation means no admissible C at most exp(10 L (t - s)).
    """
    if run.direction != FORWARD or run.trajectory.ndim != 2:
        raise ValueError("regularity needs a forward run of a single field")
    flow = run.flow
    lap_sq = []
    for r, u in zip(run.times, run.trajectory):
        snap = snapshot_any(flow, r)
        lap_sq.append(float(snap.integrate(snap.laplacian(u) ** 2)))
    lhs = float(trapezoid(lap_sq, run.times))
    e0 = float(dirichlet_form(snapshot_any(flow, run.times[0]), run.trajectory[0]))
    e1 = float(dirichlet_form(snapshot_any(flow, run.times[-1]), run.trajectory[-1]))
    drop = e0 - e1
    # absolute scale so a constant datum (e0 = 0) reads as zero, not as rounding noise
    snap0 = snapshot_any(flow, run.times[0])
    lam = float(np.abs(np.diag(snap0.L_matrix)).max())
    u_inf = float(np.abs(run.trajectory[0]).max())
    span = run.times[-1] - run.times[0]
    ref = u_inf**2 * lam * float(snap0.weights.sum()) * max(1.0, lam * span)
    scale = max(abs(e0), abs(lhs), ref, 1e-300)
    if lhs <= 1e-14 * scale and abs(drop) <= 1e-14 * scale:
        C = 0.0
    elif drop > 0:
        C = lhs / drop
    else:
        C = math.inf
    bound = math.exp(10.0 * min(flow.lipschitz, 1e300) * (run.times[-1] - run.times[0]))
    return RegularityReport(C_min=C, lhs=lhs, energy_drop=drop, bound=bound, violated=C > bound)


@dataclass(frozen=True)
class VarianceIdentity:
    lhs: float
    rhs: float
    defect: float
    relative: float


def variance_identity(flow: FlowSpec, s: float, t: float, u, g) -> VarianceIdentity:
    """Both sides of

    int g ((P_{t,s}u)^2 - P_{t,s}(u^2)) dm_t
        = -2 int_s^t int P*_{t,r}g Gamma_r(P_{r,s}u) dm_r dr,

    the time integral by the trapezoidal rule on the grid.
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    fwd = forward(flow, s, t, np.column_stack([u, u * u]))
    adj = adjoint(flow, t, s, g)
    pu, pu2 = fwd.result[:, 0], fwd.result[:, 1]
    lhs = float(np.sum(g * (pu**2 - pu2) * flow.weights_at(t)))
    integrand = []
    for r, ur, gr in zip(fwd.times, fwd.trajectory[:, :, 0], adj.trajectory):
        snap = snapshot_any(flow, r)
        integrand.append(float(snap.integrate(gr * gamma(snap, ur))))
    rhs = -2.0 * float(trapezoid(integrand, fwd.times))
    defect = abs(lhs - rhs)
    return VarianceIdentity(lhs, rhs, defect, defect / max(abs(lhs), abs(rhs), 1e-300))


def lp_norm(weights, u, p: float) -> float:
    u = np.abs(np.asarray(u, dtype=float))
    if math.isinf(p):
        return float(u.max())
    return float(np.sum(weights * u**p) ** (1.0 / p))


def lp_bound(flow: FlowSpec, s: float, t: float, u, p: float) -> tuple[float, float]:
    """(||P_{t,s}u||_{L^p(m_t)}, e^{L(t-s)/p} ||u||_{L^p(m_s)})."""
    pu = forward(flow, s, t, u, keep=()).result
    factor = 1.0 if math.isinf(p) else math.exp(flow.lipschitz * (t - s) / p)
    return lp_norm(flow.weights_at(t), pu, p), factor * lp_norm(flow.weights_at(s), u, p)


def maximum_principle_defect(flow: FlowSpec, s: float, t: float, u) -> float:
    """How far P_{t,s}u leaves [min u, max u] (0 when the principle holds)."""
    u = np.asarray(u, dtype=float)
    pu = forward(flow, s, t, u, keep=()).result
    return float(max(np.max(pu) - np.max(u), np.min(u) - np.min(pu), 0.0))

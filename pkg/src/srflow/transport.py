"""Wasserstein distances under d_t, Hopf-Lax semigroup, Boltzmann entropy.

Couplings are exact optima of the transportation LP, restricted to the
supports of the two marginals: network simplex (POT) by default, HiGHS dual
simplex on request or when the network simplex does not report optimality.
Entropic regularization is available only as an explicitly requested path
for large spaces.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import MarginalError, OrderingError
from .flow import FlowSpec, ProbabilityMeasure
from .propagator import dual_on_measures
from .report import CheckReport

# POT probes every installed array backend on import; only numpy is needed here
for _backend in ("TENSORFLOW", "JAX", "PYTORCH", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

_SUPPORT_EPS = 0.0
SINKHORN_MIN_N = 200


@dataclass(frozen=True, eq=False)
class TransportPlan:
    coupling: np.ndarray
    cost: float
    mu: ProbabilityMeasure
    nu: ProbabilityMeasure
    p: int
    method: str = "lp"

    @property
    def distance(self) -> float:
        return max(self.cost, 0.0) ** (1.0 / self.p)

    @property
    def marginal_defect(self) -> float:
        return float(
            max(
                np.abs(self.coupling.sum(axis=1) - self.mu.weights).max(),
                np.abs(self.coupling.sum(axis=0) - self.nu.weights).max(),
            )
        )

    def to_csv(self, handle=None) -> str:
        out = handle if handle is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        for row in self.coupling:
            writer.writerow(["%.17g" % v for v in row])
        return out.getvalue() if handle is None else ""


def as_probability(mu, n: int) -> ProbabilityMeasure:
    if isinstance(mu, ProbabilityMeasure):
        w = mu.weights
    else:
        w = np.asarray(getattr(mu, "weights", mu), dtype=float)
    if w.shape != (n,):
        raise MarginalError(f"measure has shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise MarginalError("measure weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-10:
        raise MarginalError(f"measure has total mass {w.sum()!r}, expected 1")
    return mu if isinstance(mu, ProbabilityMeasure) else ProbabilityMeasure.normalized(w)


def _polish(P: np.ndarray, a: np.ndarray, b: np.ndarray, sweeps: int = 4) -> np.ndarray:
    """Remove solver residue: clip negatives, then alternate marginal scalings."""
    P = np.clip(P, 0.0, None)
    for _ in range(sweeps):
        rs = P.sum(axis=1)
        P = P * np.divide(a, rs, out=np.zeros_like(a), where=rs > 0)[:, None]
        cs = P.sum(axis=0)
        P = P * np.divide(b, cs, out=np.zeros_like(b), where=cs > 0)[None, :]
    return P


def _network_simplex(C: np.ndarray, a: np.ndarray, b: np.ndarray):
    P, log = ot.emd(a, b, C, numItermax=10**7, log=True)
    return P if log.get("result_code") == 1 else None


def _highs(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ni, nj = C.shape
    rows = sp.kron(sp.identity(ni), np.ones((1, nj)), format="csr")
    cols = sp.kron(np.ones((1, ni)), sp.identity(nj), format="csr")
    A_eq = sp.vstack([rows, cols[:-1]]).tocsr()  # one column constraint is redundant
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(
        C.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return res.x.reshape(ni, nj)


def transport_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray, solver: str = "simplex") -> np.ndarray:
    """Optimal coupling of the transportation LP min <C, P> over couplings of (a, b)."""
    I = np.nonzero(a > _SUPPORT_EPS)[0]
    J = np.nonzero(b > _SUPPORT_EPS)[0]
    ni, nj = I.size, J.size
    P = np.zeros((a.size, b.size))
    if ni == 1 or nj == 1:
        P[np.ix_(I, J)] = np.outer(a[I], b[J]) / (a[I].sum() if nj == 1 else b[J].sum())
        return P
    C = np.ascontiguousarray(cost[np.ix_(I, J)])
    ai, bj = a[I], b[J] * (a[I].sum() / b[J].sum())
    X = _network_simplex(C, ai, bj) if solver == "simplex" else None
    if X is None:
        X = _highs(C, ai, bj)
    P[np.ix_(I, J)] = _polish(X, a[I], b[J])
    return P


def sinkhorn(cost: np.ndarray, a: np.ndarray, b: np.ndarray, eps: float = 1e-3, iters: int = 5000) -> np.ndarray:
    """Log-domain entropic coupling; biased, for exploration on large spaces only."""
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    K = -cost / eps
    g = np.zeros_like(b)
    for _ in range(iters):
        f = la - logsumexp(K + g[None, :], axis=1)
        g_new = lb - logsumexp(K + f[:, None], axis=0)
        if np.max(np.abs(g_new - g)) < 1e-12:
            g = g_new
            break
        g = g_new
    return np.exp(K + f[:, None] + g[None, :])


def wasserstein(flow: FlowSpec, t: float, mu, nu, p: int = 2, method: str = "lp") -> TransportPlan:
    """Optimal coupling for cost d_t^p; ``plan.distance`` is W_t."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    flow.grid.index_of(t)
    mu = as_probability(mu, flow.n)
    nu = as_probability(nu, flow.n)
    cost = np.asarray(flow.d_at(t)) ** p
    if method == "sinkhorn":
        if flow.n <= SINKHORN_MIN_N:
            raise ValueError(f"entropic path is reserved for n > {SINKHORN_MIN_N}")
        P = sinkhorn(cost, mu.weights, nu.weights)
    elif method in ("lp", "highs"):
        P = transport_lp(cost, mu.weights, nu.weights, "simplex" if method == "lp" else "highs")
    else:
        raise ValueError(f"unknown method {method!r}")
    return TransportPlan(P, float(np.sum(P * cost)), mu, nu, p, method)


def wasserstein_batch(flow: FlowSpec, triples, p: int = 2, jobs: int = 1) -> list[TransportPlan]:
    """Solve independent (t, mu, nu) problems; results keep the input order."""
    triples = list(triples)
    if jobs <= 1:
        return [wasserstein(flow, t, mu, nu, p) for t, mu, nu in triples]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda q: wasserstein(flow, q[0], q[1], q[2], p), triples))


def hopf_lax(flow: FlowSpec, t: float, r: float, phi) -> np.ndarray:
    """Q_r phi(x) = min_y [phi(y) + d_t(x, y)^2 / (2 r)]."""
    if r <= 0:
        raise ValueError("Hopf-Lax time must be positive")
    phi = np.asarray(phi, dtype=float)
    d = np.asarray(flow.d_at(t))
    return np.min(phi[None, :] + d**2 / (2.0 * r), axis=1)


def entropy(flow: FlowSpec, t: float, mu) -> float:
    """S_t(mu) = sum mu log(mu / m_t) with 0 log 0 = 0."""
    w = np.asarray(getattr(mu, "weights", mu), dtype=float)
    m = flow.weights_at(t)
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos] / m[pos])))


def interpolation_entropy(flow: FlowSpec, t: float, mu, nu, n_points: int = 11) -> np.ndarray:
    """Entropy along the mixture path (1 - theta) mu + theta nu; no verdict attached."""
    mu = as_probability(mu, flow.n).weights
    nu = as_probability(nu, flow.n).weights
    thetas = np.linspace(0.0, 1.0, n_points)
    return np.array([[th, entropy(flow, t, (1 - th) * mu + th * nu)] for th in thetas])


def check_E2(flow: FlowSpec, s: float, t: float, mu, nu, p: int = 2, tol: float = 1e-9,
             informational: bool = False) -> CheckReport:
    """margin = W_t(mu, nu) - W_s(hat P_{t,s} mu, hat P_{t,s} nu)."""
    if s >= t:
        raise OrderingError("E2 needs s < t")
    mu = as_probability(mu, flow.n)
    nu = as_probability(nu, flow.n)
    w_t = wasserstein(flow, t, mu, nu, p).distance
    pmu = dual_on_measures(flow, t, s, mu)
    pnu = dual_on_measures(flow, t, s, nu)
    w_s = wasserstein(flow, s, pmu, pnu, p).distance
    return CheckReport(
        inequality="E2" if p == 2 else f"E2[W{p}]",
        margin=float(w_t - w_s),
        witness={"s": float(s), "t": float(t)},
        tol=tol,
        grid=flow.grid.describe(),
        informational=informational,
        details={"W_t": w_t, "W_s": w_s, "p": p,
                 "mass_defect": max(pmu.mass_defect, pnu.mass_defect)},
    )

"""Frozen-time Gamma calculus.

For a snapshot at time t the Laplacian is

    Delta_t u(x) = (1/m_t(x)) sum_y c_t(x,y) (u(y) - u(x)),

the square field is Gamma_t(u,v)(x) = (1/(2 m_t(x))) sum_y c_t(x,y) du dv and
the Dirichlet form is its m_t-integral.  All field arguments may also be
``(n, k)`` blocks, in which case every column is treated independently.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .flow import FlowSpec, Measure
from .uniformize import as_operator, expm_action


def generator_matrix(c: np.ndarray, m: np.ndarray) -> np.ndarray:
    c = np.array(c, dtype=float)
    np.fill_diagonal(c, 0.0)
    L = c - np.diag(c.sum(axis=1))
    return L / np.asarray(m, dtype=float)[:, None]


@dataclass(frozen=True, eq=False)
class GeneratorSnapshot:
    """Delta_t and m_t frozen at one time."""

    t: float
    conductance: np.ndarray
    measure: Measure
    L_matrix: np.ndarray

    @classmethod
    def from_conductance(cls, c, m, t: float = 0.0) -> "GeneratorSnapshot":
        c = np.array(c, dtype=float)
        np.fill_diagonal(c, 0.0)
        m = Measure(np.asarray(m, dtype=float))
        return cls(t=float(t), conductance=c, measure=m, L_matrix=generator_matrix(c, m.weights))

    @property
    def n(self) -> int:
        return self.L_matrix.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.measure.weights

    @functools.cached_property
    def operator(self):
        """L_matrix in the cheapest format for repeated products."""
        return as_operator(self.L_matrix)

    @functools.cached_property
    def _edges(self):
        ei, ej = np.nonzero(self.conductance)
        w = self.conductance[ei, ej]
        collect = sp.csr_matrix((w, (ei, np.arange(ei.size))), shape=(self.n, ei.size))
        return ei, ej, w, collect

    def laplacian(self, u) -> np.ndarray:
        return self.operator @ np.asarray(u, dtype=float)

    def integrate(self, u) -> np.ndarray:
        """m_t-integral of a field (or of each column of a block)."""
        return self.weights @ np.asarray(u, dtype=float)

    def scaled(self, factor: float) -> "GeneratorSnapshot":
        return GeneratorSnapshot.from_conductance(self.conductance * factor, self.weights, self.t)


def snapshot(flow: FlowSpec, t: float) -> GeneratorSnapshot:
    """Frozen generator at a grid time."""
    flow.grid.index_of(t)
    return snapshot_any(flow, t)


def snapshot_any(flow: FlowSpec, t: float) -> GeneratorSnapshot:
    """Frozen generator at any time, memoized per flow."""
    build = flow._cache.get("snap")
    if build is None:
        build = functools.lru_cache(maxsize=128)(
            lambda t: GeneratorSnapshot.from_conductance(flow.c_at(t), flow.weights_at(t), t)
        )
        flow._cache["snap"] = build
    return build(float(t))


def dirichlet_form(snap: GeneratorSnapshot, u, v=None):
    """E_t(u, v) = 1/2 sum_{x,y} c_t(x,y) (u(x)-u(y)) (v(x)-v(y))."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    ei, ej, w, _ = snap._edges
    du = u[ej] - u[ei]
    dv = v[ej] - v[ei]
    return 0.5 * np.tensordot(w, du * dv, axes=(0, 0))


def gamma(snap: GeneratorSnapshot, u, v=None) -> np.ndarray:
    """Square field Gamma_t(u, v); Gamma_t(u) when ``v`` is omitted."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    ei, ej, _, collect = snap._edges
    prod = (u[ej] - u[ei]) * (v[ej] - v[ei])
    out = collect @ prod
    m = snap.weights if out.ndim == 1 else snap.weights[:, None]
    return out / (2.0 * m)


@dataclass(frozen=True)
class Gamma2Evaluation:
    value: float
    half_gamma_lap_g: float
    lap_sq_g: float
    gamma_ug_lap_u: float


def gamma2_form(snap: GeneratorSnapshot, u, g) -> Gamma2Evaluation:
    """Distribution-valued Gamma_2 of ``u`` tested against ``g``:

    int [ 1/2 Gamma(u) Delta g + (Delta u)^2 g + Gamma(u, g) Delta u ] dm_t
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    lu = snap.laplacian(u)
    a = 0.5 * float(snap.integrate(gamma(snap, u) * snap.laplacian(g)))
    b = float(snap.integrate(lu**2 * g))
    c = float(snap.integrate(gamma(snap, u, g) * lu))
    return Gamma2Evaluation(value=a + b + c, half_gamma_lap_g=a, lap_sq_g=b, gamma_ug_lap_u=c)


def gamma2(snap: GeneratorSnapshot, u) -> np.ndarray:
    """Pointwise Gamma_2(u) = 1/2 Delta Gamma(u) - Gamma(u, Delta u)."""
    u = np.asarray(u, dtype=float)
    return 0.5 * snap.laplacian(gamma(snap, u)) - gamma(snap, u, snap.laplacian(u))


@dataclass(frozen=True)
class GammaRate:
    """Finite-difference time derivative of Gamma_t(u) with u held fixed."""

    values: np.ndarray
    one_sided: bool
    step: float


def _gamma_difference(flow: FlowSpec, lo: float, hi: float, u) -> np.ndarray:
    return (gamma(snapshot_any(flow, hi), u) - gamma(snapshot_any(flow, lo), u)) / (hi - lo)


def dt_gamma(flow: FlowSpec, t: float, u) -> GammaRate:
    """Symmetric difference quotient (Gamma_{t+dt} - Gamma_{t-dt})(u) / (2 dt).

    At the ends of the grid a one-sided quotient is returned and flagged.
    """
    k = flow.grid.index_of(t)
    dt = flow.grid.dt
    if flow.static:
        return GammaRate(np.zeros_like(np.asarray(u, dtype=float)), False, dt)
    if 0 < k < flow.grid.n_steps:
        return GammaRate(_gamma_difference(flow, t - dt, t + dt, u), False, dt)
    lo, hi = (t, t + dt) if k == 0 else (t - dt, t)
    return GammaRate(_gamma_difference(flow, lo, hi, u), True, dt)


def dt_gamma_extrapolated(flow: FlowSpec, t: float, u) -> np.ndarray:
    """Richardson combination (4 D(dt/2) - D(dt)) / 3 of central quotients, O(dt^4).

    Uses off-grid snapshots at t +- dt/2; only valid at interior grid times.
    """
    k = flow.grid.index_of(t)
    if flow.static:
        return np.zeros_like(np.asarray(u, dtype=float))
    if not 0 < k < flow.grid.n_steps:
        raise ValueError("extrapolated rate needs an interior grid time")
    dt = flow.grid.dt
    coarse = _gamma_difference(flow, t - dt, t + dt, u)
    fine = _gamma_difference(flow, t - dt / 2, t + dt / 2, u)
    return (4.0 * fine - coarse) / 3.0


def dt_gamma_refinement(flow: FlowSpec, t: float, u) -> dict:
    """Central quotients at dt, dt/2, dt/4 and the observed convergence ratio.

    For a second-order quotient the ratio of successive corrections is ~4.
    """
    flow.grid.index_of(t)
    dt = flow.grid.dt
    quots = [_gamma_difference(flow, t - h, t + h, u) for h in (dt, dt / 2, dt / 4)]
    d1 = float(np.max(np.abs(quots[0] - quots[1])))
    d2 = float(np.max(np.abs(quots[1] - quots[2])))
    ratio = d1 / d2 if d2 > 0 else float("inf")
    return {"quotients": quots, "corrections": (d1, d2), "ratio": ratio}


def frozen_semigroup(snap: GeneratorSnapshot, r: float, u) -> np.ndarray:
    """Static heat semigroup exp(r Delta_t) u by uniformization."""
    if r < 0:
        raise ValueError("semigroup time must be nonnegative")
    return expm_action(snap.operator, r, np.asarray(u, dtype=float))

"""Bakry-Emery curvature of a frozen generator from local quadratic forms.

At a state x both Gamma(u)(x) and Gamma_2(u)(x) are quadratic forms in the
values of u on the 2-ball B2(x).  The local curvature is

    K(x) = sup { K : Q2 - K Q1 >= 0 on R^{B2(x)} },

found as a generalized eigenvalue after eliminating the kernel of Q1 by a
Schur complement.  The curvature of the snapshot is the minimum over x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from ..errors import StructuralError
from ..gamma import GeneratorSnapshot

_RANK_TOL = 1e-12


def _square_field_matrix(c: np.ndarray, m: np.ndarray, y: int) -> np.ndarray:
    """M_y with Gamma(u)(y) = u^T M_y u."""
    n = c.shape[0]
    M = np.zeros((n, n))
    for z in np.nonzero(c[y])[0]:
        w = c[y, z] / (2.0 * m[y])
        M[z, z] += w
        M[y, y] += w
        M[y, z] -= w
        M[z, y] -= w
    return M


def local_forms(snap: GeneratorSnapshot, x: int):
    """(J, Q1, Q2): the 2-ball of x and Gamma, Gamma_2 at x restricted to it."""
    c, m, L = snap.conductance, snap.weights, snap.L_matrix
    nbrs = np.nonzero(c[x])[0]
    if nbrs.size == 0:
        raise StructuralError(f"state {x} is isolated")
    ball1 = np.union1d([x], nbrs)
    J = np.union1d(ball1, np.nonzero(c[ball1].sum(axis=0))[0])
    # every form involved is supported on J, so work with the local block
    cJ, mJ, LJ = c[np.ix_(J, J)], m[J], L[np.ix_(J, J)]
    pos = {int(j): i for i, j in enumerate(J)}
    ix = pos[x]
    Mx = _square_field_matrix(cJ, mJ, ix)
    Q2 = 0.5 * LJ[ix, ix] * Mx
    for y in nbrs:
        iy = pos[int(y)]
        Q2 += 0.5 * LJ[ix, iy] * _square_field_matrix(cJ, mJ, iy)
    MxL = Mx @ LJ
    Q2 -= 0.5 * (MxL + MxL.T)
    return J, Mx, Q2


def local_curvature(Q1: np.ndarray, Q2: np.ndarray) -> float:
    """sup{K : Q2 - K Q1 psd}, with Q1 psd (possibly singular)."""
    w, V = np.linalg.eigh(0.5 * (Q1 + Q1.T))
    scale = max(float(np.abs(w).max()), 1e-300)
    rng = w > _RANK_TOL * scale
    B, N = V[:, rng], V[:, ~rng]
    A = B.T @ Q2 @ B
    if N.shape[1]:
        Q_nn = N.T @ Q2 @ N
        Q_vn = B.T @ Q2 @ N
        qs = max(float(np.abs(Q2).max()), 1e-300)
        ev = np.linalg.eigvalsh(0.5 * (Q_nn + Q_nn.T))
        if ev.min() < -1e-10 * qs:
            return -math.inf
        pinv = np.linalg.pinv(Q_nn, rcond=1e-10, hermitian=True)
        # off-diagonal block must lie in the range of Q_nn
        resid = Q_vn - Q_vn @ pinv @ Q_nn
        if np.abs(resid).max() > 1e-8 * qs:
            return -math.inf
        A = A - Q_vn @ pinv @ Q_vn.T
    Q1_vv = np.diag(w[rng])
    vals = la.eigh(0.5 * (A + A.T), Q1_vv, eigvals_only=True)
    return float(vals.min())


@dataclass(frozen=True)
class CurvatureProfile:
    values: np.ndarray  # K(x) per state
    t: float

    @property
    def K(self) -> float:
        return float(self.values.min())

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.values))


def curvature_profile(snap: GeneratorSnapshot) -> CurvatureProfile:
    vals = np.array([local_curvature(*local_forms(snap, x)[1:]) for x in range(snap.n)])
    return CurvatureProfile(vals, snap.t)


def estimate_curvature(snap: GeneratorSnapshot) -> float:
    """min over states of the local Bakry-Emery curvature."""
    return curvature_profile(snap).K

"""Static forms of the local inequalities with curvature-dependent constants.

For a frozen space with curvature bound K and heat semigroup P_r = exp(r Delta):

    (iia)  P(u^2) - (Pu)^2       <= c1 P(Gamma u)
    (iib)  P(u^2) - (Pu)^2       >= c2 Gamma(Pu)
    (iiia) P(u log u) - Pu log Pu <= c1/2 P(Gamma u / u)
    (iiib) P(u log u) - Pu log Pu >= c2/2 Gamma(Pu) / Pu
    (iv)   (Pu)^a(y) <= P(u^a)(x) exp(a d^2 / (2 (a-1) c1))
    (v)    P(log u)(x) <= log Pu(y) + d^2 / (2 c1)

with c1 = (1 - e^{-2Kr})/K and c2 = (e^{2Kr} - 1)/K (both 2r at K = 0).
"""

from __future__ import annotations

import math

import numpy as np

from ..flow import FlowSpec
from ..gamma import frozen_semigroup, gamma, snapshot_any
from ..report import CheckReport
from .checks import _block, clamp, default_tol, is_informational

VARIANTS = ("iia", "iib", "iiia", "iiib", "iv", "v")
LOG_VARIANTS = ("iiia", "iiib", "iv", "v")


def c1(K: float, r: float) -> float:
    """(1 - exp(-2Kr)) / K, continuous at K = 0."""
    return 2.0 * r if K == 0 else -math.expm1(-2.0 * K * r) / K


def c2(K: float, r: float) -> float:
    """(exp(2Kr) - 1) / K, continuous at K = 0."""
    return 2.0 * r if K == 0 else math.expm1(2.0 * K * r) / K


def static_margins(P: np.ndarray, snap, d: np.ndarray, K: float, r: float, U, variant: str,
                   alpha: float = 2.0, harnack: str = "c1") -> np.ndarray:
    """Margin array, (n, k) for the pointwise variants and (n, n, k) for (iv), (v).

    The Harnack forms (iv), (v) divide the cost by c1(K, r) by default.
    harnack="c2" uses c2(K, r) instead (the dimension-free constant for a lower bound K),
    which is weaker than c1 when K < 0 and stronger when K > 0.
    """
    if harnack not in ("c1", "c2"):
        raise ValueError(f"unknown harnack constant {harnack!r}")
    a, b = c1(K, r), c2(K, r)
    h = a if harnack == "c1" else b
    if variant in ("iia", "iib"):
        PU = P @ U
        var = P @ (U * U) - PU * PU
        if variant == "iia":
            return a * (P @ gamma(snap, U)) - var
        return var - b * gamma(snap, PU)
    V, _ = clamp(U)
    PV = P @ V
    if variant in ("iiia", "iiib"):
        ent = P @ (V * np.log(V)) - PV * np.log(PV)
        if variant == "iiia":
            return 0.5 * a * (P @ (gamma(snap, V) / V)) - ent
        return ent - 0.5 * b * gamma(snap, PV) / PV
    if variant == "iv":
        cost = alpha * d**2 / (2.0 * (alpha - 1.0) * h)
        return np.log(P @ V**alpha)[:, None, :] + cost[:, :, None] - alpha * np.log(PV)[None, :, :]
    if variant == "v":
        cost = d**2 / (2.0 * h)
        return np.log(PV)[None, :, :] + cost[:, :, None] - (P @ np.log(V))[:, None, :]
    raise ValueError(f"unknown static variant {variant!r}")


def check_static(flow: FlowSpec, t: float, K: float, duration: float, u, variant: str,
                 alpha: float = 2.0, tol=None, uid="u", P=None,
                 harnack: str = "c1") -> CheckReport:
    """Static inequality ``variant`` for the space frozen at time t."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    snap = snapshot_any(flow, t)
    if P is None:
        P = frozen_semigroup(snap, duration, np.eye(flow.n))
    U, single = _block(u)
    ids = [uid] if single else [f"{uid}{j}" for j in range(U.shape[1])]
    arr = static_margins(P, snap, np.asarray(flow.d_at(t)), K, duration, U, variant, alpha, harnack)
    idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
    witness = {"t": float(t), "duration": float(duration), "x": int(idx[0])}
    if arr.ndim == 3:
        witness["y"] = int(idx[1])
    witness["u"] = ids[idx[-1]]
    name = f"static-{variant}"
    return CheckReport(
        inequality=name,
        margin=float(arr[idx]),
        witness=witness,
        tol=default_tol(flow) if tol is None else tol,
        grid=f"frozen at t={t:g}",
        informational=variant in LOG_VARIANTS and is_informational(flow, "E9"),
        details={"K": K, "c1": c1(K, duration), "c2": c2(K, duration)},
    )

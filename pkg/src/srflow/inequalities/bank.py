"""Seeded banks of test functions standing in for "for all u"."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..flow import CIRCLE, FlowSpec, circle_points
from ..gamma import snapshot_any

POSITIVE_RANGE = (0.2, 1.2)


def to_positive(u: np.ndarray, lo: float = POSITIVE_RANGE[0], hi: float = POSITIVE_RANGE[1]) -> np.ndarray:
    """Affine map of u onto [lo, hi]; constants map to 1."""
    u = np.asarray(u, dtype=float)
    span = u.max() - u.min()
    if span <= 1e-14 * max(1.0, np.abs(u).max()):
        return np.ones_like(u)
    return lo + (hi - lo) * (u - u.min()) / span


@dataclass(frozen=True, eq=False)
class TestFunctionBank:
    """Named fields plus their positive variants; deterministic given ``seed``."""

    __test__ = False  # keep pytest from collecting this class

    ids: tuple
    fields: np.ndarray  # (n, k)
    seed: int
    kind: str

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def positive(self) -> np.ndarray:
        return np.column_stack([to_positive(self.fields[:, j]) for j in range(self.size)])

    def nonconstant(self) -> list[int]:
        span = self.fields.max(axis=0) - self.fields.min(axis=0)
        return [j for j in range(self.size) if span[j] > 1e-12]

    def field(self, uid: str, positive: bool = False) -> np.ndarray:
        j = self.ids.index(uid)
        return self.positive[:, j] if positive else self.fields[:, j]

    def subset(self, ids) -> "TestFunctionBank":
        cols = [self.ids.index(i) for i in ids]
        return TestFunctionBank(tuple(ids), self.fields[:, cols], self.seed, self.kind)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "kind": self.kind, "ids": list(self.ids)}


def _graph_fields(flow: FlowSpec, rng, n_random: int, max_indicators: int):
    n = flow.n
    ids, cols = ["const"], [np.ones(n)]
    for x in range(min(n, max_indicators)):
        e = np.zeros(n)
        e[x] = 1.0
        ids.append(f"ind{x}")
        cols.append(e)
    # symmetrized generator at the first grid time: eigenvectors of m^{1/2} L m^{-1/2}
    snap = snapshot_any(flow, flow.grid.t_start)
    sq = np.sqrt(snap.weights)
    S = sq[:, None] * snap.L_matrix / sq[None, :]
    _, vecs = np.linalg.eigh(0.5 * (S + S.T))
    for k in range(1, min(n, 6)):
        v = vecs[:, -1 - k] / sq
        ids.append(f"eig{k}")
        cols.append(v / np.abs(v).max())
    for j in range(n_random):
        ids.append(f"rnd{j}")
        cols.append(rng.uniform(-1.0, 1.0, n))
    return ids, cols


def _circle_fields(flow: FlowSpec, rng, n_random: int):
    x = circle_points(flow)
    ids, cols = ["const"], [np.ones_like(x)]
    for k in (1, 2, 3):
        ids += [f"cos{k}", f"sin{k}"]
        cols += [np.cos(k * x), np.sin(k * x)]
    for j, x0 in enumerate(np.linspace(0, 2 * np.pi, 4, endpoint=False)):
        ids.append(f"bump{j}")
        cols.append(np.exp(2.0 * (np.cos(x - x0) - 1.0)))
    for j in range(n_random):
        a = rng.normal(size=3) / np.arange(1, 4)
        b = rng.normal(size=3) / np.arange(1, 4)
        u = sum(a[k] * np.cos((k + 1) * x) + b[k] * np.sin((k + 1) * x) for k in range(3))
        ids.append(f"trig{j}")
        cols.append(u / np.abs(u).max())
    return ids, cols


def make_bank(flow: FlowSpec, seed: int = 0, n_random: int | None = None,
              max_indicators: int = 8) -> TestFunctionBank:
    """Default bank: constant, indicators/eigenmodes (graphs) or trigonometric modes and
    bumps (circle), plus seeded random fields; always at least 20 non-constant fields."""
    rng = np.random.default_rng(seed)
    if flow.backend == CIRCLE:
        ids, cols = _circle_fields(flow, rng, 12 if n_random is None else n_random)
    else:
        if n_random is None:
            n_random = max(6, 21 - min(flow.n, max_indicators) - min(flow.n - 1, 5))
        ids, cols = _graph_fields(flow, rng, n_random, max_indicators)
    return TestFunctionBank(tuple(ids), np.column_stack(cols), seed, flow.backend)

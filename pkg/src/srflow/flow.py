"""Time-dependent finite metric measure spaces.

A :class:`FlowSpec` bundles a finite state set with a base measure and three
time-dependent paths: the log-density ``f_t`` (so that ``m_t = exp(-f_t) m``),
a symmetric conductance matrix ``c_t`` defining the Dirichlet form, and a
metric ``d_t``.  Paths are callables of time so that propagators can evaluate
them between grid points; all checks are run on the uniform :class:`TimeGrid`.

Two backends are provided: arbitrary weighted graphs (:func:`build_graph`) and
a second-order discretization of a weighted circle (:func:`build_circle1d`).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, floyd_warshall, shortest_path

from .errors import FlowError, GridAlignmentError, ResolutionError, StructuralError
from .report import CheckReport

GRAPH = "graph"
CIRCLE = "circle1d"

Field = np.ndarray
Path = Callable[[float], np.ndarray]

_CACHE_SIZE = 256


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


def as_field(values, n: int | None = None) -> Field:
    """Validate and return a real field (one value per state)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise FlowError(f"a field must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise FlowError(f"field has {arr.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise FlowError("field has non-finite entries")
    return arr


@dataclass(frozen=True)
class StateSpace:
    base_measure: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        m = np.array(self.base_measure, dtype=float)
        if m.ndim != 1 or m.shape[0] < 2:
            raise FlowError("a state space needs at least two states")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise FlowError("base measure must be finite and strictly positive")
        m.flags.writeable = False
        object.__setattr__(self, "base_measure", m)
        labels = tuple(self.labels) if self.labels else tuple(range(m.shape[0]))
        if len(labels) != m.shape[0]:
            raise FlowError("one label per state is required")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.base_measure.shape[0]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start = t_0 < ... < t_{n_steps} = t_end`` inside I = (0, T)."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (0 < self.t_start < self.t_end):
            raise FlowError(f"need 0 < t_start < t_end, got {self.t_start}, {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise FlowError("n_steps must be a positive integer")
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def time(self, k: int) -> float:
        return self.t_start + self.dt * k

    def index_of(self, t: float) -> int:
        k = int(round((t - self.t_start) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.time(k) - t) > 1e-9 * max(1.0, abs(t)):
            raise GridAlignmentError(f"time {t!r} is not on the grid {self.describe()}")
        return k

    def contains(self, t: float) -> bool:
        try:
            self.index_of(t)
        except GridAlignmentError:
            return False
        return True

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps * int(factor))

    def describe(self) -> str:
        return f"[{self.t_start:g}, {self.t_end:g}] with {self.n_steps} steps (dt={self.dt:g})"


@dataclass(frozen=True)
class Measure:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise FlowError("measure weights must be a finite vector")
        if np.any(w < 0):
            raise FlowError("measure weights must be nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class ProbabilityMeasure(Measure):
    mass_defect: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if abs(self.total - 1.0) > 1e-12:
            raise FlowError(f"probability measure has total mass {self.total!r}")

    @classmethod
    def normalized(cls, weights, mass_defect: float = 0.0) -> "ProbabilityMeasure":
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        return cls(w / w.sum(), mass_defect=mass_defect)

    @classmethod
    def delta(cls, n: int, x: int) -> "ProbabilityMeasure":
        w = np.zeros(n)
        w[x] = 1.0
        return cls(w)


@dataclass(frozen=True, eq=False)
class FlowSpec:
    """A time-dependent finite mm-space sampled on a time grid.

    ``logdensity``, ``conductance`` and ``metric`` map a time to arrays of
    shape ``(n,)``, ``(n, n)`` and ``(n, n)``.  They are memoized, and the
    returned arrays are read-only.
    """

    space: StateSpace
    grid: TimeGrid
    logdensity: Path
    conductance: Path
    metric: Path
    backend: str = GRAPH
    lipschitz: float = math.inf
    metric_choice: str = "supplied"
    static: bool = False
    spacing: float | None = None
    name: str = ""
    recipe: Mapping[str, Any] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.backend not in (GRAPH, CIRCLE):
            raise FlowError(f"unknown backend {self.backend!r}")
        for key, fn in (("f", self.logdensity), ("c", self.conductance), ("d", self.metric)):
            self._cache[key] = functools.lru_cache(maxsize=_CACHE_SIZE)(
                lambda t, fn=fn: _readonly(fn(t))
            )

    @property
    def n(self) -> int:
        return self.space.n

    def f_at(self, t: float) -> np.ndarray:
        return self._cache["f"](float(t))

    def c_at(self, t: float) -> np.ndarray:
        return self._cache["c"](float(t))

    def d_at(self, t: float) -> np.ndarray:
        return self._cache["d"](float(t))

    def weights_at(self, t: float) -> np.ndarray:
        """Weights of m_t at an arbitrary time (no grid check)."""
        return np.exp(-self.f_at(t)) * self.space.base_measure

    def with_grid(self, grid: TimeGrid) -> "FlowSpec":
        return replace(self, grid=grid, _cache={})

    def refined(self, factor: int) -> "FlowSpec":
        return self.with_grid(self.grid.refined(factor))

    def with_lipschitz(self, lipschitz: float) -> "FlowSpec":
        return replace(self, lipschitz=float(lipschitz), _cache={})

    @property
    def h(self) -> float:
        """Spatial resolution used for discretization tolerances (0 for graphs)."""
        return float(self.spacing) if self.spacing else 0.0


def measure_at(flow: FlowSpec, t: float) -> Measure:
    """m_t = exp(-f_t) m at a grid time."""
    flow.grid.index_of(t)
    return Measure(flow.weights_at(t))


def _as_path(value, shape: tuple) -> tuple[Path, bool]:
    if callable(value):
        return value, False
    arr = _readonly(value)
    if arr.shape != shape:
        raise FlowError(f"expected an array of shape {shape}, got {arr.shape}")
    return (lambda t, arr=arr: arr), True


def intrinsic_metric(c: np.ndarray) -> np.ndarray:
    """Shortest-path distance with edge lengths c(x, y)^(-1/2)."""
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore"):
        lengths = np.where(c > 0, 1.0 / np.sqrt(np.where(c > 0, c, 1.0)), 0.0)
    np.fill_diagonal(lengths, 0.0)
    return shortest_path(csr_matrix(lengths), method="D", directed=False)


def check_conductance(c: np.ndarray, t: float) -> None:
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n):
        raise StructuralError(f"conductance at t={t:g} is not square")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise StructuralError(f"conductance at t={t:g} has negative or non-finite entries")
    if not np.allclose(c, c.T, rtol=1e-12, atol=1e-14):
        raise StructuralError(f"conductance at t={t:g} is not symmetric")
    off = c.copy()
    np.fill_diagonal(off, 0.0)
    ncomp, _ = connected_components(csr_matrix(off > 0), directed=False)
    if ncomp != 1:
        raise StructuralError(f"conductance graph at t={t:g} has {ncomp} components")


def check_metric(d: np.ndarray, t: float) -> None:
    """Raise :class:`StructuralError` unless ``d`` is a metric."""
    d = np.asarray(d, dtype=float)
    scale = max(1.0, float(np.max(np.abs(d))))
    if not np.all(np.isfinite(d)):
        raise StructuralError(f"d_t at t={t:g} has non-finite entries")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12 * scale):
        raise StructuralError(f"d_t at t={t:g} is not symmetric")
    if np.any(np.abs(np.diag(d)) > 1e-12 * scale):
        raise StructuralError(f"d_t at t={t:g} has nonzero diagonal")
    off = d + np.eye(d.shape[0]) * scale
    if np.any(off <= 0):
        x, y = np.argwhere(off <= 0)[0]
        raise StructuralError(f"d_t at t={t:g} vanishes between distinct states {x} and {y}")
    closure = floyd_warshall(d, directed=False)
    excess = d - closure
    if np.max(excess) > 1e-10 * scale:
        x, z = np.unravel_index(np.argmax(excess), excess.shape)
        y = int(np.argmin(d[x, :] + d[:, z]))
        raise StructuralError(
            f"d_t at t={t:g} violates the triangle inequality on ({x}, {y}, {z}): "
            f"d({x},{z})={d[x, z]:.6g} > d({x},{y})+d({y},{z})={d[x, y] + d[y, z]:.6g}"
        )


def validate_structure(flow: FlowSpec, times=None) -> None:
    """Check conductance symmetry/connectivity and metric axioms at grid times."""
    times = flow.grid.times if times is None else times
    if flow.static:
        times = times[:1]
    for t in times:
        check_conductance(flow.c_at(t), t)
        check_metric(flow.d_at(t), t)


def build_graph(
    measure,
    conductance,
    grid: TimeGrid,
    logdensity=None,
    metric=None,
    lipschitz: float | None = None,
    labels=(),
    name: str = "",
    recipe: Mapping[str, Any] | None = None,
) -> FlowSpec:
    """Weighted-graph backend.

    ``conductance``, ``logdensity`` and ``metric`` are either constant arrays
    or callables of time.  Without a metric the intrinsic one is used
    (shortest paths with edge lengths ``c_t^{-1/2}``).  Without a declared
    Lipschitz constant the smallest admissible one is computed.
    """
    space = StateSpace(np.asarray(measure, dtype=float), labels)
    n = space.n
    c_path, c_static = _as_path(conductance, (n, n))
    if logdensity is None:
        logdensity = np.zeros(n)
    f_path, f_static = _as_path(logdensity, (n,))
    if metric is None:
        d_path = lambda t: intrinsic_metric(c_path(t))  # noqa: E731
        d_static, choice = c_static, "intrinsic"
    else:
        d_path, d_static = _as_path(metric, (n, n))
        choice = "supplied"
    flow = FlowSpec(
        space=space,
        grid=grid,
        logdensity=f_path,
        conductance=c_path,
        metric=d_path,
        backend=GRAPH,
        metric_choice=choice,
        static=c_static and f_static and d_static,
        name=name,
        recipe=recipe,
    )
    validate_structure(flow)
    return _declare_lipschitz(flow, lipschitz)


def _declare_lipschitz(flow: FlowSpec, lipschitz: float | None) -> FlowSpec:
    if lipschitz is not None:
        return flow.with_lipschitz(lipschitz)
    samples = flow.grid.n_steps + 1
    stride = max(1, int(np.ceil(samples * flow.n**2 / 2e5)))
    stride = min(stride, max(1, flow.grid.n_steps // 40))
    rep = validate_a1(flow, time_stride=stride, check_metrics=False)
    ell = ellipticity_report(flow, time_stride=stride)
    needed = max(rep.details["L_prime"], ell.details["L_ellipticity"])
    # subsampled time pairs can miss the steepest slope of a smooth path
    pad = 1.05 if stride > 1 and not flow.static else 1.0 + 1e-9
    return flow.with_lipschitz(needed * pad + 1e-12)


def circle_metric(phi_values, h: float | None = None) -> np.ndarray:
    """Arc-length metric of the circle under the conformal factor exp(phi).

    Segment lengths come from the trapezoidal rule; distances are the
    shorter of the two arcs.
    """
    phi = np.asarray(phi_values, dtype=float)
    n = phi.shape[0]
    h = 2 * np.pi / n if h is None else h
    w = np.exp(phi)
    seg = 0.5 * h * (w + np.roll(w, -1))
    s = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    total = seg.sum()
    diff = np.abs(s[:, None] - s[None, :])
    return np.minimum(diff, total - diff)


def build_circle1d(
    n: int,
    phi: Callable,
    logdensity: Callable,
    grid: TimeGrid,
    lipschitz: float | None = None,
    static: bool = False,
    name: str = "",
    recipe: Mapping[str, Any] | None = None,
) -> FlowSpec:
    """Equispaced discretization of the weighted circle.

    ``phi(t, x)`` is the conformal factor of the metric ``exp(2 phi) dx^2``
    and ``logdensity(t, x)`` the weight, both vectorized in ``x``.  The
    generator is the conservative central-difference discretization of
    ``exp(-2 phi) (u'' - f' u')``: conductances ``exp(-f(x_{i+1/2}))/h``
    between neighbours and measure ``h exp(2 phi - f)``.
    """
    if n < 16:
        raise ResolutionError(f"circle backend needs n >= 16 points, got {n}")
    h = 2 * np.pi / n
    x = h * np.arange(n)
    xm = x + 0.5 * h
    idx = np.arange(n)
    nxt = (idx + 1) % n

    def eff_logdensity(t):
        return np.broadcast_to(logdensity(t, x) - 2 * phi(t, x), (n,))

    def conductance(t):
        w = np.broadcast_to(np.exp(-logdensity(t, xm)) / h, (n,))
        c = np.zeros((n, n))
        c[idx, nxt] = w
        c[nxt, idx] = w
        return c

    def metric(t):
        return circle_metric(np.broadcast_to(phi(t, x), (n,)), h)

    flow = FlowSpec(
        space=StateSpace(np.full(n, h), tuple(range(n))),
        grid=grid,
        logdensity=eff_logdensity,
        conductance=conductance,
        metric=metric,
        backend=CIRCLE,
        metric_choice="arclength",
        static=static,
        spacing=h,
        name=name,
        recipe=recipe,
    )
    return _declare_lipschitz(flow, lipschitz)


def circle_points(flow: FlowSpec) -> np.ndarray:
    if flow.backend != CIRCLE:
        raise FlowError("circle coordinates only exist on the circle backend")
    return flow.h * np.arange(flow.n)


def _sample_times(flow: FlowSpec, time_stride: int) -> np.ndarray:
    times = flow.grid.times
    if flow.static:
        return times[[0, -1]]
    sel = times[::time_stride]
    if sel[-1] != times[-1]:
        sel = np.append(sel, times[-1])
    return sel


def validate_a1(flow: FlowSpec, time_stride: int = 1, check_metrics: bool = True) -> CheckReport:
    """Smallest L' satisfying the log-Lipschitz assumption on all grid pairs.

    Both |f_t(x) - f_s(y)| <= L'(|t-s| + d_t(x,y)) and
    |log(d_t(x,y)/d_s(x,y))| <= L'|t-s| are enforced over every pair of
    sampled grid times and states.  The report passes iff L' <= the declared
    constant.  ``details`` also splits L' into a time part and a space part.
    """
    times = _sample_times(flow, time_stride)
    n = flow.n
    F = np.stack([flow.f_at(t) for t in times])
    D = np.stack([flow.d_at(t) for t in times])
    if check_metrics:
        for t, d in zip(times, D):
            check_metric(d, t)
    off = ~np.eye(n, dtype=bool)
    logD = np.log(D[:, off])

    best_f = (0.0, None)
    best_d = (0.0, None)
    time_f = 0.0
    space_f = 0.0
    for i, t in enumerate(times):
        gap = np.abs(t - times)
        num = np.abs(F[i][None, :, None] - F[:, None, :])  # [s, x, y]
        den = gap[:, None, None] + D[i][None, :, :]
        ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        k = int(np.argmax(ratio))
        if ratio.flat[k] > best_f[0]:
            j, x, y = np.unravel_index(k, ratio.shape)
            best_f = (float(ratio.flat[k]), (float(times[j]), float(t), int(x), int(y)))
        dspace = D[i] + np.eye(n)
        space_f = max(space_f, float(np.max(np.abs(F[i][:, None] - F[i][None, :]) / dspace)))
        others = gap > 0
        if np.any(others):
            time_f = max(time_f, float(np.max(np.abs(F[i] - F[others]) / gap[others, None])))
            rate = np.abs(logD[i] - logD[others]) / gap[others, None]
            k = int(np.argmax(rate))
            if rate.flat[k] > best_d[0]:
                j, p = np.unravel_index(k, rate.shape)
                x, y = np.argwhere(off)[p]
                best_d = (float(rate.flat[k]), (float(times[others][j]), float(t), int(x), int(y)))

    L_prime = max(best_f[0], best_d[0])
    kind, where = ("f", best_f[1]) if best_f[0] >= best_d[0] else ("d", best_d[1])
    witness = {"part": kind}
    if where is not None:
        witness.update(zip(("s", "t", "x", "y"), where))
    tol = 1e-12 * max(1.0, L_prime)
    return CheckReport(
        inequality="A1.a",
        margin=(flow.lipschitz - L_prime) if math.isfinite(flow.lipschitz) else math.inf,
        witness=witness,
        tol=tol,
        grid=flow.grid.describe(),
        details={
            "L_prime": L_prime,
            "L_f": best_f[0],
            "L_d": best_d[0],
            "time_part": max(time_f, best_d[0]),
            "space_part": space_f,
            "declared": flow.lipschitz,
        },
    )


def ellipticity_report(flow: FlowSpec, time_stride: int = 1) -> CheckReport:
    """Uniform ellipticity e^{-2L|t-s|} Gamma_s <= Gamma_t <= e^{2L|t-s|} Gamma_s.

    Gamma_t(u)(x) is a positive combination of c_t(x,y)/m_t(x) over edges, so
    the sharp constant is the largest log-rate of those edge coefficients.
    """
    times = _sample_times(flow, time_stride)
    support = flow.c_at(times[0]) > 0
    np.fill_diagonal(support, False)
    rows, cols = np.nonzero(support)
    logs = []
    for t in times:
        c = flow.c_at(t)
        if np.any(c[rows, cols] <= 0):
            logs = None
            break
        logs.append(np.log(c[rows, cols]) + flow.f_at(t)[rows] - np.log(flow.space.base_measure[rows]))
    if logs is None:
        rate, witness = math.inf, {}
    else:
        logs = np.stack(logs)
        rate, witness = 0.0, {}
        for i, t in enumerate(times):
            gap = np.abs(t - times)
            others = gap > 0
            if not np.any(others):
                continue
            r = np.abs(logs[i] - logs[others]) / (2 * gap[others, None])
            k = int(np.argmax(r))
            if r.flat[k] > rate:
                j, e = np.unravel_index(k, r.shape)
                rate = float(r.flat[k])
                witness = {"s": float(times[others][j]), "t": float(t), "x": int(rows[e]), "y": int(cols[e])}
    return CheckReport(
        inequality="ellipticity",
        margin=(flow.lipschitz - rate) if math.isfinite(flow.lipschitz) else math.inf,
        witness=witness,
        tol=1e-12 * max(1.0, rate),
        grid=flow.grid.describe(),
        details={"L_ellipticity": rate, "declared": flow.lipschitz},
    )

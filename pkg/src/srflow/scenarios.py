"""Named flows with expected verdicts, and their TOML representation.

A scenario is fully described by a recipe (a plain dict, the parsed TOML
file).  ``build_scenario`` is the only constructor; the helper functions
below just write recipes.  Expressions in recipes are evaluated in a
restricted namespace holding ``t``, ``x``, the entries of ``[params]`` and a
handful of numpy functions.
"""

from __future__ import annotations

import ast
import copy
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomlkit

from .errors import DomainError, FlowError, ScenarioError
from .flow import CIRCLE, GRAPH, FlowSpec, TimeGrid, _declare_lipschitz, build_circle1d, build_graph
from .gamma import snapshot_any
from .inequalities.curvature import estimate_curvature

SCHEMA = 1
VERDICTS = ("pass", "fail", "informational")

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
    "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
    ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE,
)


def compile_expr(src: str, params: dict | None = None):
    """Compile ``src`` into f(t, x); only arithmetic, whitelisted calls and known names."""
    if not isinstance(src, str):
        value = float(src)
        return lambda t, x: value + 0.0 * np.asarray(x, dtype=float)
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(f"cannot parse expression {src!r}: {exc.msg}") from None
    params = dict(params or {})
    allowed = set(_FUNCS) | set(_CONSTS) | set(params) | {"t", "x"}
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ScenarioError(f"expression {src!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ScenarioError(f"expression {src!r} uses unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ScenarioError(f"expression {src!r} calls a function that is not allowed")
    code = compile(tree, "<scenario>", "eval")
    base = {"__builtins__": {}, **_FUNCS, **_CONSTS, **params}

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        out = eval(code, base, {"t": float(t), "x": x})  # noqa: S307 - names are whitelisted above
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    return fn


@dataclass(eq=False)
class Scenario:
    name: str
    flow: FlowSpec
    expected: dict
    provenance: str = ""
    recipe: dict = field(default_factory=dict)
    curvature: float | None = None

    @property
    def checks(self) -> dict:
        return dict(self.recipe.get("checks", {}))

    @property
    def bank_seed(self) -> int:
        return int(self.recipe.get("bank", {}).get("seed", 0))

    def graded(self) -> dict:
        return {k: v for k, v in self.expected.items() if v in ("pass", "fail")}


# ---- construction ----

def _params(recipe: dict) -> dict:
    return {k: float(v) for k, v in recipe.get("params", {}).items()}


def _grid(recipe: dict) -> TimeGrid:
    g = recipe.get("grid")
    if not g:
        raise ScenarioError("missing [grid] section")
    try:
        return TimeGrid(float(g["t_start"]), float(g["t_end"]), int(g["n_steps"]))
    except KeyError as exc:
        raise ScenarioError(f"[grid] is missing {exc.args[0]!r}") from None


def _base_flow(recipe: dict, grid: TimeGrid) -> FlowSpec:
    backend = recipe.get("flow", {}).get("backend", GRAPH)
    params = _params(recipe)
    name = recipe.get("name", "")
    if backend == GRAPH:
        g = recipe.get("graph")
        if not g:
            raise ScenarioError("graph backend needs a [graph] section")
        m = np.asarray(g["measure"], dtype=float)
        c0 = np.asarray(g["conductance"], dtype=float)
        idx = np.arange(m.size, dtype=float)
        f = g.get("logdensity")
        if isinstance(f, str):
            fx = compile_expr(f, params)
            f = lambda t: fx(t, idx)  # noqa: E731
        return build_graph(m, c0, grid, logdensity=f, metric=g.get("metric"), name=name)
    if backend == CIRCLE:
        c = recipe.get("circle")
        if not c:
            raise ScenarioError("circle backend needs a [circle] section")
        phi = compile_expr(c.get("phi", "0"), params)
        f = compile_expr(c.get("logdensity", "0"), params)
        return build_circle1d(int(c["n"]), phi, f, grid, static=bool(c.get("static", False)), name=name)
    raise ScenarioError(f"unknown backend {backend!r}")


def reparametrize_flow(base: FlowSpec, K: float, C: float, grid: TimeGrid | None = None) -> FlowSpec:
    """Time-dependent flow with c_t = e^{2K tau(t)} c and d_t = e^{-K tau(t)} d, m fixed,
    where tau(t) = -log(C - 2Kt) / (2K)."""
    if K == 0:
        raise DomainError("reparametrization needs K != 0")
    grid = grid or base.grid
    for t in (grid.t_start, grid.t_end):
        if C - 2 * K * t <= 0:
            raise DomainError(f"window leaves the domain 2Kt < C at t={t:g} (K={K:g}, C={C:g})")
    t0 = base.grid.t_start
    c0 = np.array(base.c_at(t0))
    d0 = np.array(base.d_at(t0))
    f0 = np.array(base.f_at(t0))
    flow = replace(
        base,
        grid=grid,
        logdensity=lambda t: f0,
        conductance=lambda t: c0 / (C - 2 * K * t),
        metric=lambda t: d0 * math.sqrt(C - 2 * K * t),
        static=False,
        lipschitz=math.inf,
        _cache={},
    )
    return _declare_lipschitz(flow, None)


def tau(K: float, C: float, t):
    return -np.log(C - 2 * K * np.asarray(t, dtype=float)) / (2 * K)


def shrink_flow(base: FlowSpec, rate: float) -> FlowSpec:
    """d_t = e^{-rate (t - t0)} d and c_t = e^{2 rate (t - t0)} c with m fixed."""
    t0 = base.grid.t_start
    c0 = np.array(base.c_at(t0))
    d0 = np.array(base.d_at(t0))
    f0 = np.array(base.f_at(t0))
    flow = replace(
        base,
        logdensity=lambda t: f0,
        conductance=lambda t: c0 * math.exp(2 * rate * (t - t0)),
        metric=lambda t: d0 * math.exp(-rate * (t - t0)),
        static=rate == 0,
        lipschitz=math.inf,
        _cache={},
    )
    return _declare_lipschitz(flow, None)


def build_scenario(recipe: dict) -> Scenario:
    """Build the flow a recipe describes and attach its expected verdicts."""
    recipe = copy.deepcopy(dict(recipe))
    if int(recipe.get("schema", SCHEMA)) != SCHEMA:
        raise ScenarioError(f"unsupported schema {recipe.get('schema')!r}")
    name = recipe.get("name")
    if not name:
        raise ScenarioError("scenario needs a name")
    expected = dict(recipe.get("expected", {}))
    for k, v in expected.items():
        if v not in VERDICTS:
            raise ScenarioError(f"expected verdict for {k!r} must be one of {VERDICTS}, got {v!r}")
    grid = _grid(recipe)
    try:
        transform = dict(recipe.get("transform", {}))
        kind = transform.get("kind", "none")
        if kind == "none":
            flow = _base_flow(recipe, grid)
            K = None
        elif kind == "reparametrize":
            base_grid = TimeGrid(1.0, 2.0, 1)
            base = _base_flow(recipe, base_grid)
            K = transform.get("K", "auto")
            K = estimate_curvature(snapshot_any(base, base_grid.t_start)) if K == "auto" else float(K)
            flow = reparametrize_flow(base, K, float(transform.get("C", 1.0)), grid)
        elif kind == "shrink":
            base = _base_flow(recipe, grid)
            K = estimate_curvature(snapshot_any(base, grid.t_start))
            factor = float(transform.get("budget_factor", _params(recipe).get("a", 0.0)))
            flow = shrink_flow(base, factor * K)
            transform["rate"] = factor * K
        else:
            raise ScenarioError(f"unknown transform {kind!r}")
    except (FlowError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ScenarioError, DomainError)):
            raise
        raise ScenarioError(f"scenario {name!r} could not be built: {exc}") from exc
    flow = replace(flow, name=name, recipe=recipe, _cache={})
    if K is None and recipe.get("checks", {}).get("static_K") == "auto":
        K = estimate_curvature(snapshot_any(flow, grid.t_start))
    return Scenario(name, flow, expected, recipe.get("provenance", ""), recipe, K)


# ---- recipe helpers ----

def two_point_recipe(grid=(0.5, 1.5, 200), name="two_point_static") -> dict:
    return {
        "schema": SCHEMA,
        "name": name,
        "provenance": "two states, unit conductance and unit masses; curvature 2",
        "flow": {"backend": GRAPH},
        "grid": {"t_start": grid[0], "t_end": grid[1], "n_steps": grid[2]},
        "graph": {"measure": [1.0, 1.0], "conductance": [[0.0, 1.0], [1.0, 0.0]]},
        "bank": {"seed": 0},
    }


def circle_recipe(a: float, n: int = 64, grid=(0.5, 1.5, 100), name="circle") -> dict:
    return {
        "schema": SCHEMA,
        "name": name,
        "provenance": "weighted circle, f = a cos x, flat metric",
        "flow": {"backend": CIRCLE},
        "params": {"a": a},
        "grid": {"t_start": grid[0], "t_end": grid[1], "n_steps": grid[2]},
        "circle": {"n": n, "phi": "0", "logdensity": "a*cos(x)", "static": True},
        "bank": {"seed": 0},
    }


def static_scenario(recipe: dict) -> Scenario:
    """Constant-in-time scenario; static variants use the estimated curvature."""
    recipe = copy.deepcopy(recipe)
    recipe.setdefault("checks", {})["static_K"] = "auto"
    return build_scenario(recipe)


def reparametrize_K(recipe: dict, C: float = 1.0, K: float | str = "auto", grid=None) -> Scenario:
    recipe = copy.deepcopy(recipe)
    recipe["transform"] = {"kind": "reparametrize", "K": K, "C": C}
    if grid is not None:
        recipe["grid"] = {"t_start": grid[0], "t_end": grid[1], "n_steps": grid[2]}
    return build_scenario(recipe)


def violator_scenario(kind: str, a: float | None = None) -> Scenario:
    """Shipped violators, optionally with the violation parameter overridden."""
    name = {"concave-weight": "violator_concave", "shrink-too-fast": "violator_shrink"}.get(kind)
    if name is None:
        raise ScenarioError(f"unknown violator kind {kind!r}")
    recipe = load_recipe(name)
    if a is not None:
        recipe.setdefault("params", {})["a"] = float(a)
        if a == 0:
            recipe["expected"] = {k: "pass" for k, v in recipe.get("expected", {}).items() if v == "fail"}
    return build_scenario(recipe)


# ---- TOML ----

def _plain(obj):
    if hasattr(obj, "unwrap"):
        return obj.unwrap()
    return obj


def parse_recipe(text: str) -> dict:
    try:
        doc = tomlkit.parse(text)
    except Exception as exc:  # tomlkit raises several parse error types
        raise ScenarioError(f"invalid TOML: {exc}") from None
    return _plain(doc)


def load_recipe(name_or_path) -> dict:
    """Recipe from a file path or the name of a shipped scenario."""
    path = Path(str(name_or_path))
    if path.suffix != ".toml" and not path.exists():
        res = resources.files("srflow") / "data" / f"{name_or_path}.toml"
        if not res.is_file():
            raise ScenarioError(f"no shipped scenario named {name_or_path!r}")
        return parse_recipe(res.read_text())
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_recipe(text)


def load_scenario(name_or_path) -> Scenario:
    return build_scenario(load_recipe(name_or_path))


def dump_recipe(recipe: dict) -> str:
    return tomlkit.dumps(recipe)


def shipped_scenarios() -> list[str]:
    root = resources.files("srflow") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


# ---- evaluation ----

@dataclass
class ScenarioRun:
    scenario: Scenario
    result: Any  # SuiteResult
    mismatches: dict

    @property
    def matched(self) -> bool:
        return not self.mismatches


def run_scenario(scenario: Scenario, seed: int | None = None, jobs: int = 1, tol: float | None = None) -> ScenarioRun:
    """Run the suite a scenario asks for and compare against its expected verdicts."""
    from .inequalities.bank import make_bank
    from .inequalities.suite import ALL_CHECKS, run_suite

    checks = scenario.checks
    include = tuple(checks.get("include", ALL_CHECKS))
    bank_cfg = scenario.recipe.get("bank", {})
    seed = scenario.bank_seed if seed is None else int(seed)
    bank = make_bank(scenario.flow, seed=seed, n_random=bank_cfg.get("n_random"))
    pairs = checks.get("pairs")
    delta = checks.get("delta_pairs")
    result = run_suite(
        scenario.flow,
        bank=bank,
        pairs=[tuple(p) for p in pairs] if pairs else None,
        checks=include,
        tol=tol,
        jobs=jobs,
        delta_pairs=[tuple(p) for p in delta] if delta else None,
        e2_exponent=checks.get("e2_exponent"),
        static_K=scenario.curvature,
    )
    mismatches = {}
    for name, want in scenario.graded().items():
        rep = result.reports.get(name)
        got = "missing" if rep is None else rep.verdict
        if got != want:
            mismatches[name] = {"expected": want, "observed": got}
    return ScenarioRun(scenario, result, mismatches)

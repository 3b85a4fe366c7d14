import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srflow.errors import FlowError, GridAlignmentError, ResolutionError, StructuralError
from srflow.flow import (
    Measure,
    ProbabilityMeasure,
    TimeGrid,
    build_circle1d,
    build_graph,
    circle_metric,
    ellipticity_report,
    measure_at,
    validate_a1,
)
from srflow.gamma import gamma, snapshot

from conftest import random_graph_flow, two_point


def _flow(m, f, d=None, grid=(0.5, 1.5, 10)):
    C = np.ones((len(m), len(m))) - np.eye(len(m))
    return build_graph(np.asarray(m, float), C, TimeGrid(*grid), logdensity=f, metric=d)


def test_measure_at_examples():
    assert np.allclose(measure_at(_flow([1, 1], np.zeros(2)), 0.5).weights, [1, 1])
    assert np.allclose(measure_at(_flow([1, 1], np.full(2, math.log(2))), 0.5).weights, [0.5, 0.5])
    w = measure_at(_flow([1, 2], np.array([0.0, 1.0])), 0.5).weights
    assert np.allclose(w, [1, 2 * math.exp(-1)], rtol=0, atol=1e-15)


def test_measure_at_off_grid():
    with pytest.raises(GridAlignmentError):
        measure_at(_flow([1, 1], np.zeros(2)), 0.55)


def test_measure_types():
    mu = Measure(np.array([0.25, 0.5]))
    assert mu.total == 0.75
    with pytest.raises(FlowError):
        ProbabilityMeasure(np.array([0.5, 0.4]))
    with pytest.raises(FlowError):
        Measure(np.array([-0.1, 1.1]))
    assert ProbabilityMeasure.delta(3, 1).weights.tolist() == [0, 1, 0]


def test_time_grid():
    g = TimeGrid(0.5, 1.5, 4)
    assert g.dt == 0.25 and g.index_of(1.0) == 2
    assert g.refined(2).n_steps == 8
    with pytest.raises(FlowError):
        TimeGrid(0.0, 1.0, 4)  # 0 is outside the open interval


def test_structure_errors():
    C = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float)
    with pytest.raises(StructuralError):
        build_graph(np.ones(3), C, TimeGrid(0.5, 1.5, 4))
    with pytest.raises(StructuralError):
        build_graph(np.ones(2), np.array([[0, 1], [2, 0]], float), TimeGrid(0.5, 1.5, 4))
    bad = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], float)
    with pytest.raises(StructuralError, match="triangle"):
        validate_a1(_flow([1, 1, 1], np.zeros(3), d=bad))


def test_a1_static_flow_is_lipschitz_of_f():
    # K3 with unit metric: L' = max |f(x) - f(y)| / d(x,y)
    f = np.array([0.0, 0.3, -0.4])
    d = np.ones((3, 3)) - np.eye(3)
    rep = validate_a1(_flow([1, 1, 1], f, d=d))
    assert rep.details["L_prime"] == pytest.approx(0.7, abs=1e-14)
    assert rep.details["time_part"] == 0.0
    assert rep.passed


def test_a1_zero():
    d = np.ones((2, 2)) - np.eye(2)
    assert validate_a1(_flow([1, 1], np.zeros(2), d=d)).details["L_prime"] == 0.0


def test_a1_shrinking_metric_time_part():
    d0 = np.ones((3, 3)) - np.eye(3)
    C = d0.copy()
    flow = build_graph(np.ones(3), C, TimeGrid(0.5, 1.5, 20), metric=lambda t: math.exp(-t) * d0)
    assert validate_a1(flow).details["time_part"] == pytest.approx(1.0, rel=1e-12)


def test_declared_lipschitz_too_small_fails():
    flow = random_graph_flow(0, n=5, steps=20).with_lipschitz(1e-6)
    assert not validate_a1(flow).passed


def test_circle_examples():
    with pytest.raises(ResolutionError):
        build_circle1d(8, lambda t, x: 0 * x, lambda t, x: 0 * x, TimeGrid(0.5, 1.5, 4))
    d = circle_metric(np.zeros(4))
    assert d[0, 2] == pytest.approx(math.pi, abs=1e-15)
    flow = build_circle1d(256, lambda t, x: 0 * x, lambda t, x: 0.5 * np.cos(x), TimeGrid(0.5, 1.5, 4),
                          static=True)
    L = snapshot(flow, 0.5).L_matrix
    assert np.abs(L.sum(axis=1)).max() < 1e-9 * np.abs(L).max()
    x = flow.h * np.arange(256)
    # u'' - f'u' with f' = -0.5 sin x
    exact = -np.sin(x) + 0.5 * np.sin(x) * np.cos(x)
    assert np.abs(L @ np.sin(x) - exact).max() <= 5e-4
    assert validate_a1(flow).details["time_part"] == 0.0


def test_circle_ellipticity_passes_with_declared_L():
    flow = build_circle1d(32, lambda t, x: 0.2 * np.sin(t) * np.cos(x), lambda t, x: 0.5 * np.cos(x + t),
                          TimeGrid(0.5, 1.5, 40))
    assert ellipticity_report(flow).passed
    assert validate_a1(flow).passed


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 9))
def test_random_flow_invariants(seed, n):
    flow = random_graph_flow(seed, n=n, steps=10, density=0.5)
    assert validate_a1(flow).passed
    assert ellipticity_report(flow).passed
    for t in flow.grid.times[::5]:
        c, d = flow.c_at(t), flow.d_at(t)
        assert np.array_equal(c, c.T) and np.all(c >= 0)
        assert np.allclose(d, d.T) and np.all(d[~np.eye(n, dtype=bool)] > 0)
        # d(x, z) <= d(x, y) + d(y, z)
        assert (d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12).all()
        assert np.all(measure_at(flow, t).weights > 0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gamma_within_ellipticity_band(seed):
    flow = random_graph_flow(seed, n=6, steps=10)
    L = flow.lipschitz
    u = np.random.default_rng(seed).normal(size=6)
    s, t = flow.grid.times[0], flow.grid.times[-1]
    gs, gt = gamma(snapshot(flow, s), u), gamma(snapshot(flow, t), u)
    band = math.exp(2 * L * (t - s))
    assert np.all(gt <= band * gs + 1e-12) and np.all(gs <= band * gt + 1e-12)


def test_two_point_static(tp):
    assert tp.static and tp.n == 2
    assert two_point().lipschitz < 1e-6

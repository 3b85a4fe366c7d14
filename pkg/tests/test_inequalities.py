import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srflow.gamma import gamma, gamma2, snapshot
from srflow.inequalities import (
    c1,
    c2,
    check_E3,
    check_E4,
    check_E5,
    check_E6,
    check_E7,
    check_E8,
    check_E9,
    check_E10,
    check_E11,
    check_E12,
    check_static,
    check_uniform_bound,
    curvature_profile,
    estimate_curvature,
    make_bank,
    reevaluate,
    run_suite,
)
from srflow.inequalities.checks import clamp, harnack_exponent, margin_array, pair_contexts
from srflow.inequalities.curvature import local_forms

from conftest import circle, random_graph_flow, two_point

PAIR_CHECKS = [check_E3, check_E6, check_E7, check_E8, check_E9, check_E10, check_E12, check_uniform_bound]


def test_constants_and_limits():
    for r in (0.1, 1.0):
        assert c1(0.0, r) == c2(0.0, r) == 2 * r
        assert c1(1e-12, r) == pytest.approx(2 * r, rel=1e-9)
        assert c2(-1e-12, r) == pytest.approx(2 * r, rel=1e-9)
    assert c1(2.0, 1.0) == pytest.approx((1 - math.exp(-4)) / 2, rel=1e-15)
    assert c2(2.0, 1.0) == pytest.approx((math.exp(4) - 1) / 2, rel=1e-15)
    assert float(harnack_exponent(2, 1.0, 1.0)) == 0.5


def test_clamp():
    V, eps = clamp(np.array([[0.0, -1.0], [2.0, 0.5]]))
    assert np.array_equal(eps, [2e-8, 1e-8])
    assert np.array_equal(V, [[2e-8, 1e-8], [2.0, 0.5]])


def test_two_point_closed_forms():
    flow = two_point(grid=(0.5, 1.5, 10))
    u = np.array([0.0, 1.0])
    tau = 1.0
    e = math.exp(-2 * tau)
    pu = np.array([0.5 - 0.5 * e, 0.5 + 0.5 * e])
    var = pu * (1 - pu)  # P(u^2) = Pu for an indicator
    gam_pu = 0.5 * (pu[1] - pu[0]) ** 2
    e3 = check_E3(flow, 0.5, 1.5, u)
    e7 = check_E7(flow, 0.5, 1.5, u)
    e8 = check_E8(flow, 0.5, 1.5, u)
    assert e3.margin == pytest.approx(0.5 - gam_pu, abs=1e-14)
    assert e7.margin == pytest.approx(np.min(2 * tau * 0.5 - var), abs=1e-14)
    assert e8.margin == pytest.approx(np.min(var - 2 * tau * gam_pu), abs=1e-14)
    assert min(e3.margin, e7.margin, e8.margin) > 0
    # the gap grows with t - s
    assert check_E3(flow, 0.5, 0.6, u).margin < check_E3(flow, 0.5, 1.0, u).margin < e3.margin


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_constants_give_zero_margins(seed):
    flow = random_graph_flow(seed, n=5, steps=20)
    c = np.full(5, 1.7)
    s, t = flow.grid.time(2), flow.grid.time(12)
    for chk in PAIR_CHECKS:
        if chk is check_uniform_bound:
            continue
        assert abs(chk(flow, s, t, c).margin) <= 1e-12
    assert abs(check_E11(flow, s, t, c, alpha=4).margin) <= 1e-12
    g = np.linspace(1, 2, 5)
    assert abs(check_E4(flow, s, t, c, g).margin) <= 1e-12
    assert abs(check_E5(flow, flow.grid.time(5), c, g).margin) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.sampled_from([2.0, 4.0, 8.0]))
def test_diagonal_harnack_is_jensen(seed, alpha):
    flow = random_graph_flow(seed, n=6, steps=10)
    ctx = pair_contexts(flow, [(flow.grid.time(1), flow.grid.time(9))], with_adjoint=False)[0]
    U = np.random.default_rng(seed).uniform(0, 2, (6, 4))
    for name in (f"E11[{alpha:g}]", "E12"):
        arr = margin_array(ctx, name, U)
        diag = arr[np.arange(6), np.arange(6)]
        assert np.all(diag >= -1e-12)


def test_e5_sign_tracks_curvature():
    flow = two_point(grid=(0.5, 1.5, 10))
    u, g = np.array([0.0, 1.0]), np.array([1.0, 3.0])
    # static: E5 is twice the Gamma_2 form, positive at curvature 2
    assert check_E5(flow, 0.5, u, g).margin > 0
    neg = circle(a=0.8, n=32, grid=(0.5, 1.5, 10))
    assert estimate_curvature(snapshot(neg, 0.5)) < 0
    x = neg.h * np.arange(32)
    U = np.column_stack([np.sin(k * x + 0.3 * k) for k in range(1, 6)])
    G = np.column_stack([np.exp(4 * (np.cos(x - x0) - 1)) for x0 in np.linspace(0, 2 * np.pi, 8, endpoint=False)])
    assert check_E5(neg, 0.5, U, G).margin < 0


def test_curvature_two_point_and_cycle():
    from srflow.gamma import GeneratorSnapshot

    two = GeneratorSnapshot.from_conductance([[0, 1], [1, 0]], [1, 1])
    assert estimate_curvature(two) == pytest.approx(2.0, abs=1e-9)
    n = 12
    C = np.zeros((n, n))
    C[np.arange(n), (np.arange(n) + 1) % n] = 1
    cyc = GeneratorSnapshot.from_conductance(C + C.T, np.ones(n))
    assert estimate_curvature(cyc) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_curvature_lower_bounds_random_ratios(seed):
    flow = random_graph_flow(seed, n=6, steps=2, density=0.5)
    snap = snapshot(flow, 0.5)
    prof = curvature_profile(snap)
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(6, 200))
    G2, G1 = gamma2(snap, U), gamma(snap, U)
    for x in range(6):
        ok = G1[x] > 1e-9
        ratios = G2[x, ok] / G1[x, ok]
        assert np.all(ratios >= prof.values[x] - 1e-8 * (1 + np.abs(ratios)))
    J, Q1, Q2 = local_forms(snap, 0)
    assert 0 in J and Q1.shape == Q2.shape == (J.size, J.size)


def test_circle_curvature_small():
    prof = curvature_profile(snapshot(circle(0.5, n=64), 0.5))
    x = 2 * np.pi * np.arange(64) / 64
    assert prof.K == pytest.approx(-0.5, abs=0.01)
    assert np.abs(prof.values + 0.5 * np.cos(x)).max() < 0.01
    assert abs(estimate_curvature(snapshot(circle(0.0, n=64), 0.5))) < 1e-10


def test_static_two_point_k2():
    flow = two_point(grid=(0.5, 1.5, 10))
    bank = make_bank(flow)
    for variant in ("iia", "iib"):
        # variance identities on two points: equality, margin zero up to rounding
        rep = check_static(flow, 0.5, 2.0, 0.7, bank.fields, variant)
        assert abs(rep.margin) <= 1e-14 and rep.passed
    for variant in ("iv", "v"):
        assert check_static(flow, 0.5, 2.0, 0.7, bank.positive, variant).margin >= -1e-14


def test_static_harnack_constant_choice():
    flow = circle(0.5, n=64, grid=(0.5, 1.5, 4))
    K = estimate_curvature(snapshot(flow, 0.5))
    bank = make_bank(flow)
    printed = check_static(flow, 0.5, K, 0.5, bank.positive, "v")
    wang = check_static(flow, 0.5, K, 0.5, bank.positive, "v", harnack="c2")
    assert printed.margin < -0.01 < wang.margin
    with pytest.raises(ValueError):
        check_static(flow, 0.5, K, 0.5, bank.positive, "v", harnack="c3")


def test_bank_determinism():
    flow = random_graph_flow(0, n=10, steps=4)
    a, b = make_bank(flow, seed=3), make_bank(flow, seed=3)
    assert a.ids == b.ids and np.array_equal(a.fields, b.fields)
    assert not np.array_equal(a.fields, make_bank(flow, seed=4).fields)
    assert "const" in a.ids and len(a.nonconstant()) >= 20
    assert np.all(a.positive > 0)
    cb = make_bank(circle(0.0, n=32))
    assert len(cb.nonconstant()) >= 20


def test_suite_rows_and_witnesses():
    flow = random_graph_flow(7, n=5, steps=16)
    res = run_suite(flow, checks=("E2", "E3", "E6", "E7", "E8", "uniform-bound", "E9", "E10", "E12", "E11"))
    for name in ("E3", "E6", "E7", "E8", "E9", "E10", "E12", "E11[2]", "E11[16]", "uniform-bound"):
        rep = res.reports[name]
        assert reevaluate(flow, res.bank, rep) == rep.margin
    assert res.reports["E9"].informational and not res.reports["E3"].informational
    assert set(res.verdicts()) == set(res.reports)
    assert "E3<=>E7&E8" in res.implications
    serial = run_suite(flow, checks=("E3", "E7"), jobs=1)
    par = run_suite(flow, checks=("E3", "E7"), jobs=3)
    assert [r.margin for r in serial.rows] == [r.margin for r in par.rows]

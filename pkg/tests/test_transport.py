import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from srflow.errors import MarginalError, OrderingError
from srflow.flow import ProbabilityMeasure, TimeGrid, build_graph
from srflow.transport import (
    check_E2,
    entropy,
    hopf_lax,
    sinkhorn,
    transport_lp,
    wasserstein,
    wasserstein_batch,
)

from conftest import random_graph_flow, two_point


def vertex_minimum(C, a, b):
    """Brute force over the basic feasible solutions of the transportation polytope."""
    n, k = C.shape
    A = np.zeros((n + k, n * k))
    for i in range(n):
        A[i, i * k:(i + 1) * k] = 1
    for j in range(k):
        A[n + j, j::k] = 1
    A, rhs = A[:-1], np.concatenate([a, b])[:-1]  # one marginal constraint is redundant
    best = math.inf
    for cols in itertools.combinations(range(n * k), n + k - 1):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        x = np.linalg.solve(B, rhs)
        if np.all(x >= -1e-13):
            best = min(best, float(C.flat[list(cols)] @ x))
    return best


def dual_w1(d, a, b):
    """max sum phi (a - b) over 1-Lipschitz phi, by LP."""
    n = len(a)
    rows, rhs = [], []
    for x in range(n):
        for y in range(n):
            if x != y:
                r = np.zeros(n)
                r[x], r[y] = 1, -1
                rows.append(r)
                rhs.append(d[x, y])
    res = linprog(-(a - b), A_ub=np.array(rows), b_ub=rhs, bounds=[(None, None)] * n, method="highs")
    return -res.fun


def random_metric(rng, n):
    pts = rng.normal(size=(n, 2))
    return np.linalg.norm(pts[:, None] - pts[None], axis=-1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 4), k=st.integers(2, 4), p=st.sampled_from([1, 2]))
def test_lp_equals_vertex_enumeration(seed, n, k, p):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 2, (n, k)) ** p
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(k))
    P = transport_lp(C, a, b)
    assert float(np.sum(P * C)) == pytest.approx(vertex_minimum(C, a, b), abs=1e-10)
    assert np.abs(P.sum(1) - a).max() <= 1e-10 and np.abs(P.sum(0) - b).max() <= 1e-10
    Q = transport_lp(C, a, b, solver="highs")
    assert float(np.sum(Q * C)) == pytest.approx(float(np.sum(P * C)), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 6))
def test_kantorovich_duality_w1(seed, n):
    rng = np.random.default_rng(seed)
    d = random_metric(rng, n)
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    primal = float(np.sum(transport_lp(d, a, b) * d))
    assert primal == pytest.approx(dual_w1(d, a, b), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(3, 8), p=st.sampled_from([1, 2]))
def test_metric_axioms(seed, n, p):
    flow = random_graph_flow(seed % 97, n=n, steps=4, density=0.6)
    t = flow.grid.time(2)
    rng = np.random.default_rng(seed)
    mu, nu, rho = (ProbabilityMeasure(rng.dirichlet(np.ones(n))) for _ in range(3))
    w = lambda x, y: wasserstein(flow, t, x, y, p).distance  # noqa: E731
    assert w(mu, mu) <= 1e-8
    assert w(mu, nu) == pytest.approx(w(nu, mu), abs=1e-10)
    assert w(mu, rho) <= w(mu, nu) + w(nu, rho) + 1e-8
    assert w(mu, nu) > 0


def test_plan_invariants_and_examples():
    flow = random_graph_flow(1, n=5, steps=4)
    t = flow.grid.t_start
    d = flow.d_at(t)
    for x, y in [(0, 3), (2, 4)]:
        plan = wasserstein(flow, t, ProbabilityMeasure.delta(5, x), ProbabilityMeasure.delta(5, y), p=2)
        assert plan.distance == pytest.approx(d[x, y], rel=1e-14)
    mu = ProbabilityMeasure(np.full(5, 0.2))
    same = wasserstein(flow, t, mu, mu, p=2)
    assert same.distance == 0.0 and np.allclose(same.coupling, np.diag(mu.weights))
    rng = np.random.default_rng(0)
    nu = ProbabilityMeasure(rng.dirichlet(np.ones(5)))
    plan = wasserstein(flow, t, mu, nu, p=2)
    assert plan.marginal_defect <= 1e-10
    assert plan.cost == pytest.approx(float(np.sum(plan.coupling * d**2)), rel=1e-13)
    assert plan.distance == pytest.approx(math.sqrt(plan.cost), rel=1e-15)
    assert plan.to_csv().count("\n") == 5
    with pytest.raises(MarginalError):
        wasserstein(flow, t, np.array([0.5, 0.5, 0, 0, 0.1]), mu)


def test_batch_matches_serial():
    flow = random_graph_flow(2, n=6, steps=4)
    rng = np.random.default_rng(1)
    triples = [(flow.grid.time(k), rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))) for k in range(4)]
    serial = [wasserstein(flow, t, a, b, 1).distance for t, a, b in triples]
    par = [p.distance for p in wasserstein_batch(flow, triples, p=1, jobs=3)]
    assert serial == par


def test_sinkhorn_is_only_approximate():
    rng = np.random.default_rng(4)
    C = random_metric(rng, 6) ** 2
    a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    exact = float(np.sum(transport_lp(C, a, b) * C))
    P = sinkhorn(C, a, b, eps=1e-2)
    # close, but neither exactly feasible nor exactly optimal
    assert float(np.sum(P * C)) == pytest.approx(exact, abs=0.05)
    assert np.abs(P.sum(1) - a).max() < 1e-3


def test_hopf_lax():
    flow = two_point()
    assert np.allclose(hopf_lax(flow, 0.5, 1.0, np.array([0.0, 1.0])), [0.0, 0.5])
    rand = random_graph_flow(3, n=7, steps=4)
    phi = np.random.default_rng(0).normal(size=7)
    assert not hopf_lax(rand, 0.5, 1.0, np.zeros(7)).any()
    prev = phi
    for r in [0.01, 0.1, 1.0, 10.0, 1e9]:
        q = hopf_lax(rand, 0.5, r, phi)
        assert np.all(q <= phi) and np.all(q <= prev)
        prev = q
    assert np.allclose(prev, phi.min(), atol=1e-6)


def test_entropy_examples():
    flow = build_graph(np.array([1.0, 1.0]), np.array([[0, 1], [1, 0]], float), TimeGrid(0.5, 1.5, 2))
    assert entropy(flow, 0.5, np.array([0.75, 0.25])) == pytest.approx(0.75 * math.log(0.75) + 0.25 * math.log(0.25),
                                                                       rel=1e-15)
    rand = random_graph_flow(5, n=5, steps=4)
    m = rand.weights_at(0.5)
    assert entropy(rand, 0.5, m / m.sum()) == pytest.approx(-math.log(m.sum()), rel=1e-12)
    assert entropy(rand, 0.5, ProbabilityMeasure.delta(5, 2)) == pytest.approx(math.log(1 / m[2]), rel=1e-12)


def test_check_E2_examples():
    flow = two_point(grid=(0.5, 1.5, 10))
    d0, d1 = ProbabilityMeasure.delta(2, 0), ProbabilityMeasure.delta(2, 1)
    rep = check_E2(flow, 0.5, 1.5, d0, d1)
    # both propagated deltas have weights (1 +- e^-2)/2, so W2 = sqrt(e^-2)
    assert rep.margin == pytest.approx(1 - math.exp(-1), abs=1e-12) and rep.passed
    assert check_E2(flow, 0.5, 1.5, d0, d0).margin == 0.0
    assert check_E2(flow, 0.5, 1.5, d0, d1, p=1).inequality == "E2[W1]"
    with pytest.raises(OrderingError):
        check_E2(flow, 1.5, 0.5, d0, d1)

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridnash.game import (
    DimensionError,
    GameSpec,
    SaddleReference,
    build_example1,
    build_quadratic_game,
    check_interior,
    cost_from_dict,
    duality_gap,
    grad_S,
    interiority_margin,
    payoff_U,
    quadratic_cost,
    saddle_S,
    zero_cost,
)
from hybridnash.graph import SubnetworkGraph, NetworkTopology, ring_topology
from hybridnash.mirror import QuadraticFree


def straight_line_S(x, lam, y, mu, seed=42):
    """Example-1 S written out agent by agent from the formulas, with its own ring Laplacian."""
    rng = np.random.default_rng(seed)
    rng.uniform(-2.0, 0.0, size=(4, 2))
    X, Y = x.reshape(4, 2), y.reshape(4, 2)
    Lam, Mu = lam.reshape(4, 2), mu.reshape(4, 2)
    total = 0.0
    for i in range(1, 5):
        a, b = X[i - 1]
        total += math.log(math.exp(a - 0.1 * i) + math.exp(b - 0.2 * i))
    for j in range(1, 5):
        a, b = Y[j - 1]
        total -= math.exp(a - j) - a + (b - 0.3 * j) ** 2
    total += float(np.sum(X * Y))  # B = I_8
    ring = {0: (1, 3), 1: (0, 2), 2: (1, 3), 3: (2, 0)}
    for k in range(4):
        lx = sum(X[k] - X[h] for h in ring[k])
        ly = sum(Y[k] - Y[h] for h in ring[k])
        total += float(Lam[k] @ lx) - float(Mu[k] @ ly) + 0.5 * float(X[k] @ lx) - 0.5 * float(Y[k] @ ly)
    return total


def random_point(rng, spec, scale=1.5):
    return (
        rng.normal(scale=scale, size=spec.dim_x),
        rng.normal(scale=scale, size=spec.dim_x),
        rng.normal(scale=scale, size=spec.dim_y),
        rng.normal(scale=scale, size=spec.dim_y),
    )


def tiny_game(f=None, g=None, B=0.0, p=2):
    topo = NetworkTopology(SubnetworkGraph(np.zeros((1, 1))), SubnetworkGraph(np.zeros((1, 1))), frozenset({(0, 0)}))
    f = f or [zero_cost(p)]
    g = g or [zero_cost(p)]
    H = {(0, 0): B * np.eye(p)}
    return GameSpec(topo, f, g, H, [QuadraticFree(p)], [QuadraticFree(p)])


def test_payoff_zero_game():
    spec = tiny_game()
    assert payoff_U(spec, np.ones(2), -np.ones(2)) == 0.0


def test_payoff_hand_expansion():
    spec = tiny_game([quadratic_cost(np.zeros(2))], [quadratic_cost(np.zeros(2))], B=1.0)
    assert payoff_U(spec, np.ones(2), np.ones(2)) == pytest.approx(2.0)


def test_payoff_example1_origin():
    spec = build_example1(42)
    expected = sum(math.log(math.exp(-0.1 * i) + math.exp(-0.2 * i)) for i in range(1, 5))
    expected -= sum(math.exp(-j) + 0.09 * j * j for j in range(1, 5))
    assert payoff_U(spec, np.zeros(8), np.zeros(8)) == pytest.approx(expected, rel=1e-14)


def test_example1_structure():
    spec = build_example1(42)
    assert (spec.n1, spec.n2, spec.p1, spec.p2) == (4, 4, 2, 2)
    np.testing.assert_array_equal(spec.B, np.eye(8))
    for cx, cy in zip(spec.constraints_x, spec.constraints_y):
        assert np.all(cx.lower >= -2) and np.all(cx.lower <= 0)
        assert np.all(cx.upper >= 1) and np.all(cx.upper <= 3)
        np.testing.assert_array_equal(cx.lower, cy.lower)
        np.testing.assert_array_equal(cx.upper, cy.upper)
    g = spec.f[0].gradient(np.array([0.1, 0.2]))
    assert g.sum() == pytest.approx(1.0) and np.all(g > 0)


def test_saddle_consensus_equals_payoff():
    spec = build_example1(42)
    rng = np.random.default_rng(0)
    x = np.tile(rng.normal(size=2), 4)
    y = np.tile(rng.normal(size=2), 4)
    lam, mu = rng.normal(size=8), rng.normal(size=8)
    assert saddle_S(spec, x, lam, y, mu) == pytest.approx(payoff_U(spec, x, y), abs=1e-12)
    zero = np.zeros(8)
    assert saddle_S(spec, zero, zero, zero, zero) == payoff_U(spec, zero, zero)


def test_saddle_matches_straight_line():
    spec = build_example1(42)
    rng = np.random.default_rng(1)
    for _ in range(100):
        pt = random_point(rng, spec)
        assert saddle_S(spec, *pt) == pytest.approx(straight_line_S(*pt), rel=1e-12, abs=1e-12)


def test_grad_decoupled():
    spec = tiny_game([quadratic_cost(np.array([1.0, 2.0]))], [quadratic_cost(np.array([-1.0, 0.5]))])
    x, y = np.array([0.3, -0.2]), np.array([1.0, 1.0])
    gx, glam, gy, gmu = grad_S(spec, x, np.zeros(2), y, np.zeros(2))
    np.testing.assert_allclose(gx, x - [1.0, 2.0])
    np.testing.assert_allclose(gy, -(y - [-1.0, 0.5]))
    np.testing.assert_array_equal(glam, 0)
    np.testing.assert_array_equal(gmu, 0)


def fd_grad(spec, pt, h=1e-6):
    out = []
    for b in range(4):
        g = np.zeros_like(pt[b])
        for i in range(pt[b].size):
            hi = [a.copy() for a in pt]
            lo = [a.copy() for a in pt]
            hi[b][i] += h
            lo[b][i] -= h
            g[i] = (saddle_S(spec, *hi) - saddle_S(spec, *lo)) / (2 * h)
        out.append(g)
    return out


def test_grad_matches_finite_differences():
    spec = build_example1(42)
    rng = np.random.default_rng(2)
    for _ in range(20):
        pt = random_point(rng, spec)
        for a, b in zip(grad_S(spec, *pt), fd_grad(spec, pt)):
            np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(b).max()))


def test_grad_at_saddle(example1_reference):
    spec, ref = example1_reference
    gx, glam, gy, gmu = grad_S(spec, ref.x_star, ref.lambda_star, ref.y_star, ref.mu_star)
    np.testing.assert_allclose(glam, 0, atol=1e-10)
    np.testing.assert_allclose(gmu, 0, atol=1e-10)
    # consensus component of the multiplier gradients vanishes identically
    np.testing.assert_allclose(glam.reshape(4, 2).sum(axis=0), 0, atol=1e-12)


def test_dimension_errors():
    spec = build_example1(42)
    with pytest.raises(DimensionError):
        payoff_U(spec, np.zeros(7), np.zeros(8))
    with pytest.raises(DimensionError):
        saddle_S(spec, np.zeros(8), np.zeros(8), np.zeros(8), np.zeros(9))
    with pytest.raises(DimensionError):
        grad_S(spec, np.zeros(8), np.zeros(3), np.zeros(8), np.zeros(8))


def test_coupling_off_cross_edge_rejected():
    topo = ring_topology(2, 2)
    f = [zero_cost(1)] * 2
    with pytest.raises(DimensionError):
        GameSpec(topo, f, f, {(0, 1): np.eye(1)}, [QuadraticFree(1)] * 2, [QuadraticFree(1)] * 2)
    spec = GameSpec(topo, f, f, {(1, 1): 2 * np.eye(1)}, [QuadraticFree(1)] * 2, [QuadraticFree(1)] * 2)
    assert spec.B[1, 1] == 2 and spec.B.sum() == 2


def test_duality_gap_zero_at_reference(example1_reference):
    spec, ref = example1_reference
    assert duality_gap(spec, ref, ref.x_star, ref.lambda_star, ref.y_star, ref.mu_star) == pytest.approx(0, abs=1e-12)


def test_duality_gap_nonnegative_on_feasible_points(example1_reference):
    spec, ref = example1_reference
    m = spec.mirrors()
    rng = np.random.default_rng(4)
    for _ in range(300):
        x = m.psi.project(rng.normal(scale=2, size=8))
        y = m.phi.project(rng.normal(scale=2, size=8))
        lam, mu = rng.normal(scale=2, size=8), rng.normal(scale=2, size=8)
        assert duality_gap(spec, ref, x, lam, y, mu) >= -1e-6


def test_saddle_convex_concave():
    spec = build_example1(42)
    rng = np.random.default_rng(5)
    for _ in range(200):
        x1, lam, y, mu1 = random_point(rng, spec)
        x2, _, _, mu2 = random_point(rng, spec)
        mid = saddle_S(spec, (x1 + x2) / 2, lam, y, (mu1 + mu2) / 2)
        assert mid <= 0.5 * (saddle_S(spec, x1, lam, y, mu1) + saddle_S(spec, x2, lam, y, mu2)) + 1e-10
        x, lam1, y1, mu = random_point(rng, spec)
        _, lam2, y2, _ = random_point(rng, spec)
        mid = saddle_S(spec, x, (lam1 + lam2) / 2, (y1 + y2) / 2, mu)
        assert mid >= 0.5 * (saddle_S(spec, x, lam1, y1, mu) + saddle_S(spec, x, lam2, y2, mu)) - 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_cost_oracles_gradient_and_convexity(seed):
    spec = build_example1(42)
    rng = np.random.default_rng(seed)
    for o in list(spec.f) + list(spec.g):
        x = rng.uniform(-2, 3, size=2)
        h = 1e-6
        fd = np.array([(o.value(x + h * e) - o.value(x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(o.gradient(x), fd, rtol=1e-6, atol=1e-8)
        a, b = rng.uniform(-2, 3, size=2), rng.uniform(-2, 3, size=2)
        assert o.value((a + b) / 2) <= 0.5 * (o.value(a) + o.value(b)) + 1e-12


def test_stacked_oracles_match_per_agent():
    spec = build_example1(42)
    rng = np.random.default_rng(6)
    x = rng.normal(size=8)
    assert spec.f_tilde(x) == pytest.approx(sum(o.value(b) for o, b in zip(spec.f, x.reshape(4, 2))), rel=1e-14)
    np.testing.assert_allclose(spec.grad_g(x), np.concatenate([o.gradient(b) for o, b in zip(spec.g, x.reshape(4, 2))]))


def test_serialisation_roundtrip():
    spec = build_example1(42)
    back = GameSpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(back.B, spec.B)
    np.testing.assert_array_equal(back.L1, spec.L1)
    rng = np.random.default_rng(7)
    pt = random_point(rng, spec)
    assert saddle_S(back, *pt) == saddle_S(spec, *pt)
    with pytest.raises(ValueError):
        cost_from_dict({"family": "unknown"})


def test_interiority_warning(example1_reference):
    spec, ref = example1_reference
    assert interiority_margin(spec, ref) < 1e-6
    with pytest.warns(UserWarning, match="boundary"):
        assert not check_interior(spec, ref)
    inner = build_quadratic_game(seed=1, box=5.0)
    ref2 = SaddleReference(np.zeros(inner.dim_x), np.zeros(inner.dim_x), np.zeros(inner.dim_y), np.zeros(inner.dim_y), 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_interior(inner, ref2)


def test_reference_alignment_shifts_consensus_only(example1_reference):
    _, ref = example1_reference
    g0 = np.arange(8.0)
    al = ref.aligned(4, 4, g0, None)
    np.testing.assert_allclose(al.lambda_star.reshape(4, 2).mean(axis=0), g0.reshape(4, 2).mean(axis=0))
    d = (al.lambda_star - ref.lambda_star).reshape(4, 2)
    np.testing.assert_allclose(d - d[0], 0, atol=1e-14)
    np.testing.assert_array_equal(al.mu_star, ref.mu_star)


def test_pinned_fixture_regression(example1_reference):
    from hybridnash.metrics import solve_saddle_reference

    spec, pinned = example1_reference
    fresh = solve_saddle_reference(spec)
    assert pinned.kkt_residual < 1e-6 and fresh.kkt_residual < 1e-6
    np.testing.assert_allclose(fresh.x_star, pinned.x_star, atol=1e-8)
    np.testing.assert_allclose(fresh.y_star, pinned.y_star, atol=1e-8)
    np.testing.assert_allclose(fresh.lambda_star, pinned.lambda_star, atol=1e-7)
    np.testing.assert_allclose(fresh.mu_star, pinned.mu_star, atol=1e-7)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridnash.flow import (
    DisturbanceSpec,
    DomainError,
    FlowModel,
    FlowParams,
    KinkGeometry,
    default_initial_state,
    flow_rhs,
    init_from,
    integrate,
    integrate_baseline,
    is_diverged,
    rk4_kink_step,
    rk4_step,
)
from hybridnash.game import build_example1, build_quadratic_game, quadratic_game_equilibrium
from hybridnash.metrics import solve_saddle_reference
from hybridnash.state import FlowState


def agent_rhs_oracle(spec, t, r, st_):
    """Flow written agent by agent: neighbour sums and per-block gradients, no stacked matrices."""
    n1, n2, p1, p2 = spec.n1, spec.n2, spec.p1, spec.p2
    A1, A2 = spec.topology.g1.weights, spec.topology.g2.weights
    X, Lam, U, Gam = (a.reshape(n1, p1) for a in (st_.x, st_.lam, st_.u, st_.gamma))
    Y, Mu, V, Nu = (a.reshape(n2, p2) for a in (st_.y, st_.mu, st_.v, st_.nu))
    lox = [c.lower for c in spec.constraints_x]
    hix = [c.upper for c in spec.constraints_x]
    loy = [c.lower for c in spec.constraints_y]
    hiy = [c.upper for c in spec.constraints_y]
    Xt = np.array([np.clip(U[i], lox[i], hix[i]) for i in range(n1)])
    Yt = np.array([np.clip(V[j], loy[j], hiy[j]) for j in range(n2)])
    c = r / t
    dX, dLam = c * (Xt - X), c * (Gam - Lam)
    dY, dMu = c * (Yt - Y), c * (Nu - Mu)
    h = t / r
    Xe, Lame, Ye, Mue = X + h * dX, Lam + h * dLam, Y + h * dY, Mu + h * dMu

    def lap(A, Z, k):
        return sum(A[k, m] * (Z[k] - Z[m]) for m in range(A.shape[0]))

    def H(i, j):
        return spec.H.get((i, j), np.zeros((p1, p2)))

    dU = np.zeros((n1, p1))
    dGam = np.zeros((n1, p1))
    for i in range(n1):
        gx = spec.f[i].gradient(X[i]) + sum(H(i, j) @ Ye[j] for j in range(n2)) + lap(A1, Lame, i) + lap(A1, X, i)
        dU[i] = -h * gx
        dGam[i] = h * lap(A1, Xe, i)
    dV = np.zeros((n2, p2))
    dNu = np.zeros((n2, p2))
    for j in range(n2):
        gy = sum(H(i, j).T @ Xe[i] for i in range(n1)) - spec.g[j].gradient(Y[j]) - lap(A2, Mue, j) - lap(A2, Y, j)
        dV[j] = h * gy
        dNu[j] = h * lap(A2, Ye, j)
    return np.concatenate([a.ravel() for a in (dX, dLam, dU, dGam, dY, dMu, dV, dNu)])


def random_state(rng, spec, t, scale=2.0):
    z = rng.normal(scale=scale, size=4 * (spec.dim_x + spec.dim_y))
    return FlowState.from_vector(z, t, spec.dim_x, spec.dim_y)


@pytest.fixture(scope="module")
def ex1():
    spec = build_example1(42)
    return spec, spec.mirrors()


def test_rhs_matches_agent_oracle(ex1):
    spec, m = ex1
    rng = np.random.default_rng(0)
    model = FlowModel(spec, m, 2.0)
    for _ in range(50):
        t = rng.uniform(0.5, 50)
        s = random_state(rng, spec, t)
        oracle = agent_rhs_oracle(spec, t, 2.0, s)
        np.testing.assert_allclose(model.rhs(t, s.to_vector()), oracle, rtol=1e-12, atol=1e-11 * max(1.0, np.abs(oracle).max()))
        np.testing.assert_allclose(model.rhs_scaled(t, t, s.to_vector()), oracle, rtol=1e-12, atol=1e-11 * max(1.0, np.abs(oracle).max()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 6.0))
def test_rhs_oracle_other_r(seed, r):
    spec = build_quadratic_game(n1=3, n2=2, coupling=0.7, seed=seed % 7, box=1.0)
    rng = np.random.default_rng(seed)
    s = random_state(rng, spec, 3.0)
    got = flow_rhs(spec, spec.mirrors(), FlowParams(r=r), s).to_vector()
    np.testing.assert_allclose(got, agent_rhs_oracle(spec, 3.0, r, s), rtol=1e-12, atol=1e-12)


def test_rhs_zero_at_equilibrium():
    spec = build_quadratic_game(coupling=0.5, seed=3)
    m = spec.mirrors()
    ref = solve_saddle_reference(spec, m)
    x_cf, y_cf = quadratic_game_equilibrium(spec)
    np.testing.assert_allclose(ref.x_star, x_cf, atol=1e-9)
    np.testing.assert_allclose(ref.y_star, y_cf, atol=1e-9)
    s = FlowState(ref.x_star, ref.lambda_star, ref.x_star, ref.lambda_star, ref.y_star, ref.mu_star, ref.y_star, ref.mu_star, 2.0)
    np.testing.assert_allclose(flow_rhs(spec, m, FlowParams(), s).to_vector(), 0, atol=1e-9)


def test_rhs_requires_positive_time(ex1):
    spec, m = ex1
    s = default_initial_state(spec, m)
    s.t = 0.0
    with pytest.raises(ValueError):
        flow_rhs(spec, m, FlowParams(), s)


def test_init_domain_checks(ex1):
    spec, m = ex1
    z = np.zeros(8)
    with pytest.raises(DomainError):
        init_from(np.full(8, 10.0), z, z, z, m)
    with pytest.raises(DomainError):
        init_from(z, z, np.full(8, -10.0), z, m)
    s = init_from(z, z, z, z, m)
    np.testing.assert_array_equal(s.x, z)
    with pytest.raises(ValueError):
        FlowParams(r=0)
    with pytest.raises(ValueError):
        FlowParams(scheme="rk45")


def test_quadratic_game_converges():
    # decoupled game; r = 4 damps the momentum oscillation that keeps r = 2 near 1e-3 at t = 100
    spec = build_quadratic_game(coupling=0.0, seed=3)
    m = spec.mirrors()
    rec = integrate(spec, m, FlowParams(r=4.0, dt=5e-3), default_initial_state(spec, m), 100.0, sample_every=1000)
    x_cf, y_cf = quadratic_game_equilibrium(spec)
    np.testing.assert_allclose(rec.final_state.x, x_cf, atol=1e-4)
    np.testing.assert_allclose(rec.final_state.y, y_cf, atol=1e-4)
    assert not rec.diverged


def test_short_run_invariance_and_determinism(ex1):
    spec, m = ex1
    ref = solve_saddle_reference(spec, m, horizon=20.0, tol=1.0)
    s0 = default_initial_state(spec, m)
    a = integrate(spec, m, FlowParams(), s0, 3.0, reference=ref)
    b = integrate(spec, m, FlowParams(), s0, 3.0, reference=ref)
    assert max(a.dist_x) == 0 and max(a.dist_y) == 0
    assert a.to_csv_string() == b.to_csv_string()
    assert a.t[0] == 1.0 and a.t[-1] == pytest.approx(3.0)


def test_baseline_carries_auxiliary_blocks(ex1):
    spec, m = ex1
    rec = integrate_baseline(spec, m, FlowParams(dt=0.01), default_initial_state(spec, m), 2.0)
    f = rec.final_state
    np.testing.assert_array_equal(f.u, f.x)
    np.testing.assert_array_equal(f.nu, f.mu)


@pytest.mark.parametrize("kind", ["constant", "uniform_random", "sinusoidal"])
def test_disturbance_bounded(kind):
    d = DisturbanceSpec(0.01, kind, seed=3, hold=0.05)
    sig = d.signal(16)
    vals = np.array([sig(t) for t in np.linspace(0, 20, 500)])
    assert np.abs(vals).max() <= 0.01
    again = DisturbanceSpec(0.01, kind, seed=3, hold=0.05).signal(16)
    np.testing.assert_array_equal(again(7.3), sig(7.3))
    if kind == "constant":
        np.testing.assert_array_equal(vals, 0.01)


def test_disturbance_validation():
    with pytest.raises(ValueError):
        DisturbanceSpec(-1.0, "constant")
    with pytest.raises(ValueError):
        DisturbanceSpec(0.1, "impulse")
    assert not DisturbanceSpec(0.0, "constant").active
    assert np.all(DisturbanceSpec().signal(3)(1.0) == 0)


def test_is_diverged():
    assert is_diverged(np.array([np.nan]))
    assert is_diverged(np.array([2e9]))
    assert not is_diverged(np.array([1.0, -3.0]))


# scalar toy with one clamp kink: w' = 1, q' = clip(w, 0, 1)
def toy_field(t, z, sides=None):
    w = z[0]
    if sides is None:
        xc = min(max(w, 0.0), 1.0)
    else:
        xc = w if sides[0] == 0 else (0.0 if sides[0] < 0 else 1.0)
    return np.array([1.0, xc])


def toy_geometry():
    g = object.__new__(KinkGeometry)
    g.idx, g.lo, g.hi = np.array([0]), np.array([0.0]), np.array([1.0])
    return g


def toy_exact(w0, T):
    # integral of clip(w0 + s, 0, 1) over [0, T]
    grid = np.array([0.0, -w0, 1.0 - w0, T])
    grid = np.sort(np.clip(grid, 0.0, T))
    total = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        mid = w0 + 0.5 * (a + b)
        if mid <= 0:
            continue
        total += (b - a) * (1.0 if mid >= 1 else mid)
    return total


def test_kink_step_exact_across_face():
    geom = toy_geometry()
    z = np.array([-0.05, 0.0])
    z1 = rk4_kink_step(toy_field, geom, 0.0, z, 0.1)
    # piecewise polynomial of low degree on each side: RK4 is exact once split
    assert z1[1] == pytest.approx(0.05 ** 2 / 2, abs=1e-15)
    plain = rk4_step(lambda t, w: toy_field(t, w), 0.0, z, 0.1)
    assert abs(plain[1] - 0.00125) > 1e-5


def test_kink_step_two_faces_in_one_step():
    geom = toy_geometry()
    z = np.array([-0.2, 0.0])
    z1 = rk4_kink_step(toy_field, geom, 0.0, z, 1.5)
    assert z1[1] == pytest.approx(toy_exact(-0.2, 1.5), abs=1e-13)


def test_kink_stepper_keeps_order():
    geom = toy_geometry()
    errs = []
    for h in (0.1, 0.05):
        z = np.array([-0.33, 0.0])
        for k in range(int(round(2.0 / h))):
            z = rk4_kink_step(toy_field, geom, k * h, z, h)
        errs.append(abs(z[1] - toy_exact(-0.33, 2.0)))
    assert max(errs) < 1e-12


def test_kink_geometry_sides(ex1):
    spec, m = ex1
    model = FlowModel(spec, m, 2.0)
    geom = model.kinks()
    z = np.zeros(model.dim)
    z[model.sl["u"]] = m.psi.upper + 1
    z[model.sl["v"]] = m.phi.lower - 1
    s = geom.sides(z)
    assert np.all(s[:8] == 1) and np.all(s[8:] == -1)
    free = FlowModel(build_quadratic_game(), build_quadratic_game().mirrors(), 2.0)
    g = free.kinks()
    assert g is None or not np.any(g.sides(np.full(free.dim, 1e6)))

"""Time-varying accelerated primal-dual mirror-descent flow.

For agents of the minimising network

    x'   = (r/t) (grad psi*(u) - x)          lam' = (r/t) (gamma - lam)
    u'   = -(t/r) dS/dx (x, lam + (t/r) lam', y + (t/r) y', mu)
    gam' =  (t/r) dS/dlam (x + (t/r) x', lam, y, mu)

and symmetrically for ``(y, mu, v, nu)``. The arguments shifted by
``(t/r) * derivative`` are the momentum-extrapolated points (derivative feedback).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .game import GameSpec, SaddleReference, saddle_S
from .metrics import LyapunovEvaluator, baseline_rhs
from .mirror import Mirrors
from .record import TrajectoryRecord
from .state import FlowState, block_slices

DIVERGENCE_NORM = 1e9


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class FlowParams:
    r: float = 2.0
    t0: float = 1.0
    dt: float = 1e-3
    scheme: str = "rk4"
    kink_events: bool = True

    def __post_init__(self):
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def convergent(self) -> bool:
        """Whether the rate guarantee applies (requires ``r >= 2``)."""
        return self.r >= 2


DISTURBANCE_KINDS = ("none", "constant", "uniform_random", "sinusoidal")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Bounded additive disturbance ``e(t)`` with ``|e(t)|_inf <= epsilon``.

    ``constant`` is ``epsilon * 1``; ``uniform_random`` is piecewise constant on
    intervals of length ``hold`` with i.i.d. uniform entries; ``sinusoidal`` is
    ``epsilon * sin(omega t + phase_i)`` with seeded phases. With
    ``perturb_jumps`` the hybrid executor also applies ``xi+ = G(xi + e) + e``
    at jumps.
    """

    epsilon: float = 0.0
    kind: str = "none"
    seed: int = 0
    omega: float = 1.0
    hold: float = 0.1
    perturb_jumps: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.epsilon > 0

    def signal(self, dim: int) -> "DisturbanceSignal":
        return DisturbanceSignal(self, dim)


class DisturbanceSignal:
    """Callable ``e(t)`` of a fixed dimension. Asserts the bound on every value."""

    def __init__(self, spec: DisturbanceSpec, dim: int):
        self.spec = spec
        self.dim = dim
        self._const = np.full(dim, spec.epsilon) if spec.kind == "constant" else None
        if spec.kind == "sinusoidal":
            self._phase = np.random.default_rng(spec.seed).uniform(0, 2 * np.pi, dim)
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, t: float) -> np.ndarray:
        s = self.spec
        if not s.active:
            return np.zeros(self.dim)
        if s.kind == "constant":
            e = self._const
        elif s.kind == "sinusoidal":
            e = s.epsilon * np.sin(s.omega * t + self._phase)
        else:
            idx = int(np.floor(t / s.hold))
            e = self._cache.get(idx)
            if e is None:
                e = np.random.default_rng([s.seed, idx & 0x7FFFFFFF]).uniform(-s.epsilon, s.epsilon, self.dim)
                self._cache[idx] = e
        assert np.max(np.abs(e)) <= s.epsilon * (1 + 1e-12), "disturbance exceeds its bound"
        return e


class FlowModel:
    """Precomputed operators for evaluating the flow on flat state vectors."""

    def __init__(self, spec: GameSpec, mirrors: Mirrors, r: float):
        self.spec = spec
        self.mirrors = mirrors
        self.r = float(r)
        self.nx, self.ny = spec.dim_x, spec.dim_y
        self.sl = block_slices(self.nx, self.ny)
        self.dim = 4 * (self.nx + self.ny)
        self.B, self.BT = spec.B, np.ascontiguousarray(spec.B.T)
        self.L1, self.L2 = spec.L1, spec.L2
        nx, ny = self.nx, self.ny
        # common-time-scale path: the linear part of (u', gam', v', nu') as one matrix
        # acting on [x, xt, gamma, y, yt, nu], up to the factor t/r
        Z = np.zeros
        self._M = np.block([
            [-self.L1, Z((nx, nx)), -self.L1, Z((nx, ny)), -self.B, Z((nx, ny))],
            [Z((nx, nx)), self.L1, Z((nx, nx)), Z((nx, ny)), Z((nx, ny)), Z((nx, ny))],
            [Z((ny, nx)), self.BT, Z((ny, nx)), -self.L2, Z((ny, ny)), -self.L2],
            [Z((ny, nx)), Z((ny, nx)), Z((ny, nx)), Z((ny, ny)), self.L2, Z((ny, ny))],
        ])
        self._w = np.empty(3 * (nx + ny))
        self._clamp = mirrors.psi._clamp and mirrors.phi._clamp

    def split(self, z):
        s = self.sl
        return (z[s["x"]], z[s["lam"]], z[s["u"]], z[s["gamma"]], z[s["y"]], z[s["mu"]], z[s["v"]], z[s["nu"]])

    def _mirror(self, u, v, sides):
        """``grad psi*(u)``, ``grad phi*(v)``; with ``sides`` the clamp branch is frozen."""
        if not self._clamp:
            return self.mirrors.psi.conjugate_gradient(u), self.mirrors.phi.conjugate_gradient(v)
        psi, phi = self.mirrors.psi, self.mirrors.phi
        if sides is None:
            return np.minimum(np.maximum(u, psi.lower), psi.upper), np.minimum(np.maximum(v, phi.lower), phi.upper)
        su, sv = sides[:self.nx], sides[self.nx:]
        xt = np.where(su == 0, u, np.where(su < 0, psi.lower, psi.upper))
        yt = np.where(sv == 0, v, np.where(sv < 0, phi.lower, phi.upper))
        return xt, yt

    def rhs(self, t: float, z: np.ndarray, sides=None) -> np.ndarray:
        """Right-hand side with the common time scale ``t``.

        Here the extrapolated points reduce to ``grad psi*(u)``, ``gamma``,
        ``grad phi*(v)`` and ``nu``, so the linear part is a single matvec.
        """
        nx, ny = self.nx, self.ny
        x, lam, u, gam = z[:nx], z[nx:2 * nx], z[2 * nx:3 * nx], z[3 * nx:4 * nx]
        o = 4 * nx
        y, mu, v, nu = z[o:o + ny], z[o + ny:o + 2 * ny], z[o + 2 * ny:o + 3 * ny], z[o + 3 * ny:]
        xt, yt = self._mirror(u, v, sides)
        w = self._w
        w[:nx], w[nx:2 * nx], w[2 * nx:3 * nx] = x, xt, gam
        w[3 * nx:3 * nx + ny], w[3 * nx + ny:3 * nx + 2 * ny], w[3 * nx + 2 * ny:] = y, yt, nu
        h = t / self.r
        lin = self._M @ w
        lin[:nx] -= self.spec._grad_f(x)
        lin[2 * nx:2 * nx + ny] -= self.spec._grad_g(y)
        out = np.empty_like(z)
        c = 1.0 / h
        out[:nx] = c * (xt - x)
        out[nx:2 * nx] = c * (gam - lam)
        out[2 * nx:4 * nx] = h * lin[:2 * nx]
        out[o:o + ny] = c * (yt - y)
        out[o + ny:o + 2 * ny] = c * (nu - mu)
        out[o + 2 * ny:] = h * lin[2 * nx:]
        return out

    def rhs_scaled(self, sx, sy, z: np.ndarray, sides=None) -> np.ndarray:
        """Right-hand side with per-component time scales ``sx`` (min side) and ``sy`` (max side).

        ``sx``/``sy`` are scalars for the flow or per-component arrays (one timer
        per agent, repeated over the agent's block) for the hybrid flow.
        """
        x, lam, u, gam, y, mu, v, nu = self.split(z)
        spec, r = self.spec, self.r
        xt, yt = self._mirror(u, v, sides)
        cx, cy = r / sx, r / sy
        dx = cx * (xt - x)
        dlam = cx * (gam - lam)
        dy = cy * (yt - y)
        dmu = cy * (nu - mu)
        hx, hy = sx / r, sy / r
        # same-network extrapolation uses each neighbour's own scale, so these are
        # exactly grad psi*(u), gamma, grad phi*(v), nu
        lam_e = lam + hx * dlam
        x_e = x + hx * dx
        y_e = y + hy * dy
        mu_e = mu + hy * dmu
        # cross terms use the receiving agent's own time scale
        By_e = self.B @ y + hx * (self.B @ dy)
        BTx_e = self.BT @ x + hy * (self.BT @ dx)
        du = -hx * (spec.grad_f(x) + By_e + self.L1 @ lam_e + self.L1 @ x)
        dgam = hx * (self.L1 @ x_e)
        dv = hy * (BTx_e - spec.grad_g(y) - self.L2 @ mu_e - self.L2 @ y)
        dnu = hy * (self.L2 @ y_e)
        return np.concatenate([dx, dlam, du, dgam, dy, dmu, dv, dnu])

    def kinks(self) -> "KinkGeometry | None":
        return KinkGeometry(self) if self._clamp else None


class KinkGeometry:
    """Faces where the clamp mirror map switches branch, in the ``u`` and ``v`` coordinates."""

    def __init__(self, model: FlowModel):
        s = model.sl
        self.idx = np.r_[np.arange(s["u"].start, s["u"].stop), np.arange(s["v"].start, s["v"].stop)]
        self.lo = np.concatenate([model.mirrors.psi.lower, model.mirrors.phi.lower])
        self.hi = np.concatenate([model.mirrors.psi.upper, model.mirrors.phi.upper])

    def sides(self, z) -> np.ndarray:
        w = z[self.idx]
        return np.where(w < self.lo, -1, np.where(w > self.hi, 1, 0)).astype(np.int8)

    def first_crossing(self, z0, z1, d0, d1, h, old, new):
        """Earliest face crossing on ``[0, h]`` from a cubic Hermite interpolant.

        Returns ``(theta, coordinate, side after crossing)`` with ``theta`` in [0, 1].
        """
        best = (np.inf, -1, 0)
        w0, w1 = z0[self.idx], z1[self.idx]
        g0, g1 = h * d0[self.idx], h * d1[self.idx]
        for i in np.flatnonzero(new != old):
            a, b = int(old[i]), int(new[i])
            if a == -1 or (a == 0 and b == -1):
                face = self.lo[i]
            else:
                face = self.hi[i]
            after = b if a == 0 else 0
            coeffs = [2 * w0[i] + g0[i] - 2 * w1[i] + g1[i], -3 * w0[i] - 2 * g0[i] + 3 * w1[i] - g1[i], g0[i], w0[i] - face]
            roots = np.roots(coeffs) if np.any(coeffs[:3]) else np.array([])
            real = roots[np.abs(roots.imag) < 1e-9].real
            real = real[(real >= -1e-12) & (real <= 1 + 1e-12)]
            if real.size:
                theta = float(np.clip(real.min(), 0.0, 1.0))
            else:
                theta = float(np.clip((face - w0[i]) / (w1[i] - w0[i]), 0.0, 1.0))
            if theta < best[0]:
                best = (theta, int(i), after)
        return best


def flow_rhs(spec: GameSpec, mirrors: Mirrors, params: FlowParams, state: FlowState) -> FlowState:
    """Time derivative of every block; the returned ``t`` field is ``dt/dt = 1``."""
    if state.t <= 0:
        raise ValueError("flow is defined only for t > 0")
    model = FlowModel(spec, mirrors, params.r)
    dz = model.rhs(state.t, state.to_vector())
    return FlowState.from_vector(dz, 1.0, model.nx, model.ny)


def init_from(u0, gamma0, v0, nu0, mirrors: Mirrors, t0: float = 1.0, check_domain: bool = True, tol: float = 1e-12) -> FlowState:
    """Initial state with ``x = grad psi*(u0)``, ``lam = gamma0``, ``y = grad phi*(v0)``, ``mu = nu0``."""
    u0, v0 = np.array(u0, dtype=float), np.array(v0, dtype=float)
    gamma0, nu0 = np.array(gamma0, dtype=float), np.array(nu0, dtype=float)
    if check_domain:
        if mirrors.psi.distance(u0) > tol:
            raise DomainError("u0 must lie in X")
        if mirrors.phi.distance(v0) > tol:
            raise DomainError("v0 must lie in Y")
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    x0 = mirrors.psi.conjugate_gradient(u0)
    y0 = mirrors.phi.conjugate_gradient(v0)
    return FlowState(x0, gamma0.copy(), u0, gamma0, y0, nu0.copy(), v0, nu0, float(t0))


def default_initial_state(spec: GameSpec, mirrors: Mirrors, t0: float = 1.0) -> FlowState:
    """``u0``/``v0`` at the projection of the origin, zero multipliers."""
    u0 = mirrors.psi.project(np.zeros(spec.dim_x))
    v0 = mirrors.phi.project(np.zeros(spec.dim_y))
    return init_from(u0, np.zeros(spec.dim_x), v0, np.zeros(spec.dim_y), mirrors, t0)


def rk4_step(f, t, z, h, k1=None):
    k1 = f(t, z) if k1 is None else k1
    k2 = f(t + 0.5 * h, z + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, z + 0.5 * h * k2)
    k4 = f(t + h, z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(f, t, z, h):
    return z + h * f(t, z)


STEPPERS = {"rk4": rk4_step, "euler": euler_step}

MAX_KINK_EVENTS = 8


def rk4_kink_step(f, geom: KinkGeometry, t, z, h, shift=None):
    """RK4 step that splits at clamp-face crossings.

    ``f(t, z, sides)`` evaluates the field with the clamp branches frozen, so
    each sub-step integrates a smooth field and keeps fourth order. ``shift``
    is the disturbance added to the state argument (branches are read at
    ``z + shift``).
    """
    off = 0.0 if shift is None else shift
    sides = geom.sides(z + off)
    rem = h
    for _ in range(MAX_KINK_EVENTS):

        def g(s, w, _sides=sides):
            return f(s, w, _sides)

        k1 = g(t, z)
        z1 = rk4_step(g, t, z, rem, k1)
        new = geom.sides(z1 + off)
        if np.array_equal(new, sides):
            return z1
        theta, i, after = geom.first_crossing(z + off, z1 + off, k1, g(t + rem, z1), rem, sides, new)
        if theta >= 1.0 - 1e-9:
            return z1
        s = theta * rem
        if s > 0:
            z = rk4_step(g, t, z, s, k1)
            t += s
            rem -= s
        sides = geom.sides(z + off)
        sides[i] = after
    return rk4_step(lambda s, w: f(s, w, sides), t, z, rem)


def perturbed(f, e):
    """``z' = F(t, z + e) + e`` for a disturbance value ``e`` held over one step."""

    def g(t, z, *args):
        return f(t, z + e, *args) + e

    return g


def make_stepper(params: FlowParams, geom: KinkGeometry | None = None):
    """``step(f, t, z, h, e)`` for the configured scheme; ``f`` accepts an optional ``sides``."""
    if params.scheme == "rk4" and params.kink_events and geom is not None:

        def step(f, t, z, h, e=None):
            return rk4_kink_step(f if e is None else perturbed(f, e), geom, t, z, h, e)

        return step
    base = STEPPERS[params.scheme]

    def step(f, t, z, h, e=None):
        return base(f if e is None else perturbed(f, e), t, z, h)

    return step


def is_diverged(z) -> bool:
    return not np.all(np.isfinite(z)) or float(np.max(np.abs(z))) > DIVERGENCE_NORM


class Sampler:
    """Appends metric samples of a state to a :class:`TrajectoryRecord`."""

    def __init__(self, spec: GameSpec, mirrors: Mirrors, r: float, ref: SaddleReference | None, record: TrajectoryRecord, keep_states: bool = False):
        self.spec, self.mirrors, self.r, self.ref = spec, mirrors, r, ref
        self.rec = record
        self.keep_states = keep_states
        self.lyap = LyapunovEvaluator(spec, mirrors, ref) if ref is not None else None
        nx, ny = spec.dim_x, spec.dim_y
        self.cut = np.cumsum([0, nx, nx, nx, nx, ny, ny, ny, ny])

    def __call__(self, state: FlowState, kind: str = "flow", alpha: float | None = None, flagged: bool = False, tau=None, j: int = 0):
        self.vector(state.to_vector(), state.t, kind, alpha, flagged, tau, j)

    def vector(self, z, t, kind: str = "flow", alpha: float | None = None, flagged: bool = False, tau=None, j: int = 0):
        rec, c, spec = self.rec, self.cut, self.spec
        rec.t.append(float(t))
        rec.j.append(int(j))
        rec.kind.append(kind)
        if self.lyap is not None:
            gap, terms = self.lyap.terms(z)
            a = float(t) if alpha is None else alpha
            rec.gap.append(gap)
            rec.V.append(a * a / self.r * gap + self.r * sum(terms))
        else:
            rec.gap.append(float("nan"))
            rec.V.append(float("nan"))
        rec.V_flag.append(bool(flagged))
        x, y = z[c[0]:c[1]], z[c[4]:c[5]]
        rec.U.append(float(spec._f_tilde(x) + x @ (spec.B @ y) - spec._g_tilde(y)))
        rec.norms.append(np.sqrt(np.add.reduceat(z * z, c[:-1])))
        rec.dist_x.append(self.mirrors.psi.distance(x))
        rec.dist_y.append(self.mirrors.phi.distance(y))
        if tau is not None:
            rec.tau.append(np.array(tau, dtype=float))
        if self.keep_states:
            rec.states.append(np.array(z, dtype=float))


def _march(model_rhs, z, t, t_end, params: FlowParams, signal, on_step, sample_every, geom=None):
    """Fixed-step integration of ``z' = model_rhs(t, z)``; returns ``(z, t, diverged)``."""
    step = make_stepper(params, geom)
    n_steps = int(np.ceil((t_end - t) / params.dt - 1e-9))
    t_start = t
    for k in range(1, n_steps + 1):
        t_next = min(t_start + k * params.dt, t_end)
        h = t_next - t
        z = step(model_rhs, t, z, h, None if signal is None else signal(t))
        t = t_next
        if is_diverged(z):
            return z, t, True
        if k % sample_every == 0 or k == n_steps:
            on_step(z, t)
    return z, t, False


def integrate(
    spec: GameSpec,
    mirrors: Mirrors,
    params: FlowParams,
    state: FlowState,
    t_end: float,
    disturbance: DisturbanceSpec | None = None,
    sample_every: int = 10,
    reference: SaddleReference | None = None,
    keep_states: bool = False,
) -> TrajectoryRecord:
    """Integrate the accelerated flow from ``state`` to ``t_end``.

    Records gap and Lyapunov values when ``reference`` is given. A non-finite
    state or a state entry above 1e9 ends the run with ``diverged`` set; the
    last finite sample stays in the record.
    """
    if t_end <= state.t:
        raise ValueError("t_end must exceed the initial time")
    disturbance = disturbance or DisturbanceSpec()
    model = FlowModel(spec, mirrors, params.r)
    rec = TrajectoryRecord(algorithm="accelerated_flow")
    ref = reference.aligned(spec.n1, spec.n2, state.gamma, state.nu) if reference is not None else None
    sample = Sampler(spec, mirrors, params.r, ref, rec, keep_states)
    sample(state)
    if ref is not None:
        rec.V0 = rec.V[0]
    rec.m0 = saddle_S(spec, state.x, state.lam, state.y, state.mu)
    signal = disturbance.signal(model.dim) if disturbance.active else None

    def on_step(z, t):
        sample.vector(z, t)

    t_wall = time.perf_counter()
    z, t, diverged = _march(model.rhs, state.to_vector(), state.t, t_end, params, signal, on_step, max(1, sample_every), model.kinks())
    rec.wall_time = time.perf_counter() - t_wall
    rec.diverged = diverged
    if diverged:
        rec.divergence_time = t
    rec.final_state = FlowState.from_vector(z, t, model.nx, model.ny)
    return rec


def integrate_baseline(
    spec: GameSpec,
    mirrors: Mirrors,
    params: FlowParams,
    state: FlowState,
    t_end: float,
    disturbance: DisturbanceSpec | None = None,
    sample_every: int = 10,
    reference: SaddleReference | None = None,
    keep_states: bool = False,
) -> TrajectoryRecord:
    """Non-accelerated primal-dual flow on ``(x, lam, y, mu)``.

    The auxiliary blocks ``u, gamma, v, nu`` are carried along equal to
    ``x, lam, y, mu`` so the same record schema and Lyapunov sampler apply.
    """
    if t_end <= state.t:
        raise ValueError("t_end must exceed the initial time")
    disturbance = disturbance or DisturbanceSpec()
    nx, ny = spec.dim_x, spec.dim_y
    s = np.cumsum([0, nx, nx, ny, ny])
    rec = TrajectoryRecord(algorithm="baseline_primal_dual")
    ref = reference.aligned(spec.n1, spec.n2, state.lam, state.mu) if reference is not None else None
    sample = Sampler(spec, mirrors, params.r, ref, rec, keep_states)

    def full(w):
        x, lam, y, mu = w[s[0]:s[1]], w[s[1]:s[2]], w[s[2]:s[3]], w[s[3]:s[4]]
        return np.concatenate([x, lam, x, lam, y, mu, y, mu])

    def as_state(w, t):
        return FlowState.from_vector(full(w), t, nx, ny)

    def rhs(t, w, *_):
        return np.concatenate(baseline_rhs(spec, mirrors, w[s[0]:s[1]], w[s[1]:s[2]], w[s[2]:s[3]], w[s[3]:s[4]]))

    w0 = np.concatenate([state.x, state.lam, state.y, state.mu])
    sample(as_state(w0, state.t))
    rec.m0 = saddle_S(spec, state.x, state.lam, state.y, state.mu)
    if ref is not None:
        rec.V0 = rec.V[0]
    signal = disturbance.signal(w0.size) if disturbance.active else None
    t_wall = time.perf_counter()
    w, t, diverged = _march(rhs, w0, state.t, t_end, params, signal, lambda w, t: sample.vector(full(w), t), max(1, sample_every))
    rec.wall_time = time.perf_counter() - t_wall
    rec.diverged = diverged
    if diverged:
        rec.divergence_time = t
    rec.final_state = as_state(w, t)
    return rec

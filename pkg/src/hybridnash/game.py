"""Two-subnetwork zero-sum game with bilinear coupling and its augmented Lagrangian.

Stacked vectors follow the agent-major layout ``x = col(x_1, ..., x_n1)``.
The augmented Lagrangian is

    S(x, lam, y, mu) = U(x, y) + lam' L1 x - mu' L2 y + x' L1 x / 2 - y' L2 y / 2

with ``U(x, y) = sum_i f_i(x_i) + x' B y - sum_j g_j(y_j)``. ``S`` is convex in
``(x, mu)`` and concave in ``(y, lam)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .graph import NetworkTopology, SubnetworkGraph, kron_laplacian, laplacian, ring_topology
from .mirror import Mirrors, QuadraticOnBox
from . import mirror as _mirror


class DimensionError(ValueError):
    pass


# --- cost families --------------------------------------------------------------
#
# Each family maps a parameter dict to (value, gradient) on a single agent block,
# plus a vectorised gradient over all agents at once (rows = agents) so the flow
# right-hand side does not loop in Python.


def _lse_rows(Z):
    return np.logaddexp.reduce(Z, axis=1)


def _lse_value(x, shift):
    return float(logsumexp(x - shift))


def _lse_grad_rows(X, S):
    Z = X - S
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _expquad_value(y, a, b):
    return float(np.exp(y[0] - a) - y[0] + (y[1] - b) ** 2)


def _expquad_grad_rows(Y, A, Bc):
    G = np.empty_like(Y)
    G[:, 0] = np.exp(Y[:, 0] - A) - 1.0
    G[:, 1] = 2.0 * (Y[:, 1] - Bc)
    return G


def _quad_value(x, weight, center):
    d = x - center
    return 0.5 * weight * float(d @ d)


def _quad_grad_rows(X, W, C):
    return W[:, None] * (X - C)


@dataclass(frozen=True)
class CostOracle:
    """Smooth convex cost for one agent.

    ``family``/``params`` identify the oracle for serialisation; oracles built
    from bare callables carry ``family="custom"`` and cannot be written to a
    config file.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    family: str = "custom"
    params: dict = field(default_factory=dict)


def log_sum_exp_cost(shift) -> CostOracle:
    """``log sum_m exp(x_m - shift_m)``."""
    shift = np.asarray(shift, dtype=float)
    return CostOracle(
        dim=shift.size,
        value=lambda x: _lse_value(np.asarray(x, dtype=float), shift),
        gradient=lambda x: _lse_grad_rows(np.asarray(x, dtype=float)[None, :], shift[None, :])[0],
        family="log_sum_exp",
        params={"shift": shift.tolist()},
    )


def exp_quad_cost(a: float, b: float) -> CostOracle:
    """``exp(y_1 - a) - y_1 + (y_2 - b)^2`` on R^2."""
    return CostOracle(
        dim=2,
        value=lambda y: _expquad_value(np.asarray(y, dtype=float), a, b),
        gradient=lambda y: _expquad_grad_rows(np.asarray(y, dtype=float)[None, :], np.array([a]), np.array([b]))[0],
        family="exp_quad",
        params={"a": float(a), "b": float(b)},
    )


def quadratic_cost(center, weight: float = 1.0) -> CostOracle:
    """``weight/2 * ||x - center||^2``."""
    center = np.asarray(center, dtype=float)
    return CostOracle(
        dim=center.size,
        value=lambda x: _quad_value(np.asarray(x, dtype=float), weight, center),
        gradient=lambda x: weight * (np.asarray(x, dtype=float) - center),
        family="quadratic",
        params={"center": center.tolist(), "weight": float(weight)},
    )


def zero_cost(dim: int) -> CostOracle:
    return CostOracle(dim=dim, value=lambda x: 0.0, gradient=lambda x: np.zeros(dim), family="zero", params={"dim": dim})


_FAMILY_BUILDERS = {
    "log_sum_exp": lambda p: log_sum_exp_cost(p["shift"]),
    "exp_quad": lambda p: exp_quad_cost(p["a"], p["b"]),
    "quadratic": lambda p: quadratic_cost(p["center"], p.get("weight", 1.0)),
    "zero": lambda p: zero_cost(int(p["dim"])),
}


def cost_from_dict(d: dict) -> CostOracle:
    family = d["family"]
    if family not in _FAMILY_BUILDERS:
        raise ValueError(f"unknown cost family {family!r}")
    return _FAMILY_BUILDERS[family](d.get("params", {}))


def _stacked_value(oracles: list[CostOracle], p: int) -> Callable[[np.ndarray], float]:
    """Vectorised sum of costs when all oracles share a known family."""
    families = {o.family for o in oracles}
    n = len(oracles)
    if families == {"log_sum_exp"}:
        S = np.array([o.params["shift"] for o in oracles])
        return lambda x: float(np.sum(_lse_rows(x.reshape(n, p) - S)))
    if families == {"exp_quad"}:
        A = np.array([o.params["a"] for o in oracles])
        Bc = np.array([o.params["b"] for o in oracles])

        def expquad(y):
            Y = y.reshape(n, p)
            return float(np.sum(np.exp(Y[:, 0] - A) - Y[:, 0] + (Y[:, 1] - Bc) ** 2))

        return expquad
    if families == {"quadratic"}:
        W = np.array([o.params["weight"] for o in oracles])
        C = np.array([o.params["center"] for o in oracles])
        return lambda x: float(0.5 * np.sum(W * np.sum((x.reshape(n, p) - C) ** 2, axis=1)))
    return lambda x: sum(o.value(b) for o, b in zip(oracles, x.reshape(n, p)))


def _stacked_gradient(oracles: list[CostOracle], p: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised stacked gradient when all oracles share a known family."""
    families = {o.family for o in oracles}
    n = len(oracles)
    if families == {"log_sum_exp"}:
        S = np.array([o.params["shift"] for o in oracles])
        return lambda x: _lse_grad_rows(x.reshape(n, p), S).ravel()
    if families == {"exp_quad"}:
        A = np.array([o.params["a"] for o in oracles])
        Bc = np.array([o.params["b"] for o in oracles])
        return lambda y: _expquad_grad_rows(y.reshape(n, p), A, Bc).ravel()
    if families == {"quadratic"}:
        W = np.array([o.params["weight"] for o in oracles])
        C = np.array([o.params["center"] for o in oracles])
        return lambda x: _quad_grad_rows(x.reshape(n, p), W, C).ravel()
    if families == {"zero"}:
        return lambda x: np.zeros(n * p)

    def loop(x):
        return np.concatenate([o.gradient(b) for o, b in zip(oracles, x.reshape(n, p))])

    return loop


# --- game ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GameSpec:
    topology: NetworkTopology
    f: list
    g: list
    H: dict
    constraints_x: list
    constraints_y: list
    name: str = "custom"
    B: np.ndarray = field(init=False, repr=False)
    L1: np.ndarray = field(init=False, repr=False)
    L2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        topo = self.topology
        if len(self.f) != topo.n1 or len(self.g) != topo.n2:
            raise DimensionError("need one cost oracle per agent in each subnetwork")
        if len(self.constraints_x) != topo.n1 or len(self.constraints_y) != topo.n2:
            raise DimensionError("need one generating function per agent in each subnetwork")
        p1s = {o.dim for o in self.f} | {c.dim for c in self.constraints_x}
        p2s = {o.dim for o in self.g} | {c.dim for c in self.constraints_y}
        if len(p1s) != 1 or len(p2s) != 1:
            raise DimensionError("all agents in a subnetwork must share one block dimension")
        p1, p2 = p1s.pop(), p2s.pop()
        B = np.zeros((topo.n1 * p1, topo.n2 * p2))
        H = {}
        for (i, j), block in self.H.items():
            block = np.asarray(block, dtype=float).reshape(p1, p2)
            if not np.any(block):
                continue
            if (i, j) not in topo.cross:
                raise DimensionError(f"coupling block H[{i},{j}] is nonzero but ({i}, {j}) is not a cross edge")
            B[i * p1:(i + 1) * p1, j * p2:(j + 1) * p2] = block
            H[(i, j)] = block
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "L1", kron_laplacian(laplacian(topo.g1), p1))
        object.__setattr__(self, "L2", kron_laplacian(laplacian(topo.g2), p2))
        object.__setattr__(self, "_p", (p1, p2))
        object.__setattr__(self, "_grad_f", _stacked_gradient(self.f, p1))
        object.__setattr__(self, "_grad_g", _stacked_gradient(self.g, p2))
        object.__setattr__(self, "_f_tilde", _stacked_value(self.f, p1))
        object.__setattr__(self, "_g_tilde", _stacked_value(self.g, p2))

    @property
    def n1(self) -> int:
        return self.topology.n1

    @property
    def n2(self) -> int:
        return self.topology.n2

    @property
    def p1(self) -> int:
        return self._p[0]

    @property
    def p2(self) -> int:
        return self._p[1]

    @property
    def dim_x(self) -> int:
        return self.n1 * self.p1

    @property
    def dim_y(self) -> int:
        return self.n2 * self.p2

    def mirrors(self) -> Mirrors:
        return Mirrors(self.constraints_x, self.constraints_y)

    def f_tilde(self, x) -> float:
        return self._f_tilde(np.asarray(x, dtype=float))

    def g_tilde(self, y) -> float:
        return self._g_tilde(np.asarray(y, dtype=float))

    def grad_f(self, x):
        return self._grad_f(x)

    def grad_g(self, y):
        return self._grad_g(y)

    def check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise DimensionError(f"x must have shape ({self.dim_x},), got {x.shape}")
        return x

    def check_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim_y,):
            raise DimensionError(f"y must have shape ({self.dim_y},), got {y.shape}")
        return y

    def to_dict(self) -> dict:
        for o in list(self.f) + list(self.g):
            if o.family == "custom":
                raise ValueError("game with custom cost oracles cannot be serialised")
        topo = self.topology
        return {
            "name": self.name,
            "g1": topo.g1.weights.tolist(),
            "g2": topo.g2.weights.tolist(),
            "cross": sorted([list(e) for e in topo.cross]),
            "f": [{"family": o.family, "params": o.params} for o in self.f],
            "g": [{"family": o.family, "params": o.params} for o in self.g],
            "H": [{"edge": [i, j], "block": b.tolist()} for (i, j), b in sorted(self.H.items())],
            "constraints_x": [c.to_dict() for c in self.constraints_x],
            "constraints_y": [c.to_dict() for c in self.constraints_y],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameSpec":
        topo = NetworkTopology(
            SubnetworkGraph(np.array(d["g1"], dtype=float)),
            SubnetworkGraph(np.array(d["g2"], dtype=float)),
            frozenset(tuple(e) for e in d["cross"]),
        )
        return cls(
            topology=topo,
            f=[cost_from_dict(c) for c in d["f"]],
            g=[cost_from_dict(c) for c in d["g"]],
            H={tuple(h["edge"]): np.array(h["block"], dtype=float) for h in d["H"]},
            constraints_x=[_mirror.from_dict(c) for c in d["constraints_x"]],
            constraints_y=[_mirror.from_dict(c) for c in d["constraints_y"]],
            name=d.get("name", "custom"),
        )


@dataclass(frozen=True)
class SaddleReference:
    x_star: np.ndarray
    lambda_star: np.ndarray
    y_star: np.ndarray
    mu_star: np.ndarray
    kkt_residual: float

    def is_valid(self, tol: float = 1e-6) -> bool:
        return self.kkt_residual < tol

    def aligned(self, n1: int, n2: int, gamma0=None, nu0=None) -> "SaddleReference":
        """Shift the multipliers along the consensus direction to match ``gamma0``/``nu0``.

        The Laplacian null space makes the multipliers unique only up to a
        consensus component, and the flows conserve that component of
        ``gamma`` and ``nu``.
        """
        lam, mu = self.lambda_star, self.mu_star
        if gamma0 is not None:
            lam = _match_consensus_mean(lam, np.asarray(gamma0, dtype=float), n1)
        if nu0 is not None:
            mu = _match_consensus_mean(mu, np.asarray(nu0, dtype=float), n2)
        return SaddleReference(self.x_star, lam, self.y_star, mu, self.kkt_residual)

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "y_star": self.y_star.tolist(),
            "mu_star": self.mu_star.tolist(),
            "kkt_residual": self.kkt_residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SaddleReference":
        return cls(
            np.array(d["x_star"], dtype=float),
            np.array(d["lambda_star"], dtype=float),
            np.array(d["y_star"], dtype=float),
            np.array(d["mu_star"], dtype=float),
            float(d["kkt_residual"]),
        )


def _match_consensus_mean(v, target, n):
    V = v.reshape(n, -1)
    return (V - V.mean(axis=0) + target.reshape(n, -1).mean(axis=0)).ravel()


def consensus_mean(v, n: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(n, -1).mean(axis=0)


def payoff_U(spec: GameSpec, x, y) -> float:
    x, y = spec.check_x(x), spec.check_y(y)
    return spec.f_tilde(x) + float(x @ spec.B @ y) - spec.g_tilde(y)


def saddle_S(spec: GameSpec, x, lam, y, mu) -> float:
    x, y = spec.check_x(x), spec.check_y(y)
    lam, mu = spec.check_x(lam), spec.check_y(mu)
    L1x = spec.L1 @ x
    L2y = spec.L2 @ y
    return payoff_U(spec, x, y) + float(lam @ L1x) - float(mu @ L2y) + 0.5 * float(x @ L1x) - 0.5 * float(y @ L2y)


def grad_S(spec: GameSpec, x, lam, y, mu):
    """Partial gradients ``(dS/dx, dS/dlam, dS/dy, dS/dmu)``."""
    x, y = spec.check_x(x), spec.check_y(y)
    lam, mu = spec.check_x(lam), spec.check_y(mu)
    gx = spec.grad_f(x) + spec.B @ y + spec.L1 @ lam + spec.L1 @ x
    glam = spec.L1 @ x
    gy = spec.B.T @ x - spec.grad_g(y) - spec.L2 @ mu - spec.L2 @ y
    gmu = -(spec.L2 @ y)
    return gx, glam, gy, gmu


def duality_gap(spec: GameSpec, ref: SaddleReference, x, lam, y, mu) -> float:
    """``S(x, lam*, y*, mu) - S(x*, lam, y, mu*)``; nonnegative on X x Y for an exact saddle."""
    return saddle_S(spec, x, ref.lambda_star, ref.y_star, mu) - saddle_S(spec, ref.x_star, lam, y, ref.mu_star)


def interiority_margin(spec: GameSpec, ref: SaddleReference) -> float:
    """Smallest distance from the reference primal points to a box face (inf if no boxes)."""
    margin = np.inf
    for cons, z, p in ((spec.constraints_x, ref.x_star, spec.p1), (spec.constraints_y, ref.y_star, spec.p2)):
        for c, b in zip(cons, np.reshape(z, (-1, p))):
            if isinstance(c, QuadraticOnBox):
                margin = min(margin, float(np.min(b - c.lower)), float(np.min(c.upper - b)))
    return margin


def check_interior(spec: GameSpec, ref: SaddleReference, tol: float = 1e-6) -> bool:
    """Warn (do not fail) when the equilibrium touches a box face."""
    margin = interiority_margin(spec, ref)
    if margin <= tol:
        warnings.warn(
            f"equilibrium of game {spec.name!r} lies on the boundary of the constraint boxes "
            f"(margin {margin:.3g}); the interiority assumption does not hold",
            stacklevel=2,
        )
        return False
    return True


# --- builtin games ------------------------------------------------------------------


def build_example1(seed: int = 42, topology: NetworkTopology | None = None) -> GameSpec:
    """Four agents per side, two-dimensional strategies, ``B = I_8``, random boxes.

    ``f_i(x) = log(exp(x_1 - 0.1 i) + exp(x_2 - 0.2 i))`` and
    ``g_j(y) = exp(y_1 - j) - y_1 + (y_2 - 0.3 j)^2`` with 1-based ``i, j``.
    Box lower corners are uniform on [-2, 0]^2, upper corners on [1, 3]^2,
    and ``Y_i = X_i``. The intra-network topology is not part of the original
    example; rings with diagonal cross edges are used unless overridden.
    """
    n, p = 4, 2
    topo = topology if topology is not None else ring_topology(n, n)
    rng = np.random.default_rng(seed)
    lower = rng.uniform(-2.0, 0.0, size=(n, p))
    upper = rng.uniform(1.0, 3.0, size=(n, p))
    f = [log_sum_exp_cost([0.1 * i, 0.2 * i]) for i in range(1, n + 1)]
    g = [exp_quad_cost(float(j), 0.3 * j) for j in range(1, n + 1)]
    H = {(i, i): np.eye(p) for i in range(n)}
    boxes = [QuadraticOnBox(lower[i], upper[i]) for i in range(n)]
    boxes_y = [QuadraticOnBox(lower[i], upper[i]) for i in range(n)]
    return GameSpec(topo, f, g, H, boxes, boxes_y, name="example1")


def build_quadratic_game(
    n1: int = 3,
    n2: int = 3,
    p: int = 2,
    coupling: float = 0.0,
    seed: int = 0,
    box: float | None = None,
) -> GameSpec:
    """Quadratic test game with a closed-form equilibrium.

    ``f_i = |x - a_i|^2 / 2`` and ``g_j = |y - b_j|^2 / 2`` with coupling
    ``H_ii = coupling * I`` on diagonal cross edges. With ``box=None`` the sets
    are unconstrained; otherwise each box is ``[-box, box]^p``.
    """
    rng = np.random.default_rng(seed)
    topo = ring_topology(n1, n2)
    a = rng.uniform(-1.0, 1.0, size=(n1, p))
    b = rng.uniform(-1.0, 1.0, size=(n2, p))
    f = [quadratic_cost(a[i]) for i in range(n1)]
    g = [quadratic_cost(b[j]) for j in range(n2)]
    H = {(i, i): coupling * np.eye(p) for i in range(min(n1, n2))} if coupling else {}
    if box is None:
        cx = [_mirror.QuadraticFree(p) for _ in range(n1)]
        cy = [_mirror.QuadraticFree(p) for _ in range(n2)]
    else:
        cx = [QuadraticOnBox(-box * np.ones(p), box * np.ones(p)) for _ in range(n1)]
        cy = [QuadraticOnBox(-box * np.ones(p), box * np.ones(p)) for _ in range(n2)]
    return GameSpec(topo, f, g, H, cx, cy, name="quadratic")


def quadratic_game_equilibrium(spec: GameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form consensus equilibrium of an unconstrained :func:`build_quadratic_game`.

    With consensus ``x_i = s``, ``y_j = w`` the reduced game is
    ``n1/2 |s - abar|^2 + c m s'w - n2/2 |w - bbar|^2`` where ``m`` counts the
    coupled pairs, giving the 2x2-block linear system solved below.
    """
    n1, n2 = spec.n1, spec.n2
    a = np.array([o.params["center"] for o in spec.f])
    b = np.array([o.params["center"] for o in spec.g])
    cm = sum(np.asarray(h)[0, 0] for h in spec.H.values())
    # n1 (s - abar) + cm w = 0 ;  cm s - n2 (w - bbar) = 0
    M = np.array([[n1, cm], [cm, -n2]], dtype=float)
    rhs = np.stack([n1 * a.mean(axis=0), -n2 * b.mean(axis=0)])
    sol = np.linalg.solve(M, rhs)
    return np.tile(sol[0], n1), np.tile(sol[1], n2)

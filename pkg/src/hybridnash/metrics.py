"""Lyapunov functions, duality gap tracking, KKT residuals, the reference saddle solver,
and convergence-rate estimates."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .game import GameSpec, SaddleReference, consensus_mean, duality_gap, grad_S
from .mirror import Mirrors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LyapunovSample:
    t: float
    j: int
    V: float
    gap: float
    bregman_terms: tuple[float, float, float, float]
    alpha: float
    flagged: bool = False


@dataclass(frozen=True)
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    r_squared: float
    n: int


def _r_of(params) -> float:
    return float(getattr(params, "r", params))


def lyapunov_terms(spec: GameSpec, mirrors: Mirrors, ref: SaddleReference, state):
    """Duality gap and the four Bregman terms (u, gamma, v, nu) at ``state``.

    The dual reference points are ``u* = grad psi(x*)``, ``v* = grad phi(y*)``,
    ``gamma* = lambda*`` and ``nu* = mu*``; the multiplier terms are half squared
    distances.
    """
    gap = duality_gap(spec, ref, state.x, state.lam, state.y, state.mu)
    u_star = mirrors.psi.gradient(ref.x_star)
    v_star = mirrors.phi.gradient(ref.y_star)
    dg = state.gamma - ref.lambda_star
    dn = state.nu - ref.mu_star
    terms = (
        mirrors.psi.bregman(state.u, u_star),
        0.5 * float(dg @ dg),
        mirrors.phi.bregman(state.v, v_star),
        0.5 * float(dn @ dn),
    )
    return gap, terms


class LyapunovEvaluator:
    """Gap and Bregman terms on flat state vectors, with the reference parts precomputed.

    Agrees with :func:`lyapunov_terms` up to rounding; used by the samplers,
    which evaluate it once per recorded step.
    """

    def __init__(self, spec: GameSpec, mirrors: Mirrors, ref: SaddleReference):
        self.spec, self.mirrors, self.ref = spec, mirrors, ref
        xs, ls, ys, ms = ref.x_star, ref.lambda_star, ref.y_star, ref.mu_star
        B, L1, L2 = spec.B, spec.L1, spec.L2
        # S(x, lam*, y*, mu) = f(x) + a.x - mu.b + x'L1x/2 + c1
        self.a = B @ ys + L1 @ ls
        self.b = L2 @ ys
        self.c1 = -spec._g_tilde(ys) - 0.5 * float(ys @ L2 @ ys)
        # S(x*, lam, y, mu*) = -g(y) + c.y + lam.d - y'L2y/2 + c2
        self.c = B.T @ xs - L2 @ ms
        self.d = L1 @ xs
        self.c2 = spec._f_tilde(xs) + 0.5 * float(xs @ L1 @ xs)
        self.u_star = mirrors.psi.gradient(xs)
        self.v_star = mirrors.phi.gradient(ys)
        nx, ny = spec.dim_x, spec.dim_y
        self.cut = np.cumsum([0, nx, nx, nx, nx, ny, ny, ny, ny])
        self._clamp = mirrors.psi._clamp and mirrors.phi._clamp
        if self._clamp:
            # D(u, u*) = psi*(u) - u.x* + (u*.x* - psi*(u*)) with x* = clamp(u*)
            self._bx = self._bregman_parts(mirrors.psi, self.u_star)
            self._by = self._bregman_parts(mirrors.phi, self.v_star)

    @staticmethod
    def _bregman_parts(stack, u_ref):
        xr = np.minimum(np.maximum(u_ref, stack.lower), stack.upper)
        return stack.lower, stack.upper, xr, float(u_ref @ xr - (xr @ u_ref - 0.5 * (xr @ xr)))

    @staticmethod
    def _bregman(u, parts):
        lo, hi, xr, k = parts
        x = np.minimum(np.maximum(u, lo), hi)
        return max(float(x @ u - 0.5 * (x @ x) - u @ xr + k), 0.0)

    def terms(self, z):
        c = self.cut
        x, lam, u, gam = z[c[0]:c[1]], z[c[1]:c[2]], z[c[2]:c[3]], z[c[3]:c[4]]
        y, mu, v, nu = z[c[4]:c[5]], z[c[5]:c[6]], z[c[6]:c[7]], z[c[7]:c[8]]
        spec = self.spec
        s_hi = spec._f_tilde(x) + self.a @ x - mu @ self.b + 0.5 * (x @ (spec.L1 @ x)) + self.c1
        s_lo = -spec._g_tilde(y) + self.c @ y + lam @ self.d - 0.5 * (y @ (spec.L2 @ y)) + self.c2
        dg = gam - self.ref.lambda_star
        dn = nu - self.ref.mu_star
        if self._clamp:
            du, dv = self._bregman(u, self._bx), self._bregman(v, self._by)
        else:
            du, dv = self.mirrors.psi.bregman(u, self.u_star), self.mirrors.phi.bregman(v, self.v_star)
        return float(s_hi - s_lo), (du, 0.5 * float(dg @ dg), dv, 0.5 * float(dn @ dn))


def _assemble(alpha, r, gap, terms):
    return alpha * alpha / r * gap + r * sum(terms)


def lyapunov_V(spec: GameSpec, mirrors: Mirrors, params, ref: SaddleReference, state) -> LyapunovSample:
    """``(t^2/r) gap + r * (sum of Bregman terms)`` for the time-varying flow."""
    r = _r_of(params)
    gap, terms = lyapunov_terms(spec, mirrors, ref, state)
    t = float(state.t)
    return LyapunovSample(t, int(getattr(state, "j", 0)), _assemble(t, r, gap, terms), gap, terms, t)


def lyapunov_Vtilde(spec: GameSpec, mirrors: Mirrors, params, ref: SaddleReference, state, tol: float = 1e-9) -> LyapunovSample:
    """Lyapunov function of the restarted system with ``alpha`` the common timer value.

    Away from timer consensus ``alpha`` is taken as the largest timer and the
    sample is flagged; such values are diagnostic only.
    """
    r = _r_of(params)
    gap, terms = lyapunov_terms(spec, mirrors, ref, state)
    tau = np.asarray(state.tau, dtype=float)
    flagged = bool(tau.max() - tau.min() > tol)
    alpha = float(tau.max())
    return LyapunovSample(float(state.t), int(state.j), _assemble(alpha, r, gap, terms), gap, terms, alpha, flagged)


# --- KKT residual and the reference solver -----------------------------------------


def kkt_residual(spec: GameSpec, mirrors: Mirrors, x, lam, y, mu, beta: float = 0.5) -> float:
    """Norm of the projected-stationarity and consensus residuals.

    ``x - grad psi*(grad psi(x) - beta dS/dx)``, ``L1 x``, the mirrored ascent
    residual in ``y``, and ``L2 y``.
    """
    gx, glam, gy, gmu = grad_S(spec, x, lam, y, mu)
    rx = x - mirrors.psi.conjugate_gradient(mirrors.psi.gradient(x) - beta * gx)
    ry = y - mirrors.phi.conjugate_gradient(mirrors.phi.gradient(y) + beta * gy)
    return float(np.sqrt(rx @ rx + glam @ glam + ry @ ry + gmu @ gmu))


def baseline_rhs(spec: GameSpec, mirrors: Mirrors, x, lam, y, mu):
    """Non-accelerated mirrored primal-dual gradient flow.

    Descends ``S`` in ``(x, mu)`` and ascends it in ``(y, lam)``.
    """
    gx, glam, gy, gmu = grad_S(spec, x, lam, y, mu)
    dx = mirrors.psi.conjugate_gradient(mirrors.psi.gradient(x) - gx) - x
    dy = mirrors.phi.conjugate_gradient(mirrors.phi.gradient(y) + gy) - y
    return dx, glam, dy, -gmu


def _rk4(f, z, h):
    k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def solve_saddle_reference(
    spec: GameSpec,
    mirrors: Mirrors | None = None,
    horizon: float = 200.0,
    tol: float = 1e-6,
    dt: float = 0.02,
    beta: float = 0.5,
) -> SaddleReference:
    """Saddle point of ``S`` by the baseline primal-dual flow, then a least-squares polish.

    The multipliers are returned with zero consensus mean (they are unique only
    up to the Laplacian null space). If ``tol`` is not reached the best iterate
    is returned with a warning; check ``kkt_residual`` on the result.
    """
    mirrors = mirrors if mirrors is not None else spec.mirrors()
    nx, ny = spec.dim_x, spec.dim_y
    sl = np.cumsum([0, nx, nx, ny, ny])

    def unpack(z):
        return z[sl[0]:sl[1]], z[sl[1]:sl[2]], z[sl[2]:sl[3]], z[sl[3]:sl[4]]

    def field(z):
        return np.concatenate(baseline_rhs(spec, mirrors, *unpack(z)))

    z = np.concatenate([mirrors.psi.project(np.zeros(nx)), np.zeros(nx), mirrors.phi.project(np.zeros(ny)), np.zeros(ny)])
    for _ in range(int(np.ceil(horizon / dt))):
        z = _rk4(field, z, dt)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("baseline flow diverged while solving for the saddle reference")
    res_flow = kkt_residual(spec, mirrors, *unpack(z), beta=beta)
    log.debug("baseline flow KKT residual %.3e", res_flow)

    n1, n2 = spec.n1, spec.n2

    def residual(w):
        x, lam, y, mu = unpack(w)
        gx, glam, gy, gmu = grad_S(spec, x, lam, y, mu)
        rx = x - mirrors.psi.conjugate_gradient(mirrors.psi.gradient(x) - beta * gx)
        ry = y - mirrors.phi.conjugate_gradient(mirrors.phi.gradient(y) + beta * gy)
        return np.concatenate([rx, glam, ry, gmu, consensus_mean(lam, n1), consensus_mean(mu, n2)])

    best = z.copy()
    x, lam, y, mu = unpack(best)
    best[sl[1]:sl[2]] = (lam.reshape(n1, -1) - consensus_mean(lam, n1)).ravel()
    best[sl[3]:sl[4]] = (mu.reshape(n2, -1) - consensus_mean(mu, n2)).ravel()
    best_res = kkt_residual(spec, mirrors, *unpack(best), beta=beta)
    if best_res > 1e-3 * tol:
        sol = least_squares(residual, best, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        cand = sol.x
        cand[sl[0]:sl[1]] = mirrors.psi.project(cand[sl[0]:sl[1]])
        cand[sl[2]:sl[3]] = mirrors.phi.project(cand[sl[2]:sl[3]])
        cand_res = kkt_residual(spec, mirrors, *unpack(cand), beta=beta)
        if cand_res < best_res:
            best, best_res = cand, cand_res
    x, lam, y, mu = (a.copy() for a in unpack(best))
    ref = SaddleReference(x, lam, y, mu, best_res)
    if best_res >= tol:
        warnings.warn(f"saddle reference KKT residual {best_res:.3e} above tolerance {tol:.1e}", stacklevel=2)
    return ref


# --- rate estimation ----------------------------------------------------------------


def fit_rate(record, window: tuple[float, float], n_points: int = 60) -> RateFit:
    """Least-squares slope of ``log gap`` against ``log t`` over ``window``.

    Samples are thinned to roughly geometric spacing in ``t`` so late times do
    not dominate the fit. ``record`` is a :class:`TrajectoryRecord` or a pair
    of arrays ``(t, gap)``.
    """
    if isinstance(record, tuple):
        t, gap = (np.asarray(a, dtype=float) for a in record)
    else:
        t, gap = record.array("t"), record.array("gap")
    t0, t1 = window
    sel = (t >= t0) & (t <= t1)
    t, gap = t[sel], gap[sel]
    bad = ~(gap > 0)
    if np.any(bad):
        warnings.warn(f"excluding {int(bad.sum())} nonpositive gap samples from the rate fit", stacklevel=2)
        t, gap = t[~bad], gap[~bad]
    if t.size < 10:
        raise ValueError(f"need at least 10 positive samples in window {window}, got {t.size}")
    grid = np.geomspace(max(t[0], 1e-300), t[-1], n_points)
    idx = np.unique(np.clip(np.searchsorted(t, grid), 0, t.size - 1))
    if idx.size < 10:
        idx = np.arange(t.size)
    lt, lg = np.log(t[idx]), np.log(gap[idx])
    A = np.vstack([lt, np.ones_like(lt)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, lg, rcond=None)
    pred = A @ np.array([slope, intercept])
    ss_res = float(np.sum((lg - pred) ** 2))
    ss_tot = float(np.sum((lg - lg.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit((float(t0), float(t1)), float(slope), float(intercept), r2, int(idx.size))


def epoch_constants(record, r: float, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch constants ``c_j = r * Vtilde`` at the start of each restart epoch.

    An epoch starts at the initial sample and after every completed reset
    cascade, i.e. at samples whose timers all agree (within ``tol``) and whose
    Lyapunov value is unflagged. Returns ``(t_start, c)``.
    """
    starts_t, cs = [], []
    for idx, kind in enumerate(record.kind):
        if (idx == 0 or kind == "jump") and not record.V_flag[idx]:
            tau = np.asarray(record.tau[idx])
            if tau.size and tau.max() - tau.min() <= tol:
                starts_t.append(record.t[idx])
                cs.append(r * record.V[idx])
    return np.asarray(starts_t), np.asarray(cs)

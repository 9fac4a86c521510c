"""Restarted hybrid system: per-agent timers, timer-scaled flows and coordinated resets.

Every agent ``(l, k)`` carries a timer ``tau`` in ``[T0, T]`` that plays the
role of ``t`` in its own block of the accelerated flow. A timer reaching ``T``
triggers a jump that resets it to ``T0`` and snaps the timers of its
neighbours (same network and cross network) through the reset mapping, which
drives all timers to a common value after finitely many jumps.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .flow import DisturbanceSpec, FlowModel, FlowParams, Sampler, is_diverged, make_stepper
from .game import GameSpec, SaddleReference, saddle_S
from .graph import NetworkTopology
from .mirror import Mirrors
from .record import JumpEvent, TrajectoryRecord
from .state import FlowState, HybridState

EVENT_TOL = 1e-12


class TimerError(ValueError):
    pass


@dataclass(frozen=True)
class TimerParams:
    """Timer constants. ``r_offsets`` maps ``(l, k)`` to the agent's reset threshold.

    Agents missing from ``r_offsets`` use ``default_offset``, which defaults to
    ``0.9 (T - T0) / (n1 + n2)`` once the network size is known.
    ``boundary_choice`` picks the element of the reset set at ``T0 + r_k``.
    """

    T0: float = 1.0
    T: float = 5.0
    eta: float = 1.0
    r_offsets: dict = field(default_factory=dict)
    default_offset: float | None = None
    boundary_choice: str = "T0"

    def __post_init__(self):
        if not 0 < self.T0 < self.T:
            raise TimerError("need 0 < T0 < T")
        if self.eta <= 0:
            raise TimerError("eta must be positive")
        if self.boundary_choice not in ("T0", "T"):
            raise TimerError("boundary_choice must be 'T0' or 'T'")

    def offset(self, l: int, k: int, n_total: int) -> float:
        r = self.r_offsets.get((l, k), self.default_offset)
        if r is None:
            r = 0.9 * (self.T - self.T0) / n_total
        return float(r)

    def validate(self, n_total: int, agents) -> None:
        bound = (self.T - self.T0) / n_total
        for l, k in agents:
            r = self.offset(l, k, n_total)
            if not 0 < r < bound:
                raise TimerError(f"offset of agent {(l, k)} is {r}, must lie in (0, {bound})")


def timer_consensus_time(timer_params: TimerParams, n_total: int) -> float:
    """Hybrid time ``(T - T0)/eta + n_total`` after which all timers agree."""
    return (timer_params.T - timer_params.T0) / timer_params.eta + n_total


def reset_mapping(timer_params: TimerParams, l: int, k: int, tau: float, n_total: int) -> set[float]:
    """Admissible new values of a neighbour's timer when a reset pulse arrives."""
    tp = timer_params
    if not tp.T0 - EVENT_TOL <= tau <= tp.T + EVENT_TOL:
        raise TimerError(f"timer value {tau} outside [{tp.T0}, {tp.T}]")
    edge = tp.T0 + tp.offset(l, k, n_total)
    if tau < edge:
        return {tp.T0}
    if tau == edge:
        return {tp.T0, tp.T}
    return {tp.T}


def _select(timer_params: TimerParams, choices: set[float]) -> float:
    if len(choices) == 1:
        return next(iter(choices))
    return timer_params.T0 if timer_params.boundary_choice == "T0" else timer_params.T


def _timer_index(topology: NetworkTopology, l: int, k: int) -> int:
    return k if l == 1 else topology.n1 + k


def _agent_of(topology: NetworkTopology, idx: int) -> tuple[int, int]:
    return (1, idx) if idx < topology.n1 else (2, idx - topology.n1)


def in_jump_set(state: HybridState, timer_params: TimerParams, mirrors: Mirrors | None = None, tol: float = 1e-9) -> bool:
    """Some timer has reached ``T`` (within the event tolerance) and the state is admissible."""
    if float(np.max(state.tau)) < timer_params.T - EVENT_TOL:
        return False
    if mirrors is not None:
        return mirrors.psi.distance(state.x) <= tol and mirrors.phi.distance(state.y) <= tol
    return True


def coordinated_jump(topology: NetworkTopology, timer_params: TimerParams, state: HybridState) -> tuple[HybridState, JumpEvent]:
    """One jump: the lowest ``(l, k)`` with a timer at ``T`` resets to ``T0``; its
    neighbours in both networks take a selection from the reset mapping.
    Only timers change."""
    tp = timer_params
    tau = np.array(state.tau, dtype=float)
    hot = np.flatnonzero(tau >= tp.T - EVENT_TOL)
    if hot.size == 0:
        raise TimerError("coordinated_jump called outside the jump set")
    n_total = tau.size
    l, k = _agent_of(topology, int(hot[0]))
    resets = [(l, k, float(tau[hot[0]]), tp.T0)]
    new_tau = tau.copy()
    new_tau[hot[0]] = tp.T0
    targets = [(l, h) for h in sorted(topology.neighbors(l, k))]
    targets += [(3 - l, h) for h in sorted(topology.cross_neighbors(l, k))]
    for lh, h in targets:
        i = _timer_index(topology, lh, h)
        old = float(tau[i])
        new = _select(tp, reset_mapping(tp, lh, h, min(old, tp.T), n_total))
        new_tau[i] = new
        resets.append((lh, h, old, new))
    out = HybridState(
        state.x, state.lam, state.u, state.gamma, state.y, state.mu, state.v, state.nu,
        t=state.t, tau=new_tau, j=state.j + 1,
    )
    return out, JumpEvent((l, k), resets, float(state.t), int(state.j))


class HybridModel:
    """Flow map of the hybrid system on flat vectors."""

    def __init__(self, spec: GameSpec, mirrors: Mirrors, r: float):
        self.flow = FlowModel(spec, mirrors, r)
        self.p1, self.p2 = spec.p1, spec.p2
        self.n1 = spec.n1

    def scales(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.repeat(tau[:self.n1], self.p1), np.repeat(tau[self.n1:], self.p2)

    def rhs(self, tau, z, sides=None):
        """``z'`` with per-agent timers; reduces to the flow at ``t = tau`` when timers agree."""
        tau = np.asarray(tau, dtype=float)
        if tau.max() == tau.min():
            return self.flow.rhs(float(tau[0]), z, sides)
        sx, sy = self.scales(tau)
        return self.flow.rhs_scaled(sx, sy, z, sides)


def hybrid_flow_rhs(spec: GameSpec, mirrors: Mirrors, params: FlowParams, state: HybridState, timer_params: TimerParams | None = None) -> HybridState:
    """Derivative of every block; the ``tau`` field holds the timer rates."""
    tp = timer_params or TimerParams()
    tau = np.asarray(state.tau, dtype=float)
    if np.any(tau < tp.T0 - EVENT_TOL) or np.any(tau > tp.T + EVENT_TOL):
        raise TimerError("timer outside [T0, T]")
    model = HybridModel(spec, mirrors, params.r)
    dz = model.rhs(tau, state.to_vector())
    return HybridState.from_vector(dz, 1.0, spec.dim_x, spec.dim_y, tau=np.full(tau.size, tp.eta), j=0)


def hybrid_state_from(state: FlowState, tau, j: int = 0) -> HybridState:
    return HybridState(state.x, state.lam, state.u, state.gamma, state.y, state.mu, state.v, state.nu, t=0.0, tau=np.array(tau, dtype=float), j=j)


def _alpha(tau):
    """``(alpha, flagged)``: the largest timer, flagged when timers disagree."""
    return float(tau.max()), bool(tau.max() - tau.min() > 1e-9)


def hybrid_execute(
    spec: GameSpec,
    mirrors: Mirrors,
    flow_params: FlowParams,
    timer_params: TimerParams,
    state0: HybridState,
    t_end: float,
    disturbance: DisturbanceSpec | None = None,
    sample_every: int = 10,
    reference: SaddleReference | None = None,
    keep_states: bool = False,
    max_jumps: int | None = None,
) -> TrajectoryRecord:
    """Simulate the hybrid system over flow time ``[state0.t, t_end]``.

    Flow steps are clipped so the leading timer lands exactly on ``T``; jumps
    are then applied one at a time until no timer is at ``T``. A flow sample
    is recorded at every such event and a jump sample after every jump, with
    ``alpha`` the largest timer (``V_flag`` marks samples off timer consensus).

    The disturbance enters the flow as ``F(z + e) + e`` on the state blocks;
    timers are not perturbed. With ``perturb_jumps`` the states also become
    ``xi + 2e`` at jumps (identity jump map evaluated at the perturbed point).
    """
    tp = timer_params
    topo = spec.topology
    n_total = topo.n1 + topo.n2
    tp.validate(n_total, topo.agents())
    tau = np.array(state0.tau, dtype=float)
    if tau.shape != (n_total,):
        raise TimerError(f"need {n_total} timers, got shape {tau.shape}")
    if np.any(tau < tp.T0) or np.any(tau > tp.T):
        raise TimerError("initial timers must lie in [T0, T]")
    if t_end <= state0.t:
        raise ValueError("t_end must exceed the initial time")
    disturbance = disturbance or DisturbanceSpec()
    model = HybridModel(spec, mirrors, flow_params.r)
    nx, ny = spec.dim_x, spec.dim_y
    rec = TrajectoryRecord(algorithm="hybrid_restart")
    ref = reference.aligned(spec.n1, spec.n2, state0.gamma, state0.nu) if reference is not None else None
    sample = Sampler(spec, mirrors, flow_params.r, ref, rec, keep_states)
    signal = disturbance.signal(model.flow.dim) if disturbance.active else None
    step = make_stepper(flow_params, model.flow.kinks())
    max_jumps = max_jumps if max_jumps is not None else 10 * n_total * int(np.ceil(t_end / ((tp.T - tp.T0) / tp.eta)) + 1)

    z = state0.to_vector()
    t, j = float(state0.t), int(state0.j)

    def as_state(z, t, tau, j):
        return HybridState.from_vector(z, t, nx, ny, tau=tau.copy(), j=j)

    def record(z, t, tau, j, kind):
        alpha, flagged = _alpha(tau)
        sample.vector(z, t, kind=kind, alpha=alpha, flagged=flagged, tau=tau, j=j)

    record(z, t, tau, j, "flow")
    if ref is not None:
        rec.V0 = rec.V[0]
    rec.m0 = saddle_S(spec, state0.x, state0.lam, state0.y, state0.mu)

    t_wall = time.perf_counter()
    k = 0
    diverged = False
    while True:
        # jumps (a cascade takes no flow time)
        while float(tau.max()) >= tp.T - EVENT_TOL:
            if len(rec.events) >= max_jumps:
                raise RuntimeError("jump budget exhausted; the timers are not leaving the jump set")
            st = as_state(z, t, tau, j)
            if ref is not None:
                v_before = rec.V[-1]
            if disturbance.perturb_jumps and signal is not None:
                e = signal(t)
                z = z.copy()
                base = model.flow.sl
                for name in ("x", "lam", "y", "mu"):
                    z[base[name]] += 2.0 * e[base[name]]
                st = as_state(z, t, tau, j)
            new, event = coordinated_jump(topo, tp, st)
            tau, j = np.array(new.tau), new.j
            record(z, t, tau, j, "jump")
            if ref is not None:
                event.V_before, event.V_after = v_before, rec.V[-1]
            rec.events.append(event)
        if t >= t_end - 1e-12:
            break
        to_event = (tp.T - float(tau.max())) / tp.eta
        h = min(flow_params.dt, to_event, t_end - t)
        hits_event = h == to_event
        t0, tau0 = t, tau.copy()

        def f(s, w, sides=None):
            return model.rhs(tau0 + tp.eta * (s - t0), w, sides)

        z = step(f, t, z, h, None if signal is None else signal(t))
        t = t + h
        tau = tau0 + tp.eta * h
        # a dt-sized step can land on T up to rounding, which is an event too
        hits_event = hits_event or float(tau.max()) >= tp.T - EVENT_TOL
        if hits_event:
            tau[tau >= tp.T - EVENT_TOL] = tp.T
        np.minimum(tau, tp.T, out=tau)
        k += 1
        if is_diverged(z):
            diverged = True
            break
        if hits_event or k % max(1, sample_every) == 0 or t >= t_end - 1e-12:
            record(z, t, tau, j, "flow")

    rec.wall_time = time.perf_counter() - t_wall
    rec.diverged = diverged
    if diverged:
        rec.divergence_time = t
        warnings.warn(f"hybrid run diverged at t = {t:.4g}", stacklevel=2)
    rec.final_state = as_state(z, t, tau, j)
    return rec


def timer_attractor_distance(tau, timer_params: TimerParams) -> float:
    """Distance of ``tau`` to the timer attractor: equal timers, or every timer at ``T0`` or ``T``.

    Restart cascades pass through the second kind, flows only through the first.
    """
    tau = np.asarray(tau, dtype=float)
    d_equal = 0.5 * float(tau.max() - tau.min())
    d_ends = float(np.max(np.minimum(np.abs(tau - timer_params.T0), np.abs(tau - timer_params.T))))
    return min(d_equal, d_ends)


def observed_consensus_time(record: TrajectoryRecord, tol: float = 1e-9, timer_params: TimerParams | None = None) -> float:
    """Smallest recorded ``t + j`` after which every sample is within ``tol`` of the timer attractor.

    ``inf`` if the last sample is still off the attractor.
    """
    tp = timer_params or TimerParams()
    dist = np.array([timer_attractor_distance(tau, tp) for tau in record.tau])
    off = np.flatnonzero(dist > tol)
    tj = np.asarray(record.t) + np.asarray(record.j)
    if off.size == 0:
        return float(tj[0])
    if off[-1] == len(dist) - 1:
        return float("inf")
    return float(tj[off[-1] + 1])


def max_jumps_in_window(record: TrajectoryRecord, length: float, tol: float = 1e-9) -> int:
    """Largest number of jumps in any half-open flow-time window ``[s, s + length)``.

    Jumps closer than ``tol`` to the right end count as outside, so cascades
    exactly one period apart fall in different windows.
    """
    times = np.sort([ev.t for ev in record.events])
    if times.size == 0:
        return 0
    hi = np.searchsorted(times, times + length - tol, side="left")
    return int(np.max(hi - np.arange(times.size)))

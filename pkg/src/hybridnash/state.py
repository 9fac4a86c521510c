"""Stacked state containers shared by the time-varying flow and the hybrid system.

Flat vector layout: ``[x, lam, u, gamma, y, mu, v, nu]`` where the first four
blocks have length ``n1 p1`` and the last four ``n2 p2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def block_slices(nx: int, ny: int) -> dict[str, slice]:
    edges = np.cumsum([0, nx, nx, nx, nx, ny, ny, ny, ny])
    names = ("x", "lam", "u", "gamma", "y", "mu", "v", "nu")
    return {n: slice(int(a), int(b)) for n, a, b in zip(names, edges[:-1], edges[1:])}


@dataclass
class FlowState:
    x: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    nu: np.ndarray
    t: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.u, self.gamma, self.y, self.mu, self.v, self.nu])

    @classmethod
    def from_vector(cls, z, t: float, nx: int, ny: int, **extra) -> "FlowState":
        z = np.asarray(z, dtype=float)
        s = block_slices(nx, ny)
        return cls(*(z[s[n]].copy() for n in ("x", "lam", "u", "gamma", "y", "mu", "v", "nu")), t=float(t), **extra)

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(b) for b in (self.x, self.lam, self.u, self.gamma, self.y, self.mu, self.v, self.nu)])

    def copy(self) -> "FlowState":
        return type(self).from_vector(self.to_vector(), self.t, self.x.size, self.y.size, **self._extra())

    def _extra(self) -> dict:
        return {}


@dataclass
class HybridState(FlowState):
    """Flow state plus one timer per agent and the jump counter.

    ``tau`` stacks subnetwork 1's timers then subnetwork 2's. Agent ``(l, k)``
    owns ``xi = (x_k, lam_k)`` and ``zeta = (u_k, gamma_k)`` for ``l = 1`` and
    ``xi = (y_k, mu_k)``, ``zeta = (v_k, nu_k)`` for ``l = 2``.
    """

    tau: np.ndarray = None
    j: int = 0

    def _extra(self) -> dict:
        return {"tau": np.array(self.tau, dtype=float), "j": self.j}

    def timer_index(self, l: int, k: int, n1: int) -> int:
        return k if l == 1 else n1 + k

    def with_timers(self, tau) -> "HybridState":
        return replace(self.copy(), tau=np.array(tau, dtype=float))

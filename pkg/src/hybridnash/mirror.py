"""Generating functions and their conjugate maps.

Each generating function ``psi`` is strongly convex on a closed convex domain;
``conjugate_gradient`` is the mirror map ``argmin_{x in domain} -<x, u> + psi(x)``
that carries dual iterates back into the constraint set.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax


class GeneratingFunction:
    """Base class. Subclasses fill in the five maps and ``project``."""

    family: str = ""
    strong_convexity_modulus: float = 1.0

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def conjugate_value(self, u):
        raise NotImplementedError

    def conjugate_gradient(self, u):
        raise NotImplementedError

    def project(self, x):
        """Euclidean projection onto the domain."""
        raise NotImplementedError

    def distance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.distance(x) <= tol

    def to_dict(self) -> dict:
        return {"family": self.family, "dim": self.dim}


class QuadraticOnBox(GeneratingFunction):
    """Half squared norm on ``[lower, upper]``; the mirror map is a clamp."""

    family = "quadratic_box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        super().__init__(lower.size)
        self.lower = lower
        self.upper = upper

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ x)

    def gradient(self, x):
        return np.array(x, dtype=float)

    def conjugate_gradient(self, u):
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def conjugate_value(self, u):
        # closed form at the maximiser, exact up to rounding
        u = np.asarray(u, dtype=float)
        x = self.conjugate_gradient(u)
        return float(x @ u - 0.5 * (x @ x))

    def project(self, x):
        return self.conjugate_gradient(x)

    def to_dict(self) -> dict:
        return {"family": self.family, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class QuadraticFree(GeneratingFunction):
    """Half squared norm on the whole space; the mirror map is the identity."""

    family = "quadratic_free"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ x)

    def gradient(self, x):
        return np.array(x, dtype=float)

    def conjugate_value(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ u)

    def conjugate_gradient(self, u):
        return np.array(u, dtype=float)

    def project(self, x):
        return np.array(x, dtype=float)


def project_simplex(x):
    """Euclidean projection onto the probability simplex (sort-based)."""
    x = np.asarray(x, dtype=float)
    s = np.sort(x)[::-1]
    css = np.cumsum(s) - 1.0
    idx = np.arange(1, x.size + 1)
    rho = np.nonzero(s - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


class EntropicOnSimplex(GeneratingFunction):
    """Negative entropy on the probability simplex; the mirror map is softmax.

    Strongly convex with modulus 1 in the l1 norm, hence also in l2.
    """

    family = "entropic_simplex"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        pos = x > 0
        return float(np.sum(x[pos] * np.log(x[pos])))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(x) + 1.0

    def conjugate_value(self, u):
        return float(logsumexp(np.asarray(u, dtype=float)))

    def conjugate_gradient(self, u):
        # scipy's softmax shifts by the max before exponentiating
        return softmax(np.asarray(u, dtype=float))

    def project(self, x):
        return project_simplex(x)


FAMILIES = {
    "quadratic_box": QuadraticOnBox,
    "quadratic_free": QuadraticFree,
    "entropic_simplex": EntropicOnSimplex,
}


def from_dict(d: dict) -> GeneratingFunction:
    family = d["family"]
    if family == "quadratic_box":
        return QuadraticOnBox(d["lower"], d["upper"])
    if family not in FAMILIES:
        raise ValueError(f"unknown generating-function family {family!r}")
    return FAMILIES[family](int(d["dim"]))


def conjugate_gradient(gf: GeneratingFunction, u):
    return gf.conjugate_gradient(u)


def bregman_conjugate(gf: GeneratingFunction, u, u_ref) -> float:
    """``D_{psi*}(u, u_ref)``, clipped at zero against rounding."""
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    d = gf.conjugate_value(u) - gf.conjugate_value(u_ref) - float((u - u_ref) @ gf.conjugate_gradient(u_ref))
    return max(d, 0.0)


class MirrorStack:
    """Block-diagonal stack of generating functions, one per agent.

    When every block is quadratic (box or free) the stacked mirror map is a
    single vectorised clamp.
    """

    def __init__(self, gfs: Sequence[GeneratingFunction]):
        self.gfs = list(gfs)
        if not self.gfs:
            raise ValueError("need at least one generating function")
        dims = [gf.dim for gf in self.gfs]
        self.offsets = np.concatenate([[0], np.cumsum(dims)])
        self.dim = int(self.offsets[-1])
        self._clamp = all(isinstance(gf, (QuadraticOnBox, QuadraticFree)) for gf in self.gfs)
        if self._clamp:
            lo, hi = [], []
            for gf in self.gfs:
                if isinstance(gf, QuadraticOnBox):
                    lo.append(gf.lower)
                    hi.append(gf.upper)
                else:
                    lo.append(np.full(gf.dim, -np.inf))
                    hi.append(np.full(gf.dim, np.inf))
            self.lower = np.concatenate(lo)
            self.upper = np.concatenate(hi)

    def __len__(self):
        return len(self.gfs)

    def blocks(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected stacked vector of length {self.dim}, got shape {z.shape}")
        return [z[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def conjugate_gradient(self, u):
        if self._clamp:
            u = np.asarray(u, dtype=float)
            if u.shape != (self.dim,):
                raise ValueError(f"expected stacked vector of length {self.dim}, got shape {u.shape}")
            return np.clip(u, self.lower, self.upper)
        return np.concatenate([gf.conjugate_gradient(b) for gf, b in zip(self.gfs, self.blocks(u))])

    def gradient(self, x):
        if self._clamp:
            return np.array(x, dtype=float)
        return np.concatenate([gf.gradient(b) for gf, b in zip(self.gfs, self.blocks(x))])

    def project(self, x):
        if self._clamp:
            return self.conjugate_gradient(x)
        return np.concatenate([gf.project(b) for gf, b in zip(self.gfs, self.blocks(x))])

    def distance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x)))

    def conjugate_value(self, u) -> float:
        if self._clamp:
            x = self.conjugate_gradient(u)
            return float(x @ u - 0.5 * (x @ x))
        return sum(gf.conjugate_value(b) for gf, b in zip(self.gfs, self.blocks(u)))

    def bregman(self, u, u_ref) -> float:
        """Sum of blockwise ``D_{psi*}`` terms."""
        if self._clamp:
            u = np.asarray(u, dtype=float)
            u_ref = np.asarray(u_ref, dtype=float)
            xr = self.conjugate_gradient(u_ref)
            d = self.conjugate_value(u) - float(xr @ u_ref - 0.5 * (xr @ xr)) - float((u - u_ref) @ xr)
            return max(d, 0.0)
        return sum(bregman_conjugate(gf, a, b) for gf, a, b in zip(self.gfs, self.blocks(u), self.blocks(u_ref)))


def stacked_conjugate_gradient(gfs, u_stacked):
    stack = gfs if isinstance(gfs, MirrorStack) else MirrorStack(gfs)
    return stack.conjugate_gradient(u_stacked)


class Mirrors:
    """The primal-side stack (``psi`` over X) and the dual-side stack (``phi`` over Y)."""

    def __init__(self, psi: MirrorStack | Sequence[GeneratingFunction], phi: MirrorStack | Sequence[GeneratingFunction]):
        self.psi = psi if isinstance(psi, MirrorStack) else MirrorStack(psi)
        self.phi = phi if isinstance(phi, MirrorStack) else MirrorStack(phi)

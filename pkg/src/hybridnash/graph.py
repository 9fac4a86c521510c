"""Subnetwork graphs, cross-network edges and Laplacian operators.

Agents are indexed from 0 inside each subnetwork. Subnetworks themselves are
labelled 1 and 2 so that "the other subnetwork" is simply ``3 - l``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class TopologyError(ValueError):
    pass


def is_connected(weights: np.ndarray) -> bool:
    """Breadth-first search over the nonzero entries of a weight matrix."""
    A = np.asarray(weights)
    n = A.shape[0]
    if n == 0:
        return False
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(A[i] > 0):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


@dataclass(frozen=True)
class SubnetworkGraph:
    """Weighted undirected connected graph."""

    weights: np.ndarray

    def __post_init__(self):
        A = np.array(self.weights, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise TopologyError(f"weight matrix must be square and nonempty, got shape {A.shape}")
        if np.any(A < 0):
            raise TopologyError("edge weights must be nonnegative")
        if not np.array_equal(A, A.T):
            raise TopologyError("weight matrix must be symmetric")
        if np.any(np.diag(A) != 0):
            raise TopologyError("weight matrix must have a zero diagonal")
        if not is_connected(A):
            raise TopologyError("subnetwork graph is not connected")
        A.setflags(write=False)
        object.__setattr__(self, "weights", A)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def is_connected(self) -> bool:
        return is_connected(self.weights)

    @classmethod
    def ring(cls, n: int, weight: float = 1.0) -> "SubnetworkGraph":
        A = np.zeros((n, n))
        if n == 2:
            A[0, 1] = A[1, 0] = weight
        elif n > 2:
            for i in range(n):
                A[i, (i + 1) % n] = A[(i + 1) % n, i] = weight
        return cls(A)

    @classmethod
    def path(cls, n: int, weight: float = 1.0) -> "SubnetworkGraph":
        A = np.zeros((n, n))
        for i in range(n - 1):
            A[i, i + 1] = A[i + 1, i] = weight
        return cls(A)

    @classmethod
    def complete(cls, n: int, weight: float = 1.0) -> "SubnetworkGraph":
        return cls(weight * (np.ones((n, n)) - np.eye(n)))


def laplacian(g: SubnetworkGraph) -> np.ndarray:
    """``D - A`` with ``D`` the diagonal of row sums."""
    A = g.weights
    L = -A.copy()
    # diagonal set so each row sums to zero in floating point, not just in exact arithmetic
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def kron_laplacian(L: np.ndarray, p: int) -> np.ndarray:
    if p < 1:
        raise ValueError("block size p must be positive")
    return np.kron(np.asarray(L, dtype=float), np.eye(p))


@dataclass(frozen=True)
class NetworkTopology:
    g1: SubnetworkGraph
    g2: SubnetworkGraph
    cross: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.cross)
        for i, j in edges:
            if not (0 <= i < self.g1.n and 0 <= j < self.g2.n):
                raise TopologyError(f"cross edge {(i, j)} out of range")
        object.__setattr__(self, "cross", edges)

    @property
    def n1(self) -> int:
        return self.g1.n

    @property
    def n2(self) -> int:
        return self.g2.n

    def size(self, l: int) -> int:
        return self._graph(l).n

    def _graph(self, l: int) -> SubnetworkGraph:
        if l == 1:
            return self.g1
        if l == 2:
            return self.g2
        raise IndexError(f"subnetwork index must be 1 or 2, got {l}")

    def _check(self, l: int, k: int) -> None:
        n = self._graph(l).n
        if not 0 <= k < n:
            raise IndexError(f"agent {k} out of range for subnetwork {l} with {n} agents")

    def neighbors(self, l: int, k: int) -> set[int]:
        self._check(l, k)
        return {int(h) for h in np.flatnonzero(self._graph(l).weights[k] > 0)}

    def cross_neighbors(self, l: int, k: int) -> set[int]:
        self._check(l, k)
        if l == 1:
            return {j for i, j in self.cross if i == k}
        return {i for i, j in self.cross if j == k}

    def agents(self) -> Iterable[tuple[int, int]]:
        """All ``(l, k)`` pairs in lexicographic order."""
        for k in range(self.n1):
            yield 1, k
        for k in range(self.n2):
            yield 2, k


def ring_topology(n1: int, n2: int, diagonal_cross: bool = True) -> NetworkTopology:
    """Two rings joined by edges ``(i, i)`` for ``i < min(n1, n2)``."""
    cross = {(i, i) for i in range(min(n1, n2))} if diagonal_cross else set()
    return NetworkTopology(SubnetworkGraph.ring(n1), SubnetworkGraph.ring(n2), frozenset(cross))


def neighbors(topology: NetworkTopology, l: int, k: int) -> set[int]:
    return topology.neighbors(l, k)


def cross_neighbors(topology: NetworkTopology, l: int, k: int) -> set[int]:
    return topology.cross_neighbors(l, k)

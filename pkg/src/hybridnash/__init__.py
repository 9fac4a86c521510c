"""Distributed Nash-equilibrium seeking for two-subnetwork bilinear zero-sum games.

Accelerated primal-dual mirror-descent flow, its restarted hybrid counterpart,
and the tooling to measure both.
"""

__version__ = "0.1.0"

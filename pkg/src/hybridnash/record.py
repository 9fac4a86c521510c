"""Sampled trajectories over hybrid time domains and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_SCHEMA = "hybridnash-trajectory v1"

BLOCKS = ("x", "lambda", "u", "gamma", "y", "mu", "v", "nu")


@dataclass
class JumpEvent:
    """One application of the coordinated jump map.

    ``resets`` holds ``(l, k, old_tau, new_tau)`` for every timer the jump touched,
    the trigger first. ``V_before``/``V_after`` are the Lyapunov values on either
    side of the jump when a reference is available.
    """

    trigger: tuple[int, int]
    resets: list
    t: float
    j: int
    V_before: float = float("nan")
    V_after: float = float("nan")


@dataclass
class TrajectoryRecord:
    """Samples of a (possibly hybrid) run.

    ``kind`` is ``"flow"`` for samples taken during flows and ``"jump"`` for the
    sample taken right after a jump. ``V_flag`` marks Lyapunov values computed
    away from timer consensus (diagnostic only).
    """

    algorithm: str = "accelerated_flow"
    t: list = field(default_factory=list)
    j: list = field(default_factory=list)
    kind: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    V: list = field(default_factory=list)
    V_flag: list = field(default_factory=list)
    U: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    dist_x: list = field(default_factory=list)
    dist_y: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    states: list = field(default_factory=list)
    events: list = field(default_factory=list)
    diverged: bool = False
    divergence_time: float | None = None
    final_state: object = None
    V0: float = float("nan")
    m0: float = float("nan")
    wall_time: float = 0.0

    def __len__(self):
        return len(self.t)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def flow_mask(self) -> np.ndarray:
        return np.array([k == "flow" for k in self.kind])

    @property
    def terminal_gap(self) -> float:
        return float(self.gap[-1]) if self.gap else float("nan")

    @property
    def jump_count(self) -> int:
        return len(self.events)

    def columns(self, include_state: bool = False) -> list[str]:
        cols = ["t", "j", "kind", "gap", "V", "V_flag", "U", "dist_x", "dist_y"]
        cols += [f"norm_{b}" for b in BLOCKS]
        if self.tau:
            cols += [f"tau_{i}" for i in range(len(self.tau[0]))]
        cols += ["trigger"]
        if include_state and self.states:
            cols += [f"z_{i}" for i in range(len(self.states[0]))]
        return cols

    def write_csv(self, path_or_buf, include_state: bool = False) -> None:
        """Write samples, one row each, with jump rows carrying the trigger ``l:k``."""
        own = isinstance(path_or_buf, (str, Path))
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            fh.write(f"# schema: {CSV_SCHEMA}\n")
            fh.write(f"# algorithm: {self.algorithm}\n")
            w = csv.writer(fh)
            w.writerow(self.columns(include_state))
            triggers = {}
            for ev in self.events:
                triggers[ev.j + 1] = f"{ev.trigger[0]}:{ev.trigger[1]}"
            for idx in range(len(self.t)):
                row = [
                    repr(float(self.t[idx])),
                    int(self.j[idx]),
                    self.kind[idx],
                    repr(float(self.gap[idx])),
                    repr(float(self.V[idx])),
                    int(bool(self.V_flag[idx])),
                    repr(float(self.U[idx])),
                    repr(float(self.dist_x[idx])),
                    repr(float(self.dist_y[idx])),
                ]
                row += [repr(float(v)) for v in self.norms[idx]]
                if self.tau:
                    row += [repr(float(v)) for v in self.tau[idx]]
                row.append(triggers.get(self.j[idx], "") if self.kind[idx] == "jump" else "")
                if include_state and self.states:
                    row += [repr(float(v)) for v in self.states[idx]]
                w.writerow(row)
        finally:
            if own:
                fh.close()

    def to_csv_string(self, include_state: bool = False) -> str:
        buf = io.StringIO()
        self.write_csv(buf, include_state)
        return buf.getvalue()


def read_csv(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV into column arrays (``kind``/``trigger`` stay strings)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    out = {}
    for c, name in enumerate(header):
        col = [r[c] for r in body]
        if name in ("kind", "trigger"):
            out[name] = np.array(col, dtype=object)
        else:
            out[name] = np.array([float(v) for v in col])
    return out

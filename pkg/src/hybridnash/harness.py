"""Experiment configuration, runs, sweeps, comparisons and the command line.

Every quantity the model leaves open (topology, seed, step size, timer
constants, disturbance shape) is a config field, so a run is reproducible
from its ``summary.json`` alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .flow import DisturbanceSpec, FlowParams, default_initial_state, integrate, integrate_baseline
from .game import GameSpec, SaddleReference, build_example1, build_quadratic_game, check_interior
from .graph import NetworkTopology, SubnetworkGraph
from .hybrid import (
    TimerParams,
    hybrid_execute,
    hybrid_state_from,
    max_jumps_in_window,
    observed_consensus_time,
    timer_consensus_time,
)
from .metrics import epoch_constants, fit_rate, kkt_residual, solve_saddle_reference
from .record import TrajectoryRecord

log = logging.getLogger(__name__)

ALGORITHMS = ("accelerated_flow", "hybrid_restart", "baseline_primal_dual")
EXPERIMENTS = ("example1", "example2", "quadratic", "custom")
TOPOLOGIES = ("ring", "path", "complete")
SWEEP_PARAMETERS = {
    "r": ("flow", "r"),
    "epsilon": ("disturbance", "epsilon"),
    "T": ("timers", "T"),
    "T0": ("timers", "T0"),
    "eta": ("timers", "eta"),
    "dt": ("flow", "dt"),
}


class ConfigError(ValueError):
    pass


class MissingFixtureError(FileNotFoundError):
    pass


# --- configuration ------------------------------------------------------------------


@dataclass
class GameConfig:
    experiment: str = "example1"
    seed: int = 42
    topology: str = "ring"
    # explicit game description (GameSpec.to_dict layout) for experiment = "custom"
    spec: dict = field(default_factory=dict)


@dataclass
class FlowConfig:
    r: float = 2.0
    t0: float = 1.0
    dt: float = 1e-3
    scheme: str = "rk4"
    t_end: float = 100.0
    kink_events: bool = True


@dataclass
class TimerConfig:
    T0: float = 1.0
    T: float = 5.0
    eta: float = 1.0
    r_offset: float = 0.0  # 0 selects the default 0.9 (T - T0) / (n1 + n2)
    boundary_choice: str = "T0"
    init: str = "sync"  # "sync" (all at T0) or "random" (uniform on [T0, T))
    init_seed: int = 0


@dataclass
class DisturbanceConfig:
    epsilon: float = 0.0
    kind: str = "constant"
    seed: int = 0
    omega: float = 1.0
    hold: float = 0.1
    perturb_jumps: bool = False


@dataclass
class OutputConfig:
    out_dir: str = ""
    sample_every: int = 10
    include_state: bool = False
    reference: str = ""  # path to a reference JSON; empty uses the pinned fixture or solves
    offline: bool = False
    compare_undisturbed: bool = True


@dataclass
class ExperimentConfig:
    algorithm: str = "accelerated_flow"
    check_convergence: bool = True
    game: GameConfig = field(default_factory=GameConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    timers: TimerConfig = field(default_factory=TimerConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.game.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.game.experiment!r}")
        if self.game.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}, got {self.game.topology!r}")
        if self.game.experiment == "custom" and not self.game.spec:
            raise ConfigError("experiment 'custom' needs a [game.spec] table")
        if self.check_convergence and self.flow.r < 2:
            raise ConfigError("r >= 2 is required when convergence checks are enabled")
        if self.disturbance.epsilon < 0:
            raise ConfigError("disturbance epsilon must be nonnegative")
        if self.flow.t_end <= self.flow.t0:
            raise ConfigError("t_end must exceed t0")
        if self.timers.init not in ("sync", "random"):
            raise ConfigError("timers.init must be 'sync' or 'random'")
        if self.output.sample_every < 1:
            raise ConfigError("sample_every must be at least 1")
        try:
            self.flow_params()
            self.timer_params()
            self.disturbance_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def flow_params(self) -> FlowParams:
        f = self.flow
        return FlowParams(r=f.r, t0=f.t0, dt=f.dt, scheme=f.scheme, kink_events=f.kink_events)

    def timer_params(self) -> TimerParams:
        t = self.timers
        return TimerParams(T0=t.T0, T=t.T, eta=t.eta, default_offset=t.r_offset or None, boundary_choice=t.boundary_choice)

    def disturbance_spec(self) -> DisturbanceSpec:
        d = self.disturbance
        kind = d.kind if d.epsilon > 0 else "none"
        return DisturbanceSpec(d.epsilon, kind, d.seed, d.omega, d.hold, d.perturb_jumps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        sections = {"game": GameConfig, "flow": FlowConfig, "timers": TimerConfig, "disturbance": DisturbanceConfig, "output": OutputConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, value in d.items():
            if name in sections:
                sub = sections[name]
                sub_known = {f.name for f in fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
                kw[name] = sub(**value)
            else:
                kw[name] = value
        return cls(**kw)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(tomli.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh))

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with ``section.key`` (or a top-level key) replaced."""
        if "." in dotted:
            sec, key = dotted.split(".", 1)
            sub = getattr(self, sec)
            if key not in {f.name for f in fields(sub)}:
                raise ConfigError(f"unknown key {dotted!r}")
            return replace(self, **{sec: replace(sub, **{key: value})})
        return replace(self, **{dotted: value})


def experiment_config(name: str) -> ExperimentConfig:
    """Builtin experiments: ``example1`` (accelerated flow) and ``example2`` (hybrid restart)."""
    if name == "example1":
        return ExperimentConfig(algorithm="accelerated_flow", flow=FlowConfig(t_end=200.0))
    if name == "example2":
        return ExperimentConfig(
            algorithm="hybrid_restart",
            game=GameConfig(experiment="example2"),
            flow=FlowConfig(t_end=200.0),
        )
    if name == "quadratic":
        return ExperimentConfig(game=GameConfig(experiment="quadratic", seed=0), flow=FlowConfig(t_end=60.0))
    raise ConfigError(f"unknown experiment {name!r}; choose from example1, example2, quadratic")


# --- building blocks ----------------------------------------------------------------


def _topology(kind: str, n1: int, n2: int) -> NetworkTopology:
    make = {"ring": SubnetworkGraph.ring, "path": SubnetworkGraph.path, "complete": SubnetworkGraph.complete}[kind]
    return NetworkTopology(make(n1), make(n2), frozenset((i, i) for i in range(min(n1, n2))))


def build_game(cfg: ExperimentConfig) -> GameSpec:
    g = cfg.game
    if g.experiment in ("example1", "example2"):
        return build_example1(g.seed, _topology(g.topology, 4, 4))
    if g.experiment == "quadratic":
        return build_quadratic_game(seed=g.seed)
    return GameSpec.from_dict(g.spec)


def _fixture_name(cfg: ExperimentConfig) -> str | None:
    g = cfg.game
    if g.experiment in ("example1", "example2") and g.topology == "ring":
        return f"example1_seed{g.seed}.json"
    return None


def load_reference(path) -> SaddleReference:
    with open(path) as fh:
        return SaddleReference.from_dict(json.load(fh))


def save_reference(ref: SaddleReference, path, meta: dict | None = None) -> None:
    d = ref.to_dict()
    if meta:
        d["meta"] = meta
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2)


def get_reference(cfg: ExperimentConfig, spec: GameSpec) -> SaddleReference:
    """Reference from the configured path, else the pinned fixture, else the solver."""
    if cfg.output.reference:
        return load_reference(cfg.output.reference)
    name = _fixture_name(cfg)
    if name is not None:
        res = resources.files("hybridnash") / "fixtures" / name
        if res.is_file():
            return SaddleReference.from_dict(json.loads(res.read_text()))
    if cfg.output.offline:
        raise MissingFixtureError(f"no reference fixture for {cfg.game.experiment!r} seed {cfg.game.seed} and offline mode is set")
    return solve_saddle_reference(spec)


def initial_timers(cfg: ExperimentConfig, n_total: int) -> np.ndarray:
    t = cfg.timers
    if t.init == "sync":
        return np.full(n_total, t.T0)
    rng = np.random.default_rng(t.init_seed)
    return rng.uniform(t.T0, t.T, n_total)


# --- runs ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    algorithm: str
    terminal_gap: float
    diverged: bool
    jump_count: int
    consensus_time: float | None
    consensus_bound: float | None
    max_jumps_per_window: int | None
    rate_slope: float | None
    wall_time: float
    V0: float
    m0: float
    gap_monotone_last_half: bool
    converged: bool
    undisturbed_terminal_gap: float | None = None
    epoch_constants: list = field(default_factory=list)
    interior_equilibrium: bool = True
    reference_kkt: float = float("nan")
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not np.isfinite(v):
                d[k] = None if np.isnan(v) else ("inf" if v > 0 else "-inf")
        return d


def gap_monotone(record: TrajectoryRecord, start_fraction: float = 0.5, tol: float = 0.0) -> bool:
    """Whether the gap is nonincreasing over flow samples in the final part of the horizon."""
    t, gap = record.array("t"), record.array("gap")
    mask = record.flow_mask() & (t >= t[0] + start_fraction * (t[-1] - t[0]))
    g = gap[mask]
    return bool(np.all(np.diff(g) <= tol * np.maximum(1.0, np.abs(g[:-1]))))


def convergence_tolerance(epsilon: float) -> float:
    """Terminal-gap threshold for calling a disturbed run convergent."""
    return max(10.0 * epsilon * epsilon, 1e-3)


def execute(cfg: ExperimentConfig, spec: GameSpec | None = None, ref: SaddleReference | None = None, disturbance: DisturbanceSpec | None = None) -> TrajectoryRecord:
    """Run the configured algorithm and return its record (no files written).

    The flows run on ``[t0, t_end]``; the hybrid system runs for flow time
    ``t_end`` starting from 0 with timers in place of the clock.
    """
    spec = spec if spec is not None else build_game(cfg)
    mirrors = spec.mirrors()
    params = cfg.flow_params()
    dist = disturbance if disturbance is not None else cfg.disturbance_spec()
    every = cfg.output.sample_every
    keep = cfg.output.include_state
    if cfg.algorithm == "hybrid_restart":
        tp = cfg.timer_params()
        st = hybrid_state_from(default_initial_state(spec, mirrors), initial_timers(cfg, spec.n1 + spec.n2))
        # hybrid flow time starts at 0 so that t + j counts from the start; t_end is the horizon
        return hybrid_execute(spec, mirrors, params, tp, st, cfg.flow.t_end, dist, every, ref, keep)
    st = default_initial_state(spec, mirrors, params.t0)
    if cfg.algorithm == "baseline_primal_dual":
        return integrate_baseline(spec, mirrors, params, st, cfg.flow.t_end, dist, every, ref, keep)
    return integrate(spec, mirrors, params, st, cfg.flow.t_end, dist, every, ref, keep)


def summarize(cfg: ExperimentConfig, rec: TrajectoryRecord, ref: SaddleReference | None, spec: GameSpec, undisturbed_gap: float | None = None) -> RunSummary:
    eps = cfg.disturbance.epsilon
    slope = None
    t = rec.array("t")
    if cfg.algorithm != "hybrid_restart" and t[-1] >= 100.0 and not rec.diverged:
        try:
            slope = fit_rate(rec, (10.0, min(100.0, float(t[-1])))).slope
        except ValueError:
            slope = None
    consensus = bound = jumps_win = None
    cs = []
    if cfg.algorithm == "hybrid_restart":
        tp = cfg.timer_params()
        consensus = observed_consensus_time(rec, timer_params=tp)
        bound = timer_consensus_time(tp, spec.n1 + spec.n2)
        jumps_win = max_jumps_in_window(rec, (tp.T - tp.T0) / tp.eta)
        cs = epoch_constants(rec, cfg.flow.r)[1].tolist()
    monotone = gap_monotone(rec)
    converged = not rec.diverged and rec.terminal_gap <= convergence_tolerance(eps)
    if undisturbed_gap is not None and eps > 0:
        converged = converged and not (rec.terminal_gap > 10 * undisturbed_gap and not monotone)
    interior = True
    if ref is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            interior = check_interior(spec, ref)
    return RunSummary(
        algorithm=cfg.algorithm,
        terminal_gap=rec.terminal_gap,
        diverged=rec.diverged,
        jump_count=rec.jump_count,
        consensus_time=consensus,
        consensus_bound=bound,
        max_jumps_per_window=jumps_win,
        rate_slope=slope,
        wall_time=rec.wall_time,
        V0=rec.V0,
        m0=rec.m0,
        gap_monotone_last_half=monotone,
        converged=converged,
        undisturbed_terminal_gap=undisturbed_gap,
        epoch_constants=cs,
        interior_equilibrium=interior,
        reference_kkt=ref.kkt_residual if ref is not None else float("nan"),
        config=cfg.to_dict(),
    )


def run(cfg: ExperimentConfig) -> tuple[RunSummary, TrajectoryRecord]:
    """Build, run, summarise and (when ``out_dir`` is set) write the artifacts."""
    cfg.validate()
    spec = build_game(cfg)
    ref = get_reference(cfg, spec)
    rec = execute(cfg, spec, ref)
    undisturbed = None
    if cfg.disturbance.epsilon > 0 and cfg.output.compare_undisturbed and cfg.algorithm == "accelerated_flow":
        undisturbed = execute(cfg, spec, ref, DisturbanceSpec()).terminal_gap
    summary = summarize(cfg, rec, ref, spec, undisturbed)
    if cfg.output.out_dir:
        out = Path(cfg.output.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rec.write_csv(out / "trajectory.csv", include_state=cfg.output.include_state)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
        save_reference(ref, out / "reference.json", {"experiment": cfg.game.experiment, "seed": cfg.game.seed})
    return summary, rec


def _run_summary_only(cfg: ExperimentConfig) -> RunSummary:
    return run(cfg)[0]


def sweep(cfg: ExperimentConfig, parameter: str, values, workers: int = 1) -> list[RunSummary]:
    """Independent runs with ``parameter`` set to each value; per-run subdirectories."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {sorted(SWEEP_PARAMETERS)}")
    sec, key = SWEEP_PARAMETERS[parameter]
    cfgs = []
    for v in values:
        c = cfg.with_value(f"{sec}.{key}", float(v))
        if cfg.output.out_dir:
            c = c.with_value("output.out_dir", str(Path(cfg.output.out_dir) / f"{parameter}={v:g}"))
        cfgs.append(c.validate())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_summary_only, cfgs))
    else:
        results = [_run_summary_only(c) for c in cfgs]
    if cfg.output.out_dir:
        path = Path(cfg.output.out_dir) / "sweep.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([parameter, "terminal_gap", "diverged", "converged", "jump_count", "rate_slope", "wall_time"])
            for v, s in zip(values, results):
                w.writerow([v, repr(s.terminal_gap), int(s.diverged), int(s.converged), s.jump_count, s.rate_slope, s.wall_time])
    return results


def compare(cfgs: list[ExperimentConfig], out_path=None, grid=None) -> dict:
    """Gap of each config interpolated on a common time grid.

    All configs must describe the same game; hybrid runs are placed on the
    same clock by shifting their flow time by ``t0``.
    """
    if not cfgs:
        raise ConfigError("nothing to compare")
    games = [json.dumps(build_game(c).to_dict(), sort_keys=True) for c in cfgs]
    if len(set(games)) != 1:
        raise ConfigError("compared configs must share the same game")
    spec = build_game(cfgs[0])
    ref = get_reference(cfgs[0], spec)
    table = {}
    recs = []
    for c in cfgs:
        rec = execute(c.validate(), spec, ref)
        t = rec.array("t") + (c.flow.t0 if c.algorithm == "hybrid_restart" else 0.0)
        mask = rec.flow_mask()
        recs.append((c.algorithm, t[mask], rec.array("gap")[mask], rec.final_state))
    t_lo = max(r[1][0] for r in recs)
    t_hi = min(r[1][-1] for r in recs)
    grid = np.linspace(t_lo, t_hi, 200) if grid is None else np.asarray(grid, dtype=float)
    table["t"] = grid
    names = []
    for i, (alg, t, g, _) in enumerate(recs):
        name = alg if alg not in names else f"{alg}_{i}"
        names.append(name)
        table[name] = np.interp(grid, t, g)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for k in range(grid.size):
                w.writerow([repr(float(grid[k]))] + [repr(float(table[n][k])) for n in names])
    table["final_x"] = {n: r[3].x for n, r in zip(names, recs)}
    return table


def validate_config(cfg: ExperimentConfig) -> dict:
    """Quick invariant checks on a config's game: reference, consensus, interiority,
    gradients, and a short undisturbed run for forward invariance."""
    cfg.validate()
    spec = build_game(cfg)
    mirrors = spec.mirrors()
    ref = get_reference(cfg, spec)
    report = {}
    report["kkt_residual"] = kkt_residual(spec, mirrors, ref.x_star, ref.lambda_star, ref.y_star, ref.mu_star)
    report["reference_valid"] = bool(report["kkt_residual"] < 1e-6)
    xs = ref.x_star.reshape(spec.n1, -1)
    report["consensus_spread_x"] = float(np.max(np.ptp(xs, axis=0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report["interior_equilibrium"] = bool(check_interior(spec, ref))
    short = cfg.with_value("flow.t_end", min(cfg.flow.t_end, cfg.flow.t0 + 5.0)).with_value("disturbance.epsilon", 0.0)
    rec = execute(short, spec, ref)
    report["max_dist_x"] = float(np.max(rec.array("dist_x")))
    report["max_dist_y"] = float(np.max(rec.array("dist_y")))
    report["forward_invariant"] = bool(report["max_dist_x"] <= 1e-9 and report["max_dist_y"] <= 1e-9)
    report["ok"] = report["reference_valid"] and report["forward_invariant"] and report["consensus_spread_x"] < 1e-6
    return report


# --- command line ---------------------------------------------------------------------


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = experiment_config(args.experiment or "example1")
    if args.experiment and args.config:
        cfg = cfg.with_value("game.experiment", args.experiment)
    if args.algorithm:
        cfg = cfg.with_value("algorithm", args.algorithm)
    if args.disturbance is not None:
        cfg = cfg.with_value("disturbance.epsilon", float(args.disturbance))
    if args.seed is not None:
        cfg = cfg.with_value("game.seed", int(args.seed))
    if args.out_dir:
        cfg = cfg.with_value("output.out_dir", args.out_dir)
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = cfg.with_value(key.strip(), _parse_value(value.strip()))
    return cfg.validate()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--experiment", choices=("example1", "example2", "quadratic"), help="builtin experiment")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--disturbance", type=float, help="disturbance bound epsilon")
    p.add_argument("--seed", type=int, help="game seed")
    p.add_argument("--out-dir", help="directory for trajectory.csv, summary.json, reference.json")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field, e.g. flow.dt=5e-4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridnash", description="Nash-equilibrium seeking flows and restarted hybrid dynamics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one experiment"))
    p = sub.add_parser("sweep", help="run a parameter sweep")
    _common(p)
    p.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("compare", help="compare algorithms on one game")
    _common(p)
    p.add_argument("--algorithms", default="baseline_primal_dual,accelerated_flow,hybrid_restart")
    _common(sub.add_parser("solve-reference", help="solve and store the saddle reference"))
    _common(sub.add_parser("validate", help="check invariants for a config"))
    p = sub.add_parser("dump-config", help="print the effective config as TOML")
    _common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError, tomli.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "dump-config":
        sys.stdout.write(cfg.to_toml())
        return 0
    if args.command == "run":
        summary, _ = run(cfg)
        print(json.dumps({k: v for k, v in summary.to_dict().items() if k != "config"}, indent=2))
        return 0
    if args.command == "sweep":
        values = [float(v) for v in args.values.split(",") if v.strip()]
        for v, s in zip(values, sweep(cfg, args.parameter, values, args.workers)):
            print(f"{args.parameter}={v:g}  gap={s.terminal_gap:.3e}  converged={s.converged}  diverged={s.diverged}")
        return 0
    if args.command == "compare":
        cfgs = [cfg.with_value("algorithm", a.strip()) for a in args.algorithms.split(",")]
        out = Path(cfg.output.out_dir) / "compare.csv" if cfg.output.out_dir else None
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
        table = compare(cfgs, out)
        names = [k for k in table if k not in ("t", "final_x")]
        print("t=%.2f  " % table["t"][-1] + "  ".join(f"{n}={table[n][-1]:.3e}" for n in names))
        return 0
    if args.command == "solve-reference":
        spec = build_game(cfg)
        t0 = time.perf_counter()
        ref = solve_saddle_reference(spec)
        path = Path(cfg.output.out_dir or ".") / "reference.json"
        save_reference(ref, path, {"experiment": cfg.game.experiment, "seed": cfg.game.seed, "topology": cfg.game.topology})
        print(f"kkt residual {ref.kkt_residual:.3e} in {time.perf_counter() - t0:.1f}s -> {path}")
        return 0
    if args.command == "validate":
        report = validate_config(cfg)
        for k, v in report.items():
            print(f"{k}: {v}")
        return 0 if report["ok"] else 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())

"""Scenario configuration, single runs and Monte Carlo campaigns.

A config is a YAML mapping; every key is optional and missing keys keep the
defaults below.  Run ``i`` of a campaign uses seed ``base_seed + i``.  With
common random numbers on (the default), the traffic stream depends only on
the seed, so all protocols see the same source/destination sequence.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from .baselines import AodvAgent, AodvParams, DsdvAgent, DsdvParams
from .connectivity import ConnectivityTimeline, build_timeline
from .kinematics import EarthModel, GeoPosition
from .metrics import PacketLedger, phase_breakdown, summarize
from .mobility import BadNodeCount, FormationSpec, ScenarioOptions, ScenarioPhases, build_scenario, group_size_for
from .netsim import Engine, EventKind, MacParams, Network
from .protocol import CprTdAgent, CprTdParams
from .radio import RadioParams, comm_range

PROTOCOLS = ("cprtd", "aodv", "dsdv")
CONDITIONS = ("none", "central_per_group")
METRICS = ("pdr", "oe", "latency", "jitter")


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficConfig:
    packet_size: int = 1000
    generation_interval: float = 0.1
    t_first: float = 1.0
    t_last: float = 99.9
    n_packets: int = 990
    common_random_numbers: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int = 36
    protocol: str = "cprtd"
    condition: str = "none"
    runs: int = 100
    base_seed: int = 1
    workers: int = 1
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    radio: RadioParams = field(default_factory=RadioParams)
    mac: MacParams = field(default_factory=MacParams)
    phases: ScenarioPhases = field(default_factory=ScenarioPhases)
    mobility: ScenarioOptions = field(default_factory=ScenarioOptions)
    earth: EarthModel = field(default_factory=EarthModel)
    cprtd: CprTdParams = field(default_factory=CprTdParams)
    oracle_knows_failures: bool = False
    aodv: AodvParams = field(default_factory=AodvParams)
    dsdv: DsdvParams = field(default_factory=DsdvParams)
    out_dir: str = "results"
    trace: bool = False

    def __post_init__(self) -> None:
        try:
            group_size_for(self.node_count)
        except BadNodeCount as exc:
            raise ValidationError(f"node_count: {exc}") from None
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol: expected one of {PROTOCOLS}, got {self.protocol!r}")
        if self.condition not in CONDITIONS:
            raise ValidationError(f"condition: expected one of {CONDITIONS}, got {self.condition!r}")
        if self.runs < 1:
            raise ValidationError("runs: must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers: must be >= 1")
        tr = self.traffic
        if tr.n_packets < 1 or tr.generation_interval <= 0 or tr.packet_size <= 0:
            raise ValidationError("traffic: n_packets, generation_interval and packet_size must be positive")
        last = tr.t_first + (tr.n_packets - 1) * tr.generation_interval
        if last > tr.t_last + 1e-9:
            raise ValidationError(f"traffic.n_packets: last generation at {last:.3f} s is after t_last={tr.t_last}")
        if tr.t_first < 0 or tr.t_last > self.phases.sim_end:
            raise ValidationError("traffic: window must lie inside the scenario")
        if self.cprtd.expiry <= 0:
            raise ValidationError("cprtd.expiry: must be positive")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def failure_condition(self) -> int:
        return CONDITIONS.index(self.condition) + 1


# --- loading ----------------------------------------------------------------

_NESTED = {
    "traffic": TrafficConfig,
    "radio": RadioParams,
    "mac": MacParams,
    "mobility": ScenarioOptions,
    "earth": EarthModel,
    "cprtd": CprTdParams,
    "aodv": AodvParams,
    "dsdv": DsdvParams,
}


def _coerce(value: Any, default: Any, path: str) -> Any:
    # YAML 1.1 reads "2.4e9" (no dot) as a string and "1" as an int
    if isinstance(default, float) and not isinstance(value, bool):
        if isinstance(value, int):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ValidationError(f"{path}: expected a number, got {value!r}") from None
    return value


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a mapping")
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in defaults:
            raise ValidationError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
        kwargs[key] = _coerce(value, defaults[key], f"{path}.{key}")
    if cls is ScenarioOptions:
        if "origin" in kwargs:
            kwargs["origin"] = GeoPosition(*kwargs["origin"])
    try:
        return cls(**kwargs)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> ScenarioConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for key, cls in _NESTED.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    if "phases" in data:
        raw = data.pop("phases")
        try:
            kwargs["phases"] = ScenarioPhases(tuple((float(lo), float(hi)) for lo, hi in raw))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"phases: {exc}") from None
    top = {f.name for f in dataclasses.fields(ScenarioConfig)} - set(_NESTED) - {"phases"}
    for key in data:
        if key not in top:
            raise ValidationError(f"{key}: unknown key")
    kwargs.update(data)
    try:
        return ScenarioConfig(**kwargs)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


# --- one run ----------------------------------------------------------------


@dataclass
class World:
    spec: FormationSpec
    timeline: ConnectivityTimeline
    oracle: ConnectivityTimeline
    failed: frozenset[int]


@functools.lru_cache(maxsize=4)
def _scenario(
    n: int, phases: ScenarioPhases, options: ScenarioOptions, radio: RadioParams, earth: EarthModel
) -> tuple[FormationSpec, ConnectivityTimeline]:
    opts = dataclasses.replace(options, link_range=comm_range(radio)) if options.link_range is None else options
    spec = build_scenario(n, phases, opts, earth)
    return spec, build_timeline(spec, spec.link_range)


@functools.lru_cache(maxsize=8)
def _world(
    n: int, phases: ScenarioPhases, options: ScenarioOptions, radio: RadioParams, earth: EarthModel, condition: str, oracle_knows: bool
) -> World:
    spec, timeline = _scenario(n, phases, options, radio, earth)
    failed = frozenset(spec.central_nodes()) if condition == "central_per_group" else frozenset()
    oracle = build_timeline(spec, spec.link_range, failed) if (failed and oracle_knows) else timeline
    return World(spec, timeline, oracle, failed)


def world_for(cfg: ScenarioConfig) -> World:
    return _world(cfg.node_count, cfg.phases, cfg.mobility, cfg.radio, cfg.earth, cfg.condition, cfg.oracle_knows_failures)


def traffic_times(tr: TrafficConfig) -> list[float]:
    return [round(tr.t_first + i * tr.generation_interval, 9) for i in range(tr.n_packets)]


def traffic_pairs(cfg: ScenarioConfig, seed: int, alive: Sequence[int]) -> list[tuple[int, int]]:
    tag = f"traffic:{seed}" if cfg.traffic.common_random_numbers else f"traffic:{seed}:{cfg.protocol}"
    rng = random.Random(tag)
    return [tuple(rng.sample(alive, 2)) for _ in range(cfg.traffic.n_packets)]


@dataclass
class RunResult:
    run: int
    seed: int
    protocol: str
    node_count: int
    condition: int
    metrics: dict[str, float]
    phases: list[dict[str, float]]
    control_frames: dict[str, int]
    frames_sent: dict[str, int]
    events: int
    ledger: PacketLedger | None = None
    trace: list[tuple[float, int, str, int]] | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _agents(cfg: ScenarioConfig, net: Network, world: World, seed: int):
    if cfg.protocol == "cprtd":
        return [CprTdAgent(i, net, world.oracle, cfg.cprtd) for i in range(net.n)]
    if cfg.protocol == "aodv":
        return [AodvAgent(i, net, cfg.aodv, seed) for i in range(net.n)]
    return [DsdvAgent(i, net, cfg.dsdv, seed) for i in range(net.n)]


def run_single(cfg: ScenarioConfig, run: int, keep_ledger: bool = False) -> RunResult:
    seed = cfg.base_seed + run
    world = world_for(cfg)
    engine = Engine(trace=cfg.trace)
    ledger = PacketLedger()
    net = Network(engine, world.timeline, world.spec.positions, cfg.radio, cfg.mac, world.failed, seed, ledger)
    agents = _agents(cfg, net, world, seed)
    net.attach(agents)
    for a in agents:
        if net.alive(a.node):
            a.start()

    alive = [i for i in range(net.n) if i not in world.failed]
    phases = cfg.phases
    size = cfg.traffic.packet_size

    def generate(t: float, src: int, dst: int) -> None:
        pid = ledger.generate(src, dst, t, phases.phase_of(t), size)
        agents[src].originate(pid, dst)

    for t, (src, dst) in zip(traffic_times(cfg.traffic), traffic_pairs(cfg, seed, alive)):
        engine.schedule(t, EventKind.APP_GENERATE, generate, t, src, dst, node=src)
    engine.run(until=phases.sim_end)
    ledger.finalize()
    return RunResult(
        run=run,
        seed=seed,
        protocol=cfg.protocol,
        node_count=cfg.node_count,
        condition=cfg.failure_condition,
        metrics=summarize(ledger),
        phases=phase_breakdown(ledger, range(1, len(phases.boundaries) + 1)),
        control_frames=dict(ledger.control_frames),
        frames_sent=dict(net.frames_sent),
        events=engine.processed,
        ledger=ledger if keep_ledger else None,
        trace=engine.trace,
    )


def _run_job(args: tuple[ScenarioConfig, int, bool]) -> RunResult:
    """One replica; an engine error is recorded on the result instead of aborting the campaign."""
    cfg, run, keep = args
    try:
        return run_single(cfg, run, keep)
    except Exception as exc:  # noqa: BLE001
        return RunResult(
            run=run, seed=cfg.base_seed + run, protocol=cfg.protocol, node_count=cfg.node_count,
            condition=cfg.failure_condition, metrics={}, phases=[], control_frames={}, frames_sent={},
            events=0, error=f"{type(exc).__name__}: {exc}",
        )


def run_campaign(cfg: ScenarioConfig, workers: int | None = None, keep_ledgers: bool = False) -> list[RunResult]:
    """All runs of ``cfg``, ordered by run index whatever the worker count."""
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, i, keep_ledgers) for i in range(cfg.runs)]
    if workers <= 1 or cfg.runs == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# --- aggregation and output -------------------------------------------------

RUN_COLUMNS = (
    "protocol", "node_count", "condition", "run", "seed", "generated", "delivered", "proactive_drop",
    "expired", "lost", "duplicates", "control_bytes", "pdr", "oe", "latency", "jitter", "error",
)


AGG_COLUMNS = ("protocol", "node_count", "condition", "runs") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "sd", "n"))
PHASE_COLUMNS = ("protocol", "node_count", "condition", "phase", "generated", "delivered") + tuple(
    f"{m}_{s}" for m in ("pdr", "latency", "jitter") for s in ("mean", "sd", "n"))


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def _mean_sd(values: Iterable[float]) -> tuple[float, float, int]:
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return math.nan, math.nan, 0
    mean = math.fsum(vals) / len(vals)
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return mean, sd, len(vals)


def aggregate(results: Sequence[RunResult]) -> list[dict[str, Any]]:
    """Mean and sample standard deviation per metric for each (protocol, size, condition)."""
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        if r.ok:
            groups.setdefault((r.protocol, r.node_count, r.condition), []).append(r)
    rows = []
    for (proto, n, cond), rs in groups.items():
        row: dict[str, Any] = {"protocol": proto, "node_count": n, "condition": cond, "runs": len(rs)}
        for m in METRICS:
            mean, sd, count = _mean_sd(r.metrics[m] for r in rs)
            row[f"{m}_mean"], row[f"{m}_sd"], row[f"{m}_n"] = mean, sd, count
        rows.append(row)
    return rows


def by_phase(results: Sequence[RunResult]) -> list[dict[str, Any]]:
    groups: dict[tuple, list[dict]] = {}
    for r in results:
        for p in r.phases:  # empty for failed runs
            groups.setdefault((r.protocol, r.node_count, r.condition, p["phase"]), []).append(p)
    rows = []
    for (proto, n, cond, phase), ps in groups.items():
        row: dict[str, Any] = {"protocol": proto, "node_count": n, "condition": cond, "phase": phase}
        row["generated"] = sum(p["generated"] for p in ps)
        row["delivered"] = sum(p["delivered"] for p in ps)
        for m in ("pdr", "latency", "jitter"):
            mean, sd, count = _mean_sd(p[m] for p in ps)
            row[f"{m}_mean"], row[f"{m}_sd"], row[f"{m}_n"] = mean, sd, count
        rows.append(row)
    return rows


def _write(path: Path, rows: Sequence[dict[str, Any]], columns: Sequence[str] | None = None) -> Path:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def run_rows(results: Sequence[RunResult]) -> list[dict[str, Any]]:
    rows = []
    for r in results:
        row = {"protocol": r.protocol, "node_count": r.node_count, "condition": r.condition, "run": r.run, "seed": r.seed}
        row.update({c: r.metrics.get(c, math.nan) for c in RUN_COLUMNS[5:-1]})
        row["error"] = r.error or ""
        rows.append(row)
    return rows


def write_results(results: Sequence[RunResult], out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "runs": _write(out / "runs.csv", run_rows(results), RUN_COLUMNS),
        "aggregate": _write(out / "aggregate.csv", aggregate(results), AGG_COLUMNS),
        "by_phase": _write(out / "by_phase.csv", by_phase(results), PHASE_COLUMNS),
    }
    for r in results:
        if r.trace is not None:
            p = out / f"trace_{r.protocol}_{r.node_count}_c{r.condition}_{r.run}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "node", "event", "packet"])
                for t, node, kind, pid in r.trace:
                    w.writerow([repr(t), node, kind, pid])
            paths[f"trace_{r.run}"] = p
    return paths


LAYOUTS = ("by_size", "by_phase", "by_condition")


def emit_plotdata(results: Sequence[RunResult], layout: str, out_dir: str | Path) -> list[Path]:
    """Long-format CSV tables shaped like the comparison figures.

    ``by_size`` and ``by_condition`` write one file per metric with rows per
    (protocol, size, condition); ``by_phase`` writes one file per metric with
    rows per (protocol, size, condition, phase).
    """
    if not results:
        raise ValueError("no results to emit")
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if layout == "by_phase":
        rows = sorted(by_phase(results), key=lambda r: (r["protocol"], r["node_count"], r["condition"], r["phase"]))
        for m in ("pdr", "latency", "jitter"):
            cols = ["protocol", "node_count", "condition", "phase", f"{m}_mean", f"{m}_sd"]
            paths.append(_write(out / f"{layout}_{m}.csv", rows, cols))
        return paths
    key = (lambda r: (r["protocol"], r["node_count"], r["condition"])) if layout == "by_size" else (
        lambda r: (r["protocol"], r["condition"], r["node_count"]))
    rows = sorted(aggregate(results), key=key)
    for m in METRICS:
        cols = ["protocol", "node_count", "condition", f"{m}_mean", f"{m}_sd", "runs"]
        paths.append(_write(out / f"{layout}_{m}.csv", rows, cols))
    return paths

"""``simulate`` command line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .campaign import (
    CONDITIONS,
    PROTOCOLS,
    ParseError,
    ScenarioConfig,
    ValidationError,
    config_from_dict,
    emit_plotdata,
    load_config,
    run_campaign,
    world_for,
    write_results,
)
from .mobility import write_trajectories_csv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simulate", description="Monte Carlo FANET routing simulation.")
    p.add_argument("--config", type=Path, help="YAML scenario file (all keys optional)")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--nodes", type=int, help="node count, 4*k^2")
    p.add_argument("--condition", type=int, choices=(1, 2), help="1 = all healthy, 2 = central node of each group failed")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--trace", action="store_true", help="write trace_<run>.csv event logs")
    p.add_argument("--no-trajectories", action="store_true", help="skip trajectories.csv")
    return p


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    changes = {}
    if args.protocol:
        changes["protocol"] = args.protocol
    if args.nodes is not None:
        changes["node_count"] = args.nodes
    if args.condition is not None:
        changes["condition"] = CONDITIONS[args.condition - 1]
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    if args.trace:
        changes["trace"] = True
    try:
        return cfg.replace(**changes)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ParseError, ValidationError) as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2
    results = run_campaign(cfg)
    out = Path(cfg.out_dir)
    paths = write_results(results, out)
    for layout in ("by_size", "by_phase", "by_condition"):
        emit_plotdata(results, layout, out / "plotdata")
    if not args.no_trajectories:
        try:
            write_trajectories_csv(world_for(cfg).spec, out / "trajectories.csv")
        except Exception as exc:  # noqa: BLE001
            print(f"simulate: engine error building trajectories: {exc!r}", file=sys.stderr)
            return 1
    agg = paths["aggregate"].read_text().splitlines()
    print(f"{len(results)} run(s) of {cfg.protocol}, {cfg.node_count} nodes, condition {cfg.failure_condition} -> {out}")
    for line in agg:
        print("  " + line)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"simulate: engine error in run {r.run} (seed {r.seed}): {r.error}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

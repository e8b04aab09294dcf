"""Command-line entry point.

    toposched run --scenario scenarios/table4.yaml --mode flextopo_imp \
        --mode baseline --out results/
    toposched validate --scenario scenarios/table4.yaml
    toposched render-snapshot --snapshot results/snapshots_baseline.txt
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .flextopo import parse_snapshot, split_snapshots
from .policy import Mode
from .render import render_svg, render_text
from .scenario import (SOURCING_STATES, load_scenario, validate_scenario)
from .sim import RunMetrics, default_hit_filter, hit_rate, run, summary_text


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toposched",
        description="Topology-aware preemptive GPU scheduling simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write results")
    p_run.add_argument("--scenario", required=True, help="scenario YAML file")
    p_run.add_argument("--mode", action="append", dest="modes",
                       choices=[m.value for m in Mode],
                       help="scheduling mode; repeatable (default: all)")
    p_run.add_argument("--alpha", type=float, default=None,
                       help="override the scenario's score weight")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's random seed")
    p_run.add_argument("--sourcing-state", choices=sorted(SOURCING_STATES),
                       default=None, help="override candidate sourcing state")
    p_run.add_argument("--out", default="results",
                       help="output directory (default: results)")
    p_run.add_argument("--render", action="store_true",
                       help="also write allocation grids (text and SVG)")

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--scenario", required=True)

    p_ren = sub.add_parser("render-snapshot",
                           help="render a snapshot file as an allocation grid")
    p_ren.add_argument("--snapshot", required=True,
                       help="snapshot file (one or more concatenated servers)")
    p_ren.add_argument("--svg", default=None, help="also write an SVG here")
    return parser


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    except Exception as exc:  # malformed YAML / bad fields
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    if args.alpha is not None:
        scenario.alpha = args.alpha
    if args.seed is not None:
        scenario.seed = args.seed
    if args.sourcing_state is not None:
        scenario.sourcing_state = args.sourcing_state
    report = validate_scenario(scenario)
    if not report.valid:
        print(report.text(), file=sys.stderr)
        return 2
    modes = [Mode(m) for m in (args.modes or [m.value for m in Mode])]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics_by_mode: Dict[str, RunMetrics] = {}
    for mode in modes:
        print(f"running {scenario.name} mode={mode.value} ...", flush=True)
        metrics = run(scenario, mode)
        metrics_by_mode[mode.value] = metrics
        (out_dir / f"records_{mode.value}.csv").write_text(metrics.to_csv())
        snap_text = "".join(metrics.snapshots[sid]
                            for sid in sorted(metrics.snapshots))
        (out_dir / f"snapshots_{mode.value}.txt").write_text(snap_text)
        if args.render:
            snaps = [parse_snapshot(doc) for doc in split_snapshots(snap_text)]
            (out_dir / f"grid_{mode.value}.txt").write_text(render_text(snaps))
            (out_dir / f"grid_{mode.value}.svg").write_text(render_svg(snaps))
        names = set(default_hit_filter(metrics))
        scored = sum(1 for r in metrics.records if r.workload in names)
        rate = f"{hit_rate(metrics):.4f}" if scored else "n/a"
        print(f"  records={len(metrics.records)} scored={scored} "
              f"hit_rate={rate}")
    summary = summary_text(metrics_by_mode)
    (out_dir / "summary.txt").write_text(summary)
    print(summary, end="")
    print(f"results written to {out_dir}/")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    report = validate_scenario(scenario)
    print(report.text(), end="")
    return 0 if report.valid else 2


def _cmd_render(args: argparse.Namespace) -> int:
    path = Path(args.snapshot)
    if not path.is_file():
        print(f"error: snapshot file not found: {path}", file=sys.stderr)
        return 2
    try:
        snaps = [parse_snapshot(doc) for doc in split_snapshots(path.read_text())]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(render_text(snaps), end="")
    if args.svg:
        Path(args.svg).write_text(render_svg(snaps))
        print(f"svg written to {args.svg}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_render(args)


if __name__ == "__main__":
    sys.exit(main())

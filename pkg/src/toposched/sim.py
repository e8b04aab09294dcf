"""Discrete-cycle cluster simulator.

Each run starts from a saturated cluster. A cycle applies its scheduled
events, then triggers the configured auto-scale-ups round-robin over the
listed workloads; each scale-up first tries a normal placement and falls
back to preemption. By default the cluster is restored to the saturated
snapshot at every cycle boundary, so every cycle preempts out of the same
fully-allocated state.

``sourcing_state: cycle_start`` switches to evaluate-only semantics: every
preemption of a cycle is sourced against the frozen cycle-start state and
committed to a scratch copy, so the 50 decisions of one cycle are mutually
independent.
"""

from __future__ import annotations

import csv
import io
import math
import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .cluster import (
    ClusterState,
    PreemptionError,
    Qos,
    ScenarioError,
    WorkloadSpec,
    execute_eviction_and_place,
    find_placement,
    required_class,
    saturate,
)
from .flextopo import AlignmentClass, FlexTopoGraph, ResourceSet
from .policy import Mode, PreemptionDecision, ScoreParams, preempt
from .scenario import Event, Scenario, build_cluster, validate_scenario


CSV_COLUMNS = ("cycle", "slot", "workload", "mode", "server", "victims",
               "victim_ids", "achieved_class", "qos_satisfied", "evaluations",
               "wall_time_us")


@dataclass(frozen=True)
class PreemptionRecord:
    cycle: int
    slot: int
    workload: str
    mode: str
    server: Optional[str]          # None: preemption failed cluster-wide
    victims: int
    victim_ids: Tuple[str, ...]
    achieved_class: Optional[AlignmentClass]
    qos_satisfied: bool
    evaluations: int
    wall_time_us: float
    # committed footprint, kept out of the CSV; lets auditors re-derive
    # achieved_class and the QoS verdict independently
    footprint: Optional[ResourceSet] = None

    def csv_row(self) -> Tuple:
        return (self.cycle, self.slot, self.workload, self.mode,
                self.server or "", self.victims, ";".join(self.victim_ids),
                self.achieved_class.label if self.achieved_class is not None else "",
                int(self.qos_satisfied), self.evaluations,
                f"{self.wall_time_us:.1f}")


@dataclass
class RunMetrics:
    scenario_name: str
    mode: str
    seed: int
    records: List[PreemptionRecord]
    timeseries: List[Dict[str, int]]       # per cycle, per-workload counts
    snapshots: Dict[str, str]              # server id -> snapshot text
    workloads: Dict[str, WorkloadSpec]
    gpus_per_server: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in self.records:
            writer.writerow(rec.csv_row())
        return buf.getvalue()


def qos_satisfied(graph: FlexTopoGraph, ws: WorkloadSpec,
                  footprint: ResourceSet, numa_rule: str) -> bool:
    """Does a committed footprint honor every non-none QoS dimension
    (guaranteed and best-effort alike)?"""
    cls = graph.classify_span(footprint)
    spec = graph.spec
    if ws.qos.socket != Qos.NONE and cls < AlignmentClass.SINGLE_SOCKET:
        return False
    if ws.qos.numa == Qos.NONE:
        return True
    if ws.gpus == 0:
        return cls == AlignmentClass.SINGLE_NUMA
    if ws.gpus <= spec.gpus_per_numa:
        return cls == AlignmentClass.SINGLE_NUMA
    if numa_rule == "aligned" and cls < required_class(spec, ws.gpus):
        return False
    # per-GPU locality: every core sits on the NUMA node of one of the
    # footprint's GPUs, with at least the per-GPU share locally available
    per_gpu = ws.cpu_cores // ws.gpus
    cores_by_numa, gpus_by_numa = graph.footprint_tally(footprint)
    for n in range(spec.numa_count):
        if cores_by_numa[n] and not gpus_by_numa[n]:
            return False
        if cores_by_numa[n] < gpus_by_numa[n] * per_gpu:
            return False
    return True


def apply_event(cluster: ClusterState, event: Event) -> List[str]:
    """Apply one event; returns workload names enqueued for scale-up."""
    if event.kind == "scale_up":
        if event.workload not in cluster.workloads:
            raise ScenarioError(f"scale_up for unknown workload {event.workload!r}")
        return [event.workload] * event.delta
    if event.kind == "scale_down":
        owned = sorted(
            (iid for iid, inst in cluster.instances.items()
             if inst.workload == event.workload),
        )
        if event.workload not in cluster.workloads:
            raise ScenarioError(f"scale_down for unknown workload {event.workload!r}")
        for iid in reversed(owned[-event.delta:] if event.delta <= len(owned)
                            else owned):
            cluster.remove(iid)
        return []
    if event.kind == "gpu_failure":
        if event.server not in cluster.servers:
            raise ScenarioError(f"gpu_failure on unknown server {event.server!r}")
        spec = cluster.servers[event.server].spec
        if event.gpu is None or not 0 <= event.gpu < spec.gpu_count:
            raise ScenarioError(f"gpu_failure on unknown GPU {event.gpu!r}")
        cluster.fail_gpu(event.server, event.gpu)
        return []
    raise ScenarioError(f"unknown event kind {event.kind!r}")


def _try_normal_placement(cluster: ClusterState, ws: WorkloadSpec,
                          instance_id: str) -> bool:
    for sid in cluster.server_ids:
        rs = find_placement(cluster.servers[sid], ws.cpu_cores, ws.gpus,
                            ws.qos, cluster.numa_rule)
        if rs is not None:
            cluster.place(instance_id, ws.name, sid, rs)
            return True
    return False


def _commit(cluster: ClusterState, decision: PreemptionDecision,
            ws: WorkloadSpec, instance_id: str, mode: Mode,
            ) -> Tuple[AlignmentClass, bool, ResourceSet]:
    inst = execute_eviction_and_place(
        cluster, decision.server, decision.victims, ws, instance_id,
        enforce_qos=mode != Mode.BASELINE)
    graph = cluster.servers[decision.server]
    ok = qos_satisfied(graph, ws, inst.footprint, cluster.numa_rule)
    return inst.alignment, ok, inst.footprint


def run(scenario: Scenario, mode: Mode) -> RunMetrics:
    """Saturate, replay cycles, drive preemptions, collect metrics."""
    mode = Mode(mode)
    report = validate_scenario(scenario)
    if not report.valid:
        raise ScenarioError("invalid scenario:\n" + report.text())
    params = ScoreParams(alpha=scenario.alpha, t_values=scenario.t_values)
    cluster = build_cluster(scenario)
    saturate(cluster)
    baseline_state = cluster.clone() if scenario.reset_each_cycle else None
    rng = random.Random(scenario.seed)
    records: List[PreemptionRecord] = []
    timeseries: List[Dict[str, int]] = []
    serial = 0

    for cycle in range(scenario.cycles):
        if scenario.reset_each_cycle and cycle > 0:
            cluster = baseline_state.clone()
        pending: List[str] = []
        for ev in scenario.events:
            if ev.cycle == cycle:
                pending.extend(apply_event(cluster, ev))
        if scenario.scale_up_workloads:
            order = scenario.scale_up_workloads
            pending.extend(order[i % len(order)]
                           for i in range(scenario.scale_ups_per_cycle))

        frozen = cluster.clone() if scenario.sourcing_state == "cycle_start" else None

        for slot, wname in enumerate(pending):
            ws = cluster.workloads[wname]
            serial += 1
            instance_id = f"{wname}-up{serial:05d}"
            target = frozen if frozen is not None else cluster
            if frozen is not None:
                # evaluate-only semantics: nothing is committed to the live
                # state; placements and decisions are judged on the frozen
                # cycle-start snapshot
                if any(find_placement(frozen.servers[sid], ws.cpu_cores,
                                      ws.gpus, ws.qos, frozen.numa_rule)
                       is not None for sid in frozen.server_ids):
                    continue
            elif _try_normal_placement(cluster, ws, instance_id):
                continue
            baseline_rng = rng if (mode == Mode.BASELINE
                                   and scenario.baseline_shuffle) else None
            t0 = time.perf_counter_ns()
            decision = preempt(target, ws, params, mode, rng=baseline_rng)
            wall_us = (time.perf_counter_ns() - t0) / 1000.0
            if decision.failed:
                records.append(PreemptionRecord(
                    cycle, slot, wname, mode.value, None, 0, (), None, False,
                    decision.evaluations, wall_us))
                continue
            commit_target = target.clone() if frozen is not None else cluster
            achieved, ok, footprint = _commit(commit_target, decision, ws,
                                              instance_id, mode)
            records.append(PreemptionRecord(
                cycle, slot, wname, mode.value, decision.server,
                len(decision.victims), decision.victims, achieved, ok,
                decision.evaluations, wall_us, footprint))
        timeseries.append(cluster.counts_by_workload())

    snapshots = {sid: cluster.servers[sid].to_text()
                 for sid in cluster.server_ids}
    return RunMetrics(
        scenario_name=scenario.name, mode=mode.value, seed=scenario.seed,
        records=records, timeseries=timeseries, snapshots=snapshots,
        workloads=dict(cluster.workloads),
        gpus_per_server=scenario.topology.gpu_count,
    )


def default_hit_filter(metrics: RunMetrics) -> List[str]:
    """Workloads counted toward the hit rate: full-server requests and the
    lowest-priority workload are excluded."""
    if not metrics.workloads:
        return []
    floor = min(ws.priority for ws in metrics.workloads.values())
    return [name for name, ws in metrics.workloads.items()
            if ws.gpus < metrics.gpus_per_server and ws.priority > floor]


def hit_rate(metrics: RunMetrics,
             workloads: Optional[Iterable[str]] = None) -> float:
    """Fraction of matching preemption records whose committed placement
    satisfied the preemptor's topology preferences."""
    names = set(default_hit_filter(metrics) if workloads is None else workloads)
    matched = [r for r in metrics.records if r.workload in names]
    if not matched:
        raise ValueError(f"no preemption records for workloads {sorted(names)}")
    return sum(r.qos_satisfied for r in matched) / len(matched)


def _nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    # nearest-rank percentile: ceil(pct/100 * n), 1-based
    n = len(sorted_values)
    rank = max(1, math.ceil(pct * n / 100.0))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class GroupStats:
    workload: str
    mode: str
    count: int
    wall_p50: float
    wall_p90: float
    wall_mean: float
    evals_p50: float
    evals_p90: float
    evals_mean: float


def latency_summary(metrics: RunMetrics) -> Dict[Tuple[str, str], GroupStats]:
    """Nearest-rank P50/P90 plus mean of wall time and evaluation counts,
    grouped by (workload, mode)."""
    groups: Dict[Tuple[str, str], List[PreemptionRecord]] = {}
    for rec in metrics.records:
        groups.setdefault((rec.workload, rec.mode), []).append(rec)
    out: Dict[Tuple[str, str], GroupStats] = {}
    for key, recs in sorted(groups.items()):
        walls = sorted(r.wall_time_us for r in recs)
        evals = sorted(float(r.evaluations) for r in recs)
        out[key] = GroupStats(
            workload=key[0], mode=key[1], count=len(recs),
            wall_p50=_nearest_rank(walls, 50), wall_p90=_nearest_rank(walls, 90),
            wall_mean=statistics.fmean(walls),
            evals_p50=_nearest_rank(evals, 50), evals_p90=_nearest_rank(evals, 90),
            evals_mean=statistics.fmean(evals),
        )
    return out


def summary_text(metrics_by_mode: Dict[str, RunMetrics]) -> str:
    """One stanza per workload x mode: hit counts plus latency percentiles."""
    lines: List[str] = []
    for mode, metrics in sorted(metrics_by_mode.items()):
        names = default_hit_filter(metrics)
        matched = [r for r in metrics.records if r.workload in names]
        hits = sum(r.qos_satisfied for r in matched)
        rate = f"{hits / len(matched) * 100.0:.1f}%" if matched else "n/a"
        lines.append(f"mode {mode}: preemptions={len(metrics.records)} "
                     f"hit={hits}/{len(matched)} ({rate}) "
                     f"[workloads: {' '.join(names) or '-'}]")
        for (wname, _), stats in latency_summary(metrics).items():
            lines.append(
                f"  {wname} x {mode}: n={stats.count} "
                f"evals p50={stats.evals_p50:.0f} p90={stats.evals_p90:.0f} "
                f"mean={stats.evals_mean:.1f} | "
                f"wall_us p50={stats.wall_p50:.0f} p90={stats.wall_p90:.0f} "
                f"mean={stats.wall_mean:.0f}")
    return "\n".join(lines) + "\n"

"""Scenario files: cluster shape, workload table, event schedule, knobs.

A scenario is a YAML document::

    name: demo
    topology: rtx4090          # preset name, or an inline mapping
    servers: 3
    alpha: 0.5
    seed: 7
    numa_rule: per_gpu         # or: aligned
    cycles: 2
    scale_ups_per_cycle: 4
    scale_up_workloads: [B, C] # round-robin order
    reset_each_cycle: true
    sourcing_state: current    # or: cycle_start (evaluate-only semantics)
    baseline_shuffle: true
    workloads:
      - name: A
        priority: 1500
        preemptible: false
        cpu_cores: 64
        gpus: 8
        qos: {numa: guaranteed, socket: best_effort}
        initial_replicas: 1
    events:
      - {cycle: 0, kind: scale_up, workload: B, delta: 1}
      - {cycle: 1, kind: scale_down, workload: C, delta: 2}
      - {cycle: 1, kind: gpu_failure, server: node-000, gpu: 3}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import yaml

from .cluster import (
    ClusterState,
    NUMA_RULES,
    Qos,
    ScenarioError,
    TopologyQos,
    WorkloadSpec,
    find_placement,
)
from .flextopo import (
    AlignmentClass,
    TopologyError,
    TopologySpec,
    build_topology,
    preset,
)
from .policy import DEFAULT_T_VALUES


EVENT_KINDS = ("scale_up", "scale_down", "gpu_failure")
SOURCING_STATES = ("current", "cycle_start")


@dataclass(frozen=True)
class Event:
    cycle: int
    kind: str
    workload: Optional[str] = None
    delta: int = 1
    server: Optional[str] = None
    gpu: Optional[int] = None


@dataclass
class Scenario:
    name: str
    topology: TopologySpec
    servers: int
    workloads: List[WorkloadSpec]
    alpha: float = 0.5
    t_values: Dict[AlignmentClass, float] = field(
        default_factory=lambda: dict(DEFAULT_T_VALUES))
    seed: int = 0
    numa_rule: str = "per_gpu"
    cycles: int = 1
    scale_ups_per_cycle: int = 0
    scale_up_workloads: List[str] = field(default_factory=list)
    reset_each_cycle: bool = True
    sourcing_state: str = "current"
    baseline_shuffle: bool = True
    events: List[Event] = field(default_factory=list)

    def server_id(self, index: int) -> str:
        return f"node-{index:03d}"

    @property
    def server_ids(self) -> List[str]:
        return [self.server_id(i) for i in range(self.servers)]

    def workload(self, name: str) -> WorkloadSpec:
        for ws in self.workloads:
            if ws.name == name:
                return ws
        raise ScenarioError(f"unknown workload {name!r}")


def _parse_qos(raw: Optional[dict]) -> TopologyQos:
    raw = raw or {}
    try:
        return TopologyQos(numa=Qos(raw.get("numa", "none")),
                           socket=Qos(raw.get("socket", "none")))
    except ValueError as exc:
        raise ScenarioError(f"bad qos value: {exc}") from None


def _parse_topology(raw: Union[str, dict]) -> TopologySpec:
    if isinstance(raw, str):
        return preset(raw)
    kwargs = dict(raw)
    if "numa_distance" not in kwargs:
        raise ScenarioError("inline topology requires numa_distance")
    return TopologySpec(**kwargs)


def parse_scenario(doc: dict, name_hint: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    try:
        topology = _parse_topology(doc["topology"])
        workloads = [
            WorkloadSpec(
                name=str(w["name"]),
                priority=int(w["priority"]),
                preemptible=bool(w["preemptible"]),
                cpu_cores=int(w.get("cpu_cores", 0)),
                gpus=int(w.get("gpus", 0)),
                qos=_parse_qos(w.get("qos")),
                initial_replicas=int(w.get("initial_replicas", 0)),
            )
            for w in doc["workloads"]
        ]
        events = [
            Event(
                cycle=int(e["cycle"]), kind=str(e["kind"]),
                workload=e.get("workload"), delta=int(e.get("delta", 1)),
                server=e.get("server"),
                gpu=None if e.get("gpu") is None else int(e["gpu"]),
            )
            for e in doc.get("events", [])
        ]
        t_values = dict(DEFAULT_T_VALUES)
        for label, value in (doc.get("t_values") or {}).items():
            t_values[{
                "single_numa": AlignmentClass.SINGLE_NUMA,
                "single_socket": AlignmentClass.SINGLE_SOCKET,
                "cross_socket": AlignmentClass.CROSS_SOCKET,
            }[label]] = float(value)
        return Scenario(
            name=str(doc.get("name", name_hint)),
            topology=topology,
            servers=int(doc["servers"]),
            workloads=workloads,
            alpha=float(doc.get("alpha", 0.5)),
            t_values=t_values,
            seed=int(doc.get("seed", 0)),
            numa_rule=str(doc.get("numa_rule", "per_gpu")),
            cycles=int(doc.get("cycles", 1)),
            scale_ups_per_cycle=int(doc.get("scale_ups_per_cycle", 0)),
            scale_up_workloads=[str(n) for n in doc.get("scale_up_workloads", [])],
            reset_each_cycle=bool(doc.get("reset_each_cycle", True)),
            sourcing_state=str(doc.get("sourcing_state", "current")),
            baseline_shuffle=bool(doc.get("baseline_shuffle", True)),
            events=events,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ScenarioError, TopologyError)):
            raise
        raise ScenarioError(f"malformed scenario: {exc!r}") from exc


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return parse_scenario(doc, name_hint=path.stem)


def build_cluster(scenario: Scenario) -> ClusterState:
    servers = {sid: build_topology(scenario.topology, sid)
               for sid in scenario.server_ids}
    workloads = {ws.name: ws for ws in scenario.workloads}
    if len(workloads) != len(scenario.workloads):
        raise ScenarioError("duplicate workload names")
    return ClusterState(servers, workloads, numa_rule=scenario.numa_rule)


@dataclass(frozen=True)
class Finding:
    level: str  # "error" | "warning" | "info"
    message: str


@dataclass
class ValidationReport:
    findings: List[Finding]

    @property
    def valid(self) -> bool:
        return not any(f.level == "error" for f in self.findings)

    def text(self) -> str:
        if not self.findings:
            return "scenario valid: no findings\n"
        lines = [f"[{f.level}] {f.message}" for f in self.findings]
        lines.append("scenario valid" if self.valid else "scenario INVALID")
        return "\n".join(lines) + "\n"


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Schema plus semantic checks: requests fit one server, guaranteed QoS
    is satisfiable on an empty server, replica totals versus capacity."""
    findings: List[Finding] = []
    spec = scenario.topology
    if scenario.servers < 1:
        findings.append(Finding("error", "server count must be >= 1"))
    if not 0.0 <= scenario.alpha <= 1.0:
        findings.append(Finding("error", f"alpha {scenario.alpha} outside [0, 1]"))
    if scenario.numa_rule not in NUMA_RULES:
        findings.append(Finding("error", f"unknown numa_rule {scenario.numa_rule!r}"))
    if scenario.sourcing_state not in SOURCING_STATES:
        findings.append(Finding(
            "error", f"unknown sourcing_state {scenario.sourcing_state!r}"))
    names = {ws.name for ws in scenario.workloads}
    for wname in scenario.scale_up_workloads:
        if wname not in names:
            findings.append(Finding("error", f"scale_up workload {wname!r} undefined"))

    probe_rule_ok = scenario.numa_rule in NUMA_RULES
    empty = build_topology(spec, "probe")
    for ws in scenario.workloads:
        if ws.gpus > spec.gpu_count or ws.cpu_cores > spec.core_count:
            findings.append(Finding(
                "error",
                f"workload {ws.name} requests ({ws.cpu_cores} cores, {ws.gpus} "
                f"GPUs) but a server has ({spec.core_count}, {spec.gpu_count})"))
            continue
        if probe_rule_ok and find_placement(
                empty, ws.cpu_cores, ws.gpus, ws.qos,
                scenario.numa_rule) is None:
            findings.append(Finding(
                "error",
                f"workload {ws.name}: guaranteed QoS unsatisfiable even on an "
                f"empty server"))

    total_gpus = scenario.servers * spec.gpu_count
    requested_gpus = sum(ws.gpus * ws.initial_replicas for ws in scenario.workloads)
    total_cores = scenario.servers * spec.core_count
    requested_cores = sum(ws.cpu_cores * ws.initial_replicas
                          for ws in scenario.workloads)
    findings.append(Finding(
        "info",
        f"capacity: {requested_gpus}/{total_gpus} GPUs and "
        f"{requested_cores}/{total_cores} cores requested by initial replicas"))
    if requested_gpus > total_gpus or requested_cores > total_cores:
        findings.append(Finding(
            "error", "initial replicas exceed cluster capacity"))

    server_ids = set(scenario.server_ids)
    for i, ev in enumerate(scenario.events):
        if ev.kind not in EVENT_KINDS:
            findings.append(Finding("error", f"event {i}: unknown kind {ev.kind!r}"))
            continue
        if ev.cycle < 0 or ev.cycle >= scenario.cycles:
            findings.append(Finding(
                "error", f"event {i}: cycle {ev.cycle} outside 0..{scenario.cycles - 1}"))
        if ev.kind in ("scale_up", "scale_down"):
            if ev.workload not in names:
                findings.append(Finding(
                    "error", f"event {i}: unknown workload {ev.workload!r}"))
            if ev.delta < 1:
                findings.append(Finding("error", f"event {i}: delta must be >= 1"))
        if ev.kind == "gpu_failure":
            if ev.server not in server_ids:
                findings.append(Finding(
                    "error", f"event {i}: unknown server {ev.server!r}"))
            elif ev.gpu is None or not 0 <= ev.gpu < spec.gpu_count:
                findings.append(Finding(
                    "error", f"event {i}: GPU index {ev.gpu!r} out of range"))
    return ValidationReport(findings)

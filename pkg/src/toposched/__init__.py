"""Topology-aware preemptive GPU scheduling engine and cluster simulator."""

from .flextopo import (AlignmentClass, AllocationError, FlexTopoGraph,
                       PRESET_NAMES, ParsedSnapshot, ResourceSet,
                       TopologyError, TopologySpec, build_topology,
                       parse_snapshot, preset, split_snapshots)
from .cluster import (ClusterState, Instance, PreemptionError, Qos,
                      ScenarioError, TopologyQos, WorkloadSpec,
                      execute_eviction_and_place, find_placement,
                      required_class, saturate, schedulable)
from .policy import (Candidate, Mode, PreemptionDecision, ScoreParams,
                     exhaustive_candidates, imp, preempt, score,
                     select_optimal)
from .scenario import (Event, Scenario, ValidationReport, build_cluster,
                       load_scenario, parse_scenario, validate_scenario)
from .sim import (PreemptionRecord, RunMetrics, default_hit_filter, hit_rate,
                  latency_summary, qos_satisfied, run, summary_text)
from .render import render_svg, render_text

__version__ = "0.1.0"

__all__ = [
    "AlignmentClass", "AllocationError", "Candidate", "ClusterState",
    "Event", "FlexTopoGraph", "Instance", "Mode", "PRESET_NAMES",
    "ParsedSnapshot", "PreemptionDecision", "PreemptionError",
    "PreemptionRecord", "Qos", "ResourceSet", "RunMetrics", "Scenario",
    "ScenarioError", "ScoreParams", "TopologyError", "TopologyQos",
    "TopologySpec", "ValidationReport", "WorkloadSpec", "build_cluster",
    "build_topology", "default_hit_filter", "exhaustive_candidates",
    "execute_eviction_and_place", "find_placement", "hit_rate", "imp",
    "latency_summary", "load_scenario", "parse_scenario", "parse_snapshot",
    "preempt", "preset", "qos_satisfied", "render_svg", "render_text",
    "required_class", "run", "saturate", "schedulable", "score",
    "select_optimal", "split_snapshots", "summary_text", "validate_scenario",
    "__version__",
]

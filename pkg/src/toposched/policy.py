"""Preemption decision making.

Pipeline per preemptor: eligible nodes are filtered (drain-all hypothetical
for guaranteed QoS), victim subsets are sourced per node either by
incremental minimal search or by exhaustive enumeration, each candidate
``(node, victim subset)`` is scored by a weighted blend of inverse victim
priority and topology alignment, and the global argmax wins.

A priority-only baseline (no topology awareness) is included for
comparison: per node it greedily evicts the lowest-priority victims until
the preemptor fits by raw resource counts, and takes the first feasible
node in id order.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .cluster import ClusterState, PreemptionError, WorkloadSpec, schedulable
from .flextopo import AlignmentClass, ResourceSet


class Mode(str, Enum):
    FLEXTOPO_IMP = "flextopo_imp"
    FLEXTOPO_EXHAUSTIVE = "flextopo_exhaustive"
    BASELINE = "baseline"


DEFAULT_T_VALUES: Dict[AlignmentClass, float] = {
    AlignmentClass.SINGLE_NUMA: 1.0,
    AlignmentClass.SINGLE_SOCKET: 0.5,
    AlignmentClass.CROSS_SOCKET: 0.0,
}


@dataclass(frozen=True)
class ScoreParams:
    """Weight between inverse-priority and topology terms, plus the
    numeric value assigned to each alignment class."""

    alpha: float = 0.5
    t_values: Mapping[AlignmentClass, float] = field(
        default_factory=lambda: dict(DEFAULT_T_VALUES))

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        t = self.t_values
        if not (t[AlignmentClass.SINGLE_NUMA]
                > t[AlignmentClass.SINGLE_SOCKET]
                > t[AlignmentClass.CROSS_SOCKET]):
            raise ValueError("t_values must strictly decrease with wider span")


@dataclass(frozen=True)
class Candidate:
    """A (node, victim subset) pair under evaluation."""

    server: str
    victims: Tuple[str, ...]
    topo_class: AlignmentClass
    priority_sum: int


@dataclass(frozen=True)
class PreemptionDecision:
    workload: str
    server: Optional[str]
    victims: Tuple[str, ...]
    evaluations: int
    mode: Mode

    @property
    def failed(self) -> bool:
        return self.server is None


def score(candidate: Candidate, params: ScoreParams) -> float:
    """alpha / priority_sum + (1 - alpha) * t[alignment class]."""
    if candidate.priority_sum <= 0:
        raise ValueError("candidate priority_sum must be positive")
    return (params.alpha / candidate.priority_sum
            + (1.0 - params.alpha) * params.t_values[candidate.topo_class])


def _tie_key(c: Candidate) -> Tuple:
    return (len(c.victims), c.priority_sum, c.server, c.victims)


def select_optimal(candidates: Sequence[Candidate], params: ScoreParams) -> Candidate:
    """Argmax of the candidate score with deterministic tie-breaking
    (fewer victims, lower priority sum, lower server id, lex victim ids)."""
    if not candidates:
        raise PreemptionError("no feasible preemption candidate on any node")
    return min(candidates, key=lambda c: (-score(c, params), _tie_key(c)))


def eligible_victims(cluster: ClusterState, server_id: str,
                     preemptor: WorkloadSpec) -> List[str]:
    out = []
    for iid in cluster.instances_on(server_id):
        ws = cluster.workload_of(iid)
        if ws.preemptible and ws.priority < preemptor.priority:
            out.append(iid)
    return out


def make_candidate(cluster: ClusterState, server_id: str,
                   victims: Sequence[str]) -> Candidate:
    graph = cluster.servers[server_id]
    union = ResourceSet.of((), ())
    psum = 0
    for vid in victims:
        inst = cluster.instances[vid]
        union = union.union(inst.footprint)
        psum += cluster.workload_of(vid).priority
    return Candidate(
        server=server_id, victims=tuple(sorted(victims)),
        topo_class=graph.classify_span(union), priority_sum=psum,
    )


def guaranteed_filter(cluster: ClusterState, server_id: str,
                      preemptor: WorkloadSpec) -> bool:
    """Drain-all hypothetical: can the node host the preemptor if every
    eligible victim were evicted? Feasibility only, no victim selection."""
    victims = eligible_victims(cluster, server_id, preemptor)
    return schedulable(cluster, server_id, preemptor, victims)


def imp(cluster: ClusterState, server_id: str, preemptor: WorkloadSpec,
        victims: Optional[Sequence[str]] = None,
        ) -> Tuple[List[Tuple[str, ...]], int]:
    """Incremental minimal preemption: feasible victim subsets of the
    least cardinality, searched size-ascending with a drain-all failfast.

    Returns ``(subsets, evaluations)``; an empty list means the node cannot
    admit the preemptor even after draining everything. When the search
    reaches the full victim set the cached drain-all result is reused
    rather than re-evaluated.
    """
    if victims is None:
        victims = eligible_victims(cluster, server_id, preemptor)
    victims = sorted(victims)
    m = len(victims)
    if m == 0:
        return [], 0
    evaluations = 1
    if not schedulable(cluster, server_id, preemptor, victims):
        return [], evaluations  # extreme validation: failfast
    for k in range(1, m + 1):
        feasible: List[Tuple[str, ...]] = []
        for combo in itertools.combinations(victims, k):
            if k == m:
                feasible.append(combo)  # drain-all already validated
                continue
            evaluations += 1
            if schedulable(cluster, server_id, preemptor, combo):
                feasible.append(combo)
        if feasible:
            return feasible, evaluations
    raise AssertionError("unreachable: drain-all was feasible")


def exhaustive_candidates(cluster: ClusterState, server_id: str,
                          preemptor: WorkloadSpec,
                          victims: Optional[Sequence[str]] = None,
                          cap: int = 16) -> Tuple[List[Tuple[str, ...]], int]:
    """Brute force over every non-empty victim subset (2^m - 1 checks).

    Oracle for the incremental search and the "no early stopping" arm of
    the overhead comparison.
    """
    if victims is None:
        victims = eligible_victims(cluster, server_id, preemptor)
    victims = sorted(victims)
    m = len(victims)
    if m > cap:
        raise PreemptionError(f"{m} victims exceeds exhaustive cap {cap}")
    feasible: List[Tuple[str, ...]] = []
    evaluations = 0
    for k in range(1, m + 1):
        for combo in itertools.combinations(victims, k):
            evaluations += 1
            if schedulable(cluster, server_id, preemptor, combo):
                feasible.append(combo)
    return feasible, evaluations


def _source_node(cluster: ClusterState, server_id: str, preemptor: WorkloadSpec,
                 params: ScoreParams, mode: Mode) -> Tuple[Optional[Candidate], int]:
    """Best-scoring candidate on one node, or None, plus evaluation count."""
    victims = eligible_victims(cluster, server_id, preemptor)
    if not victims:
        return None, 0
    evaluations = 0
    if preemptor.qos.has_guarantee:
        evaluations += 1
        if not schedulable(cluster, server_id, preemptor, victims):
            return None, evaluations
    if mode == Mode.FLEXTOPO_IMP:
        subsets, e = imp(cluster, server_id, preemptor, victims)
    else:
        subsets, e = exhaustive_candidates(cluster, server_id, preemptor, victims)
    evaluations += e
    if not subsets:
        return None, evaluations
    candidates = [make_candidate(cluster, server_id, s) for s in subsets]
    return select_optimal(candidates, params), evaluations


def _baseline(cluster: ClusterState, preemptor: WorkloadSpec,
              rng: Optional[random.Random]) -> Tuple[Optional[Candidate], int]:
    """Priority-only victim selection: first feasible node in id order,
    victims added lowest-priority-first until raw counts fit.

    With an RNG, victim order is shuffled within equal priority (the
    deterministic id order otherwise)."""
    evaluations = 0
    for server_id in cluster.server_ids:
        victims = eligible_victims(cluster, server_id, preemptor)
        if not victims:
            continue
        if rng is not None:
            rng.shuffle(victims)
        victims.sort(key=lambda vid: cluster.workload_of(vid).priority)
        chosen: List[str] = []
        for vid in victims:
            chosen.append(vid)
            evaluations += 1
            if schedulable(cluster, server_id, preemptor, chosen,
                           ignore_topology=True):
                return make_candidate(cluster, server_id, chosen), evaluations
    return None, evaluations


def preempt(cluster: ClusterState, preemptor: WorkloadSpec, params: ScoreParams,
            mode: Mode, rng: Optional[random.Random] = None) -> PreemptionDecision:
    """Cluster-wide preemption decision for a preemptor that failed the
    normal scheduling cycle. Does not mutate state; commit separately via
    :func:`toposched.cluster.execute_eviction_and_place`.
    """
    mode = Mode(mode)
    if mode == Mode.BASELINE:
        best, evaluations = _baseline(cluster, preemptor, rng)
    else:
        node_bests: List[Candidate] = []
        evaluations = 0
        for server_id in cluster.server_ids:
            cand, e = _source_node(cluster, server_id, preemptor, params, mode)
            evaluations += e
            if cand is not None:
                node_bests.append(cand)
        best = select_optimal(node_bests, params) if node_bests else None
    if best is None:
        return PreemptionDecision(preemptor.name, None, (), evaluations, mode)
    return PreemptionDecision(preemptor.name, best.server, best.victims,
                              evaluations, mode)

"""Multi-server cluster state and topology-constrained placement.

The placement search works on per-NUMA free tallies: a request of
``(cpu_cores, gpus)`` is split into per-GPU core groups of size
``cpu_cores // gpus`` and the search picks the set of NUMA nodes that can
host the GPUs and their local core groups, preferring the tightest
alignment class, then the lowest max pairwise NUMA distance, then the
lowest ids.

Two readings of "guaranteed NUMA affinity" for multi-GPU requests are
supported (``numa_rule``):

* ``per_gpu`` (default): every allocated GPU gets its core share on its
  own local NUMA node; the footprint may span sockets.
* ``aligned``: per-GPU locality plus the tightest span achievable for the
  request size on an empty server (e.g. 4 GPUs on a 1-GPU-per-NUMA,
  4-NUMA-per-socket box must stay within one socket).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .flextopo import (
    AlignmentClass,
    AllocationError,
    FlexTopoGraph,
    ResourceSet,
    TopologySpec,
    build_topology,
)


class PreemptionError(ValueError):
    """Illegal victim set or unschedulable commit."""


class ScenarioError(ValueError):
    """Scenario misconfiguration detected while building cluster state."""


class Qos(str, Enum):
    GUARANTEED = "guaranteed"
    BEST_EFFORT = "best_effort"
    NONE = "none"


@dataclass(frozen=True)
class TopologyQos:
    numa: Qos = Qos.NONE
    socket: Qos = Qos.NONE

    @property
    def has_guarantee(self) -> bool:
        return Qos.GUARANTEED in (self.numa, self.socket)


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    priority: int
    preemptible: bool
    cpu_cores: int
    gpus: int
    qos: TopologyQos = TopologyQos()
    initial_replicas: int = 0

    def __post_init__(self) -> None:
        if self.priority <= 0:
            raise ScenarioError(f"workload {self.name}: priority must be positive")
        if self.cpu_cores < 0 or self.gpus < 0 or self.cpu_cores + self.gpus == 0:
            raise ScenarioError(f"workload {self.name}: empty resource request")
        if self.initial_replicas < 0:
            raise ScenarioError(f"workload {self.name}: negative replica count")


@dataclass(frozen=True)
class Instance:
    """A placed replica with its concrete core/GPU assignment."""

    id: str
    workload: str
    server: str
    footprint: ResourceSet
    alignment: AlignmentClass
    # per-NUMA (cores, gpus) vectors, precomputed for hypothetical-eviction math
    tally: Tuple[Tuple[int, ...], Tuple[int, ...]]


NUMA_RULES = ("per_gpu", "aligned")


def required_class(spec: TopologySpec, gpus: int) -> AlignmentClass:
    """Tightest alignment class achievable for *gpus* devices on an empty server."""
    if gpus <= spec.gpus_per_numa:
        return AlignmentClass.SINGLE_NUMA
    if gpus <= spec.gpus_per_socket:
        return AlignmentClass.SINGLE_SOCKET
    return AlignmentClass.CROSS_SOCKET


def _scope_class(qos: TopologyQos, spec: TopologySpec, gpus: int, numa_rule: str) -> AlignmentClass:
    """Widest span the footprint may legally take (guaranteed dims only)."""
    scope = AlignmentClass.CROSS_SOCKET
    if qos.numa == Qos.GUARANTEED:
        if numa_rule == "aligned":
            scope = max(scope, required_class(spec, gpus))
        elif gpus <= spec.gpus_per_numa:
            scope = AlignmentClass.SINGLE_NUMA
    if qos.socket == Qos.GUARANTEED:
        scope = max(scope, AlignmentClass.SINGLE_SOCKET)
    return scope


def _socket_ranges(spec: TopologySpec) -> List[range]:
    return [range(s * spec.numas_per_socket, (s + 1) * spec.numas_per_socket)
            for s in range(spec.socket_count)]


def _class_of_numas(spec: TopologySpec, numas: Iterable[int]) -> AlignmentClass:
    numas = set(numas)
    if len(numas) == 1:
        return AlignmentClass.SINGLE_NUMA
    sockets = {n // spec.numas_per_socket for n in numas}
    if len(sockets) == 1:
        return AlignmentClass.SINGLE_SOCKET
    return AlignmentClass.CROSS_SOCKET


def _enum_feasible(spec: TopologySpec, caps: Sequence[int], free_c: Sequence[int],
                   gpus: int, per_gpu: int, rem: int,
                   numas: Sequence[int]) -> bool:
    """Exact feasibility with a leftover-core requirement (rare path).

    Looks for a set S of NUMA nodes (within *numas*) that can host all
    GPUs with local core groups and still has *rem* spare local cores.
    """
    active = [n for n in numas if caps[n] > 0]
    if sum(caps[n] for n in active) < gpus:
        return False
    for size in range(1, min(len(active), gpus) + 1):
        for combo in itertools.combinations(active, size):
            if sum(caps[n] for n in combo) < gpus:
                continue
            if sum(free_c[n] for n in combo) - gpus * per_gpu >= rem:
                return True
    return False


def _feasible_tallies(spec: TopologySpec, free_c: Sequence[int], free_g: Sequence[int],
                      cpu: int, gpus: int, qos: TopologyQos, numa_rule: str) -> bool:
    """True iff a placement satisfying the guaranteed dimensions exists."""
    all_numas = range(spec.numa_count)
    if gpus == 0:
        scope = _scope_class(qos, spec, 0, numa_rule)
        if scope == AlignmentClass.SINGLE_NUMA:
            return any(free_c[n] >= cpu for n in all_numas)
        if scope == AlignmentClass.SINGLE_SOCKET:
            return any(sum(free_c[n] for n in rng) >= cpu
                       for rng in _socket_ranges(spec))
        return sum(free_c) >= cpu

    per_gpu, rem = divmod(cpu, gpus)
    strict = qos.numa == Qos.GUARANTEED
    scope = _scope_class(qos, spec, gpus, numa_rule)

    if scope == AlignmentClass.SINGLE_NUMA:
        return any(
            min(free_g[n], free_c[n] // per_gpu if per_gpu else free_g[n]) >= gpus
            and free_c[n] >= cpu
            for n in all_numas)

    if strict:
        caps = [min(free_g[n], free_c[n] // per_gpu) if per_gpu else free_g[n]
                for n in all_numas]
        scopes: List[Sequence[int]]
        if scope == AlignmentClass.SINGLE_SOCKET:
            scopes = _socket_ranges(spec)
        else:
            scopes = [list(all_numas)]
        for numas in scopes:
            if sum(caps[n] for n in numas) < gpus:
                continue
            if rem == 0:
                return True
            if _enum_feasible(spec, caps, free_c, gpus, per_gpu, rem, numas):
                return True
        return False

    # No NUMA guarantee: GPUs need only exist, cores may come from anywhere
    # inside the allowed scope.
    if scope == AlignmentClass.SINGLE_SOCKET:
        return any(
            sum(free_g[n] for n in rng) >= gpus and sum(free_c[n] for n in rng) >= cpu
            for rng in _socket_ranges(spec))
    return sum(free_g) >= gpus and sum(free_c) >= cpu


def _max_pairwise(spec: TopologySpec, numas: Sequence[int]) -> int:
    return max(spec.numa_distance[a][b] for a in numas for b in numas)


def _pick_numa_set(spec: TopologySpec, caps: Sequence[int],
                   scope: AlignmentClass, gpus: int,
                   extra_ok, max_size: Optional[int] = None) -> Optional[Tuple[int, ...]]:
    """Best minimal set of NUMA nodes able to host *gpus* devices.

    Preference: tighter alignment class, then lower max pairwise distance,
    then lowest ids. ``extra_ok(combo)`` hooks in leftover-core checks.
    """
    active = [n for n in range(spec.numa_count) if caps[n] > 0]
    if sum(caps[n] for n in active) < gpus:
        return None
    best = None
    best_key = None
    found: List[Tuple[int, ...]] = []
    limit = len(active) if max_size is None else min(max_size, len(active))
    for size in range(1, limit + 1):
        for combo in itertools.combinations(active, size):
            if any(set(prev) <= set(combo) for prev in found):
                continue  # superset of an accepted set: not minimal
            if sum(caps[n] for n in combo) < gpus:
                continue
            cls = _class_of_numas(spec, combo)
            if cls < scope:
                continue
            if not extra_ok(combo):
                continue
            found.append(combo)
            key = (-int(cls), _max_pairwise(spec, combo), combo)
            if best_key is None or key < best_key:
                best_key = key
                best = combo
    return best


def find_placement(graph: FlexTopoGraph, cpu_cores: int, gpus: int,
                   qos: TopologyQos = TopologyQos(),
                   numa_rule: str = "per_gpu") -> Optional[ResourceSet]:
    """Deterministic best placement from currently free resources.

    Returns ``None`` when no placement satisfies the guaranteed QoS
    dimensions. Best-effort dimensions only shape the preference order.
    """
    if numa_rule not in NUMA_RULES:
        raise ValueError(f"unknown numa_rule {numa_rule!r}")
    if cpu_cores < 0 or gpus < 0 or cpu_cores + gpus == 0:
        raise AllocationError("request must ask for at least one core or GPU")
    spec = graph.spec
    free_c = graph._free_cores
    free_g = graph._free_gpus
    if not _feasible_tallies(spec, free_c, free_g, cpu_cores, gpus, qos, numa_rule):
        return None
    scope = _scope_class(qos, spec, gpus, numa_rule)

    if gpus == 0:
        numa_set = _pick_numa_set(
            spec, free_c, scope, cpu_cores, lambda combo: True)
        assert numa_set is not None
        cores: List[int] = []
        need = cpu_cores
        for n in numa_set:
            take = graph.free_core_ids(n)[:min(need, free_c[n])]
            cores.extend(take)
            need -= len(take)
        return ResourceSet.of(cores, ())

    per_gpu, rem = divmod(cpu_cores, gpus)
    caps_strict = [min(free_g[n], free_c[n] // per_gpu) if per_gpu else free_g[n]
                   for n in range(spec.numa_count)]
    strict = qos.numa == Qos.GUARANTEED

    def leftover_ok(combo: Tuple[int, ...]) -> bool:
        if rem == 0:
            return True
        spare = sum(free_c[n] for n in combo) - gpus * per_gpu
        if spare >= rem:
            return True
        if strict:
            return False
        # remainder may spill outside the chosen NUMA nodes
        pool = sum(free_c) if scope == AlignmentClass.CROSS_SOCKET else sum(
            free_c[n] for n in _socket_ranges(spec)[combo[0] // spec.numas_per_socket])
        return pool - gpus * per_gpu >= rem

    numa_set = _pick_numa_set(spec, caps_strict, scope, gpus, leftover_ok,
                              max_size=gpus)
    relaxed = False
    if numa_set is None and not strict:
        # fall back to non-local cores: GPUs only need to exist in scope
        def cores_ok(combo: Tuple[int, ...]) -> bool:
            if scope == AlignmentClass.CROSS_SOCKET:
                return sum(free_c) >= cpu_cores
            rng = _socket_ranges(spec)[combo[0] // spec.numas_per_socket]
            return sum(free_c[n] for n in rng) >= cpu_cores

        numa_set = _pick_numa_set(spec, free_g, scope, gpus, cores_ok,
                                  max_size=gpus)
        relaxed = True
    if numa_set is None:
        return None

    caps = free_g if relaxed else caps_strict
    # distribute GPUs over the chosen NUMA nodes: each member hosts at least
    # one device (so its cores stay usable under the per-GPU locality rule),
    # the rest fill in id order
    counts: Dict[int, int] = {n: 1 for n in numa_set}
    need = gpus - len(numa_set)
    for n in numa_set:
        take = min(caps[n] - 1, need)
        counts[n] += take
        need -= take
    assert need == 0

    gpu_ids: List[int] = []
    core_ids: List[int] = []
    spare_by_numa: Dict[int, List[int]] = {}
    for n in numa_set:
        free_cores_n = graph.free_core_ids(n)
        gpu_ids.extend(graph.free_gpu_ids(n)[:counts[n]])
        local_share = min(counts[n] * per_gpu, len(free_cores_n))
        core_ids.extend(free_cores_n[:local_share])
        spare_by_numa[n] = free_cores_n[local_share:]
    deficit = cpu_cores - len(core_ids)
    if deficit > 0:
        for n in numa_set:
            take = spare_by_numa[n][:deficit]
            core_ids.extend(take)
            deficit -= len(take)
            if deficit == 0:
                break
    if deficit > 0 and not strict:
        if scope == AlignmentClass.CROSS_SOCKET:
            pool_numas = [n for n in range(spec.numa_count) if n not in numa_set]
        else:
            rng = _socket_ranges(spec)[numa_set[0] // spec.numas_per_socket]
            pool_numas = [n for n in rng if n not in numa_set]
        for n in pool_numas:
            take = graph.free_core_ids(n)[:deficit]
            core_ids.extend(take)
            deficit -= len(take)
            if deficit == 0:
                break
    assert deficit == 0, "feasibility check promised enough cores"
    return ResourceSet.of(core_ids, gpu_ids)


class ClusterState:
    """Servers, placed instances, and workload definitions."""

    def __init__(self, servers: Dict[str, FlexTopoGraph],
                 workloads: Dict[str, WorkloadSpec],
                 numa_rule: str = "per_gpu"):
        if numa_rule not in NUMA_RULES:
            raise ValueError(f"unknown numa_rule {numa_rule!r}")
        self.servers = servers
        self.workloads = workloads
        self.numa_rule = numa_rule
        self.instances: Dict[str, Instance] = {}
        self._by_server: Dict[str, Set[str]] = {sid: set() for sid in servers}

    @property
    def server_ids(self) -> List[str]:
        return sorted(self.servers)

    def instances_on(self, server_id: str) -> List[str]:
        return sorted(self._by_server[server_id])

    def workload_of(self, instance_id: str) -> WorkloadSpec:
        return self.workloads[self.instances[instance_id].workload]

    def counts_by_workload(self) -> Dict[str, int]:
        counts = {name: 0 for name in self.workloads}
        for inst in self.instances.values():
            counts[inst.workload] += 1
        return counts

    def place(self, instance_id: str, workload: str, server_id: str,
              footprint: ResourceSet) -> Instance:
        if instance_id in self.instances:
            raise AllocationError(f"instance id {instance_id!r} already placed")
        graph = self.servers[server_id]
        graph.apply_allocation(instance_id, footprint)
        inst = Instance(
            id=instance_id, workload=workload, server=server_id,
            footprint=footprint, alignment=graph.classify_span(footprint),
            tally=graph.footprint_tally(footprint),
        )
        self.instances[instance_id] = inst
        self._by_server[server_id].add(instance_id)
        return inst

    def remove(self, instance_id: str) -> Instance:
        inst = self.instances.pop(instance_id, None)
        if inst is None:
            raise AllocationError(f"unknown instance {instance_id!r}")
        self.servers[inst.server].release_allocation(instance_id)
        self._by_server[inst.server].discard(instance_id)
        return inst

    def fail_gpu(self, server_id: str, gpu: int) -> Optional[Instance]:
        """Mark a GPU failed; the owning instance (if any) is evicted first."""
        graph = self.servers[server_id]
        owner = graph.owner_of_gpu(gpu)
        victim = None
        if owner is not None:
            victim = self.remove(owner)
        graph.mark_gpu_failed(gpu)
        return victim

    def clone(self) -> "ClusterState":
        c = ClusterState.__new__(ClusterState)
        c.servers = {sid: g.clone() for sid, g in self.servers.items()}
        c.workloads = self.workloads
        c.numa_rule = self.numa_rule
        c.instances = dict(self.instances)
        c._by_server = {sid: set(ids) for sid, ids in self._by_server.items()}
        return c


def schedulable(cluster: ClusterState, server_id: str, preemptor: WorkloadSpec,
                evict: Iterable[str] = (),
                ignore_topology: bool = False) -> bool:
    """Would *preemptor* fit on the server if *evict* were hypothetically drained?

    Never mutates state. Victims must be preemptible instances on this
    server with priority strictly below the preemptor's.
    """
    graph = cluster.servers[server_id]
    spec = graph.spec
    free_c = list(graph._free_cores)
    free_g = list(graph._free_gpus)
    for vid in evict:
        inst = cluster.instances.get(vid)
        if inst is None or inst.server != server_id:
            raise PreemptionError(f"victim {vid!r} is not placed on {server_id}")
        vspec = cluster.workloads[inst.workload]
        if not vspec.preemptible:
            raise PreemptionError(f"victim {vid!r} is not preemptible")
        if vspec.priority >= preemptor.priority:
            raise PreemptionError(
                f"victim {vid!r} does not have lower priority than {preemptor.name}")
        vc, vg = inst.tally
        for n in range(spec.numa_count):
            free_c[n] += vc[n]
            free_g[n] += vg[n]
    if ignore_topology:
        return (sum(free_g) >= preemptor.gpus
                and sum(free_c) >= preemptor.cpu_cores)
    return _feasible_tallies(spec, free_c, free_g, preemptor.cpu_cores,
                             preemptor.gpus, preemptor.qos, cluster.numa_rule)


def _instance_seq(cluster: ClusterState, workload: str) -> int:
    prefix = workload + "-"
    seqs = [0]
    for iid in cluster.instances:
        if iid.startswith(prefix):
            tail = iid[len(prefix):]
            if tail.isdigit():
                seqs.append(int(tail) + 1)
    return max(seqs)


def saturate(cluster: ClusterState) -> Dict[str, int]:
    """Initial placement: priority-descending first-fit, then fill with
    preemptible workloads until nothing more fits anywhere.

    Returns per-workload placed counts. A guaranteed-QoS workload replica
    that cannot be placed is a hard error.
    """
    if cluster.instances:
        raise ScenarioError("saturate requires an empty cluster")
    placed = {name: 0 for name in cluster.workloads}
    order = sorted(cluster.workloads.values(), key=lambda w: (-w.priority, w.name))
    server_ids = cluster.server_ids

    def place_one(ws: WorkloadSpec) -> bool:
        for sid in server_ids:
            rs = find_placement(cluster.servers[sid], ws.cpu_cores, ws.gpus,
                                ws.qos, cluster.numa_rule)
            if rs is not None:
                seq = _instance_seq(cluster, ws.name)
                cluster.place(f"{ws.name}-{seq:04d}", ws.name, sid, rs)
                placed[ws.name] += 1
                return True
        return False

    for ws in order:
        for _ in range(ws.initial_replicas):
            if not place_one(ws):
                if ws.qos.has_guarantee:
                    raise ScenarioError(
                        f"cannot place guaranteed-QoS workload {ws.name} "
                        f"during saturation (scenario misconfiguration)")
                break

    fillers = [w for w in order if w.preemptible]
    progress = True
    while progress:
        progress = False
        for ws in fillers:
            if place_one(ws):
                progress = True
    return placed


def execute_eviction_and_place(cluster: ClusterState, server_id: str,
                               victims: Sequence[str], preemptor: WorkloadSpec,
                               instance_id: str,
                               enforce_qos: bool = True) -> Instance:
    """Commit a preemption decision: evict victims, place the preemptor.

    All-or-nothing: if the placement vanished, victims are restored and
    the commit raises. ``enforce_qos=False`` commits wherever the freed
    resources allow (priority-only baseline behaviour).
    """
    qos = preemptor.qos if enforce_qos else TopologyQos()
    if not schedulable(cluster, server_id, preemptor, victims,
                       ignore_topology=not enforce_qos):
        raise PreemptionError(
            f"victim set {sorted(victims)} no longer admits {preemptor.name} "
            f"on {server_id}")
    removed = [cluster.remove(vid) for vid in victims]
    rs = find_placement(cluster.servers[server_id], preemptor.cpu_cores,
                        preemptor.gpus, qos, cluster.numa_rule)
    if rs is None:
        for inst in removed:
            cluster.place(inst.id, inst.workload, inst.server, inst.footprint)
        raise PreemptionError(
            f"placement on {server_id} vanished between check and commit")
    return cluster.place(instance_id, preemptor.name, server_id, rs)

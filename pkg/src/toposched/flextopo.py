"""Unified per-server hardware topology graph with live allocation state.

A GPU server is modeled as sockets hosting core groups, core groups
localized to NUMA nodes, and GPU devices attached near one NUMA node.
The structure is immutable; allocation state (status / used-by) is an
overlay mutated through :meth:`FlexTopoGraph.apply_allocation` and
:meth:`FlexTopoGraph.release_allocation`.

Identifiers are deterministic: cores and GPUs are numbered in NUMA order,
core groups never straddle a NUMA boundary, and NUMA nodes are numbered
contiguously per socket.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple


class TopologyError(ValueError):
    """Invalid topology specification."""


class AllocationError(ValueError):
    """Invalid allocation or release request."""


class AlignmentClass(enum.IntEnum):
    """Span of a resource footprint; larger value = tighter alignment."""

    CROSS_SOCKET = 0
    SINGLE_SOCKET = 1
    SINGLE_NUMA = 2

    @property
    def label(self) -> str:
        return {
            AlignmentClass.SINGLE_NUMA: "single-numa",
            AlignmentClass.SINGLE_SOCKET: "single-socket",
            AlignmentClass.CROSS_SOCKET: "cross-socket",
        }[self]


_LABEL_TO_CLASS = {c.label: c for c in AlignmentClass}


def alignment_from_label(label: str) -> AlignmentClass:
    try:
        return _LABEL_TO_CLASS[label]
    except KeyError:
        raise ValueError(f"unknown alignment class {label!r}") from None


@dataclass(frozen=True)
class TopologySpec:
    """Static shape of one server model.

    ``numa_distance`` is a square matrix of abstract cost units indexed by
    NUMA id; it must be symmetric with minimal entries on the diagonal.
    """

    socket_count: int
    numas_per_socket: int
    cores_per_numa: int
    gpus_per_numa: int
    coregroup_size: int
    numa_distance: Tuple[Tuple[int, ...], ...]
    gpu_model: str = "generic-gpu"
    gpu_memory_mb: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "numa_distance", tuple(tuple(row) for row in self.numa_distance)
        )
        for name in ("socket_count", "numas_per_socket", "cores_per_numa",
                     "gpus_per_numa", "coregroup_size"):
            if getattr(self, name) < 1:
                raise TopologyError(f"{name} must be >= 1")
        if self.cores_per_numa % self.coregroup_size != 0:
            raise TopologyError(
                "coregroup_size must divide cores_per_numa so core groups "
                "stay local to one NUMA node"
            )
        n = self.numa_count
        if len(self.numa_distance) != n or any(len(r) != n for r in self.numa_distance):
            raise TopologyError(f"numa_distance must be a {n}x{n} matrix")
        diag_min = min(self.numa_distance[i][i] for i in range(n))
        for i in range(n):
            for j in range(n):
                if self.numa_distance[i][j] != self.numa_distance[j][i]:
                    raise TopologyError("numa_distance must be symmetric")
                if self.numa_distance[i][j] < diag_min:
                    raise TopologyError("diagonal must hold the minimal distance")

    @property
    def numa_count(self) -> int:
        return self.socket_count * self.numas_per_socket

    @property
    def core_count(self) -> int:
        return self.numa_count * self.cores_per_numa

    @property
    def gpu_count(self) -> int:
        return self.numa_count * self.gpus_per_numa

    @property
    def gpus_per_socket(self) -> int:
        return self.numas_per_socket * self.gpus_per_numa

    @property
    def groups_per_numa(self) -> int:
        return self.cores_per_numa // self.coregroup_size


def uniform_distance(
    socket_count: int, numas_per_socket: int,
    local: int, same_socket: int, cross_socket: int,
) -> Tuple[Tuple[int, ...], ...]:
    """Distance matrix with one cost per scope (local / socket / cross)."""
    n = socket_count * numas_per_socket
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if i == j:
                row.append(local)
            elif i // numas_per_socket == j // numas_per_socket:
                row.append(same_socket)
            else:
                row.append(cross_socket)
        rows.append(tuple(row))
    return tuple(rows)


def preset(name: str) -> TopologySpec:
    """Built-in server models keyed by GPU type."""
    key = name.lower()
    if key in ("rtx4090", "4090"):
        return TopologySpec(
            socket_count=2, numas_per_socket=4, cores_per_numa=8,
            gpus_per_numa=1, coregroup_size=8,
            numa_distance=uniform_distance(2, 4, 10, 12, 32),
            gpu_model="NVIDIA RTX 4090", gpu_memory_mb=24576,
        )
    if key in ("a100", "a100-sxm"):
        return TopologySpec(
            socket_count=2, numas_per_socket=1, cores_per_numa=64,
            gpus_per_numa=4, coregroup_size=16,
            numa_distance=uniform_distance(2, 1, 10, 10, 20),
            gpu_model="NVIDIA A100-SXM", gpu_memory_mb=81920,
        )
    raise TopologyError(f"unknown topology preset {name!r}")


PRESET_NAMES = ("rtx4090", "a100")


@dataclass(frozen=True)
class ResourceSet:
    """A set of core ids plus GPU ids on a single server."""

    cores: frozenset
    gpus: frozenset

    @staticmethod
    def of(cores: Iterable[int] = (), gpus: Iterable[int] = ()) -> "ResourceSet":
        return ResourceSet(frozenset(cores), frozenset(gpus))

    def __bool__(self) -> bool:
        return bool(self.cores) or bool(self.gpus)

    def union(self, other: "ResourceSet") -> "ResourceSet":
        return ResourceSet(self.cores | other.cores, self.gpus | other.gpus)


@dataclass(frozen=True)
class NumaFree:
    numa: int
    socket: int
    free_cores: int
    free_gpus: int


@dataclass(frozen=True)
class SocketFree:
    socket: int
    free_cores: int
    free_gpus: int


@dataclass(frozen=True)
class FreeView:
    per_numa: Tuple[NumaFree, ...]
    per_socket: Tuple[SocketFree, ...]
    total_cores: int
    total_gpus: int


class FlexTopoGraph:
    """One server's topology graph plus its allocation overlay."""

    __slots__ = ("spec", "server_id", "_core_owner", "_gpu_owner",
                 "_failed_gpus", "_free_cores", "_free_gpus")

    def __init__(self, spec: TopologySpec, server_id: str):
        self.spec = spec
        self.server_id = server_id
        self._core_owner: List[Optional[str]] = [None] * spec.core_count
        self._gpu_owner: List[Optional[str]] = [None] * spec.gpu_count
        self._failed_gpus: set = set()
        self._free_cores: List[int] = [spec.cores_per_numa] * spec.numa_count
        self._free_gpus: List[int] = [spec.gpus_per_numa] * spec.numa_count

    # -- structure ---------------------------------------------------------

    def numa_of_core(self, core: int) -> int:
        return core // self.spec.cores_per_numa

    def numa_of_gpu(self, gpu: int) -> int:
        return gpu // self.spec.gpus_per_numa

    def socket_of_numa(self, numa: int) -> int:
        return numa // self.spec.numas_per_socket

    def group_of_core(self, core: int) -> int:
        return core // self.spec.coregroup_size

    def numa_of_group(self, group: int) -> int:
        return (group * self.spec.coregroup_size) // self.spec.cores_per_numa

    def gpu_uuid(self, gpu: int) -> str:
        return f"{self.server_id}/gpu{gpu}"

    def numa_distance(self, numa_a: int, numa_b: int) -> int:
        n = self.spec.numa_count
        if not (0 <= numa_a < n and 0 <= numa_b < n):
            raise TopologyError(f"unknown NUMA id in ({numa_a}, {numa_b})")
        return self.spec.numa_distance[numa_a][numa_b]

    # -- allocation state ---------------------------------------------------

    def owner_of_core(self, core: int) -> Optional[str]:
        return self._core_owner[core]

    def owner_of_gpu(self, gpu: int) -> Optional[str]:
        return self._gpu_owner[gpu]

    @property
    def failed_gpus(self) -> frozenset:
        return frozenset(self._failed_gpus)

    def instances(self) -> set:
        owners = {o for o in self._core_owner if o is not None}
        owners.update(o for o in self._gpu_owner if o is not None)
        return owners

    def resources_of(self, instance_id: str) -> ResourceSet:
        return ResourceSet(
            frozenset(c for c, o in enumerate(self._core_owner) if o == instance_id),
            frozenset(g for g, o in enumerate(self._gpu_owner) if o == instance_id),
        )

    def free_view(self) -> FreeView:
        spec = self.spec
        per_numa = tuple(
            NumaFree(n, self.socket_of_numa(n), self._free_cores[n], self._free_gpus[n])
            for n in range(spec.numa_count)
        )
        per_socket = []
        for s in range(spec.socket_count):
            lo = s * spec.numas_per_socket
            hi = lo + spec.numas_per_socket
            per_socket.append(SocketFree(
                s, sum(self._free_cores[lo:hi]), sum(self._free_gpus[lo:hi])))
        return FreeView(per_numa, tuple(per_socket),
                        sum(self._free_cores), sum(self._free_gpus))

    def free_core_ids(self, numa: int) -> List[int]:
        spec = self.spec
        lo = numa * spec.cores_per_numa
        return [c for c in range(lo, lo + spec.cores_per_numa)
                if self._core_owner[c] is None]

    def free_gpu_ids(self, numa: int) -> List[int]:
        spec = self.spec
        lo = numa * spec.gpus_per_numa
        return [g for g in range(lo, lo + spec.gpus_per_numa)
                if self._gpu_owner[g] is None and g not in self._failed_gpus]

    def _validate_ids(self, resources: ResourceSet) -> None:
        spec = self.spec
        for c in resources.cores:
            if not (0 <= c < spec.core_count):
                raise AllocationError(f"core {c} does not exist on {self.server_id}")
        for g in resources.gpus:
            if not (0 <= g < spec.gpu_count):
                raise AllocationError(f"GPU {g} does not exist on {self.server_id}")

    def apply_allocation(self, instance_id: str, resources: ResourceSet) -> None:
        """Mark every referenced resource allocated to *instance_id*.

        Atomic: any conflict aborts without touching the graph.
        """
        if not resources:
            raise AllocationError("empty resource set")
        self._validate_ids(resources)
        for c in resources.cores:
            if self._core_owner[c] is not None:
                raise AllocationError(
                    f"core {c} on {self.server_id} already allocated to "
                    f"{self._core_owner[c]}")
        for g in resources.gpus:
            if self._gpu_owner[g] is not None:
                raise AllocationError(
                    f"GPU {g} on {self.server_id} already allocated to "
                    f"{self._gpu_owner[g]}")
            if g in self._failed_gpus:
                raise AllocationError(f"GPU {g} on {self.server_id} has failed")
        for c in resources.cores:
            self._core_owner[c] = instance_id
            self._free_cores[self.numa_of_core(c)] -= 1
        for g in resources.gpus:
            self._gpu_owner[g] = instance_id
            self._free_gpus[self.numa_of_gpu(g)] -= 1

    def release_allocation(self, instance_id: str) -> ResourceSet:
        """Free every resource owned by *instance_id*; returns the footprint."""
        released = self.resources_of(instance_id)
        if not released:
            raise AllocationError(
                f"instance {instance_id!r} owns nothing on {self.server_id}")
        for c in released.cores:
            self._core_owner[c] = None
            self._free_cores[self.numa_of_core(c)] += 1
        for g in released.gpus:
            self._gpu_owner[g] = None
            self._free_gpus[self.numa_of_gpu(g)] += 1
        return released

    def mark_gpu_failed(self, gpu: int) -> Optional[str]:
        """Remove a GPU from the usable pool; returns its owner, if any.

        The caller is responsible for evicting the owning instance first
        (see ClusterState.fail_gpu); a failed GPU can never be re-allocated.
        """
        if not (0 <= gpu < self.spec.gpu_count):
            raise AllocationError(f"GPU {gpu} does not exist on {self.server_id}")
        owner = self._gpu_owner[gpu]
        if gpu in self._failed_gpus:
            return owner
        self._failed_gpus.add(gpu)
        if owner is None:
            self._free_gpus[self.numa_of_gpu(gpu)] -= 1
        return owner

    def classify_span(self, resources: ResourceSet) -> AlignmentClass:
        """Alignment class of a footprint: NUMA, socket, or cross-socket."""
        if not resources:
            raise AllocationError("cannot classify an empty resource set")
        self._validate_ids(resources)
        numas = {self.numa_of_core(c) for c in resources.cores}
        numas.update(self.numa_of_gpu(g) for g in resources.gpus)
        if len(numas) == 1:
            return AlignmentClass.SINGLE_NUMA
        sockets = {self.socket_of_numa(n) for n in numas}
        if len(sockets) == 1:
            return AlignmentClass.SINGLE_SOCKET
        return AlignmentClass.CROSS_SOCKET

    def footprint_tally(self, resources: ResourceSet) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        """Per-NUMA (core count, gpu count) vectors for a footprint."""
        cores = [0] * self.spec.numa_count
        gpus = [0] * self.spec.numa_count
        for c in resources.cores:
            cores[self.numa_of_core(c)] += 1
        for g in resources.gpus:
            gpus[self.numa_of_gpu(g)] += 1
        return tuple(cores), tuple(gpus)

    def clone(self) -> "FlexTopoGraph":
        g = FlexTopoGraph.__new__(FlexTopoGraph)
        g.spec = self.spec
        g.server_id = self.server_id
        g._core_owner = list(self._core_owner)
        g._gpu_owner = list(self._gpu_owner)
        g._failed_gpus = set(self._failed_gpus)
        g._free_cores = list(self._free_cores)
        g._free_gpus = list(self._free_gpus)
        return g

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        """Snapshot document: nodes with attributes, then typed edges."""
        spec = self.spec
        lines = [
            "flextopo-snapshot v1",
            f"server {self.server_id}",
            (f"spec sockets={spec.socket_count} numas_per_socket={spec.numas_per_socket} "
             f"cores_per_numa={spec.cores_per_numa} gpus_per_numa={spec.gpus_per_numa} "
             f"coregroup_size={spec.coregroup_size}"),
            f"gpu_model {spec.gpu_model}",
            f"gpu_memory_mb {spec.gpu_memory_mb}",
        ]
        for row in spec.numa_distance:
            lines.append("distance " + " ".join(str(v) for v in row))
        for s in range(spec.socket_count):
            lines.append(f"node socket id={s}")
        for n in range(spec.numa_count):
            lines.append(f"node numa id={n}")
        group_count = spec.numa_count * spec.groups_per_numa
        for grp in range(group_count):
            lo = grp * spec.coregroup_size
            owners = sorted({self._core_owner[c]
                             for c in range(lo, lo + spec.coregroup_size)
                             if self._core_owner[c] is not None})
            status = "allocated" if owners else "free"
            used = ",".join(owners) if owners else "-"
            lines.append(f"node coregroup id={grp} status={status} used_by={used}")
        for c in range(spec.core_count):
            status = "allocated" if self._core_owner[c] is not None else "free"
            lines.append(f"node core id={c} status={status}")
        for g in range(spec.gpu_count):
            if g in self._failed_gpus:
                status, used = "failed", "-"
            elif self._gpu_owner[g] is not None:
                status, used = "allocated", self._gpu_owner[g]
            else:
                status, used = "free", "-"
            lines.append(f"node gpu id={g} uuid={self.gpu_uuid(g)} "
                         f"status={status} used_by={used}")
        for grp in range(group_count):
            lines.append(f"edge host socket={self.socket_of_numa(self.numa_of_group(grp))} "
                         f"coregroup={grp}")
        for c in range(spec.core_count):
            lines.append(f"edge contain coregroup={self.group_of_core(c)} core={c}")
        for grp in range(group_count):
            lines.append(f"edge localized coregroup={grp} numa={self.numa_of_group(grp)}")
        for g in range(spec.gpu_count):
            lines.append(f"edge nearby gpu={g} numa={self.numa_of_gpu(g)}")
        return "\n".join(lines) + "\n"


def build_topology(spec: TopologySpec, server_id: str) -> FlexTopoGraph:
    """Fully free graph for one server; ids assigned in NUMA order."""
    return FlexTopoGraph(spec, server_id)


@dataclass(frozen=True)
class GpuRecord:
    gpu: int
    uuid: str
    status: str
    used_by: Optional[str]
    numa: int


@dataclass(frozen=True)
class ParsedSnapshot:
    """Read-only view of a serialized graph, for inspection and rendering."""

    server_id: str
    spec: TopologySpec
    text: str
    gpus: Tuple[GpuRecord, ...]
    coregroup_status: Tuple[str, ...]
    coregroup_used_by: Tuple[Tuple[str, ...], ...]
    core_status: Tuple[str, ...]

    def socket_of_numa(self, numa: int) -> int:
        return numa // self.spec.numas_per_socket


def _fields(line: str, prefix: str) -> Dict[str, str]:
    out = {}
    for token in line[len(prefix):].split():
        key, _, value = token.partition("=")
        out[key] = value
    return out


def parse_snapshot(text: str) -> ParsedSnapshot:
    """Parse one snapshot document; re-serializing it is byte-identical."""
    lines = text.splitlines()
    if not lines or lines[0] != "flextopo-snapshot v1":
        raise ValueError("not a flextopo snapshot")
    server_id = None
    spec_fields: Dict[str, int] = {}
    gpu_model = "generic-gpu"
    gpu_memory_mb = 0
    distance: List[Tuple[int, ...]] = []
    gpus: List[GpuRecord] = []
    cg_status: List[str] = []
    cg_used: List[Tuple[str, ...]] = []
    core_status: List[str] = []
    for line in lines[1:]:
        if line.startswith("server "):
            server_id = line[len("server "):]
        elif line.startswith("spec "):
            spec_fields = {k: int(v) for k, v in _fields(line, "spec ").items()}
        elif line.startswith("gpu_model "):
            gpu_model = line[len("gpu_model "):]
        elif line.startswith("gpu_memory_mb "):
            gpu_memory_mb = int(line[len("gpu_memory_mb "):])
        elif line.startswith("distance "):
            distance.append(tuple(int(v) for v in line.split()[1:]))
        elif line.startswith("node coregroup "):
            f = _fields(line, "node coregroup ")
            cg_status.append(f["status"])
            cg_used.append(tuple(f["used_by"].split(",")) if f["used_by"] != "-" else ())
        elif line.startswith("node core "):
            core_status.append(_fields(line, "node core ")["status"])
        elif line.startswith("node gpu "):
            f = _fields(line, "node gpu ")
            gpus.append(GpuRecord(
                gpu=int(f["id"]), uuid=f["uuid"], status=f["status"],
                used_by=None if f["used_by"] == "-" else f["used_by"],
                numa=-1))
    if server_id is None or not spec_fields:
        raise ValueError("snapshot missing server or spec line")
    spec = TopologySpec(
        socket_count=spec_fields["sockets"],
        numas_per_socket=spec_fields["numas_per_socket"],
        cores_per_numa=spec_fields["cores_per_numa"],
        gpus_per_numa=spec_fields["gpus_per_numa"],
        coregroup_size=spec_fields["coregroup_size"],
        numa_distance=tuple(distance),
        gpu_model=gpu_model,
        gpu_memory_mb=gpu_memory_mb,
    )
    gpus = [GpuRecord(g.gpu, g.uuid, g.status, g.used_by, g.gpu // spec.gpus_per_numa)
            for g in gpus]
    snap = ParsedSnapshot(
        server_id=server_id, spec=spec, text=text, gpus=tuple(gpus),
        coregroup_status=tuple(cg_status), coregroup_used_by=tuple(cg_used),
        core_status=tuple(core_status),
    )
    return snap


def split_snapshots(text: str) -> List[str]:
    """Split a concatenated multi-server snapshot file into documents."""
    docs: List[str] = []
    current: List[str] = []
    for line in text.splitlines():
        if line == "flextopo-snapshot v1" and current:
            docs.append("\n".join(current) + "\n")
            current = []
        if line or current:
            current.append(line)
    if current:
        while current and current[-1] == "":
            current.pop()
        docs.append("\n".join(current) + "\n")
    return docs

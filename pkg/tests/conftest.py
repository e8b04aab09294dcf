"""Shared fixtures and cluster-building helpers."""

from pathlib import Path

import pytest

from toposched.cluster import ClusterState, Qos, TopologyQos, WorkloadSpec
from toposched.flextopo import build_topology, preset

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

QOS_NUMA = TopologyQos(numa=Qos.GUARANTEED, socket=Qos.BEST_EFFORT)
QOS_NONE = TopologyQos()


def make_cluster(workloads, servers=1, topology="rtx4090",
                 numa_rule="per_gpu"):
    spec = preset(topology)
    graphs = {f"node-{i:03d}": build_topology(spec, f"node-{i:03d}")
              for i in range(servers)}
    return ClusterState(graphs, {w.name: w for w in workloads},
                        numa_rule=numa_rule)


def ws(name, priority, preemptible, cores, gpus, qos=QOS_NONE, replicas=0):
    return WorkloadSpec(name=name, priority=priority, preemptible=preemptible,
                        cpu_cores=cores, gpus=gpus, qos=qos,
                        initial_replicas=replicas)


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR

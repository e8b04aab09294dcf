"""Simulator: events, QoS verification, metrics, determinism."""

import random

import pytest

from toposched.cluster import Qos, TopologyQos, saturate
from toposched.flextopo import AlignmentClass, ResourceSet, build_topology, preset
from toposched.policy import Mode
from toposched.scenario import Event, Scenario, load_scenario
from toposched.sim import (
    CSV_COLUMNS,
    PreemptionRecord,
    RunMetrics,
    _nearest_rank,
    apply_event,
    default_hit_filter,
    hit_rate,
    latency_summary,
    qos_satisfied,
    run,
)

from conftest import QOS_NUMA, SCENARIO_DIR, make_cluster, ws


def record(workload="b", qos_ok=True, evals=10, wall=100.0, cycle=0, slot=0,
           mode="flextopo_imp"):
    return PreemptionRecord(
        cycle=cycle, slot=slot, workload=workload, mode=mode,
        server="node-000", victims=2, victim_ids=("v-0", "v-1"),
        achieved_class=AlignmentClass.SINGLE_SOCKET, qos_satisfied=qos_ok,
        evaluations=evals, wall_time_us=wall)


def metrics(records, workloads=None, gpus_per_server=8):
    if workloads is None:
        workloads = {
            "a": ws("a", 1500, False, 64, 8, QOS_NUMA),
            "b": ws("b", 1000, False, 32, 4, QOS_NUMA),
            "c": ws("c", 500, True, 16, 2, QOS_NUMA),
            "d": ws("d", 200, True, 8, 1),
        }
    return RunMetrics(scenario_name="t", mode="flextopo_imp", seed=0,
                      records=records, timeseries=[], snapshots={},
                      workloads=workloads, gpus_per_server=gpus_per_server)


class TestHitRate:
    def test_filter_drops_full_server_and_floor_priority(self):
        m = metrics([])
        assert default_hit_filter(m) == ["b", "c"]

    def test_arithmetic(self):
        # [PAPER] 2225 hits out of 5000 scored preemptions is 44.5%
        recs = ([record(qos_ok=True) for _ in range(2225)]
                + [record(qos_ok=False) for _ in range(2775)])
        assert hit_rate(metrics(recs)) == pytest.approx(0.445, abs=1e-12)

    def test_excluded_workloads_do_not_count(self):
        recs = [record(workload="b", qos_ok=True),
                record(workload="d", qos_ok=False)]
        assert hit_rate(metrics(recs)) == 1.0

    def test_no_records_raises(self):
        with pytest.raises(ValueError):
            hit_rate(metrics([]))


class TestPercentiles:
    def test_nearest_rank_ramp(self):
        values = [float(v) for v in range(1, 101)]
        # [DERIVED] nearest-rank on 1..100
        assert _nearest_rank(values, 50) == 50.0
        assert _nearest_rank(values, 90) == 90.0
        assert _nearest_rank(values, 100) == 100.0

    def test_singleton(self):
        assert _nearest_rank([7.0], 50) == 7.0

    def test_latency_summary_groups(self):
        recs = [record(evals=e) for e in (1, 2, 3)] + [
            record(workload="c", evals=9)]
        out = latency_summary(metrics(recs))
        assert out[("b", "flextopo_imp")].evals_p50 == 2
        assert out[("b", "flextopo_imp")].count == 3
        assert out[("c", "flextopo_imp")].evals_mean == 9


class TestQosSatisfied:
    def test_single_gpu_needs_single_numa(self):
        g = build_topology(preset("rtx4090"), "s0")
        w = ws("c", 500, True, 8, 1, QOS_NUMA)
        assert qos_satisfied(g, w, ResourceSet.of(range(0, 8), (0,)), "per_gpu")
        assert not qos_satisfied(
            g, w, ResourceSet.of(range(0, 8), (1,)), "per_gpu")

    def test_multi_gpu_per_gpu_locality(self):
        g = build_topology(preset("rtx4090"), "s0")
        w = ws("b", 1000, False, 16, 2, QOS_NUMA)
        local = ResourceSet.of(list(range(0, 8)) + list(range(8, 16)), (0, 1))
        assert qos_satisfied(g, w, local, "per_gpu")
        # cores piled on one NUMA while the second GPU sits elsewhere
        lopsided = ResourceSet.of(range(0, 16), (0, 2))
        assert not qos_satisfied(g, w, lopsided, "per_gpu")

    def test_aligned_additionally_requires_tightest_span(self):
        g = build_topology(preset("rtx4090"), "s0")
        # NUMA-only guarantee: per-GPU locality passes even across sockets,
        # the aligned reading demands the tightest achievable span
        w = ws("b", 1000, False, 16, 2, TopologyQos(numa=Qos.GUARANTEED))
        crossing = ResourceSet.of(
            list(range(24, 32)) + list(range(32, 40)), (3, 4))
        assert qos_satisfied(g, w, crossing, "per_gpu")
        assert not qos_satisfied(g, w, crossing, "aligned")

    def test_best_effort_socket_rejects_crossing_even_under_per_gpu(self):
        g = build_topology(preset("rtx4090"), "s0")
        w = ws("b", 1000, False, 16, 2, QOS_NUMA)  # socket is best-effort
        crossing = ResourceSet.of(
            list(range(24, 32)) + list(range(32, 40)), (3, 4))
        assert not qos_satisfied(g, w, crossing, "per_gpu")

    def test_best_effort_socket_counts_as_preference(self):
        g = build_topology(preset("rtx4090"), "s0")
        w = ws("x", 1000, False, 2, 2, TopologyQos(socket=Qos.BEST_EFFORT))
        assert qos_satisfied(g, w, ResourceSet.of((0, 8), (0, 1)), "per_gpu")
        assert not qos_satisfied(g, w, ResourceSet.of((0, 32), (0, 4)),
                                 "per_gpu")

    def test_no_qos_always_satisfied(self):
        g = build_topology(preset("rtx4090"), "s0")
        w = ws("d", 200, True, 8, 1)
        assert qos_satisfied(g, w, ResourceSet.of((0, 63), (4,)), "per_gpu")


class TestEvents:
    def _cluster(self):
        c = ws("c", 500, True, 8, 1, replicas=8)
        cluster = make_cluster([c])
        saturate(cluster)
        return cluster

    def test_scale_up_enqueues(self):
        cluster = self._cluster()
        out = apply_event(cluster, Event(cycle=0, kind="scale_up",
                                         workload="c", delta=3))
        assert out == ["c", "c", "c"]

    def test_scale_down_removes_newest(self):
        cluster = self._cluster()
        apply_event(cluster, Event(cycle=0, kind="scale_down",
                                   workload="c", delta=2))
        assert sorted(cluster.instances) == [f"c-{i:04d}" for i in range(6)]

    def test_gpu_failure_on_allocated_gpu_evicts(self):
        cluster = self._cluster()
        apply_event(cluster, Event(cycle=0, kind="gpu_failure",
                                   server="node-000", gpu=3))
        assert "c-0003" not in cluster.instances
        g = cluster.servers["node-000"]
        assert g.failed_gpus == frozenset({3})
        assert g.free_view().total_gpus == 0  # failed, not free

    def test_gpu_failure_on_free_gpu(self):
        # non-preemptible: the fill phase leaves the other GPUs free
        a = ws("a", 500, False, 8, 1, replicas=1)
        cluster = make_cluster([a])
        saturate(cluster)
        apply_event(cluster, Event(cycle=0, kind="gpu_failure",
                                   server="node-000", gpu=7))
        assert cluster.servers["node-000"].free_view().total_gpus == 6

    def test_bad_events(self):
        cluster = self._cluster()
        for ev in (Event(0, "scale_up", workload="ghost"),
                   Event(0, "gpu_failure", server="nope", gpu=0),
                   Event(0, "gpu_failure", server="node-000", gpu=99),
                   Event(0, "launch_nukes")):
            with pytest.raises(Exception):
                apply_event(cluster, ev)


class TestRun:
    def _scenario(self, **overrides):
        scenario = load_scenario(SCENARIO_DIR / "table1_services.yaml")
        for key, value in overrides.items():
            setattr(scenario, key, value)
        return scenario

    def test_records_and_csv_shape(self):
        m = run(self._scenario(), Mode.FLEXTOPO_IMP)
        assert len(m.records) == 2  # two B scale-ups, saturated cluster
        csv_text = m.to_csv()
        header = csv_text.splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        assert len(csv_text.splitlines()) == 3

    def test_identical_seeds_identical_modulo_timing(self):
        for mode in (Mode.FLEXTOPO_IMP, Mode.BASELINE):
            rows = []
            for _ in range(2):
                m = run(self._scenario(), mode)
                rows.append([r.csv_row()[:-1] for r in m.records])
            assert rows[0] == rows[1]

    def test_reset_each_cycle_repeats_the_same_story(self):
        scenario = self._scenario(cycles=3)
        m = run(scenario, Mode.FLEXTOPO_IMP)
        by_cycle = {}
        for r in m.records:
            by_cycle.setdefault(r.cycle, []).append(
                (r.slot, r.workload, r.server, r.victim_ids))
        assert by_cycle[0] == by_cycle[1] == by_cycle[2]
        assert len(m.timeseries) == 3

    def test_cycle_start_sourcing_never_mutates_live_state(self):
        scenario = self._scenario(sourcing_state="cycle_start")
        m = run(scenario, Mode.FLEXTOPO_IMP)
        counts = m.timeseries[-1]
        # the live cluster still holds exactly the saturated population
        assert counts == {"A": 1, "B": 6, "C": 8}
        assert len(m.records) == 2

    def test_empty_schedule(self):
        scenario = self._scenario(scale_ups_per_cycle=0)
        m = run(scenario, Mode.FLEXTOPO_IMP)
        assert m.records == []
        assert len(m.snapshots) == 3

    def test_normal_placement_preferred_over_preemption(self):
        scenario = self._scenario()
        ev = Event(cycle=0, kind="scale_down", workload="C", delta=2)
        scenario.events = [ev]
        m = run(scenario, Mode.FLEXTOPO_IMP)
        # the freed single-GPU slots cannot host a 2-GPU B... unless both
        # evictions free GPUs; with two C gone a B fits normally once
        assert len(m.records) <= 2

    def test_snapshot_texts_parse(self):
        from toposched.flextopo import parse_snapshot
        m = run(self._scenario(), Mode.BASELINE)
        for sid, text in m.snapshots.items():
            assert parse_snapshot(text).server_id == sid

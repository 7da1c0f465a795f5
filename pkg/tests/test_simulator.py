from __future__ import annotations

import collections
import math

import pytest

from edgeorch.network import Link
from edgeorch.scenario import SHIPPED, ChurnStep, ScenarioInvalid, generate_document, load_scenario, parse_document
from edgeorch.simulator import IDLE, Metrics, Simulator, link_serialize, resum_energy, run


def doc(nodes, links=(), jobs=(), sensors=(), churn=(), control="W", **extra):
    return {"version": 1, "name": "t", "horizon_s": extra.pop("horizon_s", 60), "control": control,
            "libraries": [{"id": "MA", "size_bytes": 2000}, {"id": "FFT", "size_bytes": 40000,
                                                              "install_cost_mops": 2}],
            "nodes": list(nodes), "links": list(links), "jobs": list(jobs), "sensors": list(sensors),
            "churn": list(churn), **extra}


def task(id, libs=("MA",), demand=1, inp=0, out=100, sources=()):
    return {"id": id, "libs": list(libs), "demand_mops": demand, "input_bytes": inp,
            "output_bytes": out, "sources": list(sources)}


def test_link_serialize_examples():
    link = Link("a", "b", bandwidth_bps=1000, prop_delay_s=0.5)
    assert link_serialize(link, [(0.0, 1000)]) == [1.5]
    assert link_serialize(link, [(0.0, 1000), (0.0, 1000)]) == [1.5, 2.5]
    # No overlap: each flow sees exactly its own transmission plus propagation.
    assert link_serialize(link, [(0.0, 1000), (5.0, 1000)]) == [1.5, 6.5]
    assert link_serialize(link, []) == []


def _drain(sim):
    events = []
    while (ev := sim.step()) is not IDLE:
        events.append(ev)
    return events


def test_clock_is_monotone_and_ties_keep_insertion_order():
    sim = Simulator(load_scenario("mill_3tier"), "edge")
    events = _drain(sim)
    assert events
    for (t0, s0, *_), (t1, s1, *_) in zip(events, events[1:]):
        assert t0 <= t1
        if t0 == t1:
            assert s0 < s1


def test_equal_time_events_are_processed_in_push_order():
    sim = Simulator(parse_document(doc([{"id": "W", "tier": "workstation"}], horizon_s=1)), "edge")
    sim._heap.clear()
    sim._push(0.5, "ParkRetry", "first")
    sim._push(0.5, "ParkRetry", "second")
    assert [sim.step()[3], sim.step()[3]] == ["first", "second"]
    assert sim.step() is IDLE


def test_empty_job_list_spends_energy_on_adverts_only():
    sc = parse_document(doc([{"id": "W", "tier": "workstation"}, {"id": "P", "tier": "sbc"}],
                            [{"a": "W", "b": "P"}]))
    sim = Simulator(sc, "edge")
    m = sim.run()
    assert m.compute_energy_j == 0 and m.total_energy_j > 0
    assert m.jobs_completed == 0 and m.job_makespans == {}
    energetic = {r[1] for r in sim.audit if r[4]}
    assert energetic == {"LinkTx"}
    assert all(r[2].startswith("advert") for r in sim.audit if r[1] == "LinkTx")
    assert m.control_bytes > 0 and m.backbone_bytes == 0


def test_single_node_chain_makespan_is_total_demand_over_capacity():
    sc = parse_document(doc(
        [{"id": "W", "tier": "workstation", "installed": ["MA"], "capacity_mops": 100}],
        jobs=[{"id": "j", "arrival_s": 1, "sink": "W",
               "tasks": [task("a", demand=30), task("b", demand=20, sources=["a"])]}]))
    m = Simulator(sc, "edge").run()
    assert m.jobs_completed == 1
    assert m.job_makespans["j"] == pytest.approx(0.5)


def _replan_doc():
    return doc(
        [{"id": "W", "tier": "workstation", "installed": []},
         {"id": "P1", "tier": "sbc", "installed": ["MA"], "capacity_mops": 10, "mobile": True},
         {"id": "P2", "tier": "sbc", "installed": ["MA"], "capacity_mops": 10, "mobile": True}],
        [{"a": "W", "b": "P1"}, {"a": "W", "b": "P2"}],
        jobs=[{"id": "j", "arrival_s": 8, "sink": "W", "tasks": [task("a", demand=30)]}],
        flags={"max_outstanding_s": 5})


def test_leave_during_execution_replans_and_completes_once():
    sim = Simulator(parse_document(_replan_doc()), "edge")
    host = None
    while host is None:
        assert sim.step() is not IDLE
        host = next((r[3] for r in sim.audit if r[1] == "TaskStart"), None)
    assert sim.now == pytest.approx(8)
    sim.inject_churn([ChurnStep(host, "leave", 10.0)])
    m = sim.run()
    names = [r[1] for r in sim.audit]
    assert "TaskAbort" in names and "TaskReplanned" in names
    assert collections.Counter(r[2] for r in sim.audit if r[1] == "TaskComplete") == {"j/a": 1}
    starts = [r[3] for r in sim.audit if r[1] == "TaskStart"]
    assert starts[0] == host and starts[-1] != host
    assert m.jobs_completed == 1 and m.task_reexecutions == 0


def test_join_of_capable_node_unparks_job():
    d = doc(
        [{"id": "W", "tier": "workstation", "installed": ["MA"]},
         {"id": "F", "tier": "sbc", "installed": ["MA", "FFT"], "mobile": True}],
        [{"a": "W", "b": "F"}],
        jobs=[{"id": "j", "arrival_s": 5, "sink": "W", "tasks": [task("f", libs=["FFT"], demand=1)]}],
        churn=[{"node": "F", "action": "leave", "time_s": 1}, {"node": "F", "action": "join", "time_s": 20}])
    sim = Simulator(parse_document(d), "edge")
    m = sim.run()
    names = [r[1] for r in sim.audit]
    assert names.index("JobParked") < names.index("NodeJoin") < names.index("JobUnparked")
    assert m.jobs_completed == 1
    assert [r[3] for r in sim.audit if r[1] == "TaskStart"] == ["F"]


def test_churn_must_name_a_mobile_scenario_node():
    base = _replan_doc()
    with pytest.raises(ScenarioInvalid, match="not mobile"):
        parse_document({**base, "churn": [{"node": "W", "action": "leave", "time_s": 1}]})
    with pytest.raises(ScenarioInvalid, match="unknown node"):
        parse_document({**base, "churn": [{"node": "Z", "action": "leave", "time_s": 1}]})
    sim = Simulator(parse_document(base), "edge")
    with pytest.raises(ScenarioInvalid):
        sim.inject_churn([ChurnStep("W", "leave", 1.0)])
    with pytest.raises(ScenarioInvalid):
        sim.inject_churn([ChurnStep("Z", "leave", 1.0)])


def test_mobile_nodes_cannot_anchor_data():
    d = _replan_doc()
    d["jobs"][0]["sink"] = "P1"
    with pytest.raises(ScenarioInvalid, match="mobile"):
        parse_document(d)


@pytest.mark.parametrize("name", SHIPPED)
@pytest.mark.parametrize("strategy", ["central", "edge"])
def test_metrics_invariants_on_shipped_scenarios(name, strategy):
    sim = Simulator(load_scenario(name), strategy)
    m = sim.run()
    assert m.model_latency_error_s >= -1e-9
    assert m.total_energy_j == pytest.approx(resum_energy(sim.audit_csv()), rel=1e-9)
    for value in (m.total_energy_j, m.transport_energy_j, m.compute_energy_j, m.backbone_bytes,
                  m.control_bytes, *m.utilization.values(), *m.link_bytes.values()):
        assert value >= 0
    assert all(0 <= u <= 1 for u in m.utilization.values())
    assert m.jobs_incomplete == []


def test_model_error_nonnegative_under_churn():
    for seed in range(10):
        m = Simulator(parse_document(generate_document(seed, churn=True)), "edge", seed).run()
        assert m.model_latency_error_s >= -1e-9


def test_central_strategy_runs_everything_on_the_control_node():
    sc = load_scenario("mill_3tier")
    sim = Simulator(sc, "central")
    m = sim.run()
    assert {r[3] for r in sim.audit if r[1] == "TaskStart"} == {sc.control}
    assert m.raw_sensor_bytes == sum(s.total_bytes for s in sc.sensors)


def test_metrics_json_round_trip_and_run_helper():
    metrics, audit = run(load_scenario("tradeoff_3node"), "edge", 3)
    assert Metrics.from_json(metrics.to_json()) == metrics
    assert audit.splitlines()[0] == "time,event,subject,node,energy_j,bytes"
    assert math.isclose(resum_energy(audit), metrics.total_energy_j, rel_tol=1e-9)


def test_empty_churn_script_queues_nothing():
    sim = Simulator(parse_document(_replan_doc()), "edge")
    before = len(sim._heap)
    assert sim.inject_churn([]) == []
    assert len(sim._heap) == before

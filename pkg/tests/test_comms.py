from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeorch.comms import (
    Flow,
    FlowCause,
    UnroutableFlow,
    comms_cost,
    derive_flows,
    optimize_routes,
    split_bytes,
)
from edgeorch.model import Job, TaskDescriptor
from edgeorch.network import Link, Medium, Topology, cheapest_route, route_cost
from instances import random_topology


def line(ids, medium=Medium.WIRED):
    return Topology(frozenset(ids), tuple(Link.default(a, b, medium) for a, b in zip(ids, ids[1:])), ids[0])


def pipeline(sink="C"):
    return Job("j", (
        TaskDescriptor("a", demand_mops=1, input_bytes=1000, output_bytes=300, sources=("S",)),
        TaskDescriptor("b", demand_mops=1, output_bytes=50),
    ), (("a", "b"),), sink)


def test_derive_flows_colocated_pipeline_is_all_local_except_inputs():
    flows = derive_flows(pipeline(sink="A"), {"a": "A", "b": "A"})
    assert [(f.cause, f.src, f.dst, f.payload_bytes) for f in flows] == [
        (FlowCause.SENSOR_INPUT, "S", "A", 1000),
        (FlowCause.INTER_TASK, "A", "A", 300),
        (FlowCause.RESULT_RETURN, "A", "A", 50),
    ]
    assert [f.local for f in flows] == [False, True, True]


def test_derive_flows_split_placement():
    flows = derive_flows(pipeline(), {"a": "A", "b": "B"})
    assert [(f.tag, f.src, f.dst, f.payload_bytes) for f in flows] == [
        ("a<S", "S", "A", 1000), ("a>b", "A", "B", 300), ("b>sink", "B", "C", 50)]


def test_derive_flows_two_producers_and_shared_input():
    job = Job("j", (
        TaskDescriptor("p", output_bytes=10, input_bytes=7, sources=("S1", "S2")),
        TaskDescriptor("q", output_bytes=20),
        TaskDescriptor("r", output_bytes=5),
    ), (("p", "r"), ("q", "r")), "K")
    flows = derive_flows(job, {"p": "X", "q": "Y", "r": "Z"})
    inputs = [f for f in flows if f.cause == FlowCause.SENSOR_INPUT]
    assert [(f.src, f.payload_bytes) for f in inputs] == [("S1", 4), ("S2", 3)]
    inter = {(f.src, f.payload_bytes) for f in flows if f.cause == FlowCause.INTER_TASK}
    assert inter == {("X", 10), ("Y", 20)}
    assert split_bytes(7, 2) == [4, 3] and sum(split_bytes(11, 4)) == 11


def test_flow_validation():
    with pytest.raises(ValueError):
        Flow("a", "b", -1, "inter-task")
    assert str(Flow("a", "b", 1, "lib-delivery", "FFT@b")) == "lib-delivery:FFT@b:a->b"


def test_single_flow_matches_cheapest_route():
    topo = line(list("ABC"))
    flow = Flow("A", "C", 1000, FlowCause.INTER_TASK)
    plan = optimize_routes([flow], topo)
    assert plan.route_of(flow).nodes == ("A", "B", "C")
    assert plan.cost == route_cost(plan.route_of(flow), 1000, 1, 1)


def test_alpha_zero_minimises_latency_only():
    fast = Link("A", "B", Medium.WIRELESS, 12_500_000, 0, Fraction(1, 10**5))
    slow_a = Link("A", "C", Medium.WIRED, 250_000, 0, Fraction(1, 10**8))
    slow_b = Link("C", "B", Medium.WIRED, 250_000, 0, Fraction(1, 10**8))
    topo = Topology(frozenset("ABC"), (fast, slow_a, slow_b), "A")
    flow = Flow("A", "B", 100_000, FlowCause.INTER_TASK)
    assert optimize_routes([flow], topo, alpha=0, beta=1).route_of(flow).nodes == ("A", "B")
    assert optimize_routes([flow], topo, alpha=1, beta=0).route_of(flow).nodes == ("A", "C", "B")
    with pytest.raises(ValueError):
        optimize_routes([flow], topo, 0, 0)


def test_zero_payload_costs_only_propagation():
    topo = line(list("AB"))
    plan = optimize_routes([Flow("A", "B", 0, FlowCause.RESULT_RETURN)], topo)
    assert plan.energy_j == 0
    assert plan.latency_s == topo.links[0].prop_delay_s


def test_unroutable_flow_raises():
    topo = Topology(frozenset("AB"), (), "A")
    with pytest.raises(UnroutableFlow):
        optimize_routes([Flow("A", "B", 1, FlowCause.INTER_TASK)], topo)


def test_colocated_placement_costs_nothing():
    job = Job("j", (TaskDescriptor("a", output_bytes=300), TaskDescriptor("b", output_bytes=50)),
              (("a", "b"),), "A")
    cost, plan = comms_cost({"a": "A", "b": "A"}, job, line(list("AB")))
    assert cost == 0 and plan.energy_j == 0


def test_locality_dominance_on_a_line():
    topo = line(list("ABC"))
    job = Job("j", (TaskDescriptor("a", output_bytes=1000), TaskDescriptor("b", output_bytes=10)),
              (("a", "b"),), "A")
    near, _ = comms_cost({"a": "A", "b": "B"}, job, topo)
    far, _ = comms_cost({"a": "A", "b": "C"}, job, topo)
    assert near < far


def test_plan_csv_has_one_row_per_flow():
    _, plan = comms_cost({"a": "A", "b": "B"}, pipeline(), line(list("SABC")))
    rows = plan.to_csv().splitlines()
    assert rows[0].startswith("flow,cause") and len(rows) == 4


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_cost_decomposes_into_per_flow_routes(seed):
    rng = random.Random(seed)
    topo = random_topology(rng, rng.randint(2, 6))
    ids = sorted(topo.nodes)
    tasks = tuple(TaskDescriptor(f"t{i}", output_bytes=rng.randint(0, 5000), input_bytes=rng.randint(0, 5000),
                                 sources=(rng.choice(ids),) if i == 0 else ()) for i in range(3))
    job = Job("j", tasks, (("t0", "t1"), ("t1", "t2")), rng.choice(ids))
    mapping = {t.id: rng.choice(ids) for t in tasks}
    alpha, beta = rng.randint(0, 3), rng.randint(1, 3)
    cost, plan = comms_cost(mapping, job, topo, alpha, beta)
    expected = 0
    for f in derive_flows(job, mapping):
        if not f.local:
            expected += route_cost(cheapest_route(topo, f.src, f.dst, f.payload_bytes, alpha, beta),
                                   f.payload_bytes, alpha, beta)
    assert cost == expected

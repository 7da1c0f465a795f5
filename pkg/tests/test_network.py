from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgeorch.network import (
    MCU_RADIO_J_PER_BYTE,
    WIRED_J_PER_BYTE,
    WIRELESS_J_PER_BYTE,
    Link,
    Medium,
    Route,
    RoutingError,
    Topology,
    Unreachable,
    all_routes_oracle,
    cheapest_route,
    oracle_cheapest,
    route_cost,
    route_from_nodes,
    transfer_energy,
    transfer_latency,
)
from instances import random_topology


def topo(nodes, links, control=None):
    return Topology(frozenset(nodes), tuple(links), control or sorted(nodes)[0])


def test_default_coefficients():
    assert WIRED_J_PER_BYTE == Fraction(1, 10**7)
    assert WIRELESS_J_PER_BYTE == Fraction(1, 10**6)
    assert MCU_RADIO_J_PER_BYTE == Fraction(2, 10**6)
    assert Link.default("a", "b", "wireless").energy_j_per_byte > Link.default("a", "b").energy_j_per_byte


def test_link_validation():
    with pytest.raises(ValueError):
        Link("a", "a")
    with pytest.raises(ValueError):
        Link("a", "b", bandwidth_bps=0)
    with pytest.raises(ValueError):
        topo("ab", [Link("a", "b"), Link("b", "a")])
    with pytest.raises(ValueError):
        topo("ab", [Link("a", "c")])


def test_transfer_energy_examples():
    t = topo("ab", [Link.default("a", "b", Medium.WIRELESS)])
    r = route_from_nodes(t, ["a", "b"])
    assert transfer_energy(r, 1000) == Fraction(1, 1000)
    assert transfer_energy(r, 0) == 0
    wired = route_from_nodes(topo("ab", [Link.default("a", "b")]), ["a", "b"])
    assert transfer_energy(r, 1000) == 10 * transfer_energy(wired, 1000)


def test_transfer_latency_examples():
    link = Link("a", "b", bandwidth_bps=1_000_000, prop_delay_s=Fraction(1, 100))
    t = topo("abc", [link, Link("b", "c", bandwidth_bps=1_000_000, prop_delay_s=Fraction(1, 100))])
    one = route_from_nodes(t, ["a", "b"])
    two = route_from_nodes(t, ["a", "b", "c"])
    assert transfer_latency(one, 1_000_000) == Fraction(101, 100)
    assert transfer_latency(two, 1_000_000) == 2 * transfer_latency(one, 1_000_000)
    assert transfer_latency(two, 0) == Fraction(2, 100)


def test_empty_route_between_distinct_nodes_is_an_error():
    with pytest.raises(RoutingError):
        transfer_energy(Route.local("a"), 10, src="a", dst="b")
    with pytest.raises(RoutingError):
        transfer_latency(Route.local("a"), 10, src="a", dst="b")
    assert transfer_energy(Route.local("a"), 10) == 0


def test_triangle_two_wired_hops_beat_direct_wireless():
    t = topo("abc", [Link.default("a", "c", Medium.WIRELESS), Link.default("a", "b"), Link.default("b", "c")])
    r = cheapest_route(t, "a", "c", 1000, alpha=1, beta=0)
    assert r.nodes == ("a", "b", "c")
    costs = {x.nodes: route_cost(x, 1000, 1, 0) for x in all_routes_oracle(t, "a", "c")}
    assert min(costs, key=costs.get) == r.nodes


def test_identity_and_unreachable():
    t = topo("abc", [Link("a", "b")])
    r = cheapest_route(t, "a", "a", 100)
    assert r.hops == 0 and route_cost(r, 100, 1, 1) == 0
    assert isinstance(cheapest_route(t, "a", "c", 100), Unreachable)
    assert not cheapest_route(t, "a", "c", 100)
    with pytest.raises(ValueError):
        cheapest_route(t, "a", "b", 1, 0, 0)


def test_oracle_examples():
    tri = topo("abc", [Link("a", "b"), Link("b", "c"), Link("a", "c")])
    assert len(all_routes_oracle(tri, "a", "c")) == 2
    path = topo("abc", [Link("a", "b"), Link("b", "c")])
    assert [r.nodes for r in all_routes_oracle(path, "a", "c")] == [("a", "b", "c")]
    clique = topo("abcd", [Link(x, y) for i, x in enumerate("abcd") for y in "abcd"[i + 1:]])
    assert all(len(all_routes_oracle(clique, x, y)) == 5 for x in "abcd" for y in "abcd" if x != y)
    big = topo([f"n{i}" for i in range(11)], [])
    with pytest.raises(ValueError):
        all_routes_oracle(big, "n0", "n1")


def test_ties_break_by_hops_then_node_ids():
    # Two equal-cost two-hop paths a-b-d and a-c-d: the smaller id sequence wins.
    t = topo("abcd", [Link("a", "b"), Link("b", "d"), Link("a", "c"), Link("c", "d")])
    assert cheapest_route(t, "a", "d", 10).nodes == ("a", "b", "d")
    assert oracle_cheapest(t, "a", "d", 10).nodes == ("a", "b", "d")


def test_topology_helpers():
    t = topo("abcd", [Link("a", "b"), Link("b", "c")], control="a")
    assert t.hop_distances("a") == {"a": 0, "b": 1, "c": 2}
    assert not t.is_connected()
    sub = t.without({"b", "a"})
    assert "a" in sub.nodes and "b" not in sub.nodes and sub.links == ()


seeds = st.integers(0, 10**6)


@given(seeds, st.integers(1, 5), st.integers(0, 5), st.integers(1, 10))
def test_argmin_is_scale_invariant(seed, alpha, beta, k):
    rng = random.Random(seed)
    t = random_topology(rng, rng.randint(2, 8))
    a, b = rng.sample(sorted(t.nodes), 2)
    payload = rng.randint(0, 10**6)
    assert cheapest_route(t, a, b, payload, alpha, beta).nodes == \
        cheapest_route(t, a, b, payload, k * alpha, k * beta).nodes


@given(seeds, st.integers(0, 10**6), st.integers(0, 10**6))
def test_cost_components_monotone_in_payload(seed, p1, p2):
    rng = random.Random(seed)
    t = random_topology(rng, rng.randint(2, 6))
    a, b = rng.sample(sorted(t.nodes), 2)
    r = cheapest_route(t, a, b, 1)
    lo, hi = sorted((p1, p2))
    assert transfer_energy(r, lo) <= transfer_energy(r, hi)
    assert transfer_latency(r, lo) <= transfer_latency(r, hi)


@given(seeds)
def test_wireless_substitution_never_lowers_energy(seed):
    rng = random.Random(seed)
    t = random_topology(rng, rng.randint(2, 6))
    a, b = rng.sample(sorted(t.nodes), 2)
    r = cheapest_route(t, a, b, 1000)
    defaults = [Link.default(l.a, l.b, l.medium, bandwidth_bps=l.bandwidth_bps) for l in r.links]
    base = transfer_energy(Route(r.nodes, tuple(defaults)), 1000)
    for i, l in enumerate(defaults):
        swapped = list(defaults)
        swapped[i] = Link.default(l.a, l.b, Medium.WIRELESS, bandwidth_bps=l.bandwidth_bps)
        assert transfer_energy(Route(r.nodes, tuple(swapped)), 1000) >= base


@given(seeds)
def test_cheapest_matches_oracle(seed):
    rng = random.Random(seed)
    t = random_topology(rng, rng.randint(2, 8))
    a, b = rng.sample(sorted(t.nodes), 2)
    payload, alpha, beta = rng.randint(0, 10**6), rng.randint(0, 3), rng.randint(1, 3)
    assert cheapest_route(t, a, b, payload, alpha, beta).nodes == oracle_cheapest(t, a, b, payload, alpha, beta).nodes

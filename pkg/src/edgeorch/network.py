"""Topology, linear link cost model, and exact cheapest-route search."""

from __future__ import annotations

import heapq
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from edgeorch.model import Number, ValidationError


class Medium(str, Enum):
    WIRED = "wired"
    WIRELESS = "wireless"


# Joules per byte. Arbitrary but ordered: wired < wireless < microcontroller radio.
WIRED_J_PER_BYTE = Fraction(1, 10_000_000)
WIRELESS_J_PER_BYTE = Fraction(1, 1_000_000)
MCU_RADIO_J_PER_BYTE = Fraction(2, 1_000_000)

DEFAULT_LINK = {
    Medium.WIRED: {"bandwidth_bps": 12_500_000, "prop_delay_s": Fraction(1, 1000),
                   "energy_j_per_byte": WIRED_J_PER_BYTE},
    Medium.WIRELESS: {"bandwidth_bps": 250_000, "prop_delay_s": Fraction(2, 1000),
                      "energy_j_per_byte": WIRELESS_J_PER_BYTE},
}

MAX_ORACLE_NODES = 10


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    medium: Medium = Medium.WIRED
    bandwidth_bps: Number = 12_500_000
    prop_delay_s: Number = 0
    energy_j_per_byte: Number = WIRED_J_PER_BYTE

    def __post_init__(self):
        object.__setattr__(self, "medium", Medium(self.medium))
        if self.a == self.b:
            raise ValidationError(f"link {self.a}-{self.b}: self loop")
        if self.bandwidth_bps <= 0:
            raise ValidationError(f"link {self.key}: bandwidth must be > 0")
        if self.prop_delay_s < 0 or self.energy_j_per_byte < 0:
            raise ValidationError(f"link {self.key}: delay and energy must be >= 0")

    @classmethod
    def default(cls, a: str, b: str, medium: Medium | str = Medium.WIRED, **overrides) -> Link:
        medium = Medium(medium)
        params = dict(DEFAULT_LINK[medium])
        params.update(overrides)
        return cls(a, b, medium, **params)

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)

    @property
    def key(self) -> str:
        return "|".join(self.endpoints)

    def other(self, node: str) -> str:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        raise ValueError(f"{node} is not an endpoint of {self.key}")

    def touches(self, node: str) -> bool:
        return node == self.a or node == self.b


@dataclass(frozen=True)
class Route:
    """A simple path; ``nodes`` has one more entry than ``links``."""

    nodes: tuple[str, ...]
    links: tuple[Link, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.nodes) != len(self.links) + 1:
            raise RoutingError(f"route {self.nodes}: {len(self.links)} links do not join the nodes")
        for i, link in enumerate(self.links):
            if {link.a, link.b} != {self.nodes[i], self.nodes[i + 1]}:
                raise RoutingError(f"route {self.nodes}: link {link.key} out of place")
        if len(set(self.nodes)) != len(self.nodes):
            raise RoutingError(f"route {self.nodes}: not a simple path")

    @classmethod
    def local(cls, node: str) -> Route:
        return cls((node,))

    @property
    def src(self) -> str:
        return self.nodes[0]

    @property
    def dst(self) -> str:
        return self.nodes[-1]

    @property
    def hops(self) -> int:
        return len(self.links)

    def __str__(self):
        return "-".join(self.nodes)


@dataclass(frozen=True)
class Unreachable:
    src: str
    dst: str

    def __bool__(self):
        return False


@dataclass
class Topology:
    nodes: frozenset[str]
    links: tuple[Link, ...]
    control: str
    external_sources: frozenset[str] = frozenset()
    _adj: dict[str, list[Link]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = frozenset(self.nodes)
        self.links = tuple(self.links)
        self.external_sources = frozenset(self.external_sources)
        if self.control not in self.nodes:
            raise ValidationError(f"control node {self.control!r} not in topology")
        for ext in self.external_sources:
            if ext not in self.nodes:
                raise ValidationError(f"external source {ext!r} not in topology")
        seen = set()
        self._adj = {n: [] for n in self.nodes}
        for link in self.links:
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise ValidationError(f"link {link.key} references unknown node {end!r}")
            if link.endpoints in seen:
                raise ValidationError(f"duplicate link {link.key}")
            seen.add(link.endpoints)
            self._adj[link.a].append(link)
            self._adj[link.b].append(link)
        for n in self._adj:
            self._adj[n].sort(key=lambda l: l.other(n))

    def incident(self, node: str) -> list[Link]:
        return list(self._adj[node])

    def neighbors(self, node: str) -> list[str]:
        return [l.other(node) for l in self._adj[node]]

    def link(self, a: str, b: str) -> Link:
        for l in self._adj[a]:
            if l.other(a) == b:
                return l
        raise KeyError(f"no link {a}-{b}")

    def without(self, removed: Iterable[str]) -> Topology:
        """The topology with ``removed`` nodes (and their links) taken out.

        The control node always stays.
        """
        removed = set(removed) - {self.control}
        return Topology(
            self.nodes - removed,
            tuple(l for l in self.links if l.a not in removed and l.b not in removed),
            self.control,
            self.external_sources - removed,
        )

    def hop_distances(self, src: str) -> dict[str, int]:
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors(u):
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        return len(self.hop_distances(min(self.nodes))) == len(self.nodes)

    def diameter(self) -> int:
        best = 0
        for n in self.nodes:
            d = self.hop_distances(n)
            if len(d) != len(self.nodes):
                raise ValueError("diameter of a disconnected topology is undefined")
            best = max(best, max(d.values()))
        return best


def route_from_nodes(topology: Topology, nodes: Sequence[str]) -> Route:
    return Route(tuple(nodes), tuple(topology.link(a, b) for a, b in zip(nodes, nodes[1:])))


def _check_route(route: Route, src: str | None, dst: str | None) -> None:
    if src is not None and dst is not None and src != dst and not route.links:
        raise RoutingError(f"empty route cannot carry data from {src} to {dst}")


def transfer_energy(route: Route, payload_bytes: Number, src: str | None = None,
                    dst: str | None = None) -> Number:
    """Joules to push ``payload_bytes`` over every link of ``route``."""
    _check_route(route, src, dst)
    return sum((payload_bytes * l.energy_j_per_byte for l in route.links), 0)


def _per_link_latency(link: Link, payload_bytes: Number) -> Number:
    if isinstance(payload_bytes, int) and isinstance(link.bandwidth_bps, int):
        serial = Fraction(payload_bytes, link.bandwidth_bps)
    else:
        serial = payload_bytes / link.bandwidth_bps
    return serial + link.prop_delay_s


def transfer_latency(route: Route, payload_bytes: Number, src: str | None = None,
                     dst: str | None = None) -> Number:
    """Store-and-forward latency: each hop serialises the whole payload."""
    _check_route(route, src, dst)
    return sum((_per_link_latency(l, payload_bytes) for l in route.links), 0)


def route_cost(route: Route, payload_bytes: Number, alpha: Number, beta: Number) -> Number:
    return alpha * transfer_energy(route, payload_bytes) + beta * transfer_latency(route, payload_bytes)


def _link_weight(link: Link, payload_bytes: Number, alpha: Number, beta: Number) -> Number:
    return alpha * payload_bytes * link.energy_j_per_byte + beta * _per_link_latency(link, payload_bytes)


def cheapest_route(
    topology: Topology,
    src: str,
    dst: str,
    payload_bytes: Number,
    alpha: Number = 1,
    beta: Number = 1,
) -> Route | Unreachable:
    """Minimise ``alpha*energy + beta*latency`` from ``src`` to ``dst``.

    Labels are ``(cost, hops, node sequence)`` compared lexicographically. That
    order survives extension by a common link, so Dijkstra over it is exact and
    the tie-break is the deterministic one used everywhere else.
    """
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ValueError("alpha and beta must be >= 0 and not both zero")
    for n in (src, dst):
        if n not in topology.nodes:
            raise RoutingError(f"unknown node {n!r}")
    if src == dst:
        return Route.local(src)
    best: dict[str, tuple] = {src: (0, 0, (src,))}
    heap = [(0, 0, (src,))]
    done = set()
    while heap:
        cost, hops, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return route_from_nodes(topology, path)
        for link in topology.incident(u):
            v = link.other(u)
            if v in done:
                continue
            label = (cost + _link_weight(link, payload_bytes, alpha, beta), hops + 1, path + (v,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, label)
    return Unreachable(src, dst)


def all_routes_oracle(topology: Topology, src: str, dst: str) -> list[Route]:
    """Every simple path from ``src`` to ``dst`` by exhaustive DFS."""
    if len(topology.nodes) > MAX_ORACLE_NODES:
        raise ValueError(f"oracle limited to {MAX_ORACLE_NODES} nodes")
    if src == dst:
        return [Route.local(src)]
    found = []

    def walk(path: list[str]):
        u = path[-1]
        for v in topology.neighbors(u):
            if v in path:
                continue
            if v == dst:
                found.append(route_from_nodes(topology, path + [v]))
            else:
                walk(path + [v])

    walk([src])
    return found


def oracle_cheapest(topology: Topology, src: str, dst: str, payload_bytes: Number,
                    alpha: Number = 1, beta: Number = 1) -> Route | Unreachable:
    """Brute-force counterpart of ``cheapest_route`` with the same tie-break."""
    routes = all_routes_oracle(topology, src, dst)
    if not routes:
        return Unreachable(src, dst)
    return min(routes, key=lambda r: (route_cost(r, payload_bytes, alpha, beta), r.hops, r.nodes))

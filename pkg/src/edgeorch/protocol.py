"""Capability adverts, registry, flooding gossip, messages and library provisioning."""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Union

from edgeorch.model import Job, LibrarySpec, NodeProfile, Number
from edgeorch.network import (
    Route,
    Topology,
    Unreachable,
    cheapest_route,
    route_cost,
    transfer_energy,
    transfer_latency,
)

DEFAULT_TTL = 3
DEFAULT_ADVERT_PERIOD_S = 5
DEFAULT_STALE_PERIODS = 3
ADVERT_BASE_BYTES = 48
ADVERT_BYTES_PER_LIB = 8


@dataclass(frozen=True)
class CapabilityAdvert:
    node_id: str
    seq_no: int
    free_mops: Number
    installed: frozenset[str]
    installable: frozenset[str]
    ttl: int = DEFAULT_TTL

    def __post_init__(self):
        object.__setattr__(self, "installed", frozenset(self.installed))
        object.__setattr__(self, "installable", frozenset(self.installable))
        if self.ttl < 0:
            raise ValueError("ttl must be >= 0")

    @property
    def key(self) -> tuple[str, int]:
        return (self.node_id, self.seq_no)

    @property
    def size_bytes(self) -> int:
        return ADVERT_BASE_BYTES + ADVERT_BYTES_PER_LIB * (len(self.installed) + len(self.installable))

    def hop(self) -> CapabilityAdvert:
        return replace(self, ttl=self.ttl - 1)


@dataclass(frozen=True)
class RegistryEntry:
    advert: CapabilityAdvert
    received_at: float


@dataclass(frozen=True)
class CapabilityRegistry:
    """Latest advert per node, as seen by the control layer."""

    entries: Mapping[str, RegistryEntry] = field(default_factory=dict)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.entries

    def __len__(self):
        return len(self.entries)

    def get(self, node_id: str) -> CapabilityAdvert | None:
        entry = self.entries.get(node_id)
        return entry.advert if entry else None

    def seq(self, node_id: str) -> int | None:
        entry = self.entries.get(node_id)
        return entry.advert.seq_no if entry else None

    def merge(self, advert: CapabilityAdvert, now: float = 0.0) -> CapabilityRegistry:
        return registry_merge(self, advert, now)

    def forget(self, node_id: str) -> CapabilityRegistry:
        return CapabilityRegistry({k: v for k, v in self.entries.items() if k != node_id})

    def fresh(self, now: float, stale_after: float | None) -> list[CapabilityAdvert]:
        """Adverts young enough to be used for placement, ordered by node id."""
        out = []
        for node_id in sorted(self.entries):
            entry = self.entries[node_id]
            if stale_after is None or now - entry.received_at <= stale_after:
                out.append(entry.advert)
        return out

    def holders(self, lib_id: str, now: float = 0.0, stale_after: float | None = None) -> list[str]:
        return [a.node_id for a in self.fresh(now, stale_after) if lib_id in a.installed]


def registry_merge(registry: CapabilityRegistry, advert: CapabilityAdvert,
                   now: float = 0.0) -> CapabilityRegistry:
    """Store ``advert`` iff it is newer than what the registry holds for that node."""
    held = registry.seq(advert.node_id)
    if held is not None and advert.seq_no <= held:
        return registry
    entries = dict(registry.entries)
    entries[advert.node_id] = RegistryEntry(advert, now)
    return CapabilityRegistry(entries)


def gossip_round(
    topology: Topology,
    pending: Sequence[tuple[str, CapabilityAdvert]],
    seen: dict[str, set[tuple[str, int]]],
    active: Iterable[str] | None = None,
) -> tuple[dict[str, list[CapabilityAdvert]], list[tuple[str, CapabilityAdvert]]]:
    """Forward each pending ``(holder, advert)`` one hop.

    A copy with ttl decremented reaches every neighbour of the holder. A node
    that sees an advert key for the first time records it and queues it for
    the next round if its ttl is still positive; repeats are dropped. ``seen``
    is updated in place. Returns the adverts delivered this round per node and
    the next round's pending list.
    """
    live = set(topology.nodes if active is None else active)
    delivered: dict[str, list[CapabilityAdvert]] = {}
    nxt: list[tuple[str, CapabilityAdvert]] = []
    for holder, advert in pending:
        if advert.ttl <= 0 or holder not in live:
            continue
        copy = advert.hop()
        for nb in topology.neighbors(holder):
            if nb not in live:
                continue
            node_seen = seen.setdefault(nb, set())
            if copy.key in node_seen:
                continue
            node_seen.add(copy.key)
            delivered.setdefault(nb, []).append(copy)
            if copy.ttl > 0:
                nxt.append((nb, copy))
    return delivered, nxt


def originate(adverts: Iterable[CapabilityAdvert],
              seen: dict[str, set[tuple[str, int]]]) -> list[tuple[str, CapabilityAdvert]]:
    pending = []
    for advert in adverts:
        seen.setdefault(advert.node_id, set()).add(advert.key)
        pending.append((advert.node_id, advert))
    return pending


def flood(
    topology: Topology,
    adverts: Iterable[CapabilityAdvert],
    rounds: int | None = None,
) -> dict[str, list[CapabilityAdvert]]:
    """Run gossip rounds until quiescent (or ``rounds`` elapse); return all deliveries."""
    seen: dict[str, set[tuple[str, int]]] = {}
    pending = originate(adverts, seen)
    received: dict[str, list[CapabilityAdvert]] = {}
    done = 0
    while pending and (rounds is None or done < rounds):
        delivered, pending = gossip_round(topology, pending, seen)
        for node, items in delivered.items():
            received.setdefault(node, []).extend(items)
        done += 1
    return received


# Messages exchanged between nodes and the control layer.

@dataclass(frozen=True)
class Advert:
    advert: CapabilityAdvert

    @property
    def size_bytes(self) -> int:
        return self.advert.size_bytes


@dataclass(frozen=True)
class JobSubmit:
    job: Job
    size_bytes: int = 256


@dataclass(frozen=True)
class TaskAssign:
    task_id: str
    node_id: str
    size_bytes: int = 64


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    output_bytes: int

    @property
    def size_bytes(self) -> int:
        return self.output_bytes


@dataclass(frozen=True)
class LibRequest:
    node_id: str
    lib_id: str
    size_bytes: int = 32


@dataclass(frozen=True)
class LibDeliver:
    lib_id: str
    size_bytes: int


@dataclass(frozen=True)
class LibInstalled:
    node_id: str
    lib_id: str
    size_bytes: int = 32


Message = Union[Advert, JobSubmit, TaskAssign, TaskResult, LibRequest, LibDeliver, LibInstalled]


@dataclass(frozen=True)
class TraceRecord:
    time: float
    src: str
    dst: str
    message: Message

    @property
    def variant(self) -> str:
        return type(self.message).__name__


TRACE_HEADER = ("time", "src", "dst", "variant", "size")


def trace_csv(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in records:
        w.writerow((repr(float(r.time)), r.src, r.dst, r.variant, r.message.size_bytes))
    return buf.getvalue()


class InfeasibleReason(str, Enum):
    NOT_INSTALLABLE = "NotInstallable"
    NO_SOURCE = "NoSource"
    UNREACHABLE = "Unreachable"


@dataclass(frozen=True)
class Infeasible:
    reason: InfeasibleReason
    detail: str = ""

    def __bool__(self):
        return False


@dataclass(frozen=True)
class ProvisionPlan:
    target: str
    lib_id: str
    source: str
    route: Route
    size_bytes: int
    energy_j: Number
    latency_s: Number
    install_delay_s: Number
    install_energy_j: Number

    @property
    def ready_after_s(self) -> Number:
        return self.latency_s + self.install_delay_s


def provision_library(
    registry: CapabilityRegistry,
    topology: Topology,
    target: NodeProfile,
    lib: LibrarySpec,
    *,
    control_repo: bool = False,
    alpha: Number = 1,
    beta: Number = 1,
    now: float = 0.0,
    stale_after: float | None = None,
) -> ProvisionPlan | Infeasible:
    """Choose where ``target`` fetches ``lib`` from and what that costs.

    Candidate sources are fresh registry holders plus, with ``control_repo``,
    the control node. The cheapest route by ``alpha*energy + beta*latency``
    over the library payload wins; ties go to fewer hops then node ids.
    """
    if lib.id in target.installed or lib.id not in target.installable:
        return Infeasible(InfeasibleReason.NOT_INSTALLABLE, f"{lib.id} not installable on {target.id}")
    sources = set(registry.holders(lib.id, now, stale_after)) - {target.id}
    if control_repo:
        sources.add(topology.control)
    sources &= topology.nodes
    if not sources:
        return Infeasible(InfeasibleReason.NO_SOURCE, f"no holder of {lib.id}")
    if target.id not in topology.nodes:
        return Infeasible(InfeasibleReason.UNREACHABLE, f"{target.id} not in topology")
    best = None
    for src in sorted(sources):
        route = cheapest_route(topology, src, target.id, lib.size_bytes, alpha, beta)
        if isinstance(route, Unreachable):
            continue
        rank = (route_cost(route, lib.size_bytes, alpha, beta), route.hops, route.nodes)
        if best is None or rank < best[0]:
            best = (rank, src, route)
    if best is None:
        return Infeasible(InfeasibleReason.UNREACHABLE, f"no route to {target.id} from {sorted(sources)}")
    _, src, route = best
    return ProvisionPlan(
        target=target.id,
        lib_id=lib.id,
        source=src,
        route=route,
        size_bytes=lib.size_bytes,
        energy_j=transfer_energy(route, lib.size_bytes),
        latency_s=transfer_latency(route, lib.size_bytes),
        install_delay_s=lib.install_cost_mops / target.capacity_mops,
        install_energy_j=lib.install_cost_mops * target.compute_energy_j_per_mop,
    )


def advert_for(node: NodeProfile, seq_no: int, free_mops: Number, ttl: int = DEFAULT_TTL) -> CapabilityAdvert:
    return CapabilityAdvert(node.id, seq_no, free_mops, node.installed, node.installable, ttl)

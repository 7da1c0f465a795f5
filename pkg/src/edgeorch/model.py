"""Domain types for libraries, nodes, tasks and jobs, plus capacity/capability accounting."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction]


class Tier(str, Enum):
    MICROCONTROLLER = "microcontroller"
    SBC = "sbc"
    WORKSTATION = "workstation"


# Mops/sec. Only the ordering is meaningful.
DEFAULT_TIER_CAPACITY = {
    Tier.MICROCONTROLLER: 1,
    Tier.SBC: 50,
    Tier.WORKSTATION: 500,
}

# Admission bound: at most this many seconds of queued work per node.
DEFAULT_MAX_OUTSTANDING_S = 2


class ValidationError(ValueError):
    """Raised when a scenario object violates a structural invariant."""


class CycleError(ValidationError):
    def __init__(self, edge: tuple[str, str], cycle: Sequence[str] = ()):
        self.edge = edge
        self.cycle = list(cycle)
        path = " -> ".join(self.cycle) if self.cycle else f"{edge[0]} -> {edge[1]}"
        super().__init__(f"dependency cycle via back edge {edge[0]} -> {edge[1]} ({path})")


class UnknownLibrary(ValidationError):
    def __init__(self, lib_ids: Iterable[str], where: str = ""):
        self.lib_ids = sorted(lib_ids)
        suffix = f" in {where}" if where else ""
        super().__init__(f"unknown library id(s) {self.lib_ids}{suffix}")


class DanglingReference(ValidationError):
    def __init__(self, ref: str, where: str):
        self.ref = ref
        super().__init__(f"{where} references unknown id {ref!r}")


@dataclass(frozen=True)
class LibrarySpec:
    id: str
    size_bytes: int
    install_cost_mops: Number = 0

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValidationError(f"library {self.id}: size_bytes must be > 0")
        if self.install_cost_mops < 0:
            raise ValidationError(f"library {self.id}: install_cost_mops must be >= 0")


@dataclass(frozen=True)
class NodeProfile:
    id: str
    tier: Tier
    capacity_mops: Number
    installed: frozenset[str] = frozenset()
    installable: frozenset[str] = frozenset()
    compute_energy_j_per_mop: Number = 0
    mobile: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tier", Tier(self.tier))
        object.__setattr__(self, "installed", frozenset(self.installed))
        object.__setattr__(self, "installable", frozenset(self.installable))
        if self.capacity_mops <= 0:
            raise ValidationError(f"node {self.id}: capacity_mops must be > 0")
        if self.compute_energy_j_per_mop < 0:
            raise ValidationError(f"node {self.id}: compute energy must be >= 0")
        overlap = self.installed & self.installable
        if overlap:
            raise ValidationError(
                f"node {self.id}: libraries both installed and installable: {sorted(overlap)}"
            )

    @classmethod
    def of_tier(cls, id: str, tier: Tier | str, **kwargs) -> NodeProfile:
        tier = Tier(tier)
        kwargs.setdefault("capacity_mops", DEFAULT_TIER_CAPACITY[tier])
        return cls(id=id, tier=tier, **kwargs)

    def with_installed(self, lib_id: str) -> NodeProfile:
        return NodeProfile(
            id=self.id,
            tier=self.tier,
            capacity_mops=self.capacity_mops,
            installed=self.installed | {lib_id},
            installable=self.installable - {lib_id},
            compute_energy_j_per_mop=self.compute_energy_j_per_mop,
            mobile=self.mobile,
        )


@dataclass(frozen=True)
class TaskDescriptor:
    """A self-describing unit of work.

    ``sources`` names either node ids (sensor or external data held there) or
    upstream task ids whose output this task consumes.
    """

    id: str
    required_libs: frozenset[str] = frozenset()
    demand_mops: Number = 0
    input_bytes: int = 0
    output_bytes: int = 0
    sources: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "required_libs", frozenset(self.required_libs))
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.demand_mops < 0 or self.input_bytes < 0 or self.output_bytes < 0:
            raise ValidationError(f"task {self.id}: demand and byte counts must be >= 0")


@dataclass(frozen=True)
class Job:
    id: str
    tasks: tuple[TaskDescriptor, ...]
    edges: tuple[tuple[str, str], ...]
    sink: str

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"job {self.id}: duplicate task ids")
        known = set(ids)
        for a, b in self.edges:
            for ref in (a, b):
                if ref not in known:
                    raise DanglingReference(ref, f"job {self.id} edge")
        check_acyclic(ids, self.edges)

    def task(self, task_id: str) -> TaskDescriptor:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    @property
    def task_ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def predecessors(self, task_id: str) -> list[str]:
        return [a for a, b in self.edges if b == task_id]

    def successors(self, task_id: str) -> list[str]:
        return [b for a, b in self.edges if a == task_id]

    @property
    def terminals(self) -> list[str]:
        producers = {a for a, _ in self.edges}
        return [t.id for t in self.tasks if t.id not in producers]

    def node_sources(self, task_id: str) -> list[str]:
        """Sources of a task that are nodes rather than upstream tasks."""
        ids = set(self.task_ids)
        return [s for s in self.task(task_id).sources if s not in ids]

    def topological_order(self) -> list[str]:
        return topological_order(self.task_ids, self.edges)


def topological_order(ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> list[str]:
    """Kahn's algorithm; ready tasks are released in declaration order."""
    position = {t: i for i, t in enumerate(ids)}
    indeg = {t: 0 for t in ids}
    succ: dict[str, list[str]] = {t: [] for t in ids}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = sorted((t for t in ids if indeg[t] == 0), key=position.__getitem__)
    order = []
    while ready:
        t = ready.pop(0)
        order.append(t)
        for s in succ[t]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
                ready.sort(key=position.__getitem__)
    return order


def check_acyclic(ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> None:
    """Raise CycleError naming a back edge if ``edges`` contain a cycle."""
    succ: dict[str, list[str]] = {t: [] for t in ids}
    for a, b in edges:
        succ[a].append(b)
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {t: WHITE for t in ids}
    for root in ids:
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(succ[root]))]
        path = [root]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
            elif colour[nxt] == GREY:
                cycle = path[path.index(nxt):] + [nxt]
                raise CycleError((node, nxt), cycle)
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(succ[nxt])))
                path.append(nxt)


@dataclass(frozen=True)
class NodeLoad:
    """Outstanding work on a node against its admission limit (both in Mops)."""

    node_id: str
    limit_mops: Number
    committed_mops: Number = 0

    def __post_init__(self):
        if not 0 <= self.committed_mops <= self.limit_mops:
            raise ValidationError(
                f"node {self.node_id}: committed {self.committed_mops} outside [0, {self.limit_mops}]"
            )

    @classmethod
    def for_node(
        cls,
        node: NodeProfile,
        committed_mops: Number = 0,
        max_outstanding_s: Number = DEFAULT_MAX_OUTSTANDING_S,
    ) -> NodeLoad:
        return cls(node.id, node.capacity_mops * max_outstanding_s, committed_mops)

    @property
    def free_mops(self) -> Number:
        return self.limit_mops - self.committed_mops

    def commit(self, mops: Number) -> NodeLoad:
        return NodeLoad(self.node_id, self.limit_mops, self.committed_mops + mops)

    def release(self, mops: Number) -> NodeLoad:
        return NodeLoad(self.node_id, self.limit_mops, max(0, self.committed_mops - mops))


class _Uninstalled:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNINSTALLED"

    def __bool__(self):
        return False


UNINSTALLED = _Uninstalled()


def scarcity_weight(lib_id: str, fleet: Iterable[NodeProfile]) -> Fraction | _Uninstalled:
    """Reciprocal of the number of nodes with ``lib_id`` installed.

    Installable copies do not count. Returns ``UNINSTALLED`` when no node has it.
    """
    count = sum(1 for n in fleet if lib_id in n.installed)
    if count == 0:
        return UNINSTALLED
    return Fraction(1, count)


def scarcity_weights(fleet: Sequence[NodeProfile]) -> dict[str, Fraction]:
    counts: dict[str, int] = {}
    for n in fleet:
        for lib in n.installed:
            counts[lib] = counts.get(lib, 0) + 1
    return {lib: Fraction(1, c) for lib, c in counts.items()}


@dataclass(frozen=True)
class Accept:
    def __bool__(self):
        return True


@dataclass(frozen=True)
class LackCapability:
    missing: frozenset[str]

    def __bool__(self):
        return False


@dataclass(frozen=True)
class LackCapacity:
    shortfall_mops: Number

    def __bool__(self):
        return False


Admission = Union[Accept, LackCapability, LackCapacity]


def can_accept(
    node: NodeProfile,
    load: NodeLoad,
    task: TaskDescriptor,
    known_libs: Iterable[str] | None = None,
) -> Admission:
    """Admission test a node runs against a self-describing task.

    Capability is checked before capacity, so a node lacking a library reports
    that even if it is also full.
    """
    if known_libs is not None:
        unknown = task.required_libs - set(known_libs)
        if unknown:
            raise UnknownLibrary(unknown, f"task {task.id}")
    missing = task.required_libs - node.installed
    if missing:
        return LackCapability(frozenset(missing))
    shortfall = task.demand_mops - load.free_mops
    if shortfall > 0:
        return LackCapacity(shortfall)
    return Accept()


def feasible_nodes(
    task: TaskDescriptor,
    fleet: Sequence[NodeProfile],
    loads: Mapping[str, NodeLoad],
    weights: Mapping[str, Fraction] | None = None,
) -> list[str]:
    """Ids of nodes that accept ``task``, least specialist penalty first.

    Ties go to the node with the most free capacity, then the smallest id.
    """
    from edgeorch.placement import specialist_penalty

    if weights is None:
        weights = scarcity_weights(fleet)
    ranked = []
    for node in fleet:
        load = loads[node.id]
        if isinstance(can_accept(node, load, task), Accept):
            penalty = specialist_penalty(task, node, fleet, weights=weights)
            ranked.append((penalty, -load.free_mops, node.id))
    ranked.sort()
    return [node_id for _, _, node_id in ranked]

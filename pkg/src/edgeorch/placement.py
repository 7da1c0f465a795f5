"""Task partitioning that keeps rare (specialist) libraries idle.

Capacity is only a constraint here; the objective is the specialist penalty,
so filling generic nodes is free and burning an FFT holder on a moving average
is not.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

from edgeorch.model import (
    Accept,
    Job,
    NodeLoad,
    NodeProfile,
    Number,
    TaskDescriptor,
    can_accept,
    scarcity_weights,
)

BRUTE_FORCE_LIMIT = 10**6


class InfeasiblePairing(ValueError):
    pass


@dataclass(frozen=True)
class PlacementFailure:
    task_ids: tuple[str, ...]

    def __bool__(self):
        return False


@dataclass
class Assignment:
    mapping: dict[str, str]
    committed: dict[str, Number] = field(default_factory=dict)

    def __getitem__(self, task_id: str) -> str:
        return self.mapping[task_id]

    def key(self, order: Sequence[str]) -> tuple[str, ...]:
        return tuple(self.mapping[t] for t in order)


def specialist_penalty(
    task: TaskDescriptor,
    node: NodeProfile,
    fleet: Sequence[NodeProfile],
    weights: Mapping[str, Fraction] | None = None,
) -> Number:
    """demand x sum of scarcity weights of libraries on ``node`` the task leaves unused."""
    if not task.required_libs <= node.installed:
        raise InfeasiblePairing(
            f"task {task.id} needs {sorted(task.required_libs - node.installed)} absent on {node.id}"
        )
    if weights is None:
        weights = scarcity_weights(fleet)
    unused = node.installed - task.required_libs
    return task.demand_mops * sum((weights[lib] for lib in sorted(unused)), Fraction(0))


def total_penalty(job: Job, mapping: Mapping[str, str], fleet: Sequence[NodeProfile],
                  weights: Mapping[str, Fraction] | None = None) -> Number:
    if weights is None:
        weights = scarcity_weights(fleet)
    by_id = {n.id: n for n in fleet}
    return sum(
        (specialist_penalty(t, by_id[mapping[t.id]], fleet, weights) for t in job.tasks),
        Fraction(0),
    )


def _fits(job: Job, mapping: Mapping[str, str], fleet: Sequence[NodeProfile],
          loads: Mapping[str, NodeLoad]) -> bool:
    by_id = {n.id: n for n in fleet}
    extra: dict[str, Number] = {}
    for t in job.tasks:
        node = by_id[mapping[t.id]]
        if not t.required_libs <= node.installed:
            return False
        extra[node.id] = extra.get(node.id, 0) + t.demand_mops
    return all(loads[n].committed_mops + w <= loads[n].limit_mops for n, w in extra.items())


def _committed(job: Job, mapping: Mapping[str, str]) -> dict[str, Number]:
    out: dict[str, Number] = {}
    for t in job.tasks:
        out[mapping[t.id]] = out.get(mapping[t.id], 0) + t.demand_mops
    return out


def greedy_place(
    job: Job,
    fleet: Sequence[NodeProfile],
    loads: Mapping[str, NodeLoad],
    topology=None,
) -> Assignment | PlacementFailure:
    """Place tasks in topological order on the least-penalty feasible node.

    Ties go to the node with the most free capacity, then the smallest id.
    Tasks with no feasible node are collected and reported together.
    """
    if not fleet:
        return PlacementFailure(tuple(job.task_ids))
    weights = scarcity_weights(fleet)
    loads = dict(loads)
    mapping: dict[str, str] = {}
    failed = []
    for task_id in job.topological_order():
        task = job.task(task_id)
        best = None
        for node in fleet:
            load = loads[node.id]
            if not isinstance(can_accept(node, load, task), Accept):
                continue
            rank = (specialist_penalty(task, node, fleet, weights), -load.free_mops, node.id)
            if best is None or rank < best:
                best = rank
        if best is None:
            failed.append(task_id)
            continue
        node_id = best[2]
        mapping[task_id] = node_id
        loads[node_id] = loads[node_id].commit(task.demand_mops)
    if failed:
        return PlacementFailure(tuple(failed))
    return Assignment(mapping, _committed(job, mapping))


def local_search_place(
    initial: Assignment,
    job: Job,
    fleet: Sequence[NodeProfile],
    loads: Mapping[str, NodeLoad],
    budget: int = 1000,
) -> Assignment:
    """Hill-climb over single-task reassignments.

    Each iteration applies the move with the largest strict penalty decrease;
    ties go to the earlier task (topological order) then the smaller node id.
    """
    weights = scarcity_weights(fleet)
    by_id = {n.id: n for n in fleet}
    order = job.topological_order()
    mapping = dict(initial.mapping)
    used = {n.id: loads[n.id].committed_mops for n in fleet}
    for t in job.tasks:
        used[mapping[t.id]] += t.demand_mops
    cost = {
        (t.id, n.id): specialist_penalty(t, n, fleet, weights)
        for t in job.tasks for n in fleet if t.required_libs <= n.installed
    }
    for _ in range(budget):
        best = None
        for task_id in order:
            task = job.task(task_id)
            here = mapping[task_id]
            for node in fleet:
                if node.id == here or (task_id, node.id) not in cost:
                    continue
                if used[node.id] + task.demand_mops > loads[node.id].limit_mops:
                    continue
                gain = cost[(task_id, here)] - cost[(task_id, node.id)]
                if gain > 0 and (best is None or gain > best[0]):
                    best = (gain, task_id, node.id)
        if best is None:
            break
        _, task_id, node_id = best
        demand = job.task(task_id).demand_mops
        used[mapping[task_id]] -= demand
        used[node_id] += demand
        mapping[task_id] = node_id
    assert _fits(job, mapping, list(by_id.values()), loads)
    return Assignment(mapping, _committed(job, mapping))


def brute_force_place(
    job: Job,
    fleet: Sequence[NodeProfile],
    loads: Mapping[str, NodeLoad],
    topology=None,
) -> Assignment | PlacementFailure:
    """Exhaustive minimum-penalty placement (test oracle).

    Among optimal mappings the lexicographically smallest node-id tuple, in
    topological task order, wins.
    """
    order = job.topological_order()
    nodes = sorted(n.id for n in fleet)
    if len(nodes) ** len(order) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{len(nodes)}^{len(order)} mappings exceed the brute-force limit")
    weights = scarcity_weights(fleet)
    best = None
    for combo in itertools.product(nodes, repeat=len(order)):
        mapping = dict(zip(order, combo))
        if not _fits(job, mapping, fleet, loads):
            continue
        rank = (total_penalty(job, mapping, fleet, weights), combo)
        if best is None or rank < best:
            best = rank
    if best is None:
        by_id = {n.id: n for n in fleet}
        stuck = tuple(
            t.id for t in job.tasks
            if not any(
                isinstance(can_accept(by_id[n], loads[n], t), Accept) for n in nodes
            )
        )
        return PlacementFailure(stuck or tuple(order))
    mapping = dict(zip(order, best[1]))
    return Assignment(mapping, _committed(job, mapping))

"""Data flows implied by a placement and their energy/latency-optimal routes."""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum

from edgeorch.model import Job, Number
from edgeorch.network import (
    Route,
    RoutingError,
    Topology,
    Unreachable,
    cheapest_route,
    transfer_energy,
    transfer_latency,
)


class FlowCause(str, Enum):
    SENSOR_INPUT = "sensor-input"
    INTER_TASK = "inter-task"
    RESULT_RETURN = "result-return"
    LIB_DELIVERY = "lib-delivery"


@dataclass(frozen=True)
class Flow:
    src: str
    dst: str
    payload_bytes: int
    cause: FlowCause
    # What the flow carries: task id, "producer>consumer", or "lib@node".
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "cause", FlowCause(self.cause))
        if self.payload_bytes < 0:
            raise ValueError("payload must be >= 0")

    @property
    def local(self) -> bool:
        return self.src == self.dst

    def __str__(self):
        return f"{self.cause.value}:{self.tag}:{self.src}->{self.dst}"


class UnroutableFlow(RoutingError):
    def __init__(self, flow: Flow):
        self.flow = flow
        super().__init__(f"no route for flow {flow}")


@dataclass(frozen=True)
class RoutedFlow:
    flow: Flow
    route: Route
    energy_j: Number
    latency_s: Number


@dataclass(frozen=True)
class CommsPlan:
    routed: tuple[RoutedFlow, ...]
    alpha: Number
    beta: Number

    @property
    def energy_j(self) -> Number:
        return sum((r.energy_j for r in self.routed), 0)

    @property
    def latency_s(self) -> Number:
        return sum((r.latency_s for r in self.routed), 0)

    @property
    def cost(self) -> Number:
        return self.alpha * self.energy_j + self.beta * self.latency_s

    def route_of(self, flow: Flow) -> Route:
        for r in self.routed:
            if r.flow == flow:
                return r.route
        raise KeyError(str(flow))

    def latency_of(self, flow: Flow) -> Number:
        for r in self.routed:
            if r.flow == flow:
                return r.latency_s
        raise KeyError(str(flow))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("flow", "cause", "src", "dst", "bytes", "route", "energy_j", "latency_s"))
        for r in self.routed:
            w.writerow((r.flow.tag, r.flow.cause.value, r.flow.src, r.flow.dst, r.flow.payload_bytes,
                        str(r.route), repr(float(r.energy_j)), repr(float(r.latency_s))))
        return buf.getvalue()


def split_bytes(total: int, parts: int) -> list[int]:
    """Split ``total`` as evenly as possible; earlier parts take the remainder."""
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def derive_flows(job: Job, assignment: Mapping[str, str], topology: Topology | None = None) -> list[Flow]:
    """All flows a placement implies, in a deterministic order.

    A task's ``input_bytes`` are shared across its node sources; upstream tasks
    contribute their ``output_bytes``. Terminal outputs return to the sink.
    Co-located endpoints yield local flows, which cost nothing.
    """
    mapping = getattr(assignment, "mapping", assignment)
    flows: list[Flow] = []
    for task_id in job.topological_order():
        task = job.task(task_id)
        host = mapping[task_id]
        node_sources = job.node_sources(task_id)
        if node_sources:
            for src, share in zip(node_sources, split_bytes(task.input_bytes, len(node_sources))):
                flows.append(Flow(src, host, share, FlowCause.SENSOR_INPUT, f"{task_id}<{src}"))
        for pred in job.predecessors(task_id):
            flows.append(Flow(mapping[pred], host, job.task(pred).output_bytes,
                              FlowCause.INTER_TASK, f"{pred}>{task_id}"))
    for task_id in job.terminals:
        flows.append(Flow(mapping[task_id], job.sink, job.task(task_id).output_bytes,
                          FlowCause.RESULT_RETURN, f"{task_id}>sink"))
    return flows


def route_flow(flow: Flow, topology: Topology, alpha: Number, beta: Number,
               route: Route | None = None) -> RoutedFlow:
    if flow.local:
        route = Route.local(flow.src)
    elif route is None:
        found = cheapest_route(topology, flow.src, flow.dst, flow.payload_bytes, alpha, beta)
        if isinstance(found, Unreachable):
            raise UnroutableFlow(flow)
        route = found
    return RoutedFlow(flow, route, transfer_energy(route, flow.payload_bytes),
                      transfer_latency(route, flow.payload_bytes))


def optimize_routes(flows: Iterable[Flow], topology: Topology, alpha: Number = 1,
                    beta: Number = 1) -> CommsPlan:
    """Route every flow on its own cheapest path; flows do not share bandwidth here."""
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ValueError("alpha and beta must be >= 0 and not both zero")
    return CommsPlan(tuple(route_flow(f, topology, alpha, beta) for f in flows), alpha, beta)


def comms_cost(assignment: Mapping[str, str], job: Job, topology: Topology, alpha: Number = 1,
               beta: Number = 1) -> tuple[Number, CommsPlan]:
    plan = optimize_routes(derive_flows(job, assignment, topology), topology, alpha, beta)
    return plan.cost, plan

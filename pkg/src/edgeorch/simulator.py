"""Deterministic discrete-event execution of plans over a topology.

One heap of ``(time, sequence, kind, payload)`` drives everything: sensor
emissions, per-hop link transmissions, CPU work, library installs, adverts,
churn and job arrivals. Links and CPUs are FIFO single servers. Every energy
expenditure is written to the audit log as it happens, so the metric total
can be re-derived from the log alone.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

from edgeorch.comms import FlowCause, split_bytes
from edgeorch.model import Job, Tier
from edgeorch.network import Link, Route, Unreachable, cheapest_route, transfer_latency
from edgeorch.orchestrator import (
    ControlLayer,
    JobProgress,
    JobResult,
    NodeJoin,
    NodeLeave,
    OrchestrationFailure,
    Plan,
    TaskRecord,
    reconstruct_results,
)
from edgeorch.protocol import (
    Advert,
    CapabilityAdvert,
    LibDeliver,
    LibInstalled,
    LibRequest,
    TaskAssign,
    TaskResult,
    TraceRecord,
    trace_csv,
)
from edgeorch.scenario import Scenario, ScenarioInvalid

AUDIT_HEADER = ("time", "event", "subject", "node", "energy_j", "bytes")


class Strategy(str, Enum):
    CENTRAL = "central"
    EDGE = "edge"


class SimulationError(RuntimeError):
    def __init__(self, message: str, audit: str):
        super().__init__(message)
        self.audit = audit


IDLE = None


def link_serialize(link: Link, arrivals: Sequence[tuple[float, float]]) -> list[float]:
    """FIFO delivery times for ``(ready_time, bytes)`` flows sharing one link.

    A flow transmits once the link is free and it is ready; propagation delay
    does not hold the link.
    """
    free = -math.inf
    out = []
    for ready, nbytes in arrivals:
        start = max(ready, free)
        free = start + nbytes / link.bandwidth_bps
        out.append(free + link.prop_delay_s)
    return out


@dataclass
class Metrics:
    strategy: str
    seed: int
    sim_time_s: float
    total_energy_j: float = 0.0
    transport_energy_j: float = 0.0
    compute_energy_j: float = 0.0
    job_makespans: dict[str, float] = field(default_factory=dict)
    mean_makespan_s: float | None = None
    jobs_completed: int = 0
    jobs_incomplete: list[str] = field(default_factory=list)
    utilization: dict[str, float] = field(default_factory=dict)
    tier_utilization: dict[str, float] = field(default_factory=dict)
    link_bytes: dict[str, int] = field(default_factory=dict)
    backbone_bytes: int = 0
    control_bytes: int = 0
    raw_sensor_bytes: int = 0
    model_latency_error_s: float = 0.0
    task_executions: int = 0
    task_reexecutions: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Metrics:
        return cls(**json.loads(text))


@dataclass
class _Transfer:
    id: int
    kind: str  # "data" | "advert"
    tag: str
    cause: str
    nodes: tuple[str, ...]
    payload: int
    started: float
    estimate: float
    job_id: str | None = None
    lib_id: str | None = None
    source: str | None = None
    advert: CapabilityAdvert | None = None
    hop: int = 0
    alive: bool = True

    @property
    def origin(self) -> str:
        return self.nodes[0]

    @property
    def dst(self) -> str:
        return self.nodes[-1]

    @property
    def subject(self) -> str:
        return f"{self.job_id}/{self.tag}" if self.job_id else self.tag


@dataclass
class _TaskRun:
    job_id: str
    task_id: str
    host: str
    status: str = "pending"  # pending | queued | running | executed
    inputs: set[str] = field(default_factory=set)
    exec_host: str | None = None
    start: float = 0.0
    end: float = 0.0
    executions: int = 0


@dataclass
class _JobRun:
    job: Job
    arrival: float
    plan: Plan | None = None
    tasks: dict[str, _TaskRun] = field(default_factory=dict)
    results: dict[str, float] = field(default_factory=dict)
    watermark: dict[str, int] = field(default_factory=dict)
    parked: bool = False
    complete: bool = False


@dataclass
class _Work:
    kind: str  # "task" | "install"
    node: str
    mops: float
    job_id: str | None = None
    task_id: str | None = None
    lib_id: str | None = None
    started: float = 0.0


class Simulator:
    def __init__(self, scenario: Scenario, strategy: Strategy | str = Strategy.EDGE, seed: int = 0):
        self.sc = scenario
        self.strategy = Strategy(strategy)
        self.seed = seed
        self.now = 0.0
        self.horizon = scenario.horizon_s
        self._heap: list = []
        self._seq = 0
        self._tid = 0
        self.audit: list[tuple] = []
        self.trace: list[TraceRecord] = []
        self.topology = scenario.topology
        self.central = scenario.topology.control
        self.active = set(scenario.nodes)
        self.profiles = dict(scenario.nodes)
        self.installed = {n: set(p.installed) for n, p in scenario.nodes.items()}
        self.link_free: dict[str, float] = {}
        self.transfers: dict[int, _Transfer] = {}
        self.inflight: dict[tuple, int] = {}
        self.blocked: set[tuple] = set()
        self.cpu_queue = {n: deque() for n in scenario.nodes}
        self.cpu_current: dict[str, _Work | None] = {n: None for n in scenario.nodes}
        self.busy = {n: 0.0 for n in scenario.nodes}
        self.installing: set[tuple[str, str]] = set()
        self.adv_seq = {n: 0 for n in scenario.nodes}
        self.seen: dict[str, set] = {n: set() for n in scenario.nodes}
        self.jobs: dict[str, _JobRun] = {}
        self.results: dict[str, JobResult] = {}
        self.sensor_nodes = {s.node for s in scenario.sensors}
        self.emitted: dict[str, int] = {n: 0 for n in self.sensor_nodes}
        self.streamed: dict[str, int] = {n: 0 for n in self.sensor_nodes}
        self.control = ControlLayer(
            scenario.nodes, scenario.topology, scenario.libraries,
            weights=scenario.weights, alpha=scenario.alpha, beta=scenario.beta,
            control_repo=scenario.flags.control_repo, stale_after=scenario.flags.stale_after_s,
            max_outstanding_s=scenario.flags.max_outstanding_s, budget=scenario.flags.budget,
        )
        self.metrics = Metrics(self.strategy.value, seed, self.horizon)
        backbone = {l.key for l in scenario.topology.incident(self.central)}
        self._backbone_links = backbone
        self._park_retry_pending = False
        self._schedule_initial()

    # event plumbing

    def _push(self, time: float, kind: str, payload: Any = None) -> None:
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def _log(self, event: str, subject: str = "", node: str = "", energy: float = 0.0,
             nbytes: int = 0) -> None:
        self.audit.append((self.now, event, subject, node, energy, nbytes))
        if energy:
            self.metrics.total_energy_j += energy

    def _schedule_initial(self) -> None:
        sc = self.sc
        self._push(0.0, "AdvertTick")
        for s in sc.sensors:
            for k, t in enumerate(s.emission_times()):
                self._push(t, "SensorEmit", (s.node, s.bytes, k))
        for ja in sc.jobs:
            self._push(ja.arrival_s, "JobArrival", ja)
        self.inject_churn(sc.churn)

    def inject_churn(self, script: Iterable) -> list[tuple[float, str, str]]:
        """Queue join/leave events; only mobile scenario nodes may churn."""
        queued = []
        for step in script:
            node = step.node
            if node not in self.profiles:
                raise ScenarioInvalid([f"churn references unknown node {node!r}"])
            if not self.profiles[node].mobile:
                raise ScenarioInvalid([f"churn on non-mobile node {node!r}"])
            kind = "NodeLeave" if step.action == "leave" else "NodeJoin"
            self._push(step.time_s, kind, node)
            queued.append((step.time_s, kind, node))
        return queued

    def step(self):
        """Process the earliest event; return it, or ``IDLE`` when nothing is left."""
        if not self._heap or self._heap[0][0] > self.horizon:
            return IDLE
        time, seq, kind, payload = heapq.heappop(self._heap)
        if time < self.now:
            raise SimulationError(f"clock went backwards at {kind}", self.audit_csv())
        self.now = time
        try:
            getattr(self, f"_on_{kind}")(payload)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(f"handler {kind} failed at t={time}: {exc!r}", self.audit_csv()) from exc
        return (time, seq, kind, payload)

    def run(self) -> Metrics:
        while self.step() is not IDLE:
            pass
        self.now = max(self.now, self.horizon)
        self._finalise()
        return self.metrics

    # sensors and streams

    def _on_SensorEmit(self, payload) -> None:
        node, nbytes, k = payload
        self.emitted[node] += 1
        self.metrics.raw_sensor_bytes += nbytes
        self._log("SensorEmit", f"{node}:{k}", node, 0.0, nbytes)
        if self.strategy is Strategy.CENTRAL and node in self.active:
            self._send_data(f"stream:{node}:{k}", FlowCause.SENSOR_INPUT.value, node, self.central,
                            nbytes, source=node)

    # transfers

    def _route(self, src: str, dst: str, nbytes: int, preferred: Route | None = None):
        if src == dst:
            return (src,)
        if preferred is not None and preferred.src == src and preferred.dst == dst \
                and all(n in self.active for n in preferred.nodes):
            return preferred.nodes
        topo = self.topology.without(set(self.profiles) - self.active)
        found = cheapest_route(topo, src, dst, nbytes, self.sc.alpha, self.sc.beta)
        if isinstance(found, Unreachable):
            return None
        return found.nodes

    def _send_data(self, tag: str, cause: str, src: str, dst: str, nbytes: int, *,
                   job_id: str | None = None, lib_id: str | None = None, source: str | None = None,
                   preferred: Route | None = None) -> bool:
        key = (job_id, tag, dst)
        if key in self.inflight:
            return True
        nodes = self._route(src, dst, nbytes, preferred)
        if nodes is None:
            if key not in self.blocked:
                self.blocked.add(key)
                self._log("FlowBlocked", f"{job_id}/{tag}" if job_id else tag, src)
            return False
        self.blocked.discard(key)
        route = Route(nodes, tuple(self.topology.link(a, b) for a, b in zip(nodes, nodes[1:])))
        tr = _Transfer(self._tid, "data", tag, cause, nodes, nbytes, self.now,
                       float(transfer_latency(route, nbytes)), job_id, lib_id, source)
        self._tid += 1
        self.transfers[tr.id] = tr
        self.inflight[key] = tr.id
        if len(nodes) == 1:
            self._deliver(tr)
        else:
            self._send_hop(tr)
        return True

    def _send_hop(self, tr: _Transfer) -> None:
        a, b = tr.nodes[tr.hop], tr.nodes[tr.hop + 1]
        link = self.topology.link(a, b)
        start = max(self.now, self.link_free.get(link.key, -math.inf))
        serial = tr.payload / link.bandwidth_bps
        self.link_free[link.key] = start + serial
        energy = tr.payload * link.energy_j_per_byte
        self.metrics.transport_energy_j += energy
        self.metrics.link_bytes[link.key] = self.metrics.link_bytes.get(link.key, 0) + tr.payload
        if tr.kind == "advert":
            self.metrics.control_bytes += tr.payload
        elif link.key in self._backbone_links:
            self.metrics.backbone_bytes += tr.payload
        self._log("LinkTx", tr.subject, link.key, energy, tr.payload)
        self._push(start + serial + link.prop_delay_s, "HopArrive", tr.id)

    def _on_HopArrive(self, tid: int) -> None:
        tr = self.transfers.get(tid)
        if tr is None or not tr.alive:
            return
        tr.hop += 1
        if tr.hop == len(tr.nodes) - 1:
            self._deliver(tr)
        else:
            self._send_hop(tr)

    def _deliver(self, tr: _Transfer) -> None:
        self.transfers.pop(tr.id, None)
        if tr.kind == "advert":
            self._advert_arrived(tr)
            return
        self.inflight.pop((tr.job_id, tr.tag, tr.dst), None)
        if len(tr.nodes) > 1:
            self.metrics.model_latency_error_s += (self.now - tr.started) - tr.estimate
        self._log("FlowDelivered", tr.subject, tr.dst, 0.0, tr.payload)
        if tr.tag.startswith("stream:"):
            self.streamed[tr.source] += 1
            self._reconcile_all()
            return
        if tr.lib_id is not None:
            self.trace.append(TraceRecord(self.now, tr.origin, tr.dst, LibDeliver(tr.lib_id, tr.payload)))
            self._lib_arrived(tr.dst, tr.lib_id)
            return
        run = self.jobs.get(tr.job_id)
        if run is None or run.complete:
            return
        if tr.cause == FlowCause.RESULT_RETURN.value:
            task_id = tr.tag.split(">", 1)[0]
            self.trace.append(TraceRecord(self.now, tr.origin, tr.dst, TaskResult(task_id, tr.payload)))
            if task_id not in run.results:
                run.results[task_id] = self.now
            self._check_job(run)
            return
        consumer = tr.tag.split("<", 1)[0] if "<" in tr.tag else tr.tag.split(">", 1)[1]
        t = run.tasks[consumer]
        if t.host == tr.dst and t.status == "pending":
            t.inputs.add(tr.tag)
            self._try_start(run, t)

    # adverts and gossip

    def _on_AdvertTick(self, _payload) -> None:
        for node in sorted(self.active):
            self._advertise(node)
        nxt = self.now + self.sc.flags.advert_period_s
        if nxt <= self.horizon:
            self._push(nxt, "AdvertTick")

    def _outstanding(self, node: str) -> float:
        total = sum(w.mops for w in self.cpu_queue[node])
        cur = self.cpu_current[node]
        if cur is not None:
            done = (self.now - cur.started) * self.profiles[node].capacity_mops
            total += max(0.0, cur.mops - done)
        return total

    def _advertise(self, node: str) -> None:
        if node not in self.active:
            return
        self.adv_seq[node] += 1
        prof = self.profiles[node]
        limit = prof.capacity_mops * self.sc.flags.max_outstanding_s
        installable = set(prof.installable) - self.installed[node]
        advert = CapabilityAdvert(node, self.adv_seq[node], max(0.0, limit - self._outstanding(node)),
                                  frozenset(self.installed[node]), frozenset(installable),
                                  self.sc.flags.ttl)
        self.seen[node].add(advert.key)
        if node == self.central:
            self._control_advert(advert)
        self._forward_advert(node, advert, exclude=None)

    def _forward_advert(self, node: str, advert: CapabilityAdvert, exclude: str | None) -> None:
        if advert.ttl <= 0:
            return
        copy = advert.hop()
        for nb in self.topology.neighbors(node):
            if nb == exclude or nb not in self.active:
                continue
            tr = _Transfer(self._tid, "advert", f"advert:{advert.node_id}:{advert.seq_no}", "advert",
                           (node, nb), copy.size_bytes, self.now, 0.0, advert=copy)
            self._tid += 1
            self.transfers[tr.id] = tr
            self._send_hop(tr)

    def _advert_arrived(self, tr: _Transfer) -> None:
        node = tr.dst
        if node not in self.active:
            return
        self.trace.append(TraceRecord(self.now, tr.origin, node, Advert(tr.advert)))
        if tr.advert.key in self.seen[node]:
            return
        self.seen[node].add(tr.advert.key)
        if node == self.central:
            self._control_advert(tr.advert)
        self._forward_advert(node, tr.advert, exclude=tr.origin)

    def _control_advert(self, advert: CapabilityAdvert) -> None:
        if self.control.on_advert(advert, self.now) and self.control.parked:
            self._retry_parked()

    # jobs

    def _on_JobArrival(self, ja) -> None:
        job = ja.job
        run = _JobRun(job, self.now)
        self.jobs[job.id] = run
        self._log("JobArrival", job.id, job.sink)
        if self.strategy is Strategy.CENTRAL:
            run.watermark = {s: self.emitted[s] for s in self.sensor_nodes}
        self._plan_job(run)

    def _plan_job(self, run: _JobRun) -> bool:
        job = run.job
        prog = self._progress(run)
        try:
            if self.strategy is Strategy.CENTRAL:
                plan = self.control.central_plan(job, self.now, finished=prog.executed,
                                                 settled=prog.settled_flows)
            elif run.plan is None:
                plan = self.control.plan(job, self.now)
            else:
                pinned = {t.task_id: t.host for t in run.tasks.values()
                          if t.host in self.active and t.status != "executed"}
                pinned.update({t: run.tasks[t].exec_host for t in prog.executed})
                plan = self.control.plan(job, self.now, pinned=pinned, finished=prog.executed,
                                         settled=prog.settled_flows)
        except OrchestrationFailure as exc:
            self._park(run, str(exc))
            return False
        self._apply_plan(run, plan)
        return True

    def _park(self, run: _JobRun, why: str) -> None:
        run.parked = True
        self.control.park(run.job.id, why)
        self._log("JobParked", run.job.id, "", 0.0, 0)
        if not self._park_retry_pending:
            self._park_retry_pending = True
            self._push(self.now + self.sc.flags.park_retry_s, "ParkRetry")

    def _on_ParkRetry(self, _payload) -> None:
        self._park_retry_pending = False
        self._retry_parked()

    def _retry_parked(self) -> None:
        for job_id in sorted(self.control.parked):
            run = self.jobs[job_id]
            self.control.unpark(job_id)
            run.parked = False
            if self._plan_job(run):
                self._log("JobUnparked", job_id)
        self._reconcile_all()

    def _apply_plan(self, run: _JobRun, plan: Plan) -> None:
        run.plan = plan
        for task_id, host in plan.assignment.mapping.items():
            t = run.tasks.get(task_id)
            if t is None:
                run.tasks[task_id] = _TaskRun(run.job.id, task_id, host)
                self.trace.append(TraceRecord(self.now, self.central, host, TaskAssign(task_id, host)))
            elif t.status != "executed" and t.host != host:
                t.host = host
                t.inputs.clear()
                self._log("TaskReplanned", f"{run.job.id}/{task_id}", host)
                self.trace.append(TraceRecord(self.now, self.central, host, TaskAssign(task_id, host)))
        self._log("JobPlanned", run.job.id, "", 0.0, 0)
        self._reconcile(run)

    def _progress(self, run: _JobRun) -> JobProgress:
        executed = {t.task_id for t in run.tasks.values() if t.status == "executed"}
        settled = set()
        job = run.job
        for t in run.tasks.values():
            if t.status == "executed" or (t.host in self.active and t.status != "executed"):
                settled.update(t.inputs)
            if t.status == "executed":
                for src in job.node_sources(t.task_id):
                    settled.add(f"{t.task_id}<{src}")
                for pred in job.predecessors(t.task_id):
                    settled.add(f"{pred}>{t.task_id}")
        settled.update(f"{tid}>sink" for tid in run.results)
        return JobProgress(executed, settled)

    def _needs_output(self, run: _JobRun, task_id: str) -> bool:
        job = run.job
        if task_id in job.terminals and task_id not in run.results:
            return True
        return any(run.tasks[s].status != "executed" for s in job.successors(task_id))

    def _reconcile_all(self) -> None:
        for job_id in sorted(self.jobs):
            run = self.jobs[job_id]
            if not run.complete and not run.parked and run.plan is not None:
                self._reconcile(run)

    def _reconcile(self, run: _JobRun) -> None:
        """Start whatever transfers and installs the job's current state still lacks."""
        job = run.job
        plan = run.plan
        for task_id in job.topological_order():
            t = run.tasks[task_id]
            if t.status == "executed":
                if task_id in job.terminals and task_id not in run.results \
                        and t.exec_host in self.active:
                    task = job.task(task_id)
                    self._send_data(f"{task_id}>sink", FlowCause.RESULT_RETURN.value, t.exec_host,
                                    job.sink, task.output_bytes, job_id=job.id,
                                    preferred=self._planned_route(plan, f"{task_id}>sink"))
                continue
            if t.host not in self.active or t.status != "pending":
                continue
            task = job.task(task_id)
            sources = job.node_sources(task_id)
            for src, share in zip(sources, split_bytes(task.input_bytes, len(sources)) if sources else []):
                tag = f"{task_id}<{src}"
                if tag in t.inputs or self._stream_fed(src):
                    continue
                if src in self.active:
                    self._send_data(tag, FlowCause.SENSOR_INPUT.value, src, t.host, share, job_id=job.id,
                                    preferred=self._planned_route(plan, tag))
            for pred in job.predecessors(task_id):
                tag = f"{pred}>{task_id}"
                p = run.tasks[pred]
                if tag in t.inputs or p.status != "executed" or p.exec_host not in self.active:
                    continue
                self._send_data(tag, FlowCause.INTER_TASK.value, p.exec_host, t.host,
                                job.task(pred).output_bytes, job_id=job.id,
                                preferred=self._planned_route(plan, tag))
            for lib in sorted(task.required_libs - self.installed[t.host]):
                self._ensure_lib(t.host, lib, plan)
            self._try_start(run, t)

    def _planned_route(self, plan: Plan | None, tag: str) -> Route | None:
        if plan is None:
            return None
        for r in plan.comms.routed:
            if r.flow.tag == tag:
                return r.route
        return None

    def _stream_fed(self, src: str) -> bool:
        return self.strategy is Strategy.CENTRAL and src in self.sensor_nodes

    def _streamed_input(self, run: _JobRun, src: str) -> bool:
        return self._stream_fed(src) and self.streamed[src] >= run.watermark.get(src, 0)

    def _inputs_ready(self, run: _JobRun, t: _TaskRun) -> bool:
        job = run.job
        for src in job.node_sources(t.task_id):
            tag = f"{t.task_id}<{src}"
            if tag not in t.inputs and not self._streamed_input(run, src):
                return False
        return all(f"{p}>{t.task_id}" in t.inputs for p in job.predecessors(t.task_id))

    def _try_start(self, run: _JobRun, t: _TaskRun) -> None:
        if t.status != "pending" or t.host not in self.active:
            return
        task = run.job.task(t.task_id)
        if not task.required_libs <= self.installed[t.host]:
            return
        if not self._inputs_ready(run, t):
            return
        t.status = "queued"
        self.cpu_queue[t.host].append(_Work("task", t.host, task.demand_mops, run.job.id, t.task_id))
        self._cpu_kick(t.host)

    # libraries

    def _ensure_lib(self, node: str, lib: str, plan: Plan | None) -> None:
        if lib in self.installed[node] or (node, lib) in self.installing:
            return
        tag = f"lib:{lib}@{node}"
        if (None, tag, node) in self.inflight:
            return
        source, route = None, None
        if plan is not None:
            for p in plan.provisions:
                if p.target == node and p.lib_id == lib and p.source in self.active:
                    source, route = p.source, p.route
        if source is None:
            ctx = self.control.context(self.now, set(self.control.eligible(self.now)) | {node})
            found = ctx.provision(node, lib)
            if not found:
                self._log("ProvisionBlocked", tag, node)
                return
            source, route = found.source, found.route
        self.trace.append(TraceRecord(self.now, node, source, LibRequest(node, lib)))
        self._send_data(tag, FlowCause.LIB_DELIVERY.value, source, node,
                        self.sc.libraries[lib].size_bytes, lib_id=lib, preferred=route)

    def _lib_arrived(self, node: str, lib: str) -> None:
        if node not in self.active or lib in self.installed[node] or (node, lib) in self.installing:
            return
        self.installing.add((node, lib))
        self.cpu_queue[node].append(_Work("install", node, self.sc.libraries[lib].install_cost_mops,
                                          lib_id=lib))
        self._cpu_kick(node)

    # CPU

    def _cpu_kick(self, node: str) -> None:
        if self.cpu_current[node] is not None or not self.cpu_queue[node] or node not in self.active:
            return
        work = self.cpu_queue[node].popleft()
        work.started = self.now
        self.cpu_current[node] = work
        if work.kind == "task":
            run = self.jobs[work.job_id]
            t = run.tasks[work.task_id]
            t.status = "running"
            t.start = self.now
            self._log("TaskStart", f"{work.job_id}/{work.task_id}", node)
        else:
            self._log("LibInstallStart", work.lib_id, node)
        self._push(self.now + work.mops / self.profiles[node].capacity_mops, "CpuDone", (node, work))

    def _on_CpuDone(self, payload) -> None:
        node, work = payload
        if self.cpu_current.get(node) is not work:
            return
        self.cpu_current[node] = None
        self.busy[node] += self.now - work.started
        energy = work.mops * self.profiles[node].compute_energy_j_per_mop
        self.metrics.compute_energy_j += energy
        if work.kind == "task":
            run = self.jobs[work.job_id]
            t = run.tasks[work.task_id]
            t.status = "executed"
            t.exec_host = node
            t.end = self.now
            t.executions += 1
            self.metrics.task_executions += 1
            if t.executions > 1:
                self.metrics.task_reexecutions += 1
            self.control.release(node, work.mops)
            self._log("TaskExecuted", f"{work.job_id}/{work.task_id}", node, energy)
            self._reconcile(run)
        else:
            self.installing.discard((node, work.lib_id))
            self.installed[node].add(work.lib_id)
            self.control.install_done(node, work.lib_id)
            self._log("LibInstalled", work.lib_id, node, energy)
            self.trace.append(TraceRecord(self.now, node, self.central, LibInstalled(node, work.lib_id)))
            if self.sc.flags.advert_on_change:
                self._advertise(node)
            self._reconcile_all()
        self._cpu_kick(node)

    # completion

    def _check_job(self, run: _JobRun) -> None:
        if run.complete or any(t not in run.results for t in run.job.terminals):
            return
        records = {
            t.task_id: TaskRecord(t.task_id, t.exec_host, t.start, t.end,
                                  run.job.task(t.task_id).output_bytes, run.results.get(t.task_id))
            for t in run.tasks.values()
        }
        result = reconstruct_results(run.job, records)
        run.complete = True
        self.results[run.job.id] = result
        for task_id, host, _start, _end in result.audit:
            self._log("TaskComplete", f"{run.job.id}/{task_id}", host)
        makespan = result.completion_time - run.arrival
        self.metrics.job_makespans[run.job.id] = makespan
        self._log("JobComplete", run.job.id, run.job.sink)

    # churn

    def _on_NodeLeave(self, node: str) -> None:
        if node not in self.active:
            return
        self.active.discard(node)
        self._log("NodeLeave", node, node)
        cur = self.cpu_current[node]
        if cur is not None:
            elapsed = self.now - cur.started
            done = min(cur.mops, elapsed * self.profiles[node].capacity_mops)
            energy = done * self.profiles[node].compute_energy_j_per_mop
            self.metrics.compute_energy_j += energy
            self.busy[node] += elapsed
            subject = f"{cur.job_id}/{cur.task_id}" if cur.kind == "task" else cur.lib_id
            self._log("TaskAbort" if cur.kind == "task" else "LibInstallAbort", subject, node, energy)
            self.cpu_current[node] = None
        for work in [cur, *self.cpu_queue[node]]:
            if work is not None and work.kind == "task":
                self.jobs[work.job_id].tasks[work.task_id].status = "pending"
        self.cpu_queue[node].clear()
        self.installing = {(n, l) for n, l in self.installing if n != node}
        for tid in sorted(self.transfers):
            tr = self.transfers[tid]
            if tr.alive and node in tr.nodes[tr.hop:]:
                tr.alive = False
                del self.transfers[tid]
                if tr.kind == "data":
                    self.inflight.pop((tr.job_id, tr.tag, tr.dst), None)
                    self._log("FlowDropped", tr.subject, node, 0.0, tr.payload)
        for job_id in sorted(self.jobs):
            run = self.jobs[job_id]
            if run.complete:
                continue
            changed = True
            while changed:
                changed = False
                for t in run.tasks.values():
                    if t.status == "executed" and t.exec_host not in self.active \
                            and self._needs_output(run, t.task_id):
                        t.status = "pending"
                        t.inputs.clear()
                        t.exec_host = None
                        self._log("TaskOutputLost", f"{job_id}/{t.task_id}", node)
                        changed = True
            for t in run.tasks.values():
                if t.host == node and t.status != "executed":
                    t.inputs.clear()
        plans = {j: r.plan for j, r in self.jobs.items() if r.plan is not None and not r.complete
                 and not r.parked}
        progress = {j: self._progress(self.jobs[j]) for j in plans}
        for j in plans:
            run = self.jobs[j]
            # Tasks whose output was lost need a host again even if it is still up.
            lost = [t.task_id for t in run.tasks.values()
                    if t.status == "pending" and t.exec_host is None and t.executions > 0]
            if lost:
                progress[j].executed -= set(lost)
        revised = self.control.handle_churn(NodeLeave(node, self.now), plans, progress,
                                            {j: self.jobs[j].job for j in plans}, self.now)
        for job_id in sorted(revised):
            run = self.jobs[job_id]
            outcome = revised[job_id]
            if isinstance(outcome, OrchestrationFailure):
                self._park(run, str(outcome))
            else:
                self._apply_plan(run, outcome)
        self._reconcile_all()

    def _on_NodeJoin(self, node: str) -> None:
        if node in self.active:
            return
        self.active.add(node)
        self._log("NodeJoin", node, node)
        self.control.handle_churn(NodeJoin(node, self.now), {}, {}, {}, self.now)
        self._advertise(node)
        self._reconcile_all()

    # output

    def _finalise(self) -> None:
        m = self.metrics
        for n, work in self.cpu_current.items():
            if work is not None:
                self.busy[n] += max(0.0, self.horizon - work.started)
        span = self.horizon if self.horizon > 0 else 1.0
        m.utilization = {n: self.busy[n] / span for n in sorted(self.busy)}
        tiers: dict[str, list[float]] = {}
        for n, p in sorted(self.profiles.items()):
            tiers.setdefault(Tier(p.tier).value, []).append(m.utilization[n])
        m.tier_utilization = {t: sum(v) / len(v) for t, v in sorted(tiers.items())}
        m.link_bytes = dict(sorted(m.link_bytes.items()))
        m.job_makespans = dict(sorted(m.job_makespans.items()))
        m.jobs_completed = len(m.job_makespans)
        m.jobs_incomplete = sorted(j for j, r in self.jobs.items() if not r.complete)
        if m.job_makespans:
            m.mean_makespan_s = sum(m.job_makespans.values()) / len(m.job_makespans)

    def audit_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        for time, event, subject, node, energy, nbytes in self.audit:
            w.writerow((repr(float(time)), event, subject, node, repr(float(energy)), nbytes))
        return buf.getvalue()

    def messages_csv(self) -> str:
        return trace_csv(self.trace)

    def plans(self) -> dict[str, Plan]:
        return {j: r.plan for j, r in sorted(self.jobs.items()) if r.plan is not None}


def run(scenario: Scenario, strategy: Strategy | str = Strategy.EDGE, seed: int = 0) -> tuple[Metrics, str]:
    """Simulate ``scenario``; returns metrics and the audit log as CSV text."""
    sim = Simulator(scenario, strategy, seed)
    metrics = sim.run()
    return metrics, sim.audit_csv()


def resum_energy(audit_csv: str) -> float:
    """Independent total of the energy column of an audit log."""
    rows = csv.DictReader(io.StringIO(audit_csv))
    return math.fsum(float(r["energy_j"]) for r in rows)

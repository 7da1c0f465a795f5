"""Joint placement, routing and library provisioning; job intake and result assembly."""

from __future__ import annotations

import csv
import io
import itertools
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Union

from edgeorch.comms import (
    CommsPlan,
    Flow,
    FlowCause,
    UnroutableFlow,
    derive_flows,
    route_flow,
)
from edgeorch.model import (
    DEFAULT_MAX_OUTSTANDING_S,
    CycleError,
    DanglingReference,
    Job,
    LibrarySpec,
    NodeLoad,
    NodeProfile,
    Number,
    TaskDescriptor,
    UnknownLibrary,
    ValidationError,
    check_acyclic,
    scarcity_weights,
)
from edgeorch.network import MAX_ORACLE_NODES, Route, Topology, all_routes_oracle
from edgeorch.placement import (
    Assignment,
    PlacementFailure,
    brute_force_place,
    greedy_place,
    local_search_place,
    specialist_penalty,
)
from edgeorch.protocol import CapabilityRegistry, Infeasible, ProvisionPlan, advert_for, provision_library

JOINT_BRUTE_FORCE_LIMIT = 10**5


@dataclass(frozen=True)
class Weights:
    """Scalarisation of the objective: penalty, energy (J) and makespan (s)."""

    penalty: Number = 1
    energy: Number = 1
    latency: Number = 1

    def __post_init__(self):
        vals = (self.penalty, self.energy, self.latency)
        if any(v < 0 for v in vals) or all(v == 0 for v in vals):
            raise ValueError("objective weights must be >= 0 and not all zero")


class OrchestrationFailure(Exception):
    def __init__(self, job_id: str, diagnosis: Mapping[str, str]):
        self.job_id = job_id
        self.diagnosis = dict(diagnosis)
        detail = "; ".join(f"{t}: {why}" for t, why in sorted(self.diagnosis.items()))
        super().__init__(f"job {job_id}: no feasible plan ({detail})")


class IncompleteJob(Exception):
    pass


@dataclass
class PlanningContext:
    """Everything the optimiser may look at: a consistent view at one instant."""

    fleet: dict[str, NodeProfile]
    loads: dict[str, NodeLoad]
    topology: Topology
    libraries: dict[str, LibrarySpec]
    weights: Weights = field(default_factory=Weights)
    alpha: Number = 1
    beta: Number = 1
    control_repo: bool = False
    registry: CapabilityRegistry | None = None
    # (node, lib) installs already under way; usable without another delivery.
    pending_installs: frozenset[tuple[str, str]] = frozenset()
    _provision_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.registry is None:
            registry = CapabilityRegistry()
            for n in self.fleet.values():
                registry = registry.merge(advert_for(n, 1, self.loads[n.id].free_mops))
            self.registry = registry

    @classmethod
    def build(cls, nodes: Iterable[NodeProfile], topology: Topology, libraries: Iterable[LibrarySpec],
              loads: Mapping[str, NodeLoad] | None = None,
              max_outstanding_s: Number = DEFAULT_MAX_OUTSTANDING_S, **kwargs) -> PlanningContext:
        fleet = {n.id: n for n in nodes}
        full = {n: NodeLoad.for_node(p, 0, max_outstanding_s) for n, p in fleet.items()}
        full.update(loads or {})
        return cls(fleet, full, topology, {l.id: l for l in libraries}, **kwargs)

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.fleet)

    def provision(self, node_id: str, lib_id: str) -> ProvisionPlan | Infeasible:
        key = (node_id, lib_id)
        if key not in self._provision_cache:
            self._provision_cache[key] = provision_library(
                self.registry, self.topology, self.fleet[node_id], self.libraries[lib_id],
                control_repo=self.control_repo, alpha=self.alpha, beta=self.beta,
            )
        return self._provision_cache[key]


@dataclass(frozen=True)
class Breakdown:
    penalty: Number
    energy_j: Number
    latency_s: Number
    objective: Number


@dataclass
class Plan:
    job_id: str
    assignment: Assignment
    comms: CommsPlan
    provisions: tuple[ProvisionPlan, ...]
    breakdown: Breakdown
    # Estimated (start, finish) per task.
    timing: dict[str, tuple[Number, Number]] = field(default_factory=dict)

    @property
    def objective(self) -> Number:
        return self.breakdown.objective

    def schedule(self) -> list[tuple[str, str, str, Number]]:
        """Actions in causal order: every install before any task that relies on it."""
        rows = [("provision", p.target, p.lib_id, p.ready_after_s) for p in self.provisions]
        tasks = sorted(self.timing.items(), key=lambda kv: (kv[1][0], kv[0]))
        rows += [("assign", self.assignment[t], t, start) for t, (start, _) in tasks]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("section", "key", "value", "detail"))
        for t in sorted(self.assignment.mapping):
            start, finish = self.timing.get(t, (0, 0))
            w.writerow(("assign", t, self.assignment[t], f"{float(start)!r}-{float(finish)!r}"))
        for p in self.provisions:
            w.writerow(("provision", f"{p.lib_id}@{p.target}", p.source, str(p.route)))
        b = self.breakdown
        for name in ("penalty", "energy_j", "latency_s", "objective"):
            w.writerow(("objective", name, repr(float(getattr(b, name))), ""))
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"plan for job {self.job_id}"]
        for t in sorted(self.assignment.mapping):
            lines.append(f"  {t:<24} -> {self.assignment[t]}")
        for p in self.provisions:
            lines.append(f"  install {p.lib_id} on {p.target} from {p.source} via {p.route}"
                         f" (ready after {float(p.ready_after_s):.4g} s)")
        b = self.breakdown
        lines.append(f"  J = {float(b.objective):.6g}  [penalty {float(b.penalty):.6g},"
                     f" energy {float(b.energy_j):.6g} J, makespan {float(b.latency_s):.6g} s]")
        return "\n".join(lines)


@dataclass(frozen=True)
class _State:
    mapping: tuple[tuple[str, str], ...]
    # flow tag -> forced route nodes (only for the current endpoints)
    routes: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def as_dict(self) -> dict[str, str]:
        return dict(self.mapping)

    def with_task(self, task_id: str, node_id: str) -> _State:
        m = tuple((t, node_id if t == task_id else n) for t, n in self.mapping)
        return _State(m, self.routes)

    def with_route(self, tag: str, nodes: tuple[str, ...]) -> _State:
        r = dict(self.routes)
        r[tag] = nodes
        return _State(self.mapping, tuple(sorted(r.items())))


class _Evaluator:
    """Feasibility and objective of a full job state under one planning context."""

    def __init__(self, job: Job, ctx: PlanningContext, pinned: Mapping[str, str] | None = None,
                 finished: Iterable[str] = (), settled: Iterable[str] = ()):
        self.job = job
        self.ctx = ctx
        self.pinned = dict(pinned or {})
        self.finished = set(finished)
        # Tags of flows already delivered; they cost nothing more.
        self.settled = set(settled)
        self.order = job.topological_order()
        # Every output ends up at the sink, so hosts and sources must share its component.
        topo = ctx.topology
        self.reachable = set(topo.hop_distances(job.sink)) if job.sink in topo.nodes else set()
        self.candidates = [n for n in ctx.node_ids if n in self.reachable]

    def needed_installs(self, mapping: Mapping[str, str]) -> list[tuple[str, str]]:
        need = set()
        for t in self.job.tasks:
            if t.id in self.finished:
                continue
            node = self.ctx.fleet[mapping[t.id]]
            for lib in t.required_libs - node.installed:
                if (node.id, lib) not in self.ctx.pending_installs:
                    need.add((node.id, lib))
        return sorted(need)

    def why_infeasible(self, task: TaskDescriptor, node_id: str) -> str | None:
        node = self.ctx.fleet[node_id]
        for lib in sorted(task.required_libs - node.installed):
            if (node_id, lib) in self.ctx.pending_installs:
                continue
            prov = self.ctx.provision(node_id, lib)
            if isinstance(prov, Infeasible):
                return f"{lib} on {node_id}: {prov.reason.value}"
        return None

    def connected(self, mapping: Mapping[str, str]) -> bool:
        if any(mapping[t] not in self.reachable for t in self.job.task_ids if t not in self.finished):
            return False
        return all(src in self.reachable for t in self.job.task_ids if t not in self.finished
                   for src in self.job.node_sources(t))

    def feasible(self, mapping: Mapping[str, str]) -> bool:
        if not self.connected(mapping):
            return False
        extra: dict[str, Number] = {}
        for t in self.job.tasks:
            if t.id in self.finished or t.id in self.pinned:
                continue
            n = mapping[t.id]
            if self.why_infeasible(t, n) is not None:
                return False
            extra[n] = extra.get(n, 0) + t.demand_mops
        for n, lib in self.needed_installs(mapping):
            extra[n] = extra.get(n, 0) + self.ctx.libraries[lib].install_cost_mops
        return all(
            self.ctx.loads[n].committed_mops + w <= self.ctx.loads[n].limit_mops
            for n, w in extra.items()
        )

    def flows(self, mapping: Mapping[str, str]) -> list[Flow]:
        flows = derive_flows(self.job, mapping, self.ctx.topology)
        if self.finished or self.settled:
            flows = [f for f in flows if f.tag not in self.settled and not self._flow_done(f)]
        return flows

    def _flow_done(self, flow: Flow) -> bool:
        if flow.cause is FlowCause.SENSOR_INPUT:
            return flow.tag.split("<", 1)[0] in self.finished
        if flow.cause is FlowCause.INTER_TASK:
            return flow.tag.split(">", 1)[1] in self.finished
        return False

    def evaluate(self, state: _State) -> Plan:
        ctx = self.ctx
        mapping = state.as_dict()
        forced = dict(state.routes)
        routed = []
        for flow in self.flows(mapping):
            route = None
            nodes = forced.get(flow.tag)
            if nodes and nodes[0] == flow.src and nodes[-1] == flow.dst:
                route = Route(nodes, tuple(ctx.topology.link(a, b) for a, b in zip(nodes, nodes[1:])))
            routed.append(route_flow(flow, ctx.topology, ctx.alpha, ctx.beta, route))
        comms = CommsPlan(tuple(routed), ctx.alpha, ctx.beta)
        provisions = tuple(ctx.provision(n, lib) for n, lib in self.needed_installs(mapping))

        after = dict(ctx.fleet)
        for n, lib in [(p.target, p.lib_id) for p in provisions] + sorted(ctx.pending_installs):
            if n in after and lib not in after[n].installed:
                after[n] = after[n].with_installed(lib)
        fleet_after = list(after.values())
        weights = scarcity_weights(fleet_after)

        penalty = Fraction(0)
        energy = comms.energy_j
        for p in provisions:
            energy += p.energy_j + p.install_energy_j
        for t in self.job.tasks:
            if t.id in self.finished:
                continue
            node = after[mapping[t.id]]
            penalty += specialist_penalty(t, node, fleet_after, weights)
            energy += t.demand_mops * node.compute_energy_j_per_mop

        latency_of = {r.flow.tag: r.latency_s for r in routed}
        lib_ready = {(p.target, p.lib_id): p.ready_after_s for p in provisions}
        timing: dict[str, tuple[Number, Number]] = {}
        for task_id in self.order:
            if task_id in self.finished:
                timing[task_id] = (0, 0)
                continue
            t = self.job.task(task_id)
            host = mapping[task_id]
            ready: Number = 0
            for src in self.job.node_sources(task_id):
                ready = max(ready, latency_of.get(f"{task_id}<{src}", 0))
            for pred in self.job.predecessors(task_id):
                ready = max(ready, timing[pred][1] + latency_of.get(f"{pred}>{task_id}", 0))
            for lib in sorted(t.required_libs):
                ready = max(ready, lib_ready.get((host, lib), 0))
            timing[task_id] = (ready, ready + t.demand_mops / after[host].capacity_mops)
        makespan: Number = 0
        for task_id in self.job.terminals:
            makespan = max(makespan, timing[task_id][1] + latency_of.get(f"{task_id}>sink", 0))

        w = ctx.weights
        objective = w.penalty * penalty + w.energy * energy + w.latency * makespan
        assignment = Assignment(mapping, _committed(self.job, mapping, self.finished))
        return Plan(self.job.id, assignment, comms, provisions,
                    Breakdown(penalty, energy, makespan, objective), timing)

    def movable(self) -> list[str]:
        return [t for t in self.order if t not in self.pinned and t not in self.finished]


def _committed(job: Job, mapping: Mapping[str, str], finished: Iterable[str] = ()) -> dict[str, Number]:
    done = set(finished)
    out: dict[str, Number] = {}
    for t in job.tasks:
        if t.id not in done:
            out[mapping[t.id]] = out.get(mapping[t.id], 0) + t.demand_mops
    return out


def _alternative_routes(topology: Topology, flow: Flow) -> list[tuple[str, ...]]:
    if flow.local or len(topology.nodes) > MAX_ORACLE_NODES:
        return []
    return [r.nodes for r in all_routes_oracle(topology, flow.src, flow.dst)]


def _seed(ev: _Evaluator) -> _State:
    """Loop-1 greedy placement; tasks it cannot place go to the cheapest provisionable node."""
    ctx, job = ev.ctx, ev.job
    fleet = [ctx.fleet[n] for n in ev.candidates]
    mapping = dict(ev.pinned)
    movable = ev.movable()
    for t in job.task_ids:
        if t in ev.finished and t not in mapping:
            raise ValueError(f"finished task {t} needs a pinned host")

    sub = Job(job.id, tuple(job.task(t) for t in movable),
              tuple((a, b) for a, b in job.edges if a in movable and b in movable), job.sink)
    loads = dict(ctx.loads)
    # Pending installs make a node capable for this view.
    view = [
        _with_pending(n, ctx.pending_installs) for n in fleet
    ]
    greedy = greedy_place(sub, view, loads) if movable else Assignment({})
    if isinstance(greedy, Assignment):
        seeded = {**mapping, **greedy.mapping}
        if ev.feasible(seeded):
            return _State(tuple((t, seeded[t]) for t in ev.order))
        failed: set[str] = set()
    else:
        failed = set(greedy.task_ids)
    # Redo greedily, letting only the stranded tasks provision. If that still
    # strands something, place the most constrained tasks first.
    options = {
        t: sum(1 for n in ev.candidates if ev.why_infeasible(job.task(t), n) is None) for t in movable
    }
    constrained = sorted(movable, key=lambda t: (options[t], -job.task(t).demand_mops, ev.order.index(t)))
    stuck = None
    for order, may_install in ((movable, failed), (constrained, set(movable))):
        placed = _place_in_order(ev, order, may_install, dict(mapping), fleet)
        if isinstance(placed, dict) and ev.feasible(placed):
            return _State(tuple((t, placed[t]) for t in ev.order))
        if isinstance(placed, str):
            stuck = stuck or placed
    if stuck is None:
        raise OrchestrationFailure(job.id, {t: "no feasible seed" for t in movable})
    raise OrchestrationFailure(job.id, _diagnose(ev, stuck))


def _place_in_order(ev: _Evaluator, order: Sequence[str], may_install: set[str],
                    mapping: dict[str, str], fleet: Sequence[NodeProfile]) -> dict[str, str] | str:
    """Place ``order`` one task at a time on the cheapest node with room; returns the
    mapping, or the id of the first task that fits nowhere."""
    ctx, job, loads = ev.ctx, ev.job, ev.ctx.loads
    used = {n: loads[n].committed_mops for n in ev.candidates}
    for task_id in order:
        task = job.task(task_id)
        best = None
        for node_id in ev.candidates:
            if task_id not in may_install:
                node = _with_pending(ctx.fleet[node_id], ctx.pending_installs)
                if not task.required_libs <= node.installed:
                    continue
            if ev.why_infeasible(task, node_id) is not None:
                continue
            installs = [
                lib for lib in sorted(task.required_libs - ctx.fleet[node_id].installed)
                if (node_id, lib) not in ctx.pending_installs
                and not any(mapping.get(o) == node_id and lib in job.task(o).required_libs
                            for o in mapping)
            ]
            extra = task.demand_mops + sum(ctx.libraries[l].install_cost_mops for l in installs)
            if used[node_id] + extra > loads[node_id].limit_mops:
                continue
            cost: Number = 0
            for lib in installs:
                p = ctx.provision(node_id, lib)
                cost += ctx.weights.energy * (p.energy_j + p.install_energy_j) \
                    + ctx.weights.latency * p.ready_after_s
            # Shared or pending installs are free here but still land on the node.
            node_after = ctx.fleet[node_id]
            for lib in sorted(task.required_libs - node_after.installed):
                node_after = node_after.with_installed(lib)
            fleet_after = [node_after if n.id == node_id else n for n in fleet]
            cost += ctx.weights.penalty * specialist_penalty(task, node_after, fleet_after)
            rank = (len(installs) > 0 if task_id not in may_install else False, cost,
                    -(loads[node_id].limit_mops - used[node_id]), node_id)
            if best is None or rank < best[0]:
                best = (rank, node_id, extra)
        if best is None:
            return task_id
        _, node_id, extra = best
        mapping[task_id] = node_id
        used[node_id] += extra
    return mapping


def _with_pending(node: NodeProfile, pending: frozenset[tuple[str, str]]) -> NodeProfile:
    for n, lib in sorted(pending):
        if n == node.id and lib not in node.installed:
            node = node.with_installed(lib)
    return node


def _diagnose(ev: _Evaluator, task_id: str) -> dict[str, str]:
    task = ev.job.task(task_id)
    reasons = []
    for node_id in ev.ctx.node_ids:
        if node_id not in ev.reachable:
            reasons.append(f"{node_id}: cut off from sink {ev.job.sink}")
            continue
        why = ev.why_infeasible(task, node_id)
        reasons.append(f"{node_id}: {why}" if why else f"{node_id}: no capacity")
    return {task_id: "; ".join(reasons) or "no nodes available"}


def joint_optimize(
    job: Job,
    ctx: PlanningContext,
    budget: int = 200,
    pinned: Mapping[str, str] | None = None,
    finished: Iterable[str] = (),
    settled: Iterable[str] = (),
) -> Plan:
    """Local search over placement, implied provisioning and routes.

    Moves reassign one task (provisioning whatever the new host lacks) or pin
    one flow to an alternative simple path; at a local optimum of those, two
    tasks may be reassigned together. Each iteration takes the move with the
    largest strict decrease of the objective; the greedy seed is part of the
    search space, so the result never scores worse than it.
    """
    return _search(_Evaluator(job, ctx, pinned, finished, settled), budget)


def _search(ev: _Evaluator, budget: int) -> Plan:
    job = ev.job
    state = _seed(ev)
    if not ev.feasible(state.as_dict()):
        raise OrchestrationFailure(job.id, {t: "seed infeasible" for t in ev.movable()})
    best_plan = ev.evaluate(state)
    for _ in range(budget):
        # Paired moves are only tried at a single-move local optimum; they
        # escape capacity deadlocks where two tasks must trade places.
        best_move = _best_move(ev, _neighbours(ev, state, best_plan), best_plan)
        if best_move is None:
            best_move = _best_move(ev, _pair_moves(ev, state), best_plan)
        if best_move is None:
            break
        state, best_plan = best_move
    return best_plan


def _best_move(ev: _Evaluator, candidates: Iterable[_State], incumbent: Plan) -> tuple[_State, Plan] | None:
    best = None
    for cand in candidates:
        if not ev.feasible(cand.as_dict()):
            continue
        plan = ev.evaluate(cand)
        if plan.objective < incumbent.objective and (best is None or plan.objective < best[1].objective):
            best = (cand, plan)
    return best


def _neighbours(ev: _Evaluator, state: _State, plan: Plan) -> Iterable[_State]:
    mapping = state.as_dict()
    for task_id in ev.movable():
        for node_id in ev.candidates:
            if node_id != mapping[task_id]:
                yield state.with_task(task_id, node_id)
    for r in plan.comms.routed:
        for nodes in _alternative_routes(ev.ctx.topology, r.flow):
            if nodes != r.route.nodes:
                yield state.with_route(r.flow.tag, nodes)


def _pair_moves(ev: _Evaluator, state: _State) -> Iterable[_State]:
    mapping = state.as_dict()
    for a, b in itertools.combinations(ev.movable(), 2):
        for na in ev.candidates:
            if na == mapping[a]:
                continue
            for nb in ev.candidates:
                if nb != mapping[b]:
                    yield state.with_task(a, na).with_task(b, nb)


def brute_force_joint(
    job: Job,
    ctx: PlanningContext,
    enumerate_routes: bool = True,
) -> Plan:
    """Exhaustive minimum of the joint objective (test oracle).

    Enumerates every task-to-node mapping, with provisioning implied by the
    mapping, and optionally every combination of simple-path routes.
    """
    ev = _Evaluator(job, ctx)
    nodes = ctx.node_ids
    order = ev.order
    if len(nodes) ** len(order) > JOINT_BRUTE_FORCE_LIMIT:
        raise ValueError("instance too large for exhaustive joint search")
    best = None
    for combo in itertools.product(nodes, repeat=len(order)):
        mapping = dict(zip(order, combo))
        if not ev.feasible(mapping):
            continue
        base = _State(tuple(zip(order, combo)))
        candidates = [base]
        if enumerate_routes:
            flows = [f for f in ev.flows(mapping) if not f.local]
            options = [_alternative_routes(ctx.topology, f) for f in flows]
            candidates = []
            for choice in itertools.product(*options):
                candidates.append(_State(base.mapping, tuple(sorted(
                    (f.tag, nodes_) for f, nodes_ in zip(flows, choice)))))
        for state in candidates:
            try:
                plan = ev.evaluate(state)
            except UnroutableFlow:
                continue
            if best is None or plan.objective < best.objective:
                best = plan
    if best is None:
        raise OrchestrationFailure(job.id, {t: "no feasible mapping" for t in order})
    return best


def sequential_optimize(job: Job, ctx: PlanningContext, exact: bool = True) -> Plan:
    """Loop 1 to optimality on the penalty alone, then Loop 2 routes for that placement."""
    fleet = [ctx.fleet[n] for n in ctx.node_ids]
    place = brute_force_place if exact else greedy_place
    result = place(job, fleet, ctx.loads)
    if isinstance(result, PlacementFailure):
        raise OrchestrationFailure(job.id, {t: "no capable node" for t in result.task_ids})
    if not exact:
        result = local_search_place(result, job, fleet, ctx.loads)
    ev = _Evaluator(job, ctx)
    return ev.evaluate(_State(tuple((t, result.mapping[t]) for t in ev.order)))


def plan_for_mapping(job: Job, ctx: PlanningContext, mapping: Mapping[str, str],
                     finished: Iterable[str] = ()) -> Plan:
    """Evaluate a fixed placement with default routes (used for the central baseline)."""
    ev = _Evaluator(job, ctx, pinned=mapping, finished=finished)
    return ev.evaluate(_State(tuple((t, mapping[t]) for t in ev.order)))


@dataclass(frozen=True)
class OffloadDecision:
    j_local: Number
    j_remote: Number
    decision: str  # "local" or "remote"


def evaluate_offload(task: TaskDescriptor, local: str, candidate: str, ctx: PlanningContext) -> OffloadDecision:
    """Compare running ``task`` where its data sits against shipping it to ``candidate``.

    Local execution moves no data. Remote execution pays for the input going
    out and the output coming back, plus any library the candidate must
    install first. Ties stay local. The specialist penalty is left out: the
    question is where the bytes and cycles are cheaper, not which node to
    keep free.
    """
    w = ctx.weights
    if w.energy or w.latency:
        ctx = replace(ctx, weights=Weights(0, w.energy, w.latency))
    job = Job(f"offload:{task.id}", (TaskDescriptor(task.id, task.required_libs, task.demand_mops,
                                                    task.input_bytes, task.output_bytes, (local,)),),
              (), local)
    scores = {}
    for name, node_id in (("local", local), ("remote", candidate)):
        ev = _Evaluator(job, ctx)
        mapping = {task.id: node_id}
        if ev.why_infeasible(job.tasks[0], node_id) is not None:
            scores[name] = None
            continue
        scores[name] = ev.evaluate(_State(tuple(mapping.items()))).objective
    if scores["local"] is None and scores["remote"] is None:
        raise OrchestrationFailure(job.id, {task.id: f"neither {local} nor {candidate} can run it"})
    if scores["remote"] is None or (scores["local"] is not None and scores["local"] <= scores["remote"]):
        decision = "local"
    else:
        decision = "remote"
    inf = float("inf")
    return OffloadDecision(
        scores["local"] if scores["local"] is not None else inf,
        scores["remote"] if scores["remote"] is not None else inf,
        decision,
    )


def decompose_job(raw: Mapping[str, Any], known_libs: Iterable[str] | None = None,
                  known_nodes: Iterable[str] | None = None) -> Job:
    """Turn a raw job request into a validated Job.

    Dependencies come from explicit ``edges`` plus any source naming another
    task of the same job. Task ids are stripped of surrounding whitespace.
    """
    errors = job_errors(raw, known_libs, known_nodes)
    if errors:
        raise errors[0]
    return _build_job(raw)


def _task_fields(raw_task: Mapping[str, Any]) -> dict[str, Any]:
    return dict(
        id=str(raw_task["id"]).strip(),
        required_libs=frozenset(raw_task.get("libs", raw_task.get("required_libs", ()))),
        demand_mops=raw_task.get("demand_mops", 0),
        input_bytes=raw_task.get("input_bytes", 0),
        output_bytes=raw_task.get("output_bytes", 0),
        sources=tuple(str(s).strip() for s in raw_task.get("sources", ())),
    )


def _edges(raw: Mapping[str, Any], task_ids: Sequence[str]) -> list[tuple[str, str]]:
    ids = set(task_ids)
    edges = [(str(a).strip(), str(b).strip()) for a, b in raw.get("edges", ())]
    for t in raw.get("tasks", ()):
        tid = str(t["id"]).strip()
        for s in t.get("sources", ()):
            s = str(s).strip()
            if s in ids and (s, tid) not in edges:
                edges.append((s, tid))
    return edges


def _build_job(raw: Mapping[str, Any]) -> Job:
    tasks = tuple(TaskDescriptor(**_task_fields(t)) for t in raw["tasks"])
    edges = _edges(raw, [t.id for t in tasks])
    return Job(str(raw["id"]).strip(), tasks, tuple(edges), str(raw["sink"]).strip())


def job_errors(raw: Any, known_libs: Iterable[str] | None = None,
               known_nodes: Iterable[str] | None = None) -> list[ValidationError]:
    """Every problem with a raw job request, not just the first."""
    errs: list[ValidationError] = []
    if not isinstance(raw, Mapping):
        return [ValidationError("job must be an object")]
    job_id = str(raw.get("id", "?")).strip()
    if "id" not in raw:
        errs.append(ValidationError("job without id"))
    if "sink" not in raw:
        errs.append(ValidationError(f"job {job_id}: missing sink"))
    elif known_nodes is not None and str(raw["sink"]).strip() not in set(known_nodes):
        errs.append(DanglingReference(str(raw["sink"]), f"job {job_id} sink"))
    tasks = raw.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        errs.append(ValidationError(f"job {job_id}: needs a non-empty task list"))
        return errs
    ids: list[str] = []
    libs = set(known_libs) if known_libs is not None else None
    nodes = set(known_nodes) if known_nodes is not None else None
    for t in tasks:
        if not isinstance(t, Mapping) or "id" not in t:
            errs.append(ValidationError(f"job {job_id}: task without id"))
            continue
        try:
            fields = _task_fields(t)
            TaskDescriptor(**fields)
        except (ValidationError, TypeError, ValueError) as e:
            errs.append(ValidationError(f"job {job_id}: task {t.get('id')}: {e}"))
            continue
        if not fields["id"]:
            errs.append(ValidationError(f"job {job_id}: empty task id"))
        if fields["id"] in ids:
            errs.append(ValidationError(f"job {job_id}: duplicate task id {fields['id']!r}"))
        ids.append(fields["id"])
        if libs is not None:
            unknown = fields["required_libs"] - libs
            if unknown:
                errs.append(UnknownLibrary(unknown, f"job {job_id} task {fields['id']}"))
    task_set = set(ids)
    for t in tasks:
        if not isinstance(t, Mapping) or "id" not in t:
            continue
        for s in t.get("sources", ()):
            s = str(s).strip()
            if s in task_set:
                continue
            if nodes is not None and s not in nodes:
                errs.append(DanglingReference(s, f"job {job_id} task {str(t['id']).strip()} source"))
    try:
        edges = _edges(raw, ids)
    except (TypeError, ValueError, KeyError):
        errs.append(ValidationError(f"job {job_id}: edges must be [producer, consumer] pairs"))
        return errs
    ok_edges = []
    for a, b in edges:
        bad = False
        for ref in (a, b):
            if ref not in task_set:
                errs.append(DanglingReference(ref, f"job {job_id} edge"))
                bad = True
        if not bad:
            ok_edges.append((a, b))
    try:
        check_acyclic(list(dict.fromkeys(ids)), ok_edges)
    except CycleError as e:
        errs.append(e)
    return errs


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    node_id: str
    start: float
    end: float
    output_bytes: int
    delivered_at: float | None = None


@dataclass(frozen=True)
class JobResult:
    job_id: str
    outputs: dict[str, int]
    completion_time: float
    audit: tuple[tuple[str, str, float, float], ...]


def reconstruct_results(job: Job, records: Mapping[str, TaskRecord]) -> JobResult:
    """Assemble a job's terminal outputs at the sink once all of them have arrived."""
    missing = [t for t in job.terminals if t not in records or records[t].delivered_at is None]
    if missing:
        raise IncompleteJob(f"job {job.id}: terminal results missing for {missing}")
    outputs = {t: records[t].output_bytes for t in job.terminals}
    completion = max(records[t].delivered_at for t in job.terminals)
    audit = tuple(
        (r.task_id, r.node_id, r.start, r.end)
        for r in sorted(records.values(), key=lambda r: (r.start, r.task_id))
    )
    return JobResult(job.id, outputs, completion, audit)


@dataclass(frozen=True)
class NodeJoin:
    node_id: str
    time: float


@dataclass(frozen=True)
class NodeLeave:
    node_id: str
    time: float


ChurnEvent = Union[NodeJoin, NodeLeave]


@dataclass
class JobProgress:
    """What the simulator reports about a job when churn hits."""

    executed: set[str] = field(default_factory=set)
    # Flow tags already delivered (or no longer needed).
    settled_flows: set[str] = field(default_factory=set)


class ControlLayer:
    """The control node's view: registry, outstanding work per node, parked jobs.

    It plans with ``joint_optimize`` (edge strategy) or pins everything on the
    central node (central strategy).
    """

    def __init__(self, profiles: Mapping[str, NodeProfile], topology: Topology,
                 libraries: Mapping[str, LibrarySpec], *, weights: Weights = Weights(),
                 alpha: Number = 1, beta: Number = 1, control_repo: bool = False,
                 stale_after: float | None = None,
                 max_outstanding_s: Number = DEFAULT_MAX_OUTSTANDING_S, budget: int = 200):
        self.profiles = dict(profiles)
        self.topology = topology
        self.libraries = dict(libraries)
        self.weights = weights
        self.alpha = alpha
        self.beta = beta
        self.control_repo = control_repo
        self.stale_after = stale_after
        self.max_outstanding_s = max_outstanding_s
        self.budget = budget
        self.registry = CapabilityRegistry()
        self.departed: set[str] = set()
        self.committed: dict[str, Number] = {n: 0 for n in self.profiles}
        self.pending_installs: set[tuple[str, str]] = set()
        self.parked: dict[str, str] = {}

    # registry maintenance

    def on_advert(self, advert, now: float) -> bool:
        """Merge an advert; True if it made a previously unknown node eligible."""
        if advert.node_id in self.departed:
            return False
        was_known = advert.node_id in self.registry
        self.registry = self.registry.merge(advert, now)
        for lib in advert.installed:
            self.pending_installs.discard((advert.node_id, lib))
        return not was_known

    def eligible(self, now: float) -> list[str]:
        fresh = {a.node_id for a in self.registry.fresh(now, self.stale_after)}
        return sorted(n for n in fresh if n not in self.departed)

    def context(self, now: float, nodes: Iterable[str] | None = None) -> PlanningContext:
        ids = self.eligible(now) if nodes is None else sorted(nodes)
        fleet = {}
        for n in ids:
            advert = self.registry.get(n)
            prof = self.profiles[n]
            if advert is not None:
                prof = NodeProfile(prof.id, prof.tier, prof.capacity_mops, advert.installed,
                                   advert.installable, prof.compute_energy_j_per_mop, prof.mobile)
            fleet[n] = prof
        loads = {}
        for n, prof in fleet.items():
            limit = prof.capacity_mops * self.max_outstanding_s
            loads[n] = NodeLoad(n, limit, min(limit, self.committed.get(n, 0)))
        topo = self.topology.without(self.departed)
        registry = CapabilityRegistry({k: v for k, v in self.registry.entries.items() if k in fleet})
        return PlanningContext(
            fleet, loads, topo, self.libraries, self.weights, self.alpha, self.beta,
            self.control_repo, registry,
            frozenset((n, l) for n, l in self.pending_installs if n in fleet),
        )

    # planning

    def plan(self, job: Job, now: float, pinned: Mapping[str, str] | None = None,
             finished: Iterable[str] = (), settled: Iterable[str] = ()) -> Plan:
        pinned = dict(pinned or {})
        nodes = set(self.eligible(now)) | {n for n in pinned.values() if n not in self.departed}
        ctx = self.context(now, nodes)
        if not ctx.fleet:
            raise OrchestrationFailure(job.id, {t: "registry empty" for t in job.task_ids})
        plan = joint_optimize(job, ctx, self.budget, pinned=pinned, finished=finished,
                              settled=settled)
        self._commit(job, plan, set(finished))
        return plan

    def central_plan(self, job: Job, now: float, finished: Iterable[str] = (),
                     settled: Iterable[str] = ()) -> Plan:
        central = self.topology.control
        nodes = set(self.eligible(now)) | {central}
        ctx = self.context(now, nodes)
        ctx.loads = {n: NodeLoad(n, float("inf"), 0) for n in ctx.fleet}
        mapping = {t: central for t in job.task_ids}
        ev = _Evaluator(job, ctx, pinned=mapping, finished=finished, settled=settled)
        for t in job.tasks:
            why = ev.why_infeasible(t, central)
            if why is not None:
                raise OrchestrationFailure(job.id, {t.id: why})
        plan = ev.evaluate(_State(tuple((t, central) for t in ev.order)))
        self._commit(job, plan, set(finished))
        return plan

    def _commit(self, job: Job, plan: Plan, skip: set[str]) -> None:
        for t in job.tasks:
            if t.id not in skip:
                host = plan.assignment[t.id]
                self.committed[host] = self.committed.get(host, 0) + t.demand_mops
        for p in plan.provisions:
            self.pending_installs.add((p.target, p.lib_id))
            lib = self.libraries[p.lib_id]
            self.committed[p.target] = self.committed.get(p.target, 0) + lib.install_cost_mops

    def release(self, node_id: str, mops: Number) -> None:
        if node_id in self.committed:
            self.committed[node_id] = max(0, self.committed[node_id] - mops)

    def install_done(self, node_id: str, lib_id: str) -> None:
        self.pending_installs.discard((node_id, lib_id))
        self.release(node_id, self.libraries[lib_id].install_cost_mops)

    def park(self, job_id: str, diagnosis: str) -> None:
        self.parked[job_id] = diagnosis

    def unpark(self, job_id: str) -> None:
        self.parked.pop(job_id, None)

    # churn

    def handle_churn(self, event: ChurnEvent, plans: Mapping[str, Plan],
                     progress: Mapping[str, JobProgress], jobs: Mapping[str, Job],
                     now: float) -> dict[str, Plan | OrchestrationFailure]:
        """Revise the plans that a join or leave invalidates.

        On a leave, every unexecuted task hosted by the departed node, and
        every executed one whose output left with it and is still needed, is
        re-planned over the remaining fleet; everything else stays pinned.
        A join only makes the node eligible once its advert arrives, so it
        revises nothing here.
        """
        if isinstance(event, NodeJoin):
            self.departed.discard(event.node_id)
            return {}
        gone = event.node_id
        self.departed.add(gone)
        self.registry = self.registry.forget(gone)
        self.committed[gone] = 0
        self.pending_installs = {(n, l) for n, l in self.pending_installs if n != gone}
        revised: dict[str, Plan | OrchestrationFailure] = {}
        for job_id in sorted(plans):
            plan = plans[job_id]
            if gone not in plan.assignment.mapping.values() and not any(
                gone in p.route.nodes for p in plan.provisions
            ):
                continue
            job = jobs[job_id]
            prog = progress.get(job_id, JobProgress())
            finished = {t for t in prog.executed if plan.assignment[t] != gone}
            pinned = {t: n for t, n in plan.assignment.mapping.items()
                      if n != gone and t not in finished}
            for t in finished:
                pinned[t] = plan.assignment[t]
            for t, n in pinned.items():
                if t not in finished:
                    self.release(n, jobs[job_id].task(t).demand_mops)
            try:
                revised[job_id] = self.plan(job, now, pinned=pinned, finished=finished,
                                            settled=prog.settled_flows)
            except OrchestrationFailure as exc:
                revised[job_id] = exc
        return revised


"""Seeded random instances shared by the property and acceptance tests."""

from __future__ import annotations

import random
from fractions import Fraction

from edgeorch.model import Job, LibrarySpec, NodeLoad, NodeProfile, TaskDescriptor, Tier
from edgeorch.network import Link, Medium, Topology
from edgeorch.orchestrator import PlanningContext, Weights

LIBS = ("MA", "FFT", "ML", "KF")


def random_topology(rng: random.Random, n: int, extra_edges: int | None = None,
                    exact: bool = True) -> Topology:
    """Connected graph: a random spanning tree plus a few chords, random link parameters."""
    ids = [f"n{i}" for i in range(n)]
    pairs = set()
    for i in range(1, n):
        pairs.add((ids[rng.randrange(i)], ids[i]))
    if extra_edges is None:
        extra_edges = rng.randint(0, n)
    for _ in range(extra_edges):
        a, b = rng.sample(ids, 2) if n > 1 else (ids[0], ids[0])
        if a != b and (a, b) not in pairs and (b, a) not in pairs:
            pairs.add((a, b))
    links = []
    for a, b in sorted(pairs):
        medium = rng.choice([Medium.WIRED, Medium.WIRELESS])
        if exact:
            bw = rng.choice([250_000, 1_000_000, 12_500_000])
            delay = Fraction(rng.randint(0, 5), 1000)
            epb = Fraction(rng.randint(1, 20), 10_000_000)
        else:
            bw = rng.uniform(1e5, 1e7)
            delay = rng.uniform(0, 0.005)
            epb = rng.uniform(1e-8, 2e-6)
        links.append(Link(a, b, medium, bw, delay, epb))
    return Topology(frozenset(ids), tuple(links), ids[0])


def random_placement_instance(rng: random.Random, max_nodes: int = 4, max_tasks: int = 5):
    """A fleet, loads and job where every task has at least one capable node."""
    n_nodes = rng.randint(1, max_nodes)
    n_tasks = rng.randint(1, max_tasks)
    fleet = []
    for i in range(n_nodes):
        installed = {lib for lib in LIBS if rng.random() < 0.45} or {rng.choice(LIBS)}
        fleet.append(NodeProfile(f"N{i}", Tier.SBC, rng.choice([4, 6, 10]), frozenset(installed)))
    loads = {n.id: NodeLoad(n.id, n.capacity_mops, rng.choice([0, 0, 1, 2])) for n in fleet}
    tasks = []
    for t in range(n_tasks):
        host = rng.choice(fleet)
        libs = frozenset(rng.sample(sorted(host.installed), rng.randint(0, min(2, len(host.installed)))))
        tasks.append(TaskDescriptor(f"t{t}", libs, rng.choice([1, 2, 3])))
    edges = [(f"t{i}", f"t{j}") for i in range(n_tasks) for j in range(i + 1, n_tasks) if rng.random() < 0.3]
    return Job("j", tuple(tasks), tuple(edges), fleet[0].id), fleet, loads


def random_joint_instance(rng: random.Random, max_nodes: int = 3, max_tasks: int = 3):
    """Job and planning context with at most one library provisionable anywhere."""
    n_nodes = rng.randint(1, max_nodes)
    n_tasks = rng.randint(1, max_tasks)
    topo = random_topology(rng, n_nodes, exact=True)
    ids = sorted(topo.nodes)
    libraries = [LibrarySpec(lib, rng.choice([2_000, 20_000, 200_000]), rng.choice([0, 1, 5])) for lib in LIBS[:3]]
    provisionable = rng.choice(["FFT", None])
    tiers = [Tier.MICROCONTROLLER, Tier.SBC, Tier.WORKSTATION]
    fleet = []
    for nid in ids:
        tier = rng.choice(tiers)
        installed = {lib for lib in ("MA", "FFT", "ML") if rng.random() < 0.5}
        installable = set()
        if provisionable and provisionable not in installed and rng.random() < 0.6:
            installable.add(provisionable)
        energy = {Tier.MICROCONTROLLER: Fraction(1, 100), Tier.SBC: Fraction(1, 200),
                  Tier.WORKSTATION: Fraction(1, 500)}[tier]
        cap = {Tier.MICROCONTROLLER: 1, Tier.SBC: 50, Tier.WORKSTATION: 500}[tier]
        fleet.append(NodeProfile(nid, tier, cap, frozenset(installed), frozenset(installable), energy))
    holders = set().union(*(n.installed for n in fleet))
    tasks = []
    for t in range(n_tasks):
        libs = frozenset(lib for lib in sorted(holders | ({provisionable} if provisionable else set()))
                         if rng.random() < 0.4)
        sources = (rng.choice(ids),) if t == 0 or rng.random() < 0.3 else ()
        tasks.append(TaskDescriptor(f"t{t}", libs, rng.choice([Fraction(1, 2), 1, 2]),
                                    rng.choice([0, 1_000, 40_000]) if sources else 0,
                                    rng.choice([100, 4_000, 20_000]), sources))
    edges = [(f"t{i}", f"t{i + 1}") for i in range(n_tasks - 1) if rng.random() < 0.7]
    job = Job("j", tuple(tasks), tuple(edges), rng.choice(ids))
    ctx = PlanningContext.build(fleet, topo, libraries, weights=Weights(1, 1, 1),
                                control_repo=rng.random() < 0.3)
    return job, ctx

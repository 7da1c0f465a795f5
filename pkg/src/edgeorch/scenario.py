"""Scenario documents: schema, validation, loading, and seeded generation."""

from __future__ import annotations

import json
import numbers
import random
from collections.abc import Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from edgeorch.model import (
    DEFAULT_MAX_OUTSTANDING_S,
    DEFAULT_TIER_CAPACITY,
    Job,
    LibrarySpec,
    NodeProfile,
    Tier,
)
from edgeorch.network import DEFAULT_LINK, MCU_RADIO_J_PER_BYTE, Link, Medium, Topology
from edgeorch.orchestrator import Weights, decompose_job, job_errors
from edgeorch.protocol import DEFAULT_ADVERT_PERIOD_S, DEFAULT_STALE_PERIODS, DEFAULT_TTL

SCHEMA_VERSION = 1
MAX_DOCUMENT_BYTES = 1 << 20
SHIPPED = ("mill_3tier", "tradeoff_3node", "fft_reserve")


class ScenarioIOError(Exception):
    """The file could not be read or parsed at all."""


class ScenarioInvalid(Exception):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Sensor:
    node: str
    bytes: int
    period_s: float
    start_s: float = 0.0
    count: int = 1

    def emission_times(self) -> list[float]:
        return [self.start_s + k * self.period_s for k in range(self.count)]

    @property
    def total_bytes(self) -> int:
        return self.bytes * self.count


@dataclass(frozen=True)
class JobArrival:
    job: Job
    arrival_s: float


@dataclass(frozen=True)
class ChurnStep:
    node: str
    action: str  # "leave" | "join"
    time_s: float


@dataclass(frozen=True)
class Flags:
    control_repo: bool = False
    advert_period_s: float = DEFAULT_ADVERT_PERIOD_S
    ttl: int = DEFAULT_TTL
    stale_periods: float = DEFAULT_STALE_PERIODS
    advert_on_change: bool = True
    max_outstanding_s: float = DEFAULT_MAX_OUTSTANDING_S
    park_retry_s: float = 10.0
    budget: int = 200

    @property
    def stale_after_s(self) -> float:
        return self.stale_periods * self.advert_period_s


@dataclass
class Scenario:
    name: str
    libraries: dict[str, LibrarySpec]
    nodes: dict[str, NodeProfile]
    topology: Topology
    sensors: list[Sensor] = field(default_factory=list)
    jobs: list[JobArrival] = field(default_factory=list)
    churn: list[ChurnStep] = field(default_factory=list)
    weights: Weights = field(default_factory=Weights)
    alpha: float = 1.0
    beta: float = 1.0
    flags: Flags = field(default_factory=Flags)
    horizon_s: float = 60.0

    @property
    def control(self) -> str:
        return self.topology.control


def _float(x):
    return float(x) if not isinstance(x, bool) else x


def _num(value: Any, what: str, errors: list[str], *, minimum: float | None = 0,
         strict: bool = False, integer: bool = False) -> Any:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        errors.append(f"{what}: expected a number, got {value!r}")
        return None
    if integer and not float(value).is_integer():
        errors.append(f"{what}: expected an integer, got {value!r}")
        return None
    if minimum is not None and (value < minimum or (strict and value == minimum)):
        op = ">" if strict else ">="
        errors.append(f"{what}: must be {op} {minimum}, got {value!r}")
        return None
    if value != value or value in (float("inf"), float("-inf")):
        errors.append(f"{what}: must be finite")
        return None
    return value


def _ids(items: Any, what: str, errors: list[str]) -> list[str]:
    if items is None:
        return []
    if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
        errors.append(f"{what}: expected a list of ids")
        return []
    return list(items)


def validate_document(doc: Any) -> list[str]:
    """Every semantic problem with a parsed scenario document.

    Never raises on malformed input; reports as much as it can find.
    """
    errors: list[str] = []
    try:
        _parse(doc, errors)
    except Exception as exc:  # noqa: BLE001 - validation must be total
        errors.append(f"malformed scenario: {type(exc).__name__}: {exc}")
    return errors


def parse_document(doc: Any) -> Scenario:
    errors: list[str] = []
    scenario = None
    try:
        scenario = _parse(doc, errors)
    except Exception as exc:  # noqa: BLE001
        errors.append(f"malformed scenario: {type(exc).__name__}: {exc}")
    if errors or scenario is None:
        raise ScenarioInvalid(errors or ["unusable scenario"])
    return scenario


def _parse(doc: Any, errors: list[str]) -> Scenario | None:
    if not isinstance(doc, Mapping):
        errors.append("scenario must be a JSON object")
        return None
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        errors.append(f"unsupported scenario version {version!r}; this build reads version {SCHEMA_VERSION}")
        return None
    name = str(doc.get("name", "scenario"))

    libraries: dict[str, LibrarySpec] = {}
    for i, raw in enumerate(_list(doc, "libraries", errors)):
        if not isinstance(raw, Mapping) or not isinstance(raw.get("id"), str):
            errors.append(f"libraries[{i}]: needs a string id")
            continue
        lid = raw["id"]
        size = _num(raw.get("size_bytes"), f"library {lid} size_bytes", errors, strict=True, integer=True)
        cost = _num(raw.get("install_cost_mops", 0), f"library {lid} install_cost_mops", errors)
        if lid in libraries:
            errors.append(f"duplicate library id {lid!r}")
        elif size is not None and cost is not None:
            libraries[lid] = LibrarySpec(lid, int(size), _float(cost))

    nodes: dict[str, NodeProfile] = {}
    node_ids: list[str] = []
    for i, raw in enumerate(_list(doc, "nodes", errors)):
        if not isinstance(raw, Mapping) or not isinstance(raw.get("id"), str):
            errors.append(f"nodes[{i}]: needs a string id")
            continue
        nid = raw["id"]
        if nid in node_ids:
            errors.append(f"duplicate node id {nid!r}")
            continue
        node_ids.append(nid)
        try:
            tier = Tier(raw.get("tier"))
        except ValueError:
            errors.append(f"node {nid}: tier must be one of {[t.value for t in Tier]}")
            continue
        cap = _num(raw.get("capacity_mops", DEFAULT_TIER_CAPACITY[tier]), f"node {nid} capacity_mops",
                   errors, strict=True)
        energy = _num(raw.get("compute_energy_j_per_mop", 0), f"node {nid} compute_energy_j_per_mop", errors)
        installed = _ids(raw.get("installed"), f"node {nid} installed", errors)
        installable = _ids(raw.get("installable"), f"node {nid} installable", errors)
        unknown = (set(installed) | set(installable)) - set(libraries)
        if unknown:
            errors.append(f"node {nid}: unknown library id(s) {sorted(unknown)}")
        both = set(installed) & set(installable)
        if both:
            errors.append(f"node {nid}: libraries both installed and installable {sorted(both)}")
        mobile = raw.get("mobile", False)
        if not isinstance(mobile, bool):
            errors.append(f"node {nid}: mobile must be true/false")
            mobile = False
        if cap is None or energy is None or unknown or both:
            continue
        nodes[nid] = NodeProfile(nid, tier, _float(cap), frozenset(installed), frozenset(installable),
                                 _float(energy), mobile)

    control = doc.get("control")
    if not isinstance(control, str) or control not in node_ids:
        errors.append(f"control node {control!r} is not a declared node")
        control = None
    external = _ids(doc.get("external_sources"), "external_sources", errors)
    for ext in external:
        if ext not in node_ids:
            errors.append(f"external source {ext!r} is not a declared node")

    links: list[Link] = []
    seen_pairs = set()
    for i, raw in enumerate(_list(doc, "links", errors)):
        if not isinstance(raw, Mapping):
            errors.append(f"links[{i}]: expected an object")
            continue
        a, b = raw.get("a"), raw.get("b")
        bad = False
        for end in (a, b):
            if not isinstance(end, str) or end not in node_ids:
                errors.append(f"links[{i}]: DanglingReference to node {end!r}")
                bad = True
        if bad:
            continue
        if a == b:
            errors.append(f"links[{i}]: self loop on {a}")
            continue
        pair = tuple(sorted((a, b)))
        if pair in seen_pairs:
            errors.append(f"links[{i}]: duplicate link {a}-{b}")
            continue
        seen_pairs.add(pair)
        try:
            medium = Medium(raw.get("medium", "wired"))
        except ValueError:
            errors.append(f"links[{i}]: medium must be wired or wireless")
            continue
        defaults = dict(DEFAULT_LINK[medium])
        if medium is Medium.WIRELESS and any(
            n in nodes and nodes[n].tier is Tier.MICROCONTROLLER for n in (a, b)
        ):
            defaults["energy_j_per_byte"] = MCU_RADIO_J_PER_BYTE
        bw = _num(raw.get("bandwidth_bps", defaults["bandwidth_bps"]), f"links[{i}] bandwidth_bps",
                  errors, strict=True)
        delay = _num(raw.get("prop_delay_s", defaults["prop_delay_s"]), f"links[{i}] prop_delay_s", errors)
        epb = _num(raw.get("energy_j_per_byte", defaults["energy_j_per_byte"]),
                   f"links[{i}] energy_j_per_byte", errors)
        if None in (bw, delay, epb):
            continue
        links.append(Link(a, b, medium, _float(bw), _float(delay), _float(epb)))

    sensors = []
    for i, raw in enumerate(_list(doc, "sensors", errors)):
        if not isinstance(raw, Mapping):
            errors.append(f"sensors[{i}]: expected an object")
            continue
        node = raw.get("node")
        if node not in node_ids:
            errors.append(f"sensors[{i}]: DanglingReference to node {node!r}")
            continue
        nbytes = _num(raw.get("bytes"), f"sensors[{i}] bytes", errors, integer=True)
        period = _num(raw.get("period_s"), f"sensors[{i}] period_s", errors, strict=True)
        start = _num(raw.get("start_s", 0), f"sensors[{i}] start_s", errors)
        count = _num(raw.get("count", 1), f"sensors[{i}] count", errors, integer=True)
        if None in (nbytes, period, start, count):
            continue
        sensors.append(Sensor(node, int(nbytes), _float(period), _float(start), int(count)))

    jobs = []
    job_ids = set()
    for i, raw in enumerate(_list(doc, "jobs", errors)):
        if not isinstance(raw, Mapping):
            errors.append(f"jobs[{i}]: expected an object")
            continue
        arrival = _num(raw.get("arrival_s", 0), f"jobs[{i}] arrival_s", errors)
        problems = job_errors(raw, libraries.keys(), node_ids)
        errors.extend(f"jobs[{i}]: {type(e).__name__}: {e}" for e in problems)
        if problems or arrival is None:
            continue
        job = decompose_job(raw)
        if job.id in job_ids:
            errors.append(f"duplicate job id {job.id!r}")
            continue
        job_ids.add(job.id)
        jobs.append(JobArrival(job, _float(arrival)))

    mobile = {n for n, p in nodes.items() if p.mobile}
    pinned_nodes = {control} | {s.node for s in sensors} | set(external)
    for ja in jobs:
        pinned_nodes.add(ja.job.sink)
        for t in ja.job.tasks:
            pinned_nodes.update(ja.job.node_sources(t.id))
    for n in sorted(mobile & pinned_nodes):
        errors.append(f"node {n}: mobile nodes cannot be control, sink, sensor or data source")

    churn = []
    for i, raw in enumerate(_list(doc, "churn", errors)):
        if not isinstance(raw, Mapping):
            errors.append(f"churn[{i}]: expected an object")
            continue
        node, action = raw.get("node"), raw.get("action")
        t = _num(raw.get("time_s"), f"churn[{i}] time_s", errors)
        if node not in node_ids:
            errors.append(f"churn[{i}]: DanglingReference to unknown node {node!r}")
            continue
        if node in nodes and not nodes[node].mobile:
            errors.append(f"churn[{i}]: node {node} is not mobile")
            continue
        if action not in ("leave", "join"):
            errors.append(f"churn[{i}]: action must be leave or join")
            continue
        if t is not None:
            churn.append(ChurnStep(node, action, _float(t)))

    w = doc.get("weights", {}) or {}
    if not isinstance(w, Mapping):
        errors.append("weights must be an object")
        w = {}
    vals = {}
    for key in ("alpha", "beta", "penalty", "energy", "latency"):
        v = _num(w.get(key, 1.0), f"weights.{key}", errors)
        vals[key] = 1.0 if v is None else _float(v)
    if vals["alpha"] == 0 and vals["beta"] == 0:
        errors.append("weights.alpha and weights.beta cannot both be 0")
    if vals["penalty"] == vals["energy"] == vals["latency"] == 0:
        errors.append("objective weights cannot all be 0")

    f = doc.get("flags", {}) or {}
    if not isinstance(f, Mapping):
        errors.append("flags must be an object")
        f = {}
    flags = Flags()
    fvals = {}
    for key, default in flags.__dict__.items():
        raw = f.get(key, default)
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                errors.append(f"flags.{key}: expected true/false")
                raw = default
        else:
            checked = _num(raw, f"flags.{key}", errors, strict=key in ("advert_period_s", "park_retry_s"),
                           integer=isinstance(default, int))
            raw = default if checked is None else type(default)(checked)
        fvals[key] = raw
    unknown_flags = set(f) - set(fvals)
    if unknown_flags:
        errors.append(f"unknown flags {sorted(unknown_flags)}")
    horizon = _num(doc.get("horizon_s", 60), "horizon_s", errors, strict=True)

    if errors or control is None:
        return None
    topology = Topology(frozenset(node_ids), tuple(links), control, frozenset(external))
    return Scenario(
        name=name,
        libraries=libraries,
        nodes=nodes,
        topology=topology,
        sensors=sensors,
        jobs=sorted(jobs, key=lambda j: j.arrival_s),
        churn=sorted(churn, key=lambda c: c.time_s),
        weights=Weights(vals["penalty"], vals["energy"], vals["latency"]),
        alpha=vals["alpha"],
        beta=vals["beta"],
        flags=Flags(**fvals),
        horizon_s=_float(horizon),
    )


def _list(doc: Mapping, key: str, errors: list[str]) -> list:
    value = doc.get(key, [])
    if value is None:
        return []
    if not isinstance(value, list):
        errors.append(f"{key}: expected a list")
        return []
    return value


def read_document(path: str | Path) -> Any:
    """Parse a scenario file, or a shipped scenario by bare name."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        return json.loads(resources.files("edgeorch.scenarios").joinpath(f"{path}.json").read_text())
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ScenarioIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) > MAX_DOCUMENT_BYTES:
        raise ScenarioIOError(f"{path}: larger than {MAX_DOCUMENT_BYTES} bytes")
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioIOError(f"{path}: not valid JSON: {exc}") from exc


def validate(path: str | Path) -> list[str]:
    """Semantic errors of a scenario file; raises ScenarioIOError if unreadable."""
    return validate_document(read_document(path))


def load_scenario(path: str | Path) -> Scenario:
    return parse_document(read_document(path))


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("edgeorch.scenarios").joinpath(f"{name}.json")))


def generate_document(seed: int, n_nodes: int = 5, n_jobs: int = 3, churn: bool = False,
                      horizon_s: float = 120.0) -> dict[str, Any]:
    """A random but valid scenario document, reproducible from ``seed``."""
    rng = random.Random(seed)
    libs = [
        {"id": "MA", "size_bytes": 2_000, "install_cost_mops": 0.2},
        {"id": "FFT", "size_bytes": 40_000, "install_cost_mops": 2.0},
        {"id": "ML", "size_bytes": 400_000, "install_cost_mops": 20.0},
    ]
    n_nodes = max(2, n_nodes)
    nodes = [{"id": "W", "tier": "workstation", "installed": ["MA", "FFT", "ML"],
              "compute_energy_j_per_mop": 0.002}]
    tiers = ["sbc", "microcontroller"]
    for i in range(1, n_nodes):
        tier = rng.choice(tiers)
        installed = ["MA"]
        installable = []
        if tier == "sbc":
            if rng.random() < 0.4:
                installed.append("FFT")
            else:
                installable.append("FFT")
            installable.append("ML")
        nodes.append({
            "id": f"N{i}",
            "tier": tier,
            "installed": installed,
            "installable": installable,
            "compute_energy_j_per_mop": 0.005 if tier == "sbc" else 0.01,
            "mobile": False,
        })
    ids = [n["id"] for n in nodes]
    links = []
    for i in range(1, n_nodes):
        j = rng.randrange(i)
        medium = "wired" if nodes[i]["tier"] == "sbc" and nodes[j]["tier"] != "microcontroller" else "wireless"
        links.append({"a": ids[j], "b": ids[i], "medium": medium})
    for _ in range(rng.randint(0, n_nodes // 2)):
        a, b = rng.sample(ids, 2)
        if not any({a, b} == {l["a"], l["b"]} for l in links):
            links.append({"a": a, "b": b, "medium": rng.choice(["wired", "wireless"])})
    sensor_nodes = [n["id"] for n in nodes[1:] if n["tier"] == "microcontroller"] or [ids[1]]
    sensors = [{"node": s, "bytes": 2_000, "period_s": 1.0, "start_s": 0.5, "count": 40}
               for s in sensor_nodes]
    sbcs = [n for n in nodes[1:] if n["tier"] == "sbc"]
    # Compute-only mobile helpers: never sources or sinks.
    if churn:
        for n in sbcs:
            if n["id"] not in sensor_nodes:
                n["mobile"] = True
    jobs = []
    for k in range(n_jobs):
        src = rng.choice(sensor_nodes)
        window = rng.choice([10_000, 20_000])
        tasks = [
            {"id": "filter", "libs": ["MA"], "demand_mops": 0.2, "input_bytes": window,
             "output_bytes": window // 5, "sources": [src]},
            {"id": "spectrum", "libs": ["FFT"], "demand_mops": rng.choice([2.0, 5.0]),
             "input_bytes": 0, "output_bytes": 400, "sources": ["filter"]},
        ]
        if rng.random() < 0.5:
            tasks.append({"id": "stats", "libs": ["MA"], "demand_mops": 0.5, "input_bytes": 0,
                          "output_bytes": 100, "sources": ["filter"]})
        jobs.append({"id": f"job{k}", "arrival_s": round(2.0 + 8.0 * k + rng.random(), 3),
                     "sink": "W", "tasks": tasks})
    churn_steps = []
    mobile_ids = [n["id"] for n in nodes if n.get("mobile")]
    if churn and mobile_ids:
        # Leaves land just after arrivals, while work is likely in flight.
        for job in rng.sample(jobs, rng.randint(1, len(jobs))):
            node = rng.choice(mobile_ids)
            t = job["arrival_s"] + rng.uniform(0.0, 0.4)
            churn_steps.append({"node": node, "action": "leave", "time_s": round(t, 3)})
            churn_steps.append({"node": node, "action": "join", "time_s": round(t + rng.uniform(1.0, 12.0), 3)})
        churn_steps.sort(key=lambda c: (c["time_s"], c["action"]))
        # drop join/leave pairs that overlap on one node
        state = {}
        kept = []
        for step in churn_steps:
            present = state.get(step["node"], True)
            if (step["action"] == "leave") == present:
                kept.append(step)
                state[step["node"]] = not present
        churn_steps = kept
    return {
        "version": SCHEMA_VERSION,
        "name": f"generated_{seed}",
        "horizon_s": horizon_s,
        "control": "W",
        "libraries": libs,
        "nodes": nodes,
        "links": links,
        "sensors": sensors,
        "jobs": jobs,
        "churn": churn_steps,
        "weights": {"alpha": 1.0, "beta": 1.0, "penalty": 1.0, "energy": 1.0, "latency": 1.0},
        "flags": {"control_repo": True},
    }

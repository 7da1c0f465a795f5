"""Command-line entry point: validate, run, compare and generate scenarios."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

from edgeorch.scenario import (
    ScenarioInvalid,
    ScenarioIOError,
    generate_document,
    parse_document,
    read_document,
    validate_document,
)
from edgeorch.simulator import Metrics, SimulationError, Simulator, Strategy

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2

COMPARE_ROWS = ("total_energy_j", "transport_energy_j", "compute_energy_j", "backbone_bytes",
                "control_bytes", "mean_makespan_s", "jobs_completed")


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` next to ``path`` and rename over it, so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load(path: str):
    """Return a Scenario, or an exit code after reporting why it is unusable."""
    try:
        doc = read_document(path)
    except ScenarioIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    errors = validate_document(doc)
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return parse_document(doc)
    except ScenarioInvalid as exc:
        for e in exc.errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID


def _simulate(scenario, strategy: str, seed: int) -> Simulator:
    sim = Simulator(scenario, strategy, seed)
    sim.run()
    return sim


def _write_outputs(sim: Simulator, out: Path, args) -> None:
    write_atomic(out / "metrics.json", sim.metrics.to_json())
    write_atomic(out / "audit.csv", sim.audit_csv())
    if args.dump_plan:
        for job_id, plan in sim.plans().items():
            write_atomic(out / f"plan_{job_id}.csv", plan.to_csv())
            write_atomic(out / f"plan_{job_id}.txt", plan.pretty() + "\n")
    if args.dump_messages:
        write_atomic(out / "messages.csv", sim.messages_csv())


def cmd_validate(args) -> int:
    try:
        doc = read_document(args.scenario)
    except ScenarioIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    errors = validate_document(doc)
    for e in errors:
        print(f"invalid: {e}", file=sys.stderr)
    if not errors:
        print(f"{args.scenario}: ok")
    return EXIT_INVALID if errors else EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    if isinstance(scenario, int):
        return scenario
    try:
        sim = _simulate(scenario, args.strategy, args.seed)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        write_atomic(Path(args.out) / "audit.csv", exc.audit)
        return EXIT_RUNTIME
    _write_outputs(sim, Path(args.out), args)
    m = sim.metrics
    print(f"{scenario.name} [{args.strategy}] jobs={m.jobs_completed} incomplete={len(m.jobs_incomplete)} "
          f"energy_j={m.total_energy_j:.6g} backbone_bytes={m.backbone_bytes}")
    return EXIT_RUNTIME if m.jobs_incomplete else EXIT_OK


def compare_rows(central: Metrics, edge: Metrics) -> list[tuple[str, object, object, object]]:
    rows = []
    for key in COMPARE_ROWS:
        rows.append((key, getattr(central, key), getattr(edge, key)))
    for tier in sorted(set(central.tier_utilization) | set(edge.tier_utilization)):
        rows.append((f"utilization_{tier}", central.tier_utilization.get(tier, 0.0),
                     edge.tier_utilization.get(tier, 0.0)))
    out = []
    for key, c, e in rows:
        delta = None if c is None or e is None else e - c
        out.append((key, c, e, delta))
    return out


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_compare(args) -> int:
    scenario = _load(args.scenario)
    if isinstance(scenario, int):
        return scenario
    sims = {}
    try:
        for strategy in (Strategy.CENTRAL, Strategy.EDGE):
            sims[strategy] = _simulate(scenario, strategy, args.seed)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rows = compare_rows(sims[Strategy.CENTRAL].metrics, sims[Strategy.EDGE].metrics)
    width = max(len(r[0]) for r in rows)
    print(f"{'metric':<{width}}  {'central':>14}  {'edge':>14}  {'delta':>14}")
    for key, c, e, d in rows:
        print(f"{key:<{width}}  {_fmt(c):>14}  {_fmt(e):>14}  {_fmt(d):>14}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", "central", "edge", "delta"))
    for key, c, e, d in rows:
        w.writerow((key, "" if c is None else repr(c), "" if e is None else repr(e),
                    "" if d is None else repr(d)))
    out = Path(args.out)
    write_atomic(out / "compare.csv", buf.getvalue())
    for strategy, sim in sims.items():
        _write_outputs(sim, out / strategy.value, args)
    return EXIT_OK


def cmd_gen(args) -> int:
    doc = generate_document(args.seed, n_nodes=args.nodes, n_jobs=args.jobs, churn=args.churn,
                            horizon_s=args.horizon)
    text = json.dumps(doc, indent=2) + "\n"
    if args.output == "-":
        sys.stdout.write(text)
    else:
        write_atomic(Path(args.output), text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # Accept the global flags before or after the subcommand; the copy on
        # each subcommand must not clobber a value given before it.
        def d(value):
            return argparse.SUPPRESS if suppress else value

        flags = argparse.ArgumentParser(add_help=False)
        flags.add_argument("--seed", type=int, default=d(0), help="seed (default 0)")
        flags.add_argument("--out", default=d("out"), help="output directory (default ./out)")
        flags.add_argument("--dump-plan", action="store_true", default=d(False), help="write each job's plan")
        flags.add_argument("--dump-messages", action="store_true", default=d(False),
                           help="write the message trace")
        return flags

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="edgeorch", parents=[global_flags(suppress=False)],
                                     description="Edge analytics orchestration simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file", parents=[common])
    p.add_argument("scenario", help="path, or the name of a shipped scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one strategy", parents=[common])
    p.add_argument("scenario")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.EDGE.value)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run central and edge side by side", parents=[common])
    p.add_argument("scenario")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen", help="generate a random scenario", parents=[common])
    p.add_argument("output", nargs="?", default="-", help="file to write (default stdout)")
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--jobs", type=int, default=3)
    p.add_argument("--churn", action="store_true")
    p.add_argument("--horizon", type=float, default=120.0)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

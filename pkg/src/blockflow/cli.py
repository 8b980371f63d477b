"""``blockflow`` command line: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

from . import bench
from .costalloc import MAX_WORKERS_PER_CORE, CostProfile, Allocation, allocate_cores, allocation_metrics, annotate_costs, fold_allocation
from .errors import BlockflowError, OracleMismatch
from .model import RandomSpec, generate_random_model, parse_model, serialize_model, validate_graph
from .nodeconfig import NodeConfig, TimerDriven
from .planner import ExecutionPlan, build_plan, emit_scaffold, estimate_makespan
from .runtime import Bus, run_node

log = logging.getLogger("blockflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockflow", description="Parallelise block-diagram models and run them as pub/sub nodes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")

    g = sub.add_parser("generate", help="write a random model")
    g.add_argument("--blocks", type=int, required=True)
    g.add_argument("--inports", type=int, default=1)
    g.add_argument("--outports", type=int, default=1)
    g.add_argument("--density", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--weight-min", type=int, default=100)
    g.add_argument("--weight-max", type=int, default=2000)
    g.add_argument("--out", required=True)

    a = sub.add_parser("allocate", help="map blocks to cores (and fold onto fewer cores)")
    a.add_argument("--model", required=True)
    a.add_argument("--profile", required=True)
    a.add_argument("--cores", type=int, required=True)
    a.add_argument("--virtual", type=int)
    a.add_argument("--out", required=True)

    pl = sub.add_parser("plan", help="build the per-worker execution plan")
    pl.add_argument("--model", required=True)
    pl.add_argument("--alloc", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--scaffold")
    pl.add_argument("--node")
    pl.add_argument("--profile", help="report the estimated makespan under this profile")

    r = sub.add_parser("run", help="run a plan as a node fed by a built-in stimulus")
    r.add_argument("--plan", required=True)
    r.add_argument("--node", required=True)
    r.add_argument("--profile", required=True)
    r.add_argument("--duration-s", type=float, default=2.0)
    r.add_argument("--no-pin", action="store_true")

    b = sub.add_parser("bench", help="run a scenario grid and export CSV")
    b.add_argument("--grid", required=True)
    b.add_argument("--out", required=True)
    return p


def _check_flags(args) -> None:
    if args.command == "generate":
        if args.blocks < 1 or args.inports < 1 or args.outports < 1:
            raise UsageError("--blocks, --inports and --outports must be ≥ 1")
        if args.blocks <= args.inports + args.outports:
            raise UsageError("--blocks must exceed --inports + --outports (room for one inner block)")
        if not 0 <= args.density <= 1:
            raise UsageError("--density must lie in [0, 1]")
        if not 0 <= args.weight_min <= args.weight_max:
            raise UsageError("need 0 ≤ --weight-min ≤ --weight-max")
    elif args.command == "allocate":
        if args.cores < 1:
            raise UsageError("--cores must be ≥ 1")
        virtual = args.virtual if args.virtual is not None else args.cores
        if virtual < args.cores:
            raise UsageError("--virtual must be ≥ --cores")
        if math.ceil(virtual / args.cores) > MAX_WORKERS_PER_CORE:
            raise UsageError(
                f"--virtual {virtual} on {args.cores} core(s) exceeds {MAX_WORKERS_PER_CORE} workers per core"
            )
    elif args.command == "plan":
        if args.scaffold and not args.node:
            raise UsageError("--scaffold needs --node")
    elif args.command == "run" and args.duration_s <= 0:
        raise UsageError("--duration-s must be > 0")


def _cmd_validate(args) -> int:
    g = parse_model(Path(args.model).read_text(), strict=False)
    report = validate_graph(g)
    if not report.ok:
        for v in report.violations:
            print(f"{args.model}: {v}", file=sys.stderr)
        return EXIT_FAIL
    print(f"OK {g.name}: {len(g.blocks)} blocks, {len(g.edges)} edges")
    return EXIT_OK


def _cmd_generate(args) -> int:
    spec = RandomSpec(args.blocks, args.inports, args.outports, args.density,
                      (args.weight_min, args.weight_max), args.seed)
    g = generate_random_model(spec)
    bench.write_atomic(args.out, serialize_model(g))
    print(f"wrote {args.out}: {len(g.blocks)} blocks, {len(g.edges)} edges", file=sys.stderr)
    return EXIT_OK


def _cmd_allocate(args) -> int:
    g = parse_model(Path(args.model).read_text())
    profile = CostProfile.load(args.profile)
    costs = annotate_costs(g, profile)
    virtual = args.virtual or args.cores
    alloc = allocate_cores(g, costs, profile, virtual)
    if virtual > args.cores:
        alloc = fold_allocation(alloc, args.cores, profile.max_workers_per_core)
    m = allocation_metrics(g, costs, alloc)
    bench.write_atomic(args.out, alloc.to_json())
    print(f"wrote {args.out}: load imbalance {m['load_imbalance']:.3f}, "
          f"{m['cross_core_edges']} cross-core edge(s)", file=sys.stderr)
    return EXIT_OK


def _cmd_plan(args) -> int:
    g = parse_model(Path(args.model).read_text())
    alloc = Allocation.from_json(Path(args.alloc).read_text())
    problems = alloc.check(g)
    if problems:
        for line in problems:
            print(f"{args.alloc}: {line}", file=sys.stderr)
        return EXIT_FAIL
    plan = build_plan(g, alloc)
    scaffold = None
    if args.scaffold:
        scaffold = emit_scaffold(plan, NodeConfig.load(args.node))
    if args.profile:
        profile = CostProfile.load(args.profile)
        est = estimate_makespan(plan, annotate_costs(g, profile), profile)
        print(f"estimated makespan: {est:g} cycles", file=sys.stderr)
    bench.write_atomic(args.out, plan.to_json())
    if scaffold is not None:
        bench.write_atomic(args.scaffold, scaffold)
    print(f"wrote {args.out}: {len(plan.workers)} worker(s), {len(plan.channels)} channel(s)", file=sys.stderr)
    return EXIT_OK


def _cmd_run(args) -> int:
    plan = ExecutionPlan.from_json(Path(args.plan).read_text())
    nc = NodeConfig.load(args.node)
    profile = CostProfile.load(args.profile)
    bus = Bus()
    node = run_node(bus, plan, nc, profile, pinning=not args.no_pin)
    stim = bench.Stimulus(node, bus, nc, vary_timer_inputs=True)
    deadline = time.monotonic() + args.duration_s
    try:
        if isinstance(nc.pattern, TimerDriven):
            stim.fire()
            while time.monotonic() < deadline:
                time.sleep(min(0.05, max(0.0, deadline - time.monotonic())))
        else:
            while time.monotonic() < deadline:
                stim.drive(1)
    finally:
        stats = node.stop()
        bus.close()
    oracle = bench.OracleChecker(plan.graph)
    for r in node.results:
        oracle.check(r)
    sys.stdout.write(stats.to_json())
    for e in node.errors:
        print(e, file=sys.stderr)
    return EXIT_FAIL if node.errors else EXIT_OK


def _cmd_bench(args) -> int:
    scenarios = bench.load_grid(args.grid)
    results = []
    for s in scenarios:
        log.info("scenario %s: %d reps", s.id, s.reps)
        r = bench.run_benchmark(s)
        print(f"{s.id}: trimmed mean {r.trimmed_mean_ns / 1e6:.3f} ms over {r.averaged} of {r.reps} samples",
              file=sys.stderr)
        results.append(r)
    bench.export_results(results, args.out)
    return EXIT_OK


COMMANDS = {
    "validate": _cmd_validate,
    "generate": _cmd_generate,
    "allocate": _cmd_allocate,
    "plan": _cmd_plan,
    "run": _cmd_run,
    "bench": _cmd_bench,
}


def dispatch(argv: list[str]) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _check_flags(args)
    except UsageError as exc:
        print(f"blockflow {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (BlockflowError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"blockflow {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

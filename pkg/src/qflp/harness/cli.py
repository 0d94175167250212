"""Command-line interface: ``qflp <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import ingestion
from ..formulations import build
from ..formulations.milp import BACKENDS, get_adapter, to_lp_format
from ..model import DEMAND_DISTRIBUTIONS, RESOURCE_SCHEMES, Instance, ScenarioConfig, validate
from ..pwl import make_set, parse_set_spec
from .experiment import SURFACE_KINDS, parse_approach, read_records, run_approach, run_experiment
from .oracle import oracle_solve
from .report import write_report

log = logging.getLogger("qflp")

TOPOLOGY_READERS = {
    "graphml": ingestion.parse_graphml_topology,
    "sndlib": ingestion.parse_sndlib,
    "latency": ingestion.parse_latency_matrix,
}


def _demand_name(text: str) -> str:
    for name in DEMAND_DISTRIBUTIONS:
        if name.lower() == text.lower():
            return name
    raise argparse.ArgumentTypeError(f"demand must be one of {DEMAND_DISTRIBUTIONS}")


def _adapter(args):
    return get_adapter(args.backend, time_limit_s=args.time_limit)


def cmd_solve(args) -> int:
    instance = Instance.load(args.instance)
    if args.p is not None:
        instance = instance.with_budget(args.p)
    solution, status, gap = run_approach(instance, args.approach, _adapter(args), cache_dir=args.cache_dir,
                                         seed=args.seed)
    report = validate(instance, solution)
    if not report.ok:
        print("invalid solution: " + "; ".join(report.violations), file=sys.stderr)
        return 1
    if args.out:
        solution.save(args.out)
    gap_text = "" if gap is None else f" gap={gap:.3g}"
    print(f"{args.approach}: {solution.objective:.6f} ms y={solution.y.astype(int).tolist()} status={status}{gap_text}")
    return 0


def cmd_oracle(args) -> int:
    solution = oracle_solve(Instance.load(args.instance))
    if args.out:
        solution.save(args.out)
    print(f"oracle: {solution.objective:.6f} ms y={solution.y.astype(int).tolist()}")
    return 0


def cmd_compare(args) -> int:
    grid_path = Path(args.grid)
    grid = json.loads(grid_path.read_text())
    if args.backend:
        grid["backend"] = args.backend
    records = run_experiment(grid, args.out, workers=args.workers, base_dir=grid_path.parent)
    failed = sum(r.objective_ms is None for r in records)
    print(f"{len(records)} records in {args.out} ({failed} without objective)")
    return 0


def cmd_gen(args) -> int:
    path = Path(args.topology)
    topology = TOPOLOGY_READERS[args.format](path.read_text(), name=path.stem)
    config = ScenarioConfig(demand_dist=args.demand, resource_scheme=args.scheme, budget_factor=args.budget_factor,
                            seed=args.seed)
    instance = ingestion.instance_from_topology(topology, config, mu=args.mu, ms_per_km=args.ms_per_km)
    instance.save(args.out)
    print(f"{instance.name}: {instance.n_clients} clients, {instance.n_facilities} facilities, "
          f"sum k={int(instance.k.sum())}, p={instance.p}")
    return 0


def cmd_basepoints(args) -> int:
    m, kind = parse_set_spec(args.set)
    bps = make_set(m, kind, args.kmax)
    bps.save(args.out)
    print(f"{bps.label}: {len(bps.J)} curves written to {args.out}")
    return 0


def cmd_report(args) -> int:
    records = read_records(args.results)
    names = sorted({r.approach for r in records})
    if args.baseline not in names:
        print(f"baseline {args.baseline!r} not among the recorded approaches {names}", file=sys.stderr)
        return 2
    paths = write_report(records, args.baseline, args.out_dir)
    for path in paths:
        print(path)
    return 0


def cmd_export(args) -> int:
    instance = Instance.load(args.instance)
    approach = parse_approach(args.approach)
    if approach.m is None:
        raise SystemExit(f"approach {args.approach} has no MILP model to export")
    kind = SURFACE_KINDS.get(approach.family, "curves")
    model = build(kind, instance, make_set(approach.m, approach.J, int(instance.k.max()), args.cache_dir)).model
    Path(args.out).write_text(to_lp_format(model))
    print(f"{model.name}: {len(model.variables)} variables, {len(model.constraints)} constraints")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qflp", description="Queue-aware p-median facility location")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_options(p):
        p.add_argument("--backend", choices=sorted(BACKENDS), default=None,
                       help="MILP backend (default: QFLP_SOLVER or highs)")
        p.add_argument("--time-limit", type=float, default=120.0, help="seconds per solver call")

    p = sub.add_parser("solve", help="solve an instance with one approach")
    p.add_argument("--instance", required=True)
    p.add_argument("--approach", required=True, help="e.g. curves-full, curves-thinned:6,4^i, quad:6,4^i, genetic")
    p.add_argument("--p", type=int, default=None, help="override the resource budget")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-dir", help="basepoint cache directory")
    solver_options(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="exact optimum of a small instance by enumeration")
    p.add_argument("--instance", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="run an experiment grid into a results CSV")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend", choices=sorted(BACKENDS), default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen", help="build an instance from a topology file")
    p.add_argument("--topology", required=True)
    p.add_argument("--format", choices=sorted(TOPOLOGY_READERS), default="graphml")
    p.add_argument("--scheme", choices=RESOURCE_SCHEMES, default="d")
    p.add_argument("--demand", type=_demand_name, default="Exp")
    p.add_argument("--budget-factor", type=float, default=0.75)
    p.add_argument("--mu", type=float, default=100.0)
    p.add_argument("--ms-per-km", type=float, default=ingestion.MS_PER_KM)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("basepoints", help="generate and save a basepoint set")
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--set", required=True, help="'m,J' such as 8,3^i or 30,k100")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_basepoints)

    p = sub.add_parser("report", help="quality and time ECDFs from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--baseline", default="curves-full")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export", help="write an approach's MILP model in LP format")
    p.add_argument("--instance", required=True)
    p.add_argument("--approach", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

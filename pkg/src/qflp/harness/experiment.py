"""Experiment grid runner, run records and quality-ratio ECDFs."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import ingestion
from ..formulations import build, extract_solution, solve_formulation
from ..formulations.milp import SolverAdapter, get_adapter
from ..greedy import search
from ..heuristic import genetic
from ..model import Instance, InfeasibleError, ScenarioConfig, Solution, validate
from ..pwl import BasepointSet, make_set, parse_set_spec
from .oracle import optp_solve, oracle_solve

log = logging.getLogger(__name__)

SUCCESS = ("optimal", "feasible-with-gap")
CSV_COLUMNS = ("instance_id", "approach", "objective_ms", "wall_s", "status", "gap")
FAMILIES = ("oracle", "p-median", "curves-full", "curves-thinned", "tri-plus", "tri-minus", "quad", "genetic")
SURFACE_KINDS = {"tri-plus": "triangle-plus", "tri-minus": "triangle-minus", "quad": "quadrilateral"}
FULL_CURVE_M = 30


@dataclass(frozen=True)
class Approach:
    family: str
    m: int | None = None
    J: str | None = None
    seed: int | None = None

    @property
    def needs_basepoints(self) -> bool:
        return self.m is not None


def parse_approach(text: str) -> Approach:
    """``curves-full[:m]``, ``curves-thinned:<m>,<J>``, ``quad:6,4^i``, ``genetic[:seed]`` and so on."""
    family, _, arg = text.strip().partition(":")
    if family not in FAMILIES:
        raise ValueError(f"unknown approach {family!r}; choose from {FAMILIES}")
    if family in ("oracle", "p-median"):
        if arg:
            raise ValueError(f"approach {family} takes no argument")
        return Approach(family)
    if family == "genetic":
        return Approach(family, seed=int(arg) if arg else None)
    if family == "curves-full":
        return Approach(family, int(arg) if arg else FULL_CURVE_M, "k100")
    if not arg:
        raise ValueError(f"approach {family} needs a basepoint set such as '6,4^i'")
    m, kind = parse_set_spec(arg)
    return Approach(family, m, kind)


@dataclass
class RunRecord:
    instance_id: str
    approach: str
    objective_ms: float | None
    wall_s: float
    status: str
    gap: float | None = None

    def __post_init__(self):
        if (self.objective_ms is not None) != (self.status in SUCCESS):
            raise ValueError(f"objective must be present exactly when status is one of {SUCCESS}")


class _SolverGaveUp(RuntimeError):
    def __init__(self, status: str):
        super().__init__(status)
        self.status = status


def _basepoints(approach: Approach, instance: Instance, cache_dir) -> BasepointSet:
    return make_set(approach.m, approach.J, int(instance.k.max()), cache_dir)


def _worst(statuses) -> str:
    return "feasible-with-gap" if "feasible-with-gap" in statuses else "optimal"


def run_approach(instance: Instance, approach: Approach | str, adapter: SolverAdapter | None = None,
                 basepoints: BasepointSet | None = None, cache_dir=None, seed=0) -> tuple[Solution, str, float | None]:
    """Solve with one approach; returns (evaluated solution, status, gap).

    Raises InfeasibleError when no feasible solution exists and
    ``_SolverGaveUp`` when the solver stops without any solution.
    """
    if isinstance(approach, str):
        approach = parse_approach(approach)
    adapter = adapter or get_adapter()
    if approach.family == "oracle":
        return oracle_solve(instance), "optimal", 0.0
    if approach.family == "p-median":
        return optp_solve(instance, adapter), "optimal", None
    if approach.family == "genetic":
        return genetic(instance, seed=seed if approach.seed is None else approach.seed), "feasible-with-gap", None

    bps = basepoints or _basepoints(approach, instance, cache_dir)
    if approach.family in ("curves-full", "curves-thinned"):
        formulation = build("curves", instance, bps)
        result = solve_formulation(formulation, adapter, instance)
        if result.status == "infeasible":
            raise InfeasibleError("curve formulation infeasible")
        if result.x is None:
            raise _SolverGaveUp(result.status)
        return extract_solution(result, formulation, instance), result.status, result.gap

    kind = SURFACE_KINDS[approach.family]
    statuses, gaps = [], []

    def solve_at(budget):
        target = instance.with_budget(budget)
        formulation = build(kind, target, bps)
        result = solve_formulation(formulation, adapter, target, tie_break=True)
        if result.status == "infeasible":
            return None
        if result.x is None:
            raise _SolverGaveUp(result.status)
        statuses.append(result.status)
        gaps.append(result.gap or 0.0)
        return result.x, result.y_raw

    solution = search(instance, solve_at)
    return solution, _worst(statuses), max(gaps, default=None)


def solve_approach(instance: Instance, approach: str, instance_id: str | None = None,
                   adapter: SolverAdapter | None = None, cache_dir=None, seed=0) -> RunRecord:
    """One timed run; failures become records instead of exceptions."""
    instance_id = instance_id or instance.name
    start = time.perf_counter()
    try:
        solution, status, gap = run_approach(instance, approach, adapter, cache_dir=cache_dir, seed=seed)
        report = validate(instance, solution)
        if not report.ok:
            raise InfeasibleError("; ".join(report.violations))
        return RunRecord(instance_id, approach, solution.objective, time.perf_counter() - start, status, gap)
    except InfeasibleError as exc:
        log.info("%s on %s infeasible: %s", approach, instance_id, exc)
        status = "infeasible"
    except _SolverGaveUp as exc:
        status = exc.status
    except Exception:  # recorded, never aborts a grid
        log.exception("%s on %s failed", approach, instance_id)
        status = "error"
    return RunRecord(instance_id, approach, None, time.perf_counter() - start, status)


# ---------------------------------------------------------------- grid


def _load_topology(spec: dict, base_dir: Path):
    path = base_dir / spec["path"]
    text = path.read_text()
    fmt = spec.get("format") or {".graphml": "graphml", ".txt": "sndlib"}.get(path.suffix, "graphml")
    readers = {
        "graphml": ingestion.parse_graphml_topology,
        "sndlib": ingestion.parse_sndlib,
        "latency": ingestion.parse_latency_matrix,
    }
    if fmt not in readers:
        raise ValueError(f"unknown topology format {fmt!r}")
    return readers[fmt](text, name=spec.get("name", path.stem))


def _as_list(value, default):
    if value is None:
        return list(default)
    return list(value) if isinstance(value, (list, tuple)) else [value]


def expand_grid(grid: dict, base_dir=".") -> list[tuple[str, Instance]]:
    """Instances named by the grid: explicit files plus topology x factor products."""
    base_dir = Path(base_dir)
    cells = []
    for entry in grid.get("instances", []):
        path = base_dir / entry
        inst = Instance.load(path)
        cells.append((inst.name or path.stem, inst))
    for spec in grid.get("topologies", []):
        spec = {"path": spec} if isinstance(spec, str) else spec
        topology = _load_topology(spec, base_dir)
        for scheme, dist, factor, mu, seed in itertools.product(
            _as_list(grid.get("schemes"), ["d"]),
            _as_list(grid.get("demand"), ["Exp"]),
            _as_list(grid.get("budget_factors"), [0.75]),
            _as_list(grid.get("mu"), [100.0]),
            _as_list(grid.get("seeds"), [0, 1, 2]),
        ):
            config = ScenarioConfig(demand_dist=dist, resource_scheme=scheme, budget_factor=factor, seed=seed)
            inst = ingestion.instance_from_topology(topology, config, mu=float(mu))
            cells.append((f"{inst.name}-mu{mu:g}", inst))
    return cells


def _task(args):
    instance, instance_id, approach, backend, time_limit, cache_dir, seed = args
    adapter = get_adapter(backend, time_limit_s=time_limit)
    return solve_approach(instance, approach, instance_id, adapter, cache_dir, seed)


def run_experiment(grid: dict, out_csv, workers: int = 1, base_dir=".") -> list[RunRecord]:
    """Run every (instance, approach) pair of the grid, appending to ``out_csv``.

    Pairs already present in the CSV are skipped, so an interrupted run
    resumes where it stopped.  Returns all records in the file.
    """
    out_csv = Path(out_csv)
    done = {(r.instance_id, r.approach) for r in read_records(out_csv)} if out_csv.exists() else set()
    approaches = _as_list(grid.get("approaches"), ["curves-thinned:6,4^i", "genetic"])
    for text in approaches:
        parse_approach(text)
    backend = grid.get("backend") or grid.get("solver", {}).get("backend")
    time_limit = float(grid.get("time_limit_s", 120.0))
    cache_dir = grid.get("basepoint_cache")
    cache_dir = None if cache_dir is None else str(Path(base_dir) / cache_dir)
    tasks = [
        (inst, iid, a, backend, time_limit, cache_dir, 0)
        for iid, inst in expand_grid(grid, base_dir)
        for a in approaches
        if (iid, a) not in done
    ]
    log.info("%d runs to do, %d already recorded", len(tasks), len(done))
    if workers <= 1:
        for task in tasks:
            append_record(out_csv, _task(task))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for future in as_completed([pool.submit(_task, t) for t in tasks]):
                append_record(out_csv, future.result())
    return read_records(out_csv)


# ---------------------------------------------------------------- CSV


def _cell(value) -> str:
    return "" if value is None else repr(float(value)) if isinstance(value, float) else str(value)


def append_record(path, record: RunRecord) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        writer.writerow([_cell(getattr(record, c)) for c in CSV_COLUMNS])


def write_records(path, records) -> None:
    path = Path(path)
    path.unlink(missing_ok=True)
    path.touch()
    for record in records:
        append_record(path, record)


def read_records(path) -> list[RunRecord]:
    def number(text):
        return None if text == "" else float(text)

    with Path(path).open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    return [
        RunRecord(r["instance_id"], r["approach"], number(r["objective_ms"]), float(r["wall_s"]), r["status"],
                  number(r["gap"]))
        for r in rows
    ]


# ---------------------------------------------------------------- ratios


@dataclass(frozen=True)
class QualityRatio:
    instance_id: str
    numerator: str
    denominator: str
    ratio: float


@dataclass
class QualityReport:
    ratios: list[QualityRatio]
    ecdf: list[tuple[float, float]]
    quantiles: dict[float, float]
    skipped: int

    def fraction_at_least(self, value: float) -> float:
        if not self.ratios:
            return math.nan
        return float(np.mean([r.ratio >= value for r in self.ratios]))


def ecdf(values) -> list[tuple[float, float]]:
    """Sorted (value, fraction of values <= it) pairs, one per distinct value."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        return []
    distinct = np.unique(values)
    counts = np.searchsorted(values, distinct, side="right")
    return [(float(v), float(c) / values.size) for v, c in zip(distinct, counts)]


def quality_ratios(records, baseline: str, approach: str | None = None,
                   quantiles=(0.0, 0.1, 0.5, 0.9, 1.0)) -> dict[str, QualityReport] | QualityReport:
    """Per-instance objective ratios alternative / baseline.

    With ``approach`` given returns that approach's report, else a dict of
    reports for every approach other than the baseline.  Instances where
    either run lacks an objective are skipped and counted.
    """
    by_key = {(r.instance_id, r.approach): r for r in records}
    instances = sorted({r.instance_id for r in records})
    names = [approach] if approach else sorted({r.approach for r in records} - {baseline})
    reports = {}
    for name in names:
        ratios, skipped = [], 0
        for iid in instances:
            alt, base = by_key.get((iid, name)), by_key.get((iid, baseline))
            if alt is None and base is None:
                continue
            if alt is None or base is None or alt.objective_ms is None or base.objective_ms is None:
                skipped += 1
                continue
            ratios.append(QualityRatio(iid, name, baseline, alt.objective_ms / base.objective_ms))
        values = [r.ratio for r in ratios]
        qs = {q: float(np.quantile(values, q)) for q in quantiles} if values else {}
        if skipped:
            log.info("%s vs %s: %d instances skipped for missing runs", name, baseline, skipped)
        reports[name] = QualityReport(ratios, ecdf(values), qs, skipped)
    return reports[approach] if approach else reports

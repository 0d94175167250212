"""Linear formulations of the queue-aware p-median problem.

All four share assignment variables x[c, f], the demand rows and an
objective of (RTT + 1000 * sum of interpolated N) / total demand in ms.
They differ in how server count and offered load are coupled:

* thinned curves: one binary per admissible server count j with an SOS2
  weight vector over that curve's basepoints;
* triangle surfaces: weights over mesh vertices, at most one active triangle;
* quadrilateral surface: weights over mesh vertices, at most one active cell,
  the minimising objective picking the lower hull inside the cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..greedy import alloc
from ..model import Instance, Solution, clean_assignment, evaluated
from ..pwl import BasepointSet, SurfaceMesh
from .milp import MilpModel, MilpResult, SolverAdapter

KINDS = ("curves", "triangle-plus", "triangle-minus", "quadrilateral")
SOLVER_DUST = 1e-6  # MILP feasibility tolerances sit around this level


@dataclass
class Formulation:
    kind: str
    model: MilpModel
    x_index: np.ndarray  # clients x facilities -> variable index
    # per facility: list of (variable index, servers contributed per unit weight)
    y_terms: list[list[tuple[int, float]]] = field(default_factory=list)


@dataclass
class FormulationResult:
    status: str
    x: np.ndarray | None = None
    y_raw: np.ndarray | None = None
    gap: float | None = None
    objective: float | None = None


def _assignment_block(model: MilpModel, instance: Instance) -> np.ndarray:
    scale = 1.0 / instance.total_demand
    x_index = np.empty(instance.latency.shape, dtype=int)
    for c in range(instance.n_clients):
        for f in range(instance.n_facilities):
            x_index[c, f] = model.add_var(f"x_c{c}_f{f}", ub=float(instance.demand[c]))
            model.objective[x_index[c, f]] = instance.latency[c, f] * scale
        model.add_constraint({int(i): 1.0 for i in x_index[c]}, "=", instance.demand[c], f"demand_c{c}")
    return x_index


def build_thinned_curves(instance: Instance, basepoints: BasepointSet, J=None) -> Formulation:
    J = tuple(basepoints.J if J is None else J)
    if not J:
        raise ValueError("J must not be empty")
    if 1 not in J or not set(J) <= set(basepoints.J):
        raise ValueError(f"J={J} must contain 1 and be drawn from {basepoints.J}")
    model = MilpModel("thinned_curves")
    x_index = _assignment_block(model, instance)
    weight = 1000.0 / instance.total_demand
    y_terms = []
    limit: dict[int, float] = {}
    for f in range(instance.n_facilities):
        k_f = int(instance.k[f])
        capacity = {int(i): 1.0 for i in x_index[:, f]}
        count: dict[int, float] = {}
        pick = []
        terms = []
        for j in (j for j in J if j <= k_f):
            curve = basepoints.curve(j)
            on = model.add_var(f"ydot_f{f}_j{j}", binary=True)
            pick.append(on)
            zs = [model.add_var(f"z_f{f}_j{j}_i{i}", ub=1.0) for i in range(curve.m)]
            for z, alpha, theta in zip(zs, curve.alpha, curve.theta):
                model.objective[z] = weight * theta
                capacity[z] = -instance.mu[f] * alpha
            sync = {z: 1.0 for z in zs}
            sync[on] = -1.0
            model.add_constraint(sync, "=", 0.0, f"sync_f{f}_j{j}")
            model.add_sos(2, zs, curve.alpha, f"curve_f{f}_j{j}")
            count[on] = float(j)
            limit[on] = float(j)
            terms.append((on, float(j)))
        model.add_constraint(capacity, "<=", 0.0, f"capacity_f{f}")
        if len(pick) > 1:
            model.add_sos(1, pick, name=f"flip_f{f}")
        model.add_constraint(count, "<=", k_f, f"count_f{f}")
        y_terms.append(terms)
    model.add_constraint(limit, "<=", instance.p, "limit")
    return Formulation("curves", model, x_index, y_terms)


def _build_surface(instance: Instance, mesh: SurfaceMesh) -> Formulation:
    model = MilpModel(mesh.orientation.replace("-", "_"))
    x_index = _assignment_block(model, instance)
    weight = 1000.0 / instance.total_demand
    alpha = mesh.alpha.ravel()
    beta = np.repeat(np.asarray(mesh.base.J, dtype=float), mesh.base.m)
    theta = mesh.theta.ravel()
    pieces = mesh.pieces()
    touching = [[] for _ in alpha]
    for t, piece in enumerate(pieces):
        for v in piece:
            touching[v].append(t)
    y_terms = []
    limit: dict[int, float] = {}
    for f in range(instance.n_facilities):
        opened = model.add_var(f"open_f{f}", binary=True)
        zs = [model.add_var(f"z_f{f}_v{v}", ub=1.0) for v in range(len(alpha))]
        hs = [model.add_var(f"h_f{f}_t{t}", binary=True) for t in range(len(pieces))]
        capacity = {int(i): 1.0 for i in x_index[:, f]}
        count = {}
        for z, a, b, th in zip(zs, alpha, beta, theta):
            model.objective[z] = weight * th
            capacity[z] = -instance.mu[f] * a
            count[z] = b
            limit[z] = b
        model.add_constraint(capacity, "<=", 0.0, f"capacity_f{f}")
        model.add_constraint(count, "<=", int(instance.k[f]), f"count_f{f}")
        open_sync = {z: 1.0 for z in zs}
        open_sync[opened] = -1.0
        model.add_constraint(open_sync, "=", 0.0, f"open_f{f}")
        piece_sync = {h: 1.0 for h in hs}
        piece_sync[opened] = -1.0
        model.add_constraint(piece_sync, "=", 0.0, f"pieces_f{f}")
        model.add_sos(1, hs, name=f"one_piece_f{f}")
        for v, z in enumerate(zs):
            link = {z: 1.0}
            for t in touching[v]:
                link[hs[t]] = -1.0
            model.add_constraint(link, "<=", 0.0, f"vertex_f{f}_v{v}")
        y_terms.append([(z, float(b)) for z, b in zip(zs, beta)])
    model.add_constraint(limit, "=", instance.p, "limit")
    return Formulation(mesh.orientation, model, x_index, y_terms)


def build_triangle_surface(instance: Instance, basepoints: BasepointSet, orientation: str = "plus") -> Formulation:
    name = orientation if orientation.startswith("triangle-") else f"triangle-{orientation}"
    if name not in ("triangle-plus", "triangle-minus"):
        raise ValueError(f"orientation must be plus or minus, got {orientation!r}")
    return _build_surface(instance, SurfaceMesh(basepoints, name))


def build_quad_surface(instance: Instance, basepoints: BasepointSet) -> Formulation:
    return _build_surface(instance, SurfaceMesh(basepoints, "quadrilateral"))


def build(kind: str, instance: Instance, basepoints: BasepointSet) -> Formulation:
    if kind == "curves":
        return build_thinned_curves(instance, basepoints)
    if kind in ("triangle-plus", "triangle-minus"):
        return build_triangle_surface(instance, basepoints, kind)
    if kind == "quadrilateral":
        return build_quad_surface(instance, basepoints)
    raise ValueError(f"unknown formulation {kind!r}; choose from {KINDS}")


def read_result(result: MilpResult, formulation: Formulation, instance: Instance) -> FormulationResult:
    """Assignment and raw (possibly fractional) allocation from a solver result."""
    if not result.has_solution:
        return FormulationResult(result.status, gap=result.gap)
    values = result.values
    x = clean_assignment(values[formulation.x_index], instance.demand, SOLVER_DUST)
    y_raw = np.array([sum(values[i] * s for i, s in terms) for terms in formulation.y_terms])
    if formulation.kind == "curves":
        rounded = np.round(y_raw)
        if np.any(np.abs(rounded - y_raw) > 1e-6):
            raise AssertionError(f"curve formulation returned fractional allocation {y_raw}")
        y_raw = rounded
    return FormulationResult(result.status, x, y_raw, result.gap, result.objective)


def extract_solution(result: FormulationResult, formulation: Formulation, instance: Instance) -> Solution:
    """Solution from a formulation result.

    Curve allocations are integer but may leave budget unused (the limit row
    is an inequality); Alloc hands out the rest.  Surface allocations are
    returned as they come and may be fractional; ``greedy.search`` makes
    them integer.
    """
    if result.x is None:
        raise ValueError(f"no solution to extract (status {result.status})")
    if formulation.kind != "curves":
        return Solution(result.x, result.y_raw)
    y, _ = alloc(instance.p, result.x.sum(axis=0), instance.mu, instance.k, y0=result.y_raw.astype(int))
    return evaluated(instance, Solution(result.x, y))


TIE_SLACK = 1e-9
ALLOCATION_TIE_WEIGHT = 1e-4


def tie_break_model(formulation: Formulation, instance: Instance, optimum: float) -> MilpModel:
    """Model restricted to the optimal objective level, minimising RTT plus a
    small facility-ordered allocation weight.

    Alternative optima are common on surface meshes, and which one a solver
    returns depends on the model's shape; this picks one by a fixed rule.
    """
    model = formulation.model.copy(formulation.model.name + "_tie_break")
    model.add_constraint(model.objective, "<=", optimum + TIE_SLACK * max(1.0, abs(optimum)), "optimal_level")
    secondary: dict[int, float] = {}
    for (c, f), i in np.ndenumerate(formulation.x_index):
        secondary[int(i)] = instance.latency[c, f] / instance.total_demand
    for f, terms in enumerate(formulation.y_terms):
        for i, servers in terms:
            secondary[i] = secondary.get(i, 0.0) + ALLOCATION_TIE_WEIGHT * (f + 1) * servers
    model.set_objective(secondary)
    return model


def solve_formulation(formulation: Formulation, adapter: SolverAdapter, instance: Instance,
                      tie_break: bool = False) -> FormulationResult:
    """Solve and read the result; ``tie_break`` re-solves among the optima (see ``tie_break_model``)."""
    result = adapter.solve(formulation.model)
    if tie_break and result.status == "optimal":
        second = adapter.solve(tie_break_model(formulation, instance, result.objective))
        if second.status == "optimal":
            objective = formulation.model.objective_value(second.values)
            result = MilpResult(result.status, second.values, objective, result.gap, result.message)
    return read_result(result, formulation, instance)

"""Ground truth for small instances by full enumeration of allocations.

For a fixed allocation y the assignment problem has a linear RTT part plus a
convex queueing part per facility, so a local solver finds its optimum.
No piecewise-linear approximation is involved anywhere in this module.
"""
from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
from scipy.optimize import minimize

from ..formulations.builders import SOLVER_DUST
from ..formulations.milp import MilpModel, SolverAdapter, get_adapter
from ..model import (
    UTILISATION_CAP,
    Instance,
    InfeasibleError,
    InfeasibleSolutionError,
    Solution,
    clean_assignment,
    evaluated,
)
from ..queueing import dn_da, n_system

MAX_FACILITIES = 5
MAX_TOTAL_CAPACITY = 30


def allocations(k, p: int):
    """All integer vectors 0 <= y <= k with sum p, in lexicographic order."""
    k = [int(v) for v in k]

    def rec(f, left):
        if f == len(k) - 1:
            if left <= k[f]:
                yield (left,)
            return
        for v in range(min(k[f], left) + 1):
            for rest in rec(f + 1, left - v):
                yield (v,) + rest

    yield from rec(0, p)


def _n_extended(a: float, servers: int) -> tuple[float, float]:
    """N and dN/da, continued linearly past the utilisation cap."""
    if a <= 0:
        return 0.0, 1.0
    cap = UTILISATION_CAP * servers
    if a <= cap:
        return n_system(a, servers), dn_da(a, servers)
    slope = dn_da(cap, servers)
    return n_system(cap, servers) + slope * (a - cap), slope


def assignment_optimum(instance: Instance, y, x0=None) -> tuple[float, np.ndarray | None]:
    """Best assignment for a fixed allocation; returns (objective ms, x)."""
    y = np.asarray(y, dtype=int)
    lam, mu, lat = instance.demand, instance.mu, instance.latency
    total = instance.total_demand
    open_ = np.flatnonzero(y > 0)
    cap = UTILISATION_CAP * mu[open_] * y[open_]
    if open_.size == 0 or lam.sum() > cap.sum() * (1 + 1e-12):
        return math.inf, None
    n_c, n_o = len(lam), len(open_)
    l_open = lat[:, open_]

    def objective(v):
        x = v.reshape(n_c, n_o)
        loads = x.sum(axis=0)
        value = float(np.sum(x * l_open))
        grad = l_open.copy()
        for j, f in enumerate(open_):
            n, slope = _n_extended(loads[j] / mu[f], int(y[f]))
            value += 1000.0 * n
            grad[:, j] += 1000.0 * slope / mu[f]
        return value / total, grad.ravel() / total

    if n_o == 1:
        x = np.zeros((n_c, n_o))
        x[:, 0] = lam
        value = objective(x.ravel())[0]
    else:
        if x0 is None:
            x0 = np.outer(lam, cap / cap.sum())
        eq = np.zeros((n_c, n_c * n_o))
        for c in range(n_c):
            eq[c, c * n_o:(c + 1) * n_o] = 1.0
        ineq = np.zeros((n_o, n_c * n_o))
        for j in range(n_o):
            ineq[j, j::n_o] = -1.0
        with warnings.catch_warnings():
            # SLSQP clips trial steps back into the bounds and says so
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            res = minimize(
                objective,
                np.asarray(x0, dtype=float).ravel(),
                jac=True,
                method="SLSQP",
                bounds=[(0.0, float(lam[c])) for c in range(n_c) for _ in range(n_o)],
                constraints=[
                    {"type": "eq", "fun": lambda v: eq @ v - lam, "jac": lambda v: eq},
                    {"type": "ineq", "fun": lambda v: cap + ineq @ v, "jac": lambda v: ineq},
                ],
                options={"ftol": 1e-14, "maxiter": 1000},
            )
        x = res.x.reshape(n_c, n_o)
    full = np.zeros(lat.shape)
    full[:, open_] = x
    full = clean_assignment(full, lam)
    try:
        return evaluated(instance, Solution(full, y)).objective, full
    except InfeasibleSolutionError:
        # solver stopped outside the capacity tolerance
        return math.inf, None


def oracle_solve(instance: Instance, max_facilities: int = MAX_FACILITIES,
                 max_total_capacity: int = MAX_TOTAL_CAPACITY) -> Solution:
    """Exact optimum by enumerating every allocation with sum p."""
    if instance.n_facilities > max_facilities or int(instance.k.sum()) > max_total_capacity:
        raise ValueError(
            f"oracle limited to {max_facilities} facilities and {max_total_capacity} total servers, "
            f"got {instance.n_facilities} and {int(instance.k.sum())}"
        )
    best_value, best = math.inf, None
    for y in allocations(instance.k, instance.p):
        value, x = assignment_optimum(instance, y)
        if value < best_value - 1e-12:
            best_value, best = value, Solution(x, np.array(y), value)
    if best is None:
        raise InfeasibleError("no allocation can carry the demand")
    return best


def optp_solve(instance: Instance, adapter: SolverAdapter | None = None) -> Solution:
    """Queue-blind p-median: minimise RTT only, then score with exact queueing."""
    adapter = adapter or get_adapter()
    model = MilpModel("p_median")
    n_c, n_f = instance.latency.shape
    x = np.array([[model.add_var(f"x_c{c}_f{f}") for f in range(n_f)] for c in range(n_c)])
    y = [model.add_var(f"y_f{f}", ub=int(instance.k[f]), integer=True) for f in range(n_f)]
    model.set_objective({int(x[c, f]): instance.latency[c, f] / instance.total_demand
                         for c, f in itertools.product(range(n_c), range(n_f))})
    for c in range(n_c):
        model.add_constraint({int(i): 1.0 for i in x[c]}, "=", instance.demand[c], f"demand_c{c}")
    for f in range(n_f):
        row = {int(i): 1.0 for i in x[:, f]}
        row[y[f]] = -UTILISATION_CAP * instance.mu[f]
        model.add_constraint(row, "<=", 0.0, f"capacity_f{f}")
    model.add_constraint({i: 1.0 for i in y}, "=", instance.p, "limit")
    result = adapter.solve(model)
    if not result.has_solution:
        raise InfeasibleError(f"p-median solve ended with status {result.status}")
    assign = clean_assignment(result.values[x], instance.demand, SOLVER_DUST)
    alloc_ = np.round(result.values[y]).astype(int)
    return evaluated(instance, Solution(assign, alloc_))

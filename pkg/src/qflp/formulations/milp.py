"""Solver-independent MILP description, SOS emulation, LP-format export and
adapters for the available backends."""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

SENSES = ("<=", "=", ">=")
DEFAULT_GAP = 1e-6
DEFAULT_TIME_LIMIT = 120.0


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    vtype: str = "C"  # C continuous, B binary, I general integer

    @property
    def binary(self) -> bool:
        return self.vtype == "B"

    @property
    def integral(self) -> bool:
        return self.vtype in ("B", "I")


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


@dataclass
class SosGroup:
    kind: int
    members: list[int]
    weights: list[float]
    name: str = ""


@dataclass
class MilpModel:
    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    sos: list[SosGroup] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)

    def add_var(
        self, name: str, lb: float = 0.0, ub: float = math.inf, binary: bool = False, integer: bool = False
    ) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        vtype = "B" if binary else "I" if integer else "C"
        self.variables.append(Variable(name, lb, ub, vtype))
        return len(self.variables) - 1

    def add_constraint(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "") -> None:
        if sense not in SENSES:
            raise ValueError(f"unknown constraint sense {sense!r}")
        self.constraints.append(Constraint(dict(coeffs), sense, float(rhs), name))

    def add_sos(self, kind: int, members, weights=None, name: str = "") -> None:
        if kind not in (1, 2):
            raise ValueError("only SOS1 and SOS2 groups exist")
        members = list(members)
        weights = list(range(1, len(members) + 1)) if weights is None else list(weights)
        self.sos.append(SosGroup(kind, members, weights, name))

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.objective = dict(coeffs)

    def copy(self, name: str | None = None) -> "MilpModel":
        return MilpModel(
            name or self.name,
            [Variable(v.name, v.lb, v.ub, v.vtype) for v in self.variables],
            [Constraint(dict(c.coeffs), c.sense, c.rhs, c.name) for c in self.constraints],
            [SosGroup(g.kind, list(g.members), list(g.weights), g.name) for g in self.sos],
            dict(self.objective),
        )

    def objective_value(self, values) -> float:
        return float(sum(c * values[i] for i, c in self.objective.items()))

    @property
    def n_binaries(self) -> int:
        return sum(v.binary for v in self.variables)

    def check(self) -> None:
        n = len(self.variables)
        refs = [i for c in self.constraints for i in c.coeffs]
        refs += [i for g in self.sos for i in g.members] + list(self.objective)
        bad = [i for i in refs if not 0 <= i < n]
        if bad:
            raise ValueError(f"model references undeclared variables {sorted(set(bad))[:5]}")


@dataclass
class MilpResult:
    status: str  # optimal | feasible-with-gap | timeout | infeasible | error
    values: np.ndarray | None = None
    objective: float | None = None
    gap: float | None = None
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.values is not None


def emulate_sos(model: MilpModel) -> MilpModel:
    """Replace SOS groups by binary constraints with the same feasible set.

    SOS1: one selector per member (a binary member is its own selector), at
    most one selector on.  SOS2: one binary per segment, exactly one segment
    on, each member bounded by its incident segments.
    """
    if not model.sos:
        return model
    out = MilpModel(
        model.name,
        [Variable(v.name, v.lb, v.ub, v.vtype) for v in model.variables],
        [Constraint(dict(c.coeffs), c.sense, c.rhs, c.name) for c in model.constraints],
        [],
        dict(model.objective),
    )
    for g, group in enumerate(model.sos):
        tag = group.name or f"sos{g}"
        members = [out.variables[i] for i in group.members]
        for v in members:
            if not math.isfinite(v.ub) or v.lb < 0:
                raise ValueError(f"SOS member {v.name} needs bounds within [0, finite]")
        if group.kind == 1:
            selectors = []
            for i, v in zip(group.members, members):
                if v.binary:
                    selectors.append(i)
                    continue
                s = out.add_var(f"{tag}_sel{len(selectors)}", binary=True)
                out.add_constraint({i: 1.0, s: -v.ub}, "<=", 0.0, f"{tag}_link{len(selectors)}")
                selectors.append(s)
            out.add_constraint({s: 1.0 for s in selectors}, "<=", 1.0, f"{tag}_one")
        else:
            n = len(group.members)
            if n <= 2:
                continue
            seg = [out.add_var(f"{tag}_seg{i}", binary=True) for i in range(n - 1)]
            out.add_constraint({s: 1.0 for s in seg}, "=", 1.0, f"{tag}_one")
            for pos, (i, v) in enumerate(zip(group.members, members)):
                near = [seg[s] for s in (pos - 1, pos) if 0 <= s < n - 1]
                coeffs = {i: 1.0}
                for s in near:
                    coeffs[s] = coeffs.get(s, 0.0) - v.ub
                out.add_constraint(coeffs, "<=", 0.0, f"{tag}_adj{pos}")
    return out


# ---------------------------------------------------------------- LP format


def _lp_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


def _lp_terms(coeffs: dict[int, float], names: list[str]) -> str:
    parts = []
    for i, c in coeffs.items():
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {abs(c):.17g} {names[i]}")
    text = " ".join(parts) or "0 " + names[0]
    return text[2:] if text.startswith("+ ") else text


def to_lp_format(model: MilpModel) -> str:
    """CPLEX LP text for the model, including SOS sections."""
    names = [_lp_name(v.name) for v in model.variables]
    if len(set(names)) != len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    lines = [f"\\ {model.name}", "Minimize", f" obj: {_lp_terms(model.objective, names)}", "Subject To"]
    for r, c in enumerate(model.constraints):
        label = _lp_name(c.name) if c.name else f"c{r}"
        lines.append(f" {label}_{r}: {_lp_terms(c.coeffs, names)} {c.sense} {c.rhs:.17g}")
    lines.append("Bounds")
    for v, n in zip(model.variables, names):
        if v.binary:
            continue
        lb = "-inf" if v.lb == -math.inf else f"{v.lb:.17g}"
        ub = "+inf" if v.ub == math.inf else f"{v.ub:.17g}"
        lines.append(f" {lb} <= {n} <= {ub}")
    for section, vtype in (("Binaries", "B"), ("Generals", "I")):
        chosen = [n for v, n in zip(model.variables, names) if v.vtype == vtype]
        if chosen:
            lines.append(section)
            lines += [" " + " ".join(chosen[i:i + 10]) for i in range(0, len(chosen), 10)]
    if model.sos:
        lines.append("SOS")
        for g, group in enumerate(model.sos):
            label = _lp_name(group.name) if group.name else f"s{g}"
            terms = " ".join(f"{names[i]}:{w:.17g}" for i, w in zip(group.members, group.weights))
            lines.append(f" {label}_{g}: S{group.kind}:: {terms}")
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- adapters


class SolverAdapter:
    """Contract: solve a MilpModel to the requested gap or report the best found."""

    name = "abstract"
    supports_sos1 = False
    supports_sos2 = False

    def __init__(self, time_limit_s: float = DEFAULT_TIME_LIMIT, mip_gap: float = DEFAULT_GAP):
        self.time_limit_s = time_limit_s
        self.mip_gap = mip_gap

    def solve(self, model: MilpModel) -> MilpResult:
        raise NotImplementedError

    def _prepare(self, model: MilpModel) -> MilpModel:
        model.check()
        needs = {g.kind for g in model.sos}
        if (1 in needs and not self.supports_sos1) or (2 in needs and not self.supports_sos2):
            return emulate_sos(model)
        return model


class HighsAdapter(SolverAdapter):
    """HiGHS through scipy.optimize.milp; SOS groups are emulated."""

    name = "highs"

    def solve(self, model: MilpModel) -> MilpResult:
        model = self._prepare(model)
        n = len(model.variables)
        cost = np.zeros(n)
        for i, c in model.objective.items():
            cost[i] = c
        rows, cols, vals = [], [], []
        lo, hi = [], []
        for r, con in enumerate(model.constraints):
            for i, c in con.coeffs.items():
                rows.append(r)
                cols.append(i)
                vals.append(c)
            lo.append(con.rhs if con.sense in ("=", ">=") else -np.inf)
            hi.append(con.rhs if con.sense in ("=", "<=") else np.inf)
        constraints = []
        if model.constraints:
            matrix = coo_matrix((vals, (rows, cols)), shape=(len(model.constraints), n)).tocsr()
            constraints.append(LinearConstraint(matrix, lo, hi))
        res = milp(
            cost,
            constraints=constraints,
            integrality=np.array([v.integral for v in model.variables], dtype=int),
            bounds=Bounds([v.lb for v in model.variables], [v.ub for v in model.variables]),
            options={"time_limit": self.time_limit_s, "mip_rel_gap": self.mip_gap, "disp": False},
        )
        gap = getattr(res, "mip_gap", None)
        if res.status == 0:
            return MilpResult("optimal", res.x, float(res.fun), gap or 0.0, res.message)
        if res.status == 2:
            return MilpResult("infeasible", message=res.message)
        if res.status == 1:
            if res.x is not None:
                return MilpResult("feasible-with-gap", res.x, float(res.fun), gap, res.message)
            return MilpResult("timeout", message=res.message)
        return MilpResult("error", message=res.message)


class ScipAdapter(SolverAdapter):
    """SCIP through pyscipopt with native SOS constraints."""

    name = "scip"
    supports_sos1 = True
    supports_sos2 = True

    def solve(self, model: MilpModel) -> MilpResult:
        from pyscipopt import Model, quicksum

        model = self._prepare(model)
        scip = Model(model.name)
        scip.hideOutput()
        scip.setParam("limits/time", self.time_limit_s)
        scip.setParam("limits/gap", self.mip_gap)
        xs = [
            scip.addVar(
                name=f"v{i}",
                vtype=v.vtype,
                lb=None if v.lb == -math.inf else v.lb,
                ub=None if v.ub == math.inf else v.ub,
            )
            for i, v in enumerate(model.variables)
        ]
        for con in model.constraints:
            expr = quicksum(c * xs[i] for i, c in con.coeffs.items())
            if con.sense == "<=":
                scip.addCons(expr <= con.rhs)
            elif con.sense == ">=":
                scip.addCons(expr >= con.rhs)
            else:
                scip.addCons(expr == con.rhs)
        for g in model.sos:
            add = scip.addConsSOS1 if g.kind == 1 else scip.addConsSOS2
            add([xs[i] for i in g.members], weights=list(map(float, g.weights)))
        scip.setObjective(quicksum(c * xs[i] for i, c in model.objective.items()), "minimize")
        scip.optimize()
        status = scip.getStatus()
        if status == "infeasible":
            return MilpResult("infeasible", message=status)
        if scip.getNSols() == 0:
            return MilpResult("timeout" if status == "timelimit" else "error", message=status)
        best = scip.getBestSol()
        values = np.array([scip.getSolVal(best, x) for x in xs])
        gap = scip.getGap()
        label = "optimal" if status in ("optimal", "gaplimit") else "feasible-with-gap"
        return MilpResult(label, values, scip.getSolObjVal(best), gap, status)


BACKENDS = {"highs": HighsAdapter, "scip": ScipAdapter}


def get_adapter(backend: str | None = None, config: dict | None = None, **limits) -> SolverAdapter:
    """Backend from the argument, else QFLP_SOLVER, else config['solver']['backend'], else HiGHS."""
    if backend is None:
        backend = os.environ.get("QFLP_SOLVER")
    if backend is None and config:
        backend = config.get("solver", {}).get("backend")
    backend = (backend or "highs").lower()
    if backend not in BACKENDS:
        raise ValueError(f"unknown solver backend {backend!r}; choose from {sorted(BACKENDS)}")
    return BACKENDS[backend](**limits)

"""Problem data, exact objective evaluation, validation and scenario generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .queueing import n_system

UTILISATION_CAP = 0.98
DEMAND_DISTRIBUTIONS = ("N1", "N2", "Exp")
RESOURCE_SCHEMES = ("d5", "d", "d2", "c", "x")


class InfeasibleSolutionError(ValueError):
    """A solution violates one of demand, capacity, count or limit."""


class InfeasibleError(RuntimeError):
    """No feasible solution exists for the requested operation."""


@dataclass(frozen=True, eq=False)
class Instance:
    clients: tuple
    facilities: tuple
    latency: np.ndarray  # ms, clients x facilities
    demand: np.ndarray  # requests/s per client
    mu: np.ndarray  # requests/s per server, per facility
    k: np.ndarray  # servers available per facility
    p: int
    name: str = ""

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "clients", tuple(self.clients))
        set_(self, "facilities", tuple(self.facilities))
        set_(self, "latency", np.asarray(self.latency, dtype=float).reshape(len(self.clients), len(self.facilities)))
        set_(self, "demand", np.asarray(self.demand, dtype=float))
        set_(self, "mu", np.asarray(self.mu, dtype=float))
        set_(self, "k", np.asarray(self.k, dtype=int))
        set_(self, "p", int(self.p))
        if self.demand.shape != (len(self.clients),):
            raise ValueError("one demand value per client required")
        if self.mu.shape != (len(self.facilities),) or self.k.shape != self.mu.shape:
            raise ValueError("one service rate and capacity per facility required")
        if np.any(self.latency < 0) or np.any(self.demand < 0):
            raise ValueError("latencies and demands must be non-negative")
        if np.any(self.mu <= 0) or np.any(self.k < 1) or self.p < 1:
            raise ValueError("service rates must be positive, capacities and budget at least 1")
        for arr in (self.latency, self.demand, self.mu, self.k):
            arr.setflags(write=False)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def n_facilities(self) -> int:
        return len(self.facilities)

    @property
    def total_demand(self) -> float:
        return float(self.demand.sum())

    def with_budget(self, p: int) -> "Instance":
        return Instance(self.clients, self.facilities, self.latency, self.demand, self.mu, self.k, p, self.name)

    def with_demand(self, demand) -> "Instance":
        return Instance(self.clients, self.facilities, self.latency, demand, self.mu, self.k, self.p, self.name)

    def max_capacity(self) -> float:
        """Largest servable rate with p servers, filling the fastest facilities first."""
        left, cap = self.p, 0.0
        for f in np.argsort(-self.mu, kind="stable"):
            take = min(left, int(self.k[f]))
            cap += take * self.mu[f]
            left -= take
        return UTILISATION_CAP * cap

    def feasibility_issues(self) -> list[str]:
        issues = []
        if self.p > self.k.sum():
            issues.append(f"budget p={self.p} exceeds total capacity {int(self.k.sum())}")
        if self.total_demand > self.max_capacity() * (1 + 1e-12):
            issues.append(f"demand {self.total_demand:g} exceeds servable rate {self.max_capacity():g}")
        return issues

    def to_dict(self) -> dict:
        doc = {
            "clients": list(self.clients),
            "facilities": list(self.facilities),
            "latency_ms": self.latency.tolist(),
            "lambda": self.demand.tolist(),
            "mu": self.mu.tolist(),
            "k": self.k.tolist(),
            "p": self.p,
        }
        if self.name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        return cls(
            doc["clients"], doc["facilities"], doc["latency_ms"], doc["lambda"],
            doc["mu"], doc["k"], doc["p"], doc.get("name", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(eq=False)
class Solution:
    x: np.ndarray
    y: np.ndarray
    objective: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y)

    def loads(self) -> np.ndarray:
        return self.x.sum(axis=0)

    def to_dict(self) -> dict:
        y = [int(v) if float(v).is_integer() else float(v) for v in self.y]
        return {"x": self.x.tolist(), "y": y, "objective_ms": self.objective}

    @classmethod
    def from_dict(cls, doc: dict) -> "Solution":
        return cls(doc["x"], doc["y"], doc.get("objective_ms"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Solution":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(instance: Instance, solution: Solution) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations
    x, y = solution.x, solution.y
    if x.shape != instance.latency.shape or y.shape != instance.mu.shape:
        bad.append(f"shape: x {x.shape}, y {y.shape} do not match the instance")
        return report
    if np.any(x < -1e-9):
        bad.append("assignment: negative request rates")
    assigned = x.sum(axis=1)
    for c in np.flatnonzero(np.abs(assigned - instance.demand) > 1e-6 * instance.demand + 1e-9):
        bad.append(f"demand: client {instance.clients[c]} gets {assigned[c]:g} of {instance.demand[c]:g}")
    if np.any(np.abs(y - np.round(y)) > 1e-9) or np.any(y < 0):
        bad.append(f"count: allocation {y.tolist()} is not a non-negative integer vector")
    load = x.sum(axis=0)
    limit = UTILISATION_CAP * instance.mu * y
    for f in np.flatnonzero(load > limit * (1 + 1e-9) + 1e-9):
        bad.append(f"capacity: facility {instance.facilities[f]} load {load[f]:g} above {limit[f]:g}")
    for f in np.flatnonzero(y > instance.k):
        bad.append(f"count: facility {instance.facilities[f]} uses {y[f]} of {instance.k[f]} servers")
    if abs(float(np.sum(y)) - instance.p) > 1e-9:
        bad.append(f"limit: {float(np.sum(y)):g} servers allocated, budget is {instance.p}")
    return report


def clean_assignment(x, demand, tol: float = 1e-9) -> np.ndarray:
    """Drop solver dust below ``tol`` relative to demand and restore row sums."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    demand = np.asarray(demand, dtype=float)
    x[x < tol * np.maximum(demand, 1.0)[:, None]] = 0.0
    sums = x.sum(axis=1)
    scale = np.divide(demand, sums, out=np.zeros_like(demand), where=sums > 0)
    return x * scale[:, None]


def queueing_term(load: np.ndarray, mu: np.ndarray, y) -> float:
    """Sum over facilities of expected requests in system; idle facilities add 0."""
    total = 0.0
    for lam, rate, servers in zip(load, mu, y):
        if lam > 0:
            total += n_system(lam / rate, int(round(servers)))
    return total


def evaluate(instance: Instance, solution: Solution, check: bool = True) -> float:
    """Average response time in ms: round-trip time plus exact time in system."""
    if check:
        report = validate(instance, solution)
        if not report.ok:
            raise InfeasibleSolutionError("; ".join(report.violations))
    x = solution.x
    rtt = float(np.sum(x * instance.latency))
    # N/lambda is seconds in system per request; weights by load cancel to N
    tis = 1000.0 * queueing_term(x.sum(axis=0), instance.mu, solution.y)
    return float((rtt + tis) / instance.total_demand)


def evaluated(instance: Instance, solution: Solution) -> Solution:
    solution.objective = evaluate(instance, solution)
    return solution


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    demand_dist: str = "Exp"
    resource_scheme: str = "d"
    budget_factor: float = 0.75
    seed: int = 0
    demand_mean: float | None = None  # per-client mean; None derives it from capacity

    def __post_init__(self):
        if self.demand_dist not in DEMAND_DISTRIBUTIONS:
            raise ValueError(f"demand distribution must be one of {DEMAND_DISTRIBUTIONS}")
        if self.resource_scheme not in RESOURCE_SCHEMES:
            raise ValueError(f"resource scheme must be one of {RESOURCE_SCHEMES}")
        if not 0.5 < self.budget_factor <= 1:
            raise ValueError("budget factor must lie in (0.5, 1]")


def sample_demand(n: int, dist: str, mean: float, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if dist == "N1":
        draws = rng.normal(mean, mean / 20, n)
    elif dist == "N2":
        draws = rng.normal(mean, mean, n)
    elif dist == "Exp":
        draws = rng.exponential(mean, n)
    else:
        raise ValueError(f"unknown demand distribution {dist!r}")
    return np.maximum(draws, 0.0)


def gen_demand(n_clients: int, config: ScenarioConfig, k, mu) -> np.ndarray:
    """Client demands averaging half the usable capacity in total."""
    mean = config.demand_mean
    if mean is None:
        mean = UTILISATION_CAP / 2 * float(np.dot(k, mu)) / n_clients
    return sample_demand(n_clients, config.demand_dist, mean, config.seed)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    quota = total * weights / weights.sum()
    out = np.floor(quota).astype(int)
    rest = total - out.sum()
    order = sorted(range(len(quota)), key=lambda i: (-(quota[i] - out[i]), i))
    out[order[:rest]] += 1
    return out


def distribute_resources(degrees, scheme: str, k_total: int | None = None, latency=None) -> np.ndarray:
    """Per-node server capacities for a placement scheme.

    ``degrees`` is in canonical node order; ``latency`` (node x node, ms) is
    needed by scheme ``c`` only.
    """
    degrees = np.asarray(degrees, dtype=float)
    n = len(degrees)
    if scheme == "x":
        return np.full(n, 100, dtype=int)
    if k_total is None:
        k_total = 5 * n
    out = np.zeros(n, dtype=int)
    if scheme == "d5":
        if n < 5:
            raise ValueError("scheme d5 needs at least 5 nodes")
        top = sorted(range(n), key=lambda i: (-degrees[i], i))[:5]
        out[top] = _largest_remainder(np.ones(5), k_total)
    elif scheme == "d":
        out = _largest_remainder(degrees, k_total)
    elif scheme == "d2":
        out = _largest_remainder(degrees**2, k_total)
    elif scheme == "c":
        if latency is None:
            raise ValueError("scheme c needs the latency matrix")
        out[int(np.argmin(np.asarray(latency).sum(axis=1)))] = k_total
    else:
        raise ValueError(f"unknown resource scheme {scheme!r}")
    return out


def budget_from_factor(instance_or_k, a: float) -> int:
    if not 0 < a <= 1:
        raise ValueError("budget factor must lie in (0, 1]")
    k = instance_or_k.k if isinstance(instance_or_k, Instance) else np.asarray(instance_or_k)
    # guard against 0.5625 * 160 = 90.00000000000001
    return math.ceil(round(a * int(np.sum(k)), 9))


def build_instance(node_ids, rtt, capacities, demand, mu: float, p: int, name: str = "") -> Instance:
    """Every node is a client; nodes with capacity become facilities."""
    capacities = np.asarray(capacities, dtype=int)
    fac = np.flatnonzero(capacities > 0)
    return Instance(
        clients=tuple(node_ids),
        facilities=tuple(node_ids[i] for i in fac),
        latency=np.asarray(rtt)[:, fac],
        demand=demand,
        mu=np.full(len(fac), float(mu)),
        k=capacities[fac],
        p=p,
        name=name,
    )

"""Genetic local search over open-facility subsets.

A subset is scored by assigning clients greedily to the nearest facility with
spare capacity, then allocating servers optimally for that assignment.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .greedy import alloc
from .model import UTILISATION_CAP, Instance, InfeasibleError, Solution, evaluate, evaluated

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PopulationEntry:
    subset: frozenset
    y: tuple
    t: float


def greedy_assign(instance: Instance, subset) -> np.ndarray:
    """Fill (client, facility) pairs in order of increasing latency."""
    subset = sorted(subset)
    if not subset:
        raise InfeasibleError("empty facility subset")
    remaining = instance.demand.astype(float).copy()
    capacity = np.zeros(instance.n_facilities)
    capacity[subset] = UTILISATION_CAP * instance.k[subset] * instance.mu[subset]
    pairs = sorted(
        ((instance.latency[c, f], c, f) for c in range(instance.n_clients) for f in subset),
    )
    x = np.zeros(instance.latency.shape)
    for _, c, f in pairs:
        amount = min(remaining[c], capacity[f])
        if amount > 0:
            x[c, f] += amount
            remaining[c] -= amount
            capacity[f] -= amount
    if np.any(remaining > 1e-9 * np.maximum(instance.demand, 1.0)):
        raise InfeasibleError(f"subset {subset} cannot carry the demand")
    return x


def solve_subset(instance: Instance, subset, p: int | None = None) -> tuple[np.ndarray, float]:
    """Allocation and average response time (ms) for a facility subset."""
    p = instance.p if p is None else p
    x = greedy_assign(instance, subset)
    y, _ = alloc(p, x.sum(axis=0), instance.mu, instance.k, subset=sorted(subset))
    return y, evaluate(instance.with_budget(p), Solution(x, y))


def neigh(subset, domain, keep) -> list[frozenset]:
    """Subsets one add, one removal, or one swap away, within keep <= S <= domain."""
    subset, domain, keep = frozenset(subset), frozenset(domain), frozenset(keep)
    if not keep <= subset <= domain:
        raise ValueError("neighbourhood bounds violated")
    addable = sorted(domain - subset)
    removable = sorted(subset - keep)
    found = [subset | {f} for f in addable]
    found += [subset - {f} for f in removable]
    found += [(subset - {r}) | {a} for r in removable for a in addable]
    return list(dict.fromkeys(found))


def _score(instance, subset, p):
    try:
        y, t = solve_subset(instance, subset, p)
    except InfeasibleError:
        return None, math.inf
    return tuple(int(v) for v in y), t


def descent(instance: Instance, subset, p: int | None = None, domain=None, keep=()) -> PopulationEntry:
    """Steepest descent over ``neigh`` until no neighbour improves."""
    p = instance.p if p is None else p
    domain = frozenset(range(instance.n_facilities)) if domain is None else frozenset(domain)
    current = frozenset(subset)
    y, t = _score(instance, current, p)
    while True:
        best = (None, None, t)
        for cand in neigh(current, domain, keep):
            cy, ct = _score(instance, cand, p)
            if ct < best[2]:
                best = (cand, cy, ct)
        if best[0] is None:
            break
        current, y, t = best
    if y is None:
        raise InfeasibleError(f"descent from {sorted(subset)} found no feasible subset")
    return PopulationEntry(current, y, t)


def genetic(
    instance: Instance,
    p: int | None = None,
    population_size: int = 10,
    merge_steps: int | None = None,
    seed=None,
    mutants: int = 3,
) -> Solution:
    p = instance.p if p is None else p
    n_fac = instance.n_facilities
    everything = frozenset(range(n_fac))
    if merge_steps is None:
        merge_steps = min(50 * n_fac, 5000)
    rng = np.random.default_rng(seed)

    population: list[PopulationEntry] = []
    size = max(1, math.isqrt(n_fac))
    attempts, budget = 0, 20 * population_size
    while len(population) < population_size:
        if attempts >= budget:
            if size >= n_fac:
                break
            size, attempts = size + 1, 0
        attempts += 1
        seed_subset = frozenset(int(f) for f in rng.choice(n_fac, size, replace=False))
        try:
            entry = descent(instance, seed_subset, p, everything)
        except InfeasibleError:
            continue
        if all(entry.subset != e.subset for e in population):
            population.append(entry)
    if not population:
        raise InfeasibleError("no feasible initial subset found")
    log.debug("initial population of %d with subset size %d", len(population), size)

    for _ in range(merge_steps):
        if len(population) > 1:
            i, j = rng.choice(len(population), 2, replace=False)
        else:
            i = j = 0
        first, second = population[i].subset, population[j].subset
        common, union = first & second, first | second
        outside = sorted(everything - union)
        picked = rng.choice(outside, min(mutants, len(outside)), replace=False) if outside else []
        domain = (union - common) | frozenset(int(f) for f in picked)
        child = set(common)
        if domain:
            child.add(int(rng.choice(sorted(domain))))
        try:
            entry = descent(instance, child, p, domain | common, common)
        except InfeasibleError:
            continue
        worst = max(range(len(population)), key=lambda e: population[e].t)
        if entry.t < population[worst].t and all(entry.subset != e.subset for e in population):
            population[worst] = entry

    best = min(population, key=lambda e: e.t)
    x = greedy_assign(instance, best.subset)
    return evaluated(instance.with_budget(p), Solution(x, np.array(best.y)))

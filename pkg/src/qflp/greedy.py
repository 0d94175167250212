"""Exact greedy allocation of servers for a fixed assignment, and the Search
loop that turns fractional surface allocations into integer ones."""
from __future__ import annotations

import heapq
import logging
import math
from typing import Callable, Sequence

import numpy as np

from .model import UTILISATION_CAP, Instance, InfeasibleError, Solution, evaluated
from .queueing import n_system

log = logging.getLogger(__name__)

MAX_SEARCH_SOLVES = 50


def max_cost_drop(n: int, gains: Sequence[Callable[[int], float]], caps: Sequence[int]) -> np.ndarray:
    """Drop ``n`` tokens into buckets, always taking the largest next gain.

    ``gains[f](j)`` is the drop in bucket f's cost when its j-th token
    (1-based) arrives.  Optimal when every bucket's gains are non-increasing.
    Ties go to the lowest bucket, then the lowest j.
    """
    caps = [int(c) for c in caps]
    if n < 0:
        raise ValueError("token count must be non-negative")
    if sum(caps) < n:
        raise ValueError(f"insufficient capacity: {sum(caps)} slots for {n} tokens")
    counts = np.zeros(len(caps), dtype=int)
    heap = [(-gains[f](1), f, 1) for f in range(len(caps)) if caps[f] > 0]
    heapq.heapify(heap)
    for _ in range(n):
        _, f, j = heapq.heappop(heap)
        counts[f] += 1
        if j < caps[f]:
            heapq.heappush(heap, (-gains[f](j + 1), f, j + 1))
    return counts


def _in_system(load: float, mu: float, servers: int) -> float:
    return 0.0 if load <= 0 else n_system(load / mu, servers)


def min_servers(loads, mu) -> np.ndarray:
    """Fewest servers keeping each facility within the utilisation cap."""
    need = np.asarray(loads, dtype=float) / (UTILISATION_CAP * np.asarray(mu, dtype=float))
    # tolerance absorbs solver round-off on loads sitting exactly at the cap
    return np.maximum(np.ceil(need - 1e-9), 0).astype(int)


def alloc(p: int, loads, mu, k, y0=None, subset=None, upper=None) -> tuple[np.ndarray, float]:
    """Optimal integer allocation of exactly ``p`` servers for fixed loads.

    Every facility starts at max(y0, minimal servers) and the rest of the
    budget goes where it removes the most expected requests in system.
    ``upper`` caps the result element-wise below ``k``.
    """
    loads = np.asarray(loads, dtype=float)
    mu = np.asarray(mu, dtype=float)
    k = np.asarray(k, dtype=int)
    n_fac = len(loads)
    allowed = np.ones(n_fac, dtype=bool)
    if subset is not None:
        allowed[:] = False
        allowed[list(subset)] = True
    anchor = min_servers(loads, mu)
    if y0 is not None:
        anchor = np.maximum(anchor, np.asarray(y0, dtype=int))
    ceiling = k if upper is None else np.minimum(k, np.asarray(upper, dtype=int))
    for f in range(n_fac):
        if not allowed[f] and (loads[f] > 0 or anchor[f] > 0):
            raise InfeasibleError(f"facility {f} carries load but is outside the subset")
        if anchor[f] > ceiling[f]:
            raise InfeasibleError(f"facility {f} needs {anchor[f]} servers but only {ceiling[f]} are allowed")
    if anchor.sum() > p:
        raise InfeasibleError(f"minimal allocation uses {anchor.sum()} servers, budget is {p}")
    caps = np.where(allowed, ceiling - anchor, 0)

    def gain(f):
        base = int(anchor[f])
        return lambda j: _in_system(loads[f], mu[f], base + j - 1) - _in_system(loads[f], mu[f], base + j)

    try:
        extra = max_cost_drop(p - int(anchor.sum()), [gain(f) for f in range(n_fac)], caps)
    except ValueError as exc:
        raise InfeasibleError(str(exc)) from exc
    y = anchor + extra
    return y, sum(_in_system(loads[f], mu[f], int(y[f])) for f in range(n_fac))


def dealloc(p: int, loads, mu, k, y_start) -> tuple[np.ndarray, float]:
    """Best allocation of ``p`` servers that never exceeds ``y_start``."""
    y_min = min_servers(loads, mu)
    if y_min.sum() > p:
        raise InfeasibleError(f"minimal allocation uses {y_min.sum()} servers, budget is {p}")
    return alloc(p, loads, mu, k, upper=y_start)


def search(
    instance: Instance,
    solve_at: Callable[[int], tuple[np.ndarray, np.ndarray] | None],
    p: int | None = None,
    max_solves: int = MAX_SEARCH_SOLVES,
    trace: list | None = None,
) -> Solution:
    """Integer allocation with exactly ``p`` servers from a fractional solver.

    ``solve_at(p')`` returns (x, fractional y) for budget p', or None when
    infeasible.  Rounded-up allocations that overshoot p are trimmed by
    dealloc; when that is impossible the budget drops by the overshoot and
    the solver runs again.  Infeasible budgets move up by one.
    """
    p = instance.p if p is None else p
    tested: set[int] = set()
    budget, solves = p, 0
    while budget <= p:
        if budget in tested:
            budget += 1
            continue
        tested.add(budget)
        if budget < 1:
            budget += 1
            continue
        if solves >= max_solves:
            break
        solves += 1
        found = solve_at(budget)
        if trace is not None:
            trace.append((budget, found is not None))
        if found is None:
            budget += 1
            continue
        x, y_raw = found
        x = np.clip(np.asarray(x, dtype=float), 0.0, None)
        loads = x.sum(axis=0)
        y = np.maximum(np.ceil(np.asarray(y_raw, dtype=float) - 1e-6), 0).astype(int)
        y = np.maximum(y, min_servers(loads, instance.mu))
        overshoot = int(y.sum()) - p
        try:
            if overshoot < 0:
                y, _ = alloc(p, loads, instance.mu, instance.k, y0=y)
            elif overshoot > 0:
                y, _ = dealloc(p, loads, instance.mu, instance.k, y)
        except InfeasibleError:
            log.debug("budget %d overshoots by %d, retrying lower", budget, overshoot)
            budget -= max(overshoot, 1)
            continue
        return evaluated(instance, Solution(x, y))
    raise InfeasibleError(f"no integer allocation found after {solves} solves")

"""Acceptance gate: one group of tests per criterion.

Each test carries ``@pytest.mark.criterion(n)``; the terminal summary in
conftest prints one PASS/FAIL line per criterion.
"""
from __future__ import annotations

import itertools
import math
import statistics
import time

import numpy as np
import pytest

from helpers import WORKED_ROWS, random_small_instance, two_client_example
from qflp.formulations import build, solve_formulation
from qflp.formulations.milp import get_adapter
from qflp.greedy import alloc, max_cost_drop, min_servers
from qflp.harness.experiment import run_approach
from qflp.harness.oracle import optp_solve, oracle_solve
from qflp.heuristic import genetic
from qflp.model import validate
from qflp.pwl import (
    SurfaceMesh,
    build_J,
    curve_error,
    eval_curve,
    make_set,
    standard_sets,
    surface_error,
)
from qflp.queueing import dn_da, erlang_c, erlang_c_direct, n_system, nonconvexity_witness

LOAD_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.97)
QUEUE_GRID = [(f * k, k) for k in range(1, 121) for f in LOAD_FRACTIONS]


# ---------------------------------------------------------------- 1-4 queueing


@pytest.mark.criterion(1)
def test_erlang_c_matches_factorial_form_on_grid():
    start = time.perf_counter()
    worst = max(abs(erlang_c(a, k) - erlang_c_direct(a, k)) for a, k in QUEUE_GRID)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-9
    assert elapsed < 1.0


@pytest.mark.criterion(2)
def test_recursion_survives_where_factorials_overflow():
    start = time.perf_counter()
    value = erlang_c(0.9 * 10**4, 10**4)
    assert math.isfinite(value) and 0.0 < value < 1.0
    with pytest.raises(OverflowError):
        erlang_c_direct(150.0, 151)
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(3)
def test_derivative_matches_central_differences_on_grid():
    worst = 0.0
    for a, k in QUEUE_GRID:
        h = 1e-6 * max(1.0, a)
        numeric = (n_system(a + h, k) - n_system(a - h, k)) / (2 * h)
        worst = max(worst, abs(dn_da(a, k) - numeric) / abs(numeric))
    assert worst <= 1e-6


@pytest.mark.criterion(4)
@pytest.mark.parametrize(
    "a, k, v1, v2, expected",
    [
        (0.1, 1, 1, 1, -1.72),
        (0.99, 1, 1, 1, -0.47),
        (6.27, 10, 1, 1, -7.94e-5),
        (6.27, 10, 0, 1, 0.06),
        (6.27, 10, 1, 0, 0.03),
        (9.99, 10, 1, 1, -0.009),
    ],
)
def test_nonconvexity_witness_table(a, k, v1, v2, expected):
    assert nonconvexity_witness(a, k, v1, v2) == pytest.approx(expected, abs=0.01)


# ---------------------------------------------------------------- 5 worked example

WORKED_TARGETS = {
    (20, 10): ((3, 0, 2), 56.7),
    (120, 110): ((3, 0, 2), 79.3),
    (180, 170): ((3, 2, 0), 107.2),
}


@pytest.fixture(scope="module")
def worked_runs():
    start = time.perf_counter()
    runs = {}
    for row in WORKED_ROWS:
        inst = two_client_example(*row)
        runs[row] = (oracle_solve(inst), optp_solve(inst))
    return runs, time.perf_counter() - start


@pytest.mark.criterion(5)
@pytest.mark.parametrize("row", sorted(WORKED_TARGETS))
def test_worked_example_rows(worked_runs, row):
    runs, _ = worked_runs
    best, _ = runs[row]
    y, rt = WORKED_TARGETS[row]
    assert tuple(best.y.astype(int)) == y
    assert best.objective == pytest.approx(rt, abs=0.5)


@pytest.mark.criterion(5)
def test_worked_example_queue_awareness_never_hurts(worked_runs):
    runs, elapsed = worked_runs
    for row, (best, blind) in runs.items():
        assert best.objective <= blind.objective + 1e-9, row
    assert elapsed < 60.0


# ---------------------------------------------------------------- 6 greedy


def _greedy_case(seed):
    rng = np.random.default_rng(seed)
    n_f = int(rng.integers(2, 5))
    k = rng.integers(1, 9, n_f)
    mu = rng.uniform(1.0, 10.0, n_f)
    # loads between empty and two thirds of the capped capacity
    loads = rng.uniform(0.0, 0.66, n_f) * 0.98 * k * mu
    loads[rng.random(n_f) < 0.2] = 0.0
    y_min = min_servers(loads, mu)
    spare = int((k - y_min).sum())
    n = int(rng.integers(1, min(6, spare) + 1)) if spare else 0
    return loads, mu, k, y_min, n


def _compositions(n, caps):
    for counts in itertools.product(*(range(c + 1) for c in caps)):
        if sum(counts) == n:
            yield counts


def _in_system(load, mu, servers):
    return 0.0 if load == 0 else n_system(load / mu, servers)


@pytest.mark.criterion(6)
def test_greedy_matches_enumeration():
    start = time.perf_counter()
    mismatches = []
    for seed in range(200):
        loads, mu, k, y_min, n = _greedy_case(seed)
        caps = k - y_min

        def cost(f, j):
            return _in_system(loads[f], mu[f], int(y_min[f]) + j)

        gains = [(lambda j, f=f: cost(f, j - 1) - cost(f, j)) for f in range(len(k))]
        drop = max_cost_drop(n, gains, caps)
        greedy_total = sum(cost(f, int(drop[f])) for f in range(len(k)))
        brute_total = min(sum(cost(f, c[f]) for f in range(len(k))) for c in _compositions(n, caps))
        p = int(y_min.sum()) + n
        y, total = alloc(p, loads, mu, k)
        brute_alloc = min(
            sum(_in_system(loads[f], mu[f], int(y_min[f]) + c[f]) for f in range(len(k)))
            for c in _compositions(n, caps)
        )
        if abs(greedy_total - brute_total) > 1e-9 or abs(total - brute_alloc) > 1e-9 or y.sum() != p:
            mismatches.append(seed)
    assert mismatches == []
    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------- 7-8 formulations

FORMULATION_SEEDS = range(20)
THINNED = "curves-thinned:6,4^i"


@pytest.fixture(scope="module")
def formulation_runs():
    adapter = get_adapter()
    start = time.perf_counter()
    runs = []
    for seed in FORMULATION_SEEDS:
        inst = random_small_instance(seed)
        k_max = int(inst.k.max())
        full, thin = make_set(30, "k100", k_max), make_set(6, "4^i", k_max)
        errors = [max(curve_error(full.curve(j)) for j in full.J if j <= k_f) for k_f in inst.k]
        eps = 1000.0 * sum(errors) / inst.total_demand
        row = {"instance": inst, "eps": eps, "oracle": oracle_solve(inst).objective}
        for name, approach, bps in [
            ("full", "curves-full", full),
            ("thinned", THINNED, thin),
            ("quad", "quad:6,4^i", thin),
            ("tri-plus", "tri-plus:6,4^i", thin),
        ]:
            t0 = time.perf_counter()
            solution, status, _ = run_approach(inst, approach, adapter, basepoints=bps)
            row[name] = (solution, time.perf_counter() - t0)
        row["full_milp"] = _milp_objective(inst, full, adapter)
        runs.append(row)
    return runs, time.perf_counter() - start


def _milp_objective(inst, bps, adapter):
    return solve_formulation(build("curves", inst, bps), adapter, inst).objective


@pytest.mark.criterion(7)
def test_full_curves_within_linearisation_error_of_oracle(formulation_runs):
    runs, _ = formulation_runs
    for row in runs:
        best, eps = row["oracle"], row["eps"]
        exact = row["full"][0].objective
        assert best - 1e-6 <= exact <= best + eps, row["instance"].name
        assert best - 1e-6 <= row["full_milp"] <= best + eps, row["instance"].name


@pytest.mark.criterion(7)
def test_quadrilateral_matches_triangle_plus_after_search(formulation_runs):
    runs, _ = formulation_runs
    gaps = {row["instance"].name: abs(row["quad"][0].objective - row["tri-plus"][0].objective) for row in runs}
    assert max(gaps.values()) <= 1e-6, gaps


@pytest.mark.criterion(7)
def test_search_returns_integer_allocations_using_the_budget(formulation_runs):
    runs, elapsed = formulation_runs
    for row in runs:
        inst = row["instance"]
        for name in ("quad", "tri-plus"):
            solution = row[name][0]
            assert np.all(solution.y == np.round(solution.y))
            assert int(solution.y.sum()) == inst.p
            assert validate(inst, solution).ok
    assert elapsed < 600.0


@pytest.mark.criterion(8)
def test_thinned_curves_stay_close_to_baseline(formulation_runs):
    runs, _ = formulation_runs
    for row in runs:
        baseline = row["full"][0].objective
        assert row["thinned"][0].objective >= baseline - 0.05 * baseline, row["instance"].name


@pytest.mark.criterion(8)
def test_thinned_curves_solve_faster_on_median(formulation_runs):
    runs, _ = formulation_runs
    thinned = statistics.median(row["thinned"][1] for row in runs)
    baseline = statistics.median(row["full"][1] for row in runs)
    assert thinned <= baseline


# ---------------------------------------------------------------- 9 heuristic


@pytest.mark.criterion(9)
def test_genetic_on_worked_example():
    inst = two_client_example(20, 10)
    best = oracle_solve(inst).objective
    start = time.perf_counter()
    found = []
    for seed in range(15):
        solution = genetic(inst, seed=seed)
        assert validate(inst, solution).ok, seed
        assert np.all(solution.y == np.round(solution.y)) and int(solution.y.sum()) == inst.p
        found.append(solution.objective)
    assert min(found) <= 1.10 * best
    assert time.perf_counter() - start < 60.0


# ---------------------------------------------------------------- 10 pwl


@pytest.mark.criterion(10)
def test_chords_over_estimate_every_generated_curve():
    start = time.perf_counter()
    sets = list(standard_sets(100).values()) + [make_set(30, "k100", 8)]
    violations = []
    for bps in sets:
        for curve in bps.curves:
            for a in np.linspace(0.0, curve.alpha[-1], 400):
                if eval_curve(curve, a) < n_system(a, curve.j) - 1e-12:
                    violations.append((bps.label, curve.j, a))
    assert violations == []
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(10)
def test_surface_error_falls_when_m_doubles():
    start = time.perf_counter()
    errors = [surface_error(SurfaceMesh(make_set(m, "4^i", 100), "triangle-plus")) for m in (4, 8, 16, 32)]
    assert all(later < earlier for earlier, later in zip(errors, errors[1:])), errors
    assert build_J("4^i", 100) == (1, 4, 16, 64, 100)
    assert time.perf_counter() - start < 30.0

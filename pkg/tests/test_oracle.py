import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from helpers import random_small_instance, two_client_example
from qflp.harness.oracle import allocations, assignment_optimum, optp_solve, oracle_solve
from qflp.model import Instance, InfeasibleError, Solution, evaluate, validate
from qflp.queueing import dn_da, n_system, t_system


def _split_cost(inst, y, s):
    """Objective when the single client sends s to facility 0 and the rest to 1."""
    x = np.array([[s, inst.demand[0] - s]])
    return evaluate(inst, Solution(x, y), check=False)


class TestAllocations:
    def test_enumerates_bounded_compositions(self):
        found = list(allocations([2, 1, 3], 3))
        assert len(found) == len(set(found))
        assert all(sum(y) == 3 and y[0] <= 2 and y[1] <= 1 and y[2] <= 3 for y in found)
        brute = [(a, b, c) for a in range(3) for b in range(2) for c in range(4) if a + b + c == 3]
        assert found == sorted(brute)

    def test_impossible_budget(self):
        assert list(allocations([1, 1], 3)) == []


class TestAssignmentOptimum:
    @pytest.mark.parametrize("y", [(1, 1), (2, 1), (1, 3), (3, 2)])
    def test_matches_one_dimensional_search(self, y):
        inst = Instance(("c",), ("f", "g"), [[5.0, 20.0]], [12.0], [10.0, 8.0], [3, 3], sum(y))
        value, x = assignment_optimum(inst, y)
        lam = inst.demand[0]
        low = max(0.0, lam - 0.98 * 8.0 * y[1])
        high = min(lam, 0.98 * 10.0 * y[0])
        ref = minimize_scalar(lambda s: _split_cost(inst, y, s), bounds=(low, high), method="bounded",
                              options={"xatol": 1e-10})
        assert value == pytest.approx(ref.fun, abs=1e-4)
        assert validate(inst, Solution(x, y)).ok

    @pytest.mark.parametrize("seed", range(6))
    def test_marginal_costs_balance(self, seed):
        # at an interior optimum every used facility has the least marginal cost for its client
        inst = random_small_instance(seed)
        y = next(y for y in allocations(inst.k, inst.p) if all(v > 0 for v in y) or y == tuple(inst.k))
        value, x = assignment_optimum(inst, y)
        assert math.isfinite(value)
        loads = x.sum(axis=0)
        open_ = [f for f in range(inst.n_facilities) if y[f] > 0]
        if any(loads[f] >= 0.98 * inst.mu[f] * y[f] - 1e-6 for f in open_):
            pytest.skip("a capacity row binds, marginal costs need not balance")
        slope = {f: dn_da(loads[f] / inst.mu[f], y[f]) if loads[f] > 0 else 1.0 for f in open_}  # dN/da -> 1 at a = 0
        marginal = {f: inst.latency[:, f] + 1000.0 * slope[f] / inst.mu[f] for f in open_}
        for c in range(inst.n_clients):
            least = min(marginal[f][c] for f in open_)
            for f in open_:
                if x[c, f] > 1e-6 * inst.demand[c]:
                    assert marginal[f][c] == pytest.approx(least, rel=1e-4, abs=1e-4)

    def test_closed_everywhere(self):
        value, x = assignment_optimum(two_client_example(), (0, 0, 0))
        assert value == math.inf and x is None

    def test_too_little_capacity(self):
        value, _ = assignment_optimum(two_client_example(200, 190), (1, 0, 0))
        assert value == math.inf


class TestOracle:
    def test_worked_example_row_one(self):
        best = oracle_solve(two_client_example())
        assert tuple(best.y) == (3, 0, 2)
        assert best.objective == pytest.approx(56.7, abs=0.05)
        assert validate(two_client_example(), best).ok

    def test_queue_blind_allocation_of_row_one(self):
        x = np.zeros((2, 3))
        x[0, 0], x[1, 2] = 20.0, 10.0
        assert evaluate(two_client_example(), Solution(x, [1, 1, 3])) == pytest.approx(62.2, abs=0.05)

    def test_single_facility(self):
        inst = Instance(("a", "b"), ("f",), [[3.0], [9.0]], [2.0, 4.0], [5.0], [4], 3)
        best = oracle_solve(inst)
        assert best.y.tolist() == [3]
        assert best.x.tolist() == [[2.0], [4.0]]
        expected = (2 * 3.0 + 4 * 9.0) / 6.0 + 1000.0 * t_system(6.0, 5.0, 3)
        assert best.objective == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_outputs_validate(self, seed):
        inst = random_small_instance(seed)
        assert validate(inst, oracle_solve(inst)).ok

    def test_size_guard(self):
        big = Instance(("c",), tuple(f"f{i}" for i in range(6)), [[1.0] * 6], [1.0], [1.0] * 6, [1] * 6, 2)
        with pytest.raises(ValueError):
            oracle_solve(big)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            oracle_solve(two_client_example(700, 600))

    def test_beats_every_single_allocation(self):
        inst = random_small_instance(9)
        best = oracle_solve(inst)
        for y in allocations(inst.k, inst.p):
            assert best.objective <= assignment_optimum(inst, y)[0] + 1e-9


class TestQueueBlind:
    def test_minimises_round_trip_time(self):
        inst = two_client_example()
        solution = optp_solve(inst)
        rtt = float(np.sum(solution.x * inst.latency)) / inst.total_demand
        assert rtt == pytest.approx(40.0)
        assert int(solution.y.sum()) == inst.p and validate(inst, solution).ok

    @pytest.mark.parametrize("seed", range(4))
    def test_never_beats_the_oracle(self, seed):
        inst = random_small_instance(seed)
        assert optp_solve(inst).objective >= oracle_solve(inst).objective - 1e-9

    def test_exact_queueing_score(self):
        inst = two_client_example()
        solution = optp_solve(inst)
        loads = solution.x.sum(axis=0)
        tis = sum(n_system(l / m, int(y)) for l, m, y in zip(loads, inst.mu, solution.y) if l > 0)
        expected = (float(np.sum(solution.x * inst.latency)) + 1000.0 * tis) / inst.total_demand
        assert solution.objective == pytest.approx(expected, rel=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qflp.queueing import (
    dn_da,
    erlang_c,
    erlang_c_direct,
    metrics,
    n_queue,
    n_system,
    n_system_batch,
    nonconvexity_witness,
    t_queue,
    t_system,
    v_batch,
    v_recursive,
)

steady = st.integers(1, 120).flatmap(lambda k: st.tuples(st.floats(0.001, 0.999).map(lambda f: f * k), st.just(k)))
# below about a tenth of k the queueing probability underflows for large k
busy = st.integers(1, 120).flatmap(lambda k: st.tuples(st.floats(0.1, 0.99).map(lambda f: f * k), st.just(k)))


class TestV:
    @pytest.mark.parametrize("a, k, expected", [(2.0, 1, 0.5), (2.0, 3, 3.75)])
    def test_values(self, a, k, expected):
        assert v_recursive(a, k) == pytest.approx(expected, rel=1e-15)

    def test_matches_direct_sum(self):
        a, k = 3.3, 7
        direct = sum(math.factorial(k) / math.factorial(i) * a ** (i - k) for i in range(k))
        assert v_recursive(a, k) == pytest.approx(direct, rel=1e-13)

    def test_large_k_stays_finite(self):
        assert math.isfinite(v_recursive(139.0, 140))
        assert math.isfinite(v_recursive(0.9e5, 10**5))

    @pytest.mark.parametrize("a, k", [(0.0, 1), (-1.0, 3), (1.0, 0)])
    def test_domain(self, a, k):
        with pytest.raises(ValueError):
            v_recursive(a, k)

    def test_batch(self):
        assert v_batch([2, 2], [1, 3]) == pytest.approx([0.5, 3.75])
        assert len(v_batch([], [])) == 0
        assert v_batch([0.5], [100])[0] == pytest.approx(v_recursive(0.5, 100), rel=1e-12)

    def test_batch_length_mismatch(self):
        with pytest.raises(ValueError):
            v_batch([1.0, 2.0], [3])


class TestErlangC:
    @pytest.mark.parametrize("fn", [erlang_c, erlang_c_direct])
    @pytest.mark.parametrize("a, k, expected", [(0.5, 1, 0.5), (2.0, 3, 4 / 9)])
    def test_values(self, fn, a, k, expected):
        assert fn(a, k) == pytest.approx(expected, rel=1e-12)

    def test_direct_overflow_is_reported(self):
        with pytest.raises(OverflowError):
            erlang_c_direct(150.0, 151)

    def test_in_unit_interval(self):
        assert 0.0 < erlang_c(6.27, 10) < 1.0

    @pytest.mark.parametrize("a, k", [(3.0, 3), (4.0, 3), (0.0, 2), (-0.1, 2)])
    def test_domain(self, a, k):
        with pytest.raises(ValueError):
            erlang_c(a, k)

    @settings(max_examples=200, deadline=None)
    @given(steady)
    def test_agrees_with_direct_form(self, case):
        a, k = case
        assert abs(erlang_c(a, k) - erlang_c_direct(a, k)) <= 1e-9

    @settings(max_examples=100, deadline=None)
    @given(busy, st.floats(1.001, 1.2))
    def test_increasing_in_load(self, case, factor):
        a, k = case
        b = min(a * factor, 0.9999 * k)
        if b > a:
            assert erlang_c(b, k) > erlang_c(a, k)


class TestCounts:
    @pytest.mark.parametrize("a, k, expected", [(0.5, 1, 1.0), (2.0, 3, 26 / 9), (0.5, 2, 0.5 / 1.5 * 0.1 + 0.5)])
    def test_n_system(self, a, k, expected):
        assert n_system(a, k) == pytest.approx(expected, rel=1e-12)

    def test_empty_system(self):
        assert n_system(0.0, 4) == 0.0
        assert n_queue(0.0, 4) == 0.0

    def test_n_queue(self):
        assert n_queue(0.5, 1) == pytest.approx(0.5)

    def test_batch_matches_scalar(self):
        a = np.array([0.0, 0.5, 2.0, 6.27])
        k = np.array([1, 2, 3, 10])
        assert n_system_batch(a, k) == pytest.approx([n_system(x, int(y)) for x, y in zip(a, k)], rel=1e-12)

    def test_convex_in_load(self):
        for k in (1, 2, 5, 20, 80):
            a = np.linspace(0.01, 0.98 * k, 400)
            n = n_system_batch(a, np.full_like(a, k, dtype=int))
            assert np.all(np.diff(n, 2) >= -1e-9)


class TestTimes:
    @pytest.mark.parametrize("lam, mu, k, expected", [(0.5, 1.0, 1, 2.0), (2.0, 1.0, 3, 1 + 4 / 9)])
    def test_t_system(self, lam, mu, k, expected):
        assert t_system(lam, mu, k) == pytest.approx(expected, rel=1e-12)

    def test_t_queue(self):
        assert t_queue(2.0, 1.0, 3) == pytest.approx(4 / 9, rel=1e-12)

    def test_light_load_limit(self):
        assert t_system(1e-9, 5.0, 3) == pytest.approx(1 / 5.0, rel=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(steady, st.floats(0.5, 50.0))
    def test_littles_law(self, case, mu):
        a, k = case
        lam = a * mu
        assert abs(t_system(lam, mu, k) * lam - n_system(a, k)) <= 1e-9 * n_system(a, k)

    def test_decreasing_in_servers(self):
        times = [t_system(4.0, 1.0, k) for k in range(5, 15)]
        assert all(b < a for a, b in zip(times, times[1:]))

    def test_metrics_bundle(self):
        m = metrics(2.0, 1.0, 3)
        assert (m.ec, m.n_system, m.t_system) == pytest.approx((4 / 9, 26 / 9, 13 / 9))
        assert m.n_queue == pytest.approx(m.n_system - 2.0)
        assert m.t_queue == pytest.approx(m.t_system - 1.0)


class TestDerivative:
    def test_single_server(self):
        assert dn_da(0.5, 1) == pytest.approx(4.0, rel=1e-12)

    def test_finite_difference(self):
        h = 1e-6
        numeric = (n_system(2 + h, 3) - n_system(2 - h, 3)) / (2 * h)
        assert dn_da(2.0, 3) == pytest.approx(numeric, rel=1e-6)

    def test_grows_with_load(self):
        assert dn_da(9.0, 10) > dn_da(5.0, 10) > 0

    def test_large_k_close_to_boundary(self):
        assert math.isfinite(dn_da(1e-10, 100))
        assert math.isfinite(dn_da(97.9, 100))


class TestWitness:
    def test_sign_pattern(self):
        assert nonconvexity_witness(0.1, 1, 1, 1) < 0
        assert nonconvexity_witness(6.27, 10, 0, 1) > 0

    def test_domain(self):
        with pytest.raises(ValueError):
            nonconvexity_witness(10.0, 10, 1, 1)

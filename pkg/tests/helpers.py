"""Shared instance builders for the test suite."""
from __future__ import annotations

import numpy as np

from qflp.model import Instance

# Rows of the two-client, three-facility worked example: (lambda_a, lambda_b).
WORKED_ROWS = [
    (20, 10), (40, 30), (60, 50), (80, 70), (100, 90), (120, 110), (140, 130),
    (160, 150), (180, 170), (200, 190), (220, 210), (240, 230), (260, 250), (280, 270),
]


def two_client_example(lam_a: float = 20.0, lam_b: float = 10.0, middle_rtt: float = 100.0, p: int = 5) -> Instance:
    """Clients a, b; facilities f1..f3 with k=10, mu=(60, 120, 60) and p=5.

    Client a sits 40 ms from f1 and 100 ms from f3, client b the reverse;
    both reach the fast middle facility in ``middle_rtt`` ms.
    """
    latency = [[40.0, middle_rtt, 100.0], [100.0, middle_rtt, 40.0]]
    return Instance(("a", "b"), ("f1", "f2", "f3"), latency, [lam_a, lam_b], [60.0, 120.0, 60.0], [10, 10, 10], p,
                    f"two-client-{lam_a:g}-{lam_b:g}")


def random_small_instance(seed: int, max_facilities: int = 4, max_clients: int = 5, k_max: int = 8,
                          max_total_k: int = 30) -> Instance:
    """Random instance inside the oracle's guard, feasible for every allocation.

    Total demand is 30-70% of the capped capacity of p servers at the
    slowest facility, so any allocation with sum p can carry it.
    """
    rng = np.random.default_rng(seed)
    n_f = int(rng.integers(2, max_facilities + 1))
    n_c = int(rng.integers(2, max_clients + 1))
    while True:
        k = rng.integers(1, k_max + 1, n_f)
        if k.sum() <= max_total_k and k.max() >= 2:
            break
    p = int(rng.integers(max(2, (int(k.sum()) + 1) // 2), int(k.sum()) + 1))
    mu = rng.uniform(5.0, 20.0, n_f)
    total = rng.uniform(0.3, 0.7) * 0.98 * p * mu.min()
    demand = total * rng.dirichlet(np.ones(n_c))
    latency = rng.uniform(1.0, 100.0, (n_c, n_f))
    return Instance(tuple(f"c{i}" for i in range(n_c)), tuple(f"f{i}" for i in range(n_f)), latency, demand, mu, k,
                    p, f"random-{seed}")

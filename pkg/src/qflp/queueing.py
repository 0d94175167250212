"""M/M/k performance measures built on the V recursion.

The textbook Erlang-C expression divides two sums of ``a**i / i!`` terms and
overflows once ``k`` approaches 150.  Everything here goes through

    V(a, 1) = 1/a,    V(a, k) = (k/a) * (V(a, k-1) + 1)

which stays finite for very large ``k`` as long as ``a < k``.
``erlang_c_direct`` keeps the factorial form around as a test oracle only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QueueMetrics:
    ec: float
    n_system: float
    t_system: float
    n_queue: float
    t_queue: float


def _check_load(a: float, k: int) -> None:
    if k < 1 or int(k) != k:
        raise ValueError(f"server count must be an integer >= 1, got {k}")
    if not 0 < a < k:
        raise ValueError(f"offered load {a} outside steady state (0, {k})")


def v_recursive(a: float, k: int) -> float:
    if a <= 0:
        raise ValueError(f"offered load must be positive, got {a}")
    if k < 1 or int(k) != k:
        raise ValueError(f"server count must be an integer >= 1, got {k}")
    v = 1.0 / a
    for i in range(2, int(k) + 1):
        v = i / a * (v + 1.0)
    return v


def v_batch(a, k) -> np.ndarray:
    """Element-wise ``v_recursive`` in a single pass over ``max(k)`` steps."""
    a = np.asarray(a, dtype=float)
    k = np.asarray(k, dtype=int)
    if a.shape != k.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {k.shape}")
    if a.size == 0:
        return np.zeros(0)
    if np.any(a <= 0) or np.any(k < 1):
        raise ValueError("v_batch needs a > 0 and k >= 1 everywhere")
    v = 1.0 / a
    with np.errstate(over="ignore"):
        for i in range(2, int(k.max()) + 1):
            active = k >= i
            v[active] = i / a[active] * (v[active] + 1.0)
    return v


def erlang_c(a: float, k: int) -> float:
    _check_load(a, k)
    v = v_recursive(a, k)
    return k / (k + (k - a) * v)


def erlang_c_direct(a: float, k: int) -> float:
    """Factorial-sum Erlang-C; raises ``OverflowError`` instead of returning inf/nan."""
    _check_load(a, k)
    try:
        top = float(a) ** k / math.factorial(k) * k / (k - a)
        bottom = sum(float(a) ** i / math.factorial(i) for i in range(k)) + top
    except OverflowError as exc:
        raise OverflowError(f"factorial form overflows at a={a}, k={k}") from exc
    if not (math.isfinite(top) and math.isfinite(bottom)):
        raise OverflowError(f"factorial form overflows at a={a}, k={k}")
    return top / bottom


def n_system(a: float, k: int) -> float:
    """Expected number of requests in an M/M/k system at offered load ``a``.

    ``a == 0`` is the empty system and returns 0.
    """
    if a == 0 and k >= 1:
        return 0.0
    _check_load(a, k)
    v = v_recursive(a, k)
    return a + a * k / ((k - a) * k + (k - a) ** 2 * v)


def n_queue(a: float, k: int) -> float:
    if a == 0 and k >= 1:
        return 0.0
    _check_load(a, k)
    v = v_recursive(a, k)
    return a * k / ((k - a) * k + (k - a) ** 2 * v)


def t_system(lam: float, mu: float, k: int) -> float:
    if mu <= 0:
        raise ValueError(f"service rate must be positive, got {mu}")
    a = lam / mu
    _check_load(a, k)
    v = v_recursive(a, k)
    slack = mu * k - lam
    return 1.0 / mu + k / (slack * k + slack**2 / mu * v)


def t_queue(lam: float, mu: float, k: int) -> float:
    if mu <= 0:
        raise ValueError(f"service rate must be positive, got {mu}")
    a = lam / mu
    _check_load(a, k)
    v = v_recursive(a, k)
    slack = mu * k - lam
    return k / (slack * k + slack**2 / mu * v)


def metrics(lam: float, mu: float, k: int) -> QueueMetrics:
    a = lam / mu
    return QueueMetrics(
        ec=erlang_c(a, k),
        n_system=n_system(a, k),
        t_system=t_system(lam, mu, k),
        n_queue=n_queue(a, k),
        t_queue=t_queue(lam, mu, k),
    )


def dn_da(a: float, k: int) -> float:
    """Derivative of ``n_system`` in ``a`` at fixed ``k``.

    The closed form in V(a, k) and V(a, k-1) is divided through by V(a, k)**2,
    with V(a, k-1)/V(a, k) = a/k - 1/V(a, k) from the recursion.  Written in
    w = 1/V it stays finite where V itself overflows (small a, large k).
    """
    _check_load(a, k)
    w = 1.0 / v_recursive(a, k)
    s = k - a
    return (
        k * (k + 1) * w / (s**2 + k * s * w)
        + 1.0
        + a * k * w / (s**3 + s**2 * k * w)
        - (a * k * s * w - k**2 * s * w**2 - a * k * w + k**3 * w**2) / (s * (s + k * w) ** 2)
    )


def nonconvexity_witness(a: float, k: int, v1: float, v2: float) -> float:
    """Quadratic form of the mixed (k, a) Hessian of Erlang-C along ``(v1, v2)``.

    The k-direction uses exact integer differences over k, k+1, k+2; the
    a-direction uses central differences with step ``1e-6 * max(1, a)``.
    A negative value shows EC is not jointly convex at that point.
    """
    _check_load(a, k)
    h = 1e-6 * max(1.0, a)
    if a + h >= k or a - h <= 0:
        raise ValueError(f"offered load {a} too close to the domain edge for k={k}")

    def d_da(kk):
        return (erlang_c(a + h, kk) - erlang_c(a - h, kk)) / (2 * h)

    second_k = erlang_c(a, k + 2) - 2 * erlang_c(a, k + 1) + erlang_c(a, k)
    mixed = d_da(k + 1) - d_da(k)
    second_a = (erlang_c(a + h, k) - 2 * erlang_c(a, k) + erlang_c(a - h, k)) / h**2
    return v1**2 * second_k + 2 * v1 * v2 * mixed + v2**2 * second_a


def n_system_batch(a, k) -> np.ndarray:
    """Vectorised ``n_system``; zero load maps to zero."""
    a = np.asarray(a, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=int), a.shape)
    if np.any(a < 0) or np.any(a >= k):
        raise ValueError("n_system_batch needs 0 <= a < k everywhere")
    out = np.zeros(a.shape)
    busy = a > 0
    if busy.any():
        ab, kb = a[busy], k[busy]
        v = v_batch(ab, kb)
        out[busy] = ab + ab * kb / ((kb - ab) * kb + (kb - ab) ** 2 * v)
    return out

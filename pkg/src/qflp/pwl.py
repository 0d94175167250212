"""Piecewise-linear approximations of N_j(a) = n_system(a, j).

Curves are chord interpolants on [0, 0.98 j].  Surfaces join the curves of a
basepoint set into a mesh over (a, j) with rows at the server counts in J.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .queueing import dn_da, n_system, n_system_batch

log = logging.getLogger(__name__)

UTILISATION_CAP = 0.98

# (m, J shorthand) pairs used as the default configurations
SELECTED_SETS = (("2^i", 15), ("3^i", 8), ("4^i", 6), ("k100", 8))

ORIENTATIONS = ("triangle-plus", "triangle-minus", "quadrilateral")


@dataclass(frozen=True)
class Basepoint:
    alpha: float
    beta: float
    theta: float


@dataclass(frozen=True)
class CurvePWL:
    j: int
    alpha: tuple[float, ...]
    theta: tuple[float, ...]

    def __post_init__(self):
        if len(self.alpha) < 4 or len(self.alpha) != len(self.theta):
            raise ValueError("a curve needs at least 4 basepoints")
        if any(b <= a for a, b in zip(self.alpha, self.alpha[1:])):
            raise ValueError(f"abscissae of curve j={self.j} not strictly increasing")

    @property
    def m(self) -> int:
        return len(self.alpha)

    @property
    def points(self) -> list[Basepoint]:
        return [Basepoint(a, self.j, t) for a, t in zip(self.alpha, self.theta)]


@dataclass(frozen=True)
class BasepointSet:
    m: int
    J: tuple[int, ...]
    curves: tuple[CurvePWL, ...]

    def __post_init__(self):
        if list(self.J) != sorted(set(self.J)) or self.J[0] != 1:
            raise ValueError(f"J must be strictly increasing and start at 1, got {self.J}")
        if [c.j for c in self.curves] != list(self.J):
            raise ValueError("one curve per element of J required")

    @property
    def k_max(self) -> int:
        return self.J[-1]

    @property
    def label(self) -> str:
        return f"{self.m},{_describe_J(self.J)}"

    def curve(self, j: int) -> CurvePWL:
        return self.curves[self.J.index(j)]

    def subset(self, J) -> "BasepointSet":
        return BasepointSet(self.m, tuple(J), tuple(self.curve(j) for j in J))

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "J": list(self.J),
            "curves": [
                {"j": c.j, "points": [{"alpha": a, "theta": t} for a, t in zip(c.alpha, c.theta)]}
                for c in self.curves
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BasepointSet":
        curves = tuple(
            CurvePWL(
                int(c["j"]),
                tuple(float(p["alpha"]) for p in c["points"]),
                tuple(float(p["theta"]) for p in c["points"]),
            )
            for c in doc["curves"]
        )
        return cls(int(doc["m"]), tuple(int(j) for j in doc["J"]), curves)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BasepointSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _describe_J(J) -> str:
    J = list(J)
    if J == list(range(1, J[-1] + 1)):
        return f"k{J[-1]}"
    return "[" + ",".join(map(str, J)) + "]"


# ---------------------------------------------------------------- curves


def chord_error(j: int, lo: float, hi: float) -> float:
    """Largest gap between the chord over [lo, hi] and N_j below it.

    N_j is convex, so the gap peaks where dn_da equals the chord slope.
    """
    n_lo, n_hi = n_system(lo, j), n_system(hi, j)
    slope = (n_hi - n_lo) / (hi - lo)
    left = max(lo, 1e-12 * j)

    def excess_slope(a):
        return dn_da(a, j) - slope

    if excess_slope(left) >= 0 or excess_slope(hi) <= 0:
        # numerically linear segment
        peak = 0.5 * (lo + hi)
    else:
        peak = brentq(excess_slope, left, hi, xtol=1e-14 * j, rtol=1e-12)
    return max(0.0, n_lo + slope * (peak - lo) - n_system(peak, j))


def generate_basepoints(j: int, m: int, tol: float = 0.01, max_iter: int = 200) -> CurvePWL:
    """Near-minimax chord interpolant of N_j with m basepoints on [0, 0.98 j].

    Segment widths are rescaled each round by 1/sqrt(error), the fixed point
    of which equalises the per-segment errors.  Stops when the largest and
    smallest segment errors are within ``tol`` of each other.
    """
    if m < 4:
        raise ValueError(f"m must be at least 4, got {m}")
    if j < 1:
        raise ValueError(f"j must be at least 1, got {j}")
    return _generate_cached(int(j), int(m), float(tol), int(max_iter))


@lru_cache(maxsize=None)
def _generate_cached(j, m, tol, max_iter):
    upper = UTILISATION_CAP * j
    x = np.linspace(0.0, upper, m)
    best_x, best_err = x, math.inf
    # error grows faster than width**2 where queueing switches on, so the
    # plain update can overshoot; shrink the exponent whenever it does
    power, previous = 0.5, math.inf
    for _ in range(max_iter):
        errs = np.array([chord_error(j, x[i], x[i + 1]) for i in range(m - 1)])
        worst = errs.max()
        if worst < best_err:
            best_x, best_err = x, worst
        if worst > previous:
            power = max(0.7 * power, 0.05)
        previous = worst
        if worst <= (1 + tol) * errs.min():
            break
        scale = (worst / np.maximum(errs, worst * 1e-12)) ** power
        widths = np.diff(x) * np.minimum(scale, 4.0)
        x = np.concatenate(([0.0], np.cumsum(widths / widths.sum() * upper)))
        x[-1] = upper
    else:
        log.warning("basepoints for j=%d, m=%d did not equalise; best error %.3g", j, m, best_err)
    theta = [n_system(a, j) for a in best_x]
    return CurvePWL(j, tuple(float(a) for a in best_x), tuple(theta))


def eval_curve(curve: CurvePWL, a: float) -> float:
    lo, hi = curve.alpha[0], curve.alpha[-1]
    if not lo - 1e-12 <= a <= hi + 1e-12:
        raise ValueError(f"load {a} outside curve interval [{lo}, {hi}]")
    return float(np.interp(a, curve.alpha, curve.theta))


def curve_error(curve: CurvePWL, samples: int = 2000) -> float:
    """Max chord error of a curve measured on a dense uniform grid."""
    a = np.linspace(curve.alpha[0], curve.alpha[-1], samples)
    return float(np.max(np.interp(a, curve.alpha, curve.theta) - n_system_batch(a, curve.j)))


# ---------------------------------------------------------------- sets


def build_J(kind: str, k_max: int) -> tuple[int, ...]:
    """Server-count sequence for a shorthand, capped at ``k_max``.

    ``b^i`` gives powers of b, ``fib`` Fibonacci numbers, ``k3`` the triple
    [1, k_max/2, k_max] and ``k<n>`` every count 1..k_max.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be positive, got {k_max}")
    if kind.endswith("^i"):
        base = int(kind[:-2])
        seq, v = [], 1
        while v < k_max:
            seq.append(v)
            v *= base
    elif kind == "fib":
        seq, (u, v) = [], (1, 2)
        while u < k_max:
            seq.append(u)
            u, v = v, u + v
    elif kind == "k3":
        seq = [1, max(1, k_max // 2)]
    elif kind.startswith("k") and kind[1:].isdigit():
        seq = list(range(1, k_max))
    else:
        raise ValueError(f"unknown J shorthand {kind!r}")
    return tuple(sorted(set(seq) | {1, k_max}))


def parse_set_spec(spec: str) -> tuple[int, str]:
    """Split ``"6,4^i"`` into (6, "4^i")."""
    m, _, kind = spec.partition(",")
    if not kind:
        raise ValueError(f"basepoint set spec must look like 'm,J', got {spec!r}")
    return int(m), kind.strip()


def make_set(m: int, kind: str, k_max: int, cache_dir=None) -> BasepointSet:
    J = build_J(kind, k_max)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"bps_m{m}_{kind.replace('^', 'p')}_k{k_max}.json"
        if path.exists():
            return BasepointSet.load(path)
    bps = BasepointSet(m, J, tuple(generate_basepoints(j, m) for j in J))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        bps.save(path)
    return bps


def standard_sets(k_max: int) -> dict[str, BasepointSet]:
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    return {kind: make_set(m, kind, k_max) for kind, m in SELECTED_SETS}


# ---------------------------------------------------------------- surfaces


@dataclass(frozen=True)
class SurfaceMesh:
    base: BasepointSet
    orientation: str = "triangle-plus"

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if len(self.base.J) < 2:
            raise ValueError("a surface needs at least two rows")

    # vertex (r, i) has flat index r*m + i
    @property
    def alpha(self) -> np.ndarray:
        return np.array([c.alpha for c in self.base.curves])

    @property
    def theta(self) -> np.ndarray:
        return np.array([c.theta for c in self.base.curves])

    def cells(self) -> list[tuple[int, int, int, int]]:
        """Quadrilateral cells as (r,i), (r,i+1), (r+1,i), (r+1,i+1) flat indices."""
        m, rows = self.base.m, len(self.base.J)
        return [
            (r * m + i, r * m + i + 1, (r + 1) * m + i, (r + 1) * m + i + 1)
            for r in range(rows - 1)
            for i in range(m - 1)
        ]

    def triangles(self) -> list[tuple[int, int, int]]:
        out = []
        for ll, lr, ul, ur in self.cells():
            if self.orientation == "triangle-minus":
                out += [(ll, lr, ul), (lr, ul, ur)]
            else:  # plus diagonal joins (r,i) and (r+1,i+1)
                out += [(ll, lr, ur), (ll, ul, ur)]
        return out

    def pieces(self) -> list[tuple[int, ...]]:
        """Indicator-carrying pieces of the formulation: triangles or cells."""
        return self.cells() if self.orientation == "quadrilateral" else self.triangles()


def _locate(mesh: SurfaceMesh, a: np.ndarray, y: np.ndarray):
    J = np.asarray(mesh.base.J, dtype=float)
    alpha = mesh.alpha
    if np.any(y < J[0] - 1e-9) or np.any(y > J[-1] + 1e-9):
        raise ValueError("server count outside mesh rows")
    r = np.clip(np.searchsorted(J, y, side="left") - 1, 0, len(J) - 2)
    t = (y - J[r]) / (J[r + 1] - J[r])
    bounds = (1 - t)[:, None] * alpha[r] + t[:, None] * alpha[r + 1]
    if np.any(a < -1e-9) or np.any(a > bounds[:, -1] * (1 + 1e-12) + 1e-9):
        raise ValueError("load outside mesh domain")
    inside = a[:, None] > bounds[:, 1:-1]
    i = inside.sum(axis=1)
    return r, i, t, bounds


def _barycentric(px, py, tri_x, tri_y):
    (x0, x1, x2), (y0, y1, y2) = tri_x, tri_y
    det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    w0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / det
    w1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / det
    return w0, w1, 1 - w0 - w1


def _cross(px, py, x0, y0, x1, y1):
    return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)


def _triangle_value(mesh, a, y, r, i, orientation):
    m = mesh.base.m
    ax, th = mesh.alpha.ravel(), mesh.theta.ravel()
    row = np.repeat(np.asarray(mesh.base.J, dtype=float), m)
    ll, lr, ul, ur = r * m + i, r * m + i + 1, (r + 1) * m + i, (r + 1) * m + i + 1
    if orientation == "triangle-minus":
        near_ll = _cross(a, y, ax[lr], row[lr], ax[ul], row[ul]) >= 0
        tri = [np.where(near_ll, ll, ur), lr, ul]
    else:
        near_lr = _cross(a, y, ax[ll], row[ll], ax[ur], row[ur]) <= 0
        tri = [ll, np.where(near_lr, lr, ul), ur]
    w = _barycentric(a, y, [ax[v] for v in tri], [row[v] for v in tri])
    return sum(wk * th[v] for wk, v in zip(w, tri))


def eval_surface_many(mesh: SurfaceMesh, a, y) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r, i, _, _ = _locate(mesh, a, y)
    if mesh.orientation == "quadrilateral":
        plus = _triangle_value(mesh, a, y, r, i, "triangle-plus")
        minus = _triangle_value(mesh, a, y, r, i, "triangle-minus")
        return np.minimum(plus, minus)
    return _triangle_value(mesh, a, y, r, i, mesh.orientation)


def eval_surface(mesh: SurfaceMesh, a: float, y: float) -> float:
    return float(eval_surface_many(mesh, [a], [y])[0])


def surface_error(mesh: SurfaceMesh, grid_density: int = 10) -> float:
    """Max |mesh - N| over integer rows 1..k_max, sampling each cell edge densely."""
    if grid_density < 10:
        raise ValueError("grid_density must be at least 10")
    J = mesh.base.J
    alpha = mesh.alpha
    frac = np.linspace(0.0, 1.0, grid_density + 1)
    worst = 0.0
    for y in range(J[0], J[-1] + 1):
        r = min(max(int(np.searchsorted(J, y, side="left")) - 1, 0), len(J) - 2)
        t = (y - J[r]) / (J[r + 1] - J[r])
        bounds = (1 - t) * alpha[r] + t * alpha[r + 1]
        a = (bounds[:-1, None] + np.outer(np.diff(bounds), frac)).ravel()
        a = np.clip(a, 0.0, UTILISATION_CAP * y)
        approx = eval_surface_many(mesh, a, np.full(a.shape, float(y)))
        worst = max(worst, float(np.max(np.abs(approx - n_system_batch(a, y)))))
    return worst

"""Euclidean projections onto the three convex sets the dynamics live on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class Simplex:
    """{z >= 0 : sum(z) = 1} in R^dimension."""

    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")


@dataclass(frozen=True)
class NonnegL1Ball:
    """{z >= 0 : sum(z) <= radius}."""

    dimension: int
    radius: float

    def __post_init__(self):
        if self.dimension < 0:
            raise ValueError("dimension must be nonnegative")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float, ndmin=1)
        hi = np.array(self.upper, dtype=float, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, dimension: int, radius: float) -> "Box":
        """The infinity-norm ball of the given radius."""
        return cls(np.full(dimension, -radius), np.full(dimension, radius))

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]


ConvexSet = Simplex | NonnegL1Ball | Box


def simplex_threshold(y: np.ndarray, total: float = 1.0) -> float:
    """Shift theta with sum(max(y - theta, 0)) = total, via the sorted prefix sums."""
    u = np.sort(y)[::-1]
    cumulative = np.cumsum(u) - total
    k = np.arange(1, u.size + 1)
    support = np.nonzero(u - cumulative / k > 0)[0][-1]
    return cumulative[support] / (support + 1)


def project_simplex(y: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Nearest point of {z >= 0, sum z = total}."""
    z = np.maximum(y - simplex_threshold(y, total), 0.0)
    # Renormalize the support so the sum holds to machine precision.
    s = z.sum()
    if s > 0:
        z *= total / s
    return z


def _check_dimension(convex_set: ConvexSet, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (convex_set.dimension,):
        raise ValueError(
            f"vector of shape {y.shape} does not match set dimension {convex_set.dimension}"
        )
    return y


def project(convex_set: ConvexSet, y: np.ndarray) -> np.ndarray:
    y = _check_dimension(convex_set, y)
    if isinstance(convex_set, Simplex):
        return project_simplex(y)
    if isinstance(convex_set, NonnegL1Ball):
        z = np.maximum(y, 0.0)
        if z.sum() <= convex_set.radius:
            return z
        return project_simplex(z, convex_set.radius)
    if isinstance(convex_set, Box):
        return np.minimum(np.maximum(y, convex_set.lower), convex_set.upper)
    raise TypeError(f"unsupported set {convex_set!r}")


def contains(convex_set: ConvexSet, x: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (convex_set.dimension,):
        return False
    if isinstance(convex_set, Simplex):
        return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)
    if isinstance(convex_set, NonnegL1Ball):
        return bool(np.all(x >= -tol) and x.sum() <= convex_set.radius + tol)
    if isinstance(convex_set, Box):
        return bool(np.all(x >= convex_set.lower - tol) and np.all(x <= convex_set.upper + tol))
    raise TypeError(f"unsupported set {convex_set!r}")


def projected_step(
    convex_set: ConvexSet, x: np.ndarray, direction: np.ndarray, delta: float
) -> np.ndarray:
    """One forward-Euler step of the projected field: Psi_K[x + delta * direction].

    (result - x) / delta tends to the tangent-cone projection of ``direction``
    as delta -> 0.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not contains(convex_set, x):
        raise ValueError("x lies outside the set")
    return project(convex_set, np.asarray(x, dtype=float) + delta * np.asarray(direction))


def variational_inequality_gap(convex_set: ConvexSet, b: np.ndarray, c: np.ndarray) -> float:
    """<b - Psi(c), c - Psi(c)>, which is <= 0 for every b in the set."""
    p = project(convex_set, c)
    return float(np.dot(np.asarray(b, dtype=float) - p, np.asarray(c, dtype=float) - p))

"""Smooth test functions on scaled states with analytic derivatives.

Functions of queue differences (``difference_bump``) satisfy the
gradient-sum condition sum_i df/ds_i = 0 identically, which is what the
generator convergence needs in the interior.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Vector = np.ndarray


@dataclass(frozen=True)
class TestFunction:
    """Scalar field with gradient and Hessian evaluators.

    ``support`` is a box (lower, upper) in scaled coordinates; on the
    product-zero manifold the value vanishes outside it.
    """

    __test__ = False  # keep pytest from collecting this class

    value: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    hessian: Callable[[Vector], np.ndarray]
    support: tuple[Vector, Vector]
    name: str = ""

    def __call__(self, s) -> float:
        return self.value(np.asarray(s, dtype=float))

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return combine(1.0, self, 1.0, other)


def combine(alpha: float, f: TestFunction, gamma: float, g: TestFunction) -> TestFunction:
    """alpha*f + gamma*g with the union of the two support boxes."""
    lo = np.minimum(f.support[0], g.support[0])
    hi = np.maximum(f.support[1], g.support[1])
    return TestFunction(
        value=lambda s: alpha * f.value(s) + gamma * g.value(s),
        gradient=lambda s: alpha * f.gradient(s) + gamma * g.gradient(s),
        hessian=lambda s: alpha * f.hessian(s) + gamma * g.hessian(s),
        support=(lo, hi),
        name=f"{alpha}*{f.name}+{gamma}*{g.name}",
    )


def _unbounded(K: int):
    return (np.full(K, -np.inf), np.full(K, np.inf))


def constant(K: int, c: float = 1.0) -> TestFunction:
    zero = np.zeros(K)
    return TestFunction(lambda s: float(c), lambda s: zero.copy(),
                        lambda s: np.zeros((K, K)), _unbounded(K), f"const({c})")


def linear(weights: Sequence[float]) -> TestFunction:
    w = np.asarray(weights, dtype=float)
    K = w.size
    return TestFunction(lambda s: float(w @ s), lambda s: w.copy(),
                        lambda s: np.zeros((K, K)), _unbounded(K), "linear")


def quadratic(matrix) -> TestFunction:
    """f(s) = s^T M s for symmetric M."""
    M = np.asarray(matrix, dtype=float)
    M = 0.5 * (M + M.T)
    K = M.shape[0]
    return TestFunction(lambda s: float(s @ M @ s), lambda s: 2.0 * M @ s,
                        lambda s: 2.0 * M, _unbounded(K), "quadratic")


def coordinate_square(K: int, i: int = 0) -> TestFunction:
    """f(s) = s_i^2; violates the gradient-sum condition."""
    M = np.zeros((K, K))
    M[i, i] = 1.0
    f = quadratic(M)
    return TestFunction(f.value, f.gradient, f.hessian, f.support, f"s{i + 1}^2")


def _bump1d(u: np.ndarray, power: int):
    """g(u) = (1-u^2)^p on |u|<1, else 0, with first and second derivatives."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    w = np.where(inside, 1.0 - u * u, 0.0)
    p = power
    g = np.where(inside, w ** p, 0.0)
    g1 = np.where(inside, -2.0 * p * u * w ** (p - 1), 0.0)
    g2 = np.where(inside, -2.0 * p * w ** (p - 1) + 4.0 * p * (p - 1) * u * u * w ** max(p - 2, 0), 0.0)
    return g, g1, g2


def difference_bump(K: int, pairs: Sequence[tuple[int, int]] | None = None, radius: float = 1.0,
                    power: int = 4, centers: Sequence[float] | None = None) -> TestFunction:
    """Product over pairs (i, j) of g((s_i - s_j - c)/radius) with g(u) = (1-u^2)^power.

    The default chain of pairs (0,1), (1,2), ... bounds every difference, so on
    the product-zero manifold the support is compact. ``power >= 3`` gives a C^2
    function.
    """
    if power < 3:
        raise ValueError("power must be >= 3 for a C^2 bump")
    if pairs is None:
        pairs = [(k, k + 1) for k in range(K - 1)]
    pairs = [tuple(p) for p in pairs]
    m = len(pairs)
    c = np.zeros(m) if centers is None else np.asarray(centers, dtype=float)
    D = np.zeros((m, K))
    for k, (i, j) in enumerate(pairs):
        D[k, i] += 1.0
        D[k, j] -= 1.0

    def parts(s):
        u = (D @ s - c) / radius
        return _bump1d(u, power)

    def value(s):
        g, _, _ = parts(s)
        return float(np.prod(g))

    def gradient(s):
        g, g1, _ = parts(s)
        dF = np.array([np.prod(np.delete(g, k)) * g1[k] for k in range(m)])
        return D.T @ dF / radius

    def hessian(s):
        g, g1, g2 = parts(s)
        H = np.empty((m, m))
        for k in range(m):
            for l in range(m):
                if k == l:
                    H[k, k] = np.prod(np.delete(g, k)) * g2[k]
                else:
                    H[k, l] = np.prod(np.delete(g, [k, l])) * g1[k] * g1[l]
        return D.T @ H @ D / radius**2

    covered = set(i for p in pairs for i in p)
    if len(covered) == K and _connected(pairs, K):
        bound = float(np.sum(np.abs(c)) + m * radius)
        support = (np.zeros(K), np.full(K, bound))
    else:
        support = _unbounded(K)
    return TestFunction(value, gradient, hessian, support, f"diffbump(K={K},r={radius},p={power})")


def _connected(pairs, K) -> bool:
    seen = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for i, j in pairs:
            for a, b in ((i, j), (j, i)):
                if a == v and b not in seen:
                    seen.add(b)
                    frontier.append(b)
    return len(seen) == K


def radial_bump(center: Sequence[float], radius: float = 1.0, power: int = 4) -> TestFunction:
    """(1 - |s-c|^2/r^2)^power inside the ball, 0 outside."""
    c = np.asarray(center, dtype=float)
    K = c.size
    p = power

    def value(s):
        w = 1.0 - np.sum((s - c) ** 2) / radius**2
        return float(w**p) if w > 0 else 0.0

    def gradient(s):
        w = 1.0 - np.sum((s - c) ** 2) / radius**2
        if w <= 0:
            return np.zeros(K)
        return -2.0 * p * w ** (p - 1) * (s - c) / radius**2

    def hessian(s):
        w = 1.0 - np.sum((s - c) ** 2) / radius**2
        if w <= 0:
            return np.zeros((K, K))
        d = (s - c) / radius**2
        return (4.0 * p * (p - 1) * w ** (p - 2) * np.outer(d, d)
                - 2.0 * p * w ** (p - 1) * np.eye(K) / radius**2)

    return TestFunction(value, gradient, hessian, (c - radius, c + radius), f"radial(r={radius})")


def library(K: int) -> list[TestFunction]:
    """Five representative test functions for dimension K."""
    rng = np.random.default_rng(12345)
    M = rng.normal(size=(K, K))
    return [
        constant(K, 2.5),
        linear(np.arange(1, K + 1, dtype=float)),
        quadratic(M + M.T),
        difference_bump(K, radius=1.0),
        radial_bump(np.full(K, 0.5), radius=1.2),
    ]

"""Statistical comparisons and the exact transient oracle for small chains."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO

import numpy as np

from .errors import EmptySample, TooFew, TooLarge
from .kernel import DEFAULT_MATRIX_CAP

# Poisson weights are formed as exp(-x) x^k / k!; beyond this x the leading
# factor loses too much range, so the horizon is split into sub-steps.
_MAX_POISSON_MEAN = 400.0


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())

    def __len__(self):
        return self.values.size


def _values(x) -> np.ndarray:
    values = x.values if isinstance(x, Sample) else np.asarray(x, dtype=float).ravel()
    if values.size == 0:
        raise EmptySample("sample is empty")
    return values


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup_x |F_a(x) - F_b(x)|.

    Exact: both empirical CDFs are evaluated at every pooled order statistic.
    """
    xa = np.sort(_values(a))
    xb = np.sort(_values(b))
    pooled = np.concatenate([xa, xb])
    fa = np.searchsorted(xa, pooled, side="right") / xa.size
    fb = np.searchsorted(xb, pooled, side="right") / xb.size
    return float(np.max(np.abs(fa - fb)))


def ks_distance_cdf(a, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample KS distance between an empirical CDF and a continuous CDF."""
    x = np.sort(_values(a))
    m = x.size
    F = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, m + 1) / m - F
    lower = F - np.arange(0, m) / m
    return float(max(upper.max(), lower.max()))


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    sem: float


def moments(a) -> Moments:
    """Mean, unbiased variance and standard error of the mean."""
    x = _values(a)
    if x.size < 2:
        raise TooFew("need at least two values for a variance")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    return Moments(mean, var, math.sqrt(var / x.size))


def uniformization_transient(matrix: np.ndarray, initial: np.ndarray, t: float,
                             tol: float = 1e-8, cap: int = DEFAULT_MATRIX_CAP) -> np.ndarray:
    """Distribution at time ``t`` of the chain with generator ``matrix``.

    p(t) = sum_k Pois(k; L t) p0 P^k with P = I + Q/L and L = 1.01 max|Q_ii|.
    The series stops once the accumulated Poisson mass reaches 1 - tol, which
    bounds the L1 truncation error by tol.
    """
    Q = np.asarray(matrix, dtype=float)
    p = np.asarray(initial, dtype=float).copy()
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or p.shape != (Q.shape[0],):
        raise ValueError("matrix must be square and match the initial vector")
    if Q.size > cap:
        raise TooLarge(f"{Q.size} entries exceeds cap {cap}")
    if t < 0 or tol <= 0:
        raise ValueError("need t >= 0 and tol > 0")
    if t == 0:
        return p
    rate = 1.01 * float(np.max(-np.diag(Q)))
    if rate == 0:
        return p
    P = np.eye(Q.shape[0]) + Q / rate
    pieces = max(1, math.ceil(rate * t / _MAX_POISSON_MEAN))
    mean = rate * t / pieces
    step_tol = tol / pieces
    for _ in range(pieces):
        weight = math.exp(-mean)
        term = p
        acc = weight * term
        mass = weight
        k = 0
        while mass < 1.0 - step_tol:
            k += 1
            term = term @ P
            weight *= mean / k
            acc = acc + weight * term
            mass += weight
            if k > 10 * mean + 1000:
                break
        p = acc
    return p


def expected_counts(distribution: np.ndarray, states: Sequence) -> np.ndarray:
    """E[Q_i] under a distribution over enumerated states."""
    counts = np.asarray([s.counts if hasattr(s, "counts") else s for s in states], dtype=float)
    return np.asarray(distribution) @ counts


def write_ecdf_csv(samples: Sequence, stream: TextIO) -> None:
    """Empirical CDFs of one or more samples in long format (label, x, F)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["label", "x", "F"])
    for k, s in enumerate(samples):
        label = s.label if isinstance(s, Sample) and s.label else f"sample{k}"
        x = np.sort(_values(s))
        F = np.arange(1, x.size + 1) / x.size
        for xi, fi in zip(x, F):
            writer.writerow([label, repr(float(xi)), repr(float(fi))])

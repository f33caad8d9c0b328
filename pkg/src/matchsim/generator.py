"""Discrete generator of the n-th chain and the generator of its diffusion limit.

``apply_An`` is built from ``kernel.transitions_from``; it agrees with the
explicit generator matrix by construction, and that agreement is tested
rather than assumed.

The limit generator has two written forms. The compact form uses the matrix
``diffusion_matrix``; the expanded form sums the per-class second-order
terms directly. They coincide for K = 2. For K >= 3 and exactly one empty
queue their off-diagonal second-order coefficients differ by a factor of
two, and only the expanded form matches the chain's local covariance (see
``expanded_diffusion_matrix``).
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import EmptyWindow, OffManifold
from .kernel import transitions_from
from .model import PreLimitRates, QueueState, SystemParams, derive_prelimit_rates, scale_state
from .testfunctions import TestFunction

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12


def apply_An(f: TestFunction, state: QueueState, rates: PreLimitRates, n: int) -> float:
    """sum over transitions of rate * (f(target) - f(source)), in scaled coordinates."""
    here = scale_state(state, n)
    f0 = f.value(here)
    total = 0.0
    for tr in transitions_from(state, rates):
        if tr.is_self_loop:
            continue
        total += tr.rate * (f.value(scale_state(tr.target, n)) - f0)
    return total


def matrix_action(matrix: np.ndarray, states: Sequence[QueueState], f: TestFunction,
                  n: int) -> np.ndarray:
    """(M f)(s) for every enumerated state s."""
    fvec = np.array([f.value(scale_state(s, n)) for s in states])
    return matrix @ fvec


def _empty_indicators(s: np.ndarray, tol: float) -> np.ndarray:
    """I_k = 1[prod_{j != k} s_j = 0] for each k."""
    zero = np.abs(s) <= tol
    if not zero.any():
        raise OffManifold(f"no empty queue in {s}")
    K = s.size
    return np.array([any(zero[j] for j in range(K) if j != k) for k in range(K)], dtype=float)


def diffusion_matrix(scaled_state, lambda0: float, K: int | None = None,
                     tol: float = ZERO_TOL) -> np.ndarray:
    """Compact-form diffusion matrix a(s).

    a_mm = lambda0 (I_m + K - 1 - sum_{k != m} I_k)
    a_mn = 2 lambda0 (K - 2 - sum_{k != m,n} I_k)
    """
    s = np.asarray(scaled_state, dtype=float)
    if K is not None and s.size != K:
        raise ValueError("state length differs from K")
    K = s.size
    ind = _empty_indicators(s, tol)
    total = ind.sum()
    a = np.empty((K, K))
    for m in range(K):
        for k in range(K):
            if m == k:
                a[m, m] = lambda0 * (ind[m] + K - 1 - (total - ind[m]))
            else:
                a[m, k] = 2.0 * lambda0 * (K - 2 - (total - ind[m] - ind[k]))
    return a


def expanded_diffusion_matrix(scaled_state, lambda0: float, tol: float = ZERO_TOL) -> np.ndarray:
    """Second-order coefficient matrix of the expanded generator form.

    lambda0 * sum_i [I_i e_i e_i^T + (1 - I_i) v_i v_i^T], v_i = 1 - e_i: class i
    arrivals either join queue i or remove one item from every other queue.
    """
    s = np.asarray(scaled_state, dtype=float)
    K = s.size
    ind = _empty_indicators(s, tol)
    a = np.zeros((K, K))
    for i in range(K):
        if ind[i]:
            a[i, i] += lambda0
        else:
            v = np.ones(K)
            v[i] = 0.0
            a += lambda0 * np.outer(v, v)
    return a


def apply_A(f: TestFunction, scaled_state, params: SystemParams, form: str = "compact",
            tol: float = ZERO_TOL) -> float:
    """Limit generator applied to f at a manifold point.

    compact:  1/2 sum a_mn f_mn + sum (beta_m - delta_m s_m) f_m
    expanded: lambda0/2 sum_i [I_i f_ii + (1-I_i) sum_{j,k != i} f_jk]
              - sum_i beta_i sum_{j != i} f_j - sum_i delta_i s_i f_i
    """
    s = np.asarray(scaled_state, dtype=float)
    grad = f.gradient(s)
    hess = f.hessian(s)
    beta = np.asarray(params.beta)
    delta = np.asarray(params.delta)
    if form == "compact":
        a = diffusion_matrix(s, params.lambda0, tol=tol)
        return float(0.5 * np.sum(a * hess) + (beta - delta * s) @ grad)
    if form == "expanded":
        a = expanded_diffusion_matrix(s, params.lambda0, tol=tol)
        others = grad.sum() - grad
        return float(0.5 * np.sum(a * hess) - beta @ others - (delta * s) @ grad)
    raise ValueError(f"unknown form {form!r}")


def zero_patterns(K: int) -> list[np.ndarray]:
    """One representative scaled state per nonempty zero pattern (1.0 where nonempty)."""
    out = []
    for mask in itertools.product((0, 1), repeat=K):
        if 0 in mask:
            out.append(np.array(mask, dtype=float))
    return out


@dataclass(frozen=True)
class RegulatedReport:
    max_gradient_sum: float
    max_boundary_gradient: float
    n_samples: int
    n_boundary: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_gradient_sum <= self.tol and self.max_boundary_gradient <= self.tol


def check_regulated(f: TestFunction, samples: Iterable, buffers: Sequence[float],
                    tol: float = 1e-8, boundary_tol: float = 1e-9) -> RegulatedReport:
    """Check sum_i df/ds_i = 0 everywhere and grad f = 0 where some s_j = b_j."""
    b = np.asarray(buffers, dtype=float)
    worst_sum = 0.0
    worst_boundary = 0.0
    count = 0
    boundary = 0
    for s in samples:
        s = np.asarray(s, dtype=float)
        g = f.gradient(s)
        worst_sum = max(worst_sum, abs(float(g.sum())))
        if np.any(np.abs(s - b) <= boundary_tol):
            boundary += 1
            worst_boundary = max(worst_boundary, float(np.max(np.abs(g))))
        count += 1
    return RegulatedReport(worst_sum, worst_boundary, count, boundary, tol)


def manifold_lattice(n: int, window: tuple[Sequence[float], Sequence[float]],
                     buffer_count: Sequence[float] | None = None,
                     interior: bool = True) -> list[QueueState]:
    """Product-zero lattice states whose scaled coordinates lie in ``window``.

    With ``interior`` every count must be strictly below its buffer.
    """
    lo, hi = (np.asarray(w, dtype=float) for w in window)
    root = math.sqrt(n)
    K = lo.size
    ranges = []
    for i in range(K):
        start = max(0, math.ceil(lo[i] * root - 1e-9))
        stop = math.floor(hi[i] * root + 1e-9)
        if buffer_count is not None:
            cap = buffer_count[i] - 1 if interior else buffer_count[i]
            if math.isfinite(cap):
                stop = min(stop, int(cap))
        ranges.append(range(start, stop + 1))
    out = []
    # states with coordinate z empty; skip duplicates with an earlier empty coordinate
    for z in range(K):
        if 0 not in ranges[z]:
            continue
        rest = [ranges[i] if i != z else (0,) for i in range(K)]
        for counts in itertools.product(*rest):
            if any(counts[j] == 0 for j in range(z)):
                continue
            out.append(QueueState(counts))
    out.sort(key=lambda s: s.counts)
    return out


@dataclass(frozen=True)
class SweepRow:
    n: int
    sup_error: float
    argmax_state: tuple[float, ...]
    n_states: int


def convergence_sweep(f: TestFunction, params: SystemParams, n_grid: Sequence[int],
                      window: tuple[Sequence[float], Sequence[float]],
                      form: str = "compact") -> list[SweepRow]:
    """sup over interior lattice states in ``window`` of |A_n f - A f|, for each n."""
    warned = False
    rows = []
    for n in sorted(int(x) for x in n_grid):
        p = params.with_scale(n)
        rates = derive_prelimit_rates(p)
        states = manifold_lattice(n, window, rates.buffer_count, interior=True)
        if not states:
            raise EmptyWindow(f"no interior manifold states in window at n={n}")
        if not warned:
            report = check_regulated(f, (scale_state(st, n) for st in states), p.buffer)
            if report.max_gradient_sum > report.tol:
                log.warning("test function %s violates the gradient-sum condition (%.3g)",
                            f.name, report.max_gradient_sum)
            warned = True
        worst, arg = -1.0, None
        for st in states:
            s = scale_state(st, n)
            err = abs(apply_An(f, st, rates, n) - apply_A(f, s, p, form=form))
            if err > worst:
                worst, arg = err, s
        rows.append(SweepRow(n, worst, tuple(float(x) for x in arg), len(states)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["n", "sup_error", "argmax_state", "n_states"])
    for r in rows:
        writer.writerow([r.n, repr(r.sup_error), " ".join(repr(x) for x in r.argmax_state),
                         r.n_states])

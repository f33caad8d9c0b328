"""Simulation of the heavy-traffic limits.

* ``simulate_limit_K``: Euler scheme for the regulated coupling integral
  equation Q = Q(0) + beta t + sigma W - int delta Q - R 1 - L, with
  independent per-class noise sigma_i = sqrt(lambda0). Each step adds the
  net flow, removes R so that min_i Q_i = 0, then reflects at the buffers.
* ``simulate_double_ended``: the one-dimensional K=2 difference process
  X = x + sigma B + int (beta - h(X)) - U on [-b_2, b_1].
* ``generator_form_samples``: Euler scheme driven by a state-dependent root
  of the generator's diffusion matrix, for empirical comparison only.

Batch helpers draw replication r from stream r of the seed (``rng.make_rng``).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TextIO

import numpy as np
from numba import njit
from scipy import integrate

from .errors import BadBand, BadInit, NotPSD, StepTooLarge
from .generator import diffusion_matrix, expanded_diffusion_matrix
from .model import SystemParams
from .rng import make_rng


def sqrt_psd(a, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via the spectral decomposition.

    Eigenvalues in [-tol, 0) are clamped to zero; each eigenvector is signed so
    its largest-magnitude entry is positive.
    """
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    w, V = np.linalg.eigh(a)
    if w.min() < -tol:
        raise NotPSD(f"minimum eigenvalue {w.min():.3g} < -{tol}")
    w = np.clip(w, 0.0, None)
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(V.shape[1])])
    root = (V * np.sqrt(w)) @ V.T
    return 0.5 * (root + root.T)


def skorokhod_two_sided(path, lower: float, upper: float):
    """Two-sided Skorokhod map of a piecewise-linear path on [lower, upper].

    Returns (regulated, lower_local_time, upper_local_time) with
    regulated = path + lower_local_time - upper_local_time. On each linear
    piece the input is monotone, so clamping the increment is exact at the
    grid points.
    """
    if not lower < upper:
        raise BadBand(f"need lower < upper, got [{lower}, {upper}]")
    x = np.asarray(path, dtype=float)
    if not lower <= x[0] <= upper:
        raise BadBand("path must start inside the band")
    y = np.empty_like(x)
    lo_lt = np.zeros_like(x)
    up_lt = np.zeros_like(x)
    y[0] = x[0]
    for k in range(1, x.size):
        cand = y[k - 1] + (x[k] - x[k - 1])
        push_up = max(lower - cand, 0.0)
        push_down = max(cand - upper, 0.0)
        lo_lt[k] = lo_lt[k - 1] + push_up
        up_lt[k] = up_lt[k - 1] + push_down
        y[k] = x[k] + lo_lt[k] - up_lt[k]
    return y, lo_lt, up_lt


@dataclass(frozen=True)
class DiffusionPath:
    """Limit-process trajectory on a uniform grid.

    X: (steps, K) states. U: (steps, K) cumulative pushes at the buffers (for
    the double-ended path, columns are the pushes at +b_1 and at -b_2). R:
    matching functional, centred so it is not monotone. W and abandonment
    (cumulative int delta Q ds) are kept when the scheme tracks them.
    """

    grid: np.ndarray
    X: np.ndarray
    U: np.ndarray
    R: np.ndarray | None
    seed: int
    W: np.ndarray | None = None
    abandonment: np.ndarray | None = None

    def write_csv(self, stream: TextIO) -> None:
        K = self.X.shape[1]
        writer = csv.writer(stream, lineterminator="\n")
        header = ["t"] + [f"X_{i + 1}" for i in range(K)] + [f"U_{i + 1}" for i in range(self.U.shape[1])]
        if self.R is not None:
            header.append("R")
        writer.writerow(header)
        for k in range(self.grid.size):
            row = [repr(float(self.grid[k]))]
            row += [repr(float(v)) for v in self.X[k]] + [repr(float(v)) for v in self.U[k]]
            if self.R is not None:
                row.append(repr(float(self.R[k])))
            writer.writerow(row)


# ---------------------------------------------------------------- double-ended

def double_ended_drift(x, beta: float, delta1: float, delta2: float):
    """beta - h(x) with h(x) = delta1 x^+ - delta2 x^-."""
    x = np.asarray(x, dtype=float)
    return beta - delta1 * np.maximum(x, 0.0) + delta2 * np.maximum(-x, 0.0)


@njit(nogil=True, cache=True)
def _double_ended(x0, beta, d1, d2, sigma, lo, hi, dt, steps, rng, every, first):
    """Rows are kept at steps first, first+every, ... (columns: X, push at hi, push at lo)."""
    n_out = 0 if first > steps else (steps - first) // every + 1
    out = np.empty((n_out, 3))
    x = x0
    up = 0.0
    down = 0.0
    sq = sigma * math.sqrt(dt)
    row = 0
    for k in range(steps + 1):
        if k >= first and (k - first) % every == 0:
            out[row, 0] = x
            out[row, 1] = up
            out[row, 2] = down
            row += 1
        if k == steps:
            break
        h = d1 * x if x > 0.0 else d2 * x
        x = x + (beta - h) * dt + sq * rng.standard_normal()
        if x > hi:
            up += x - hi
            x = hi
        elif x < lo:
            down += lo - x
            x = lo
    return out


def _double_ended_args(params: SystemParams, sigma: float, x0: float, T: float, dt: float,
                       delta=None):
    if params.K != 2:
        raise ValueError("the double-ended limit needs K = 2")
    lo, hi = -params.buffer[1], params.buffer[0]
    if not lo <= x0 <= hi:
        raise BadInit(f"x0={x0} outside [{lo}, {hi}]")
    if dt <= 0 or sigma < 0 or T < 0:
        raise ValueError("need dt > 0, sigma >= 0, T >= 0")
    steps = int(round(T / dt))
    beta = params.beta[0] - params.beta[1]
    d1, d2 = params.delta if delta is None else (float(delta[0]), float(delta[1]))
    if d1 < 0 or d2 < 0:
        raise ValueError("delta must be >= 0")
    return (float(x0), beta, d1, d2, float(sigma),
            float(lo), float(hi), float(dt), steps)


def simulate_double_ended(params: SystemParams, sigma: float, x0: float, T: float, dt: float,
                          seed: int, record_every: int = 1, replication: int = 0,
                          delta=None) -> DiffusionPath:
    """Euler-Maruyama for the difference process with projection onto [-b_2, b_1].

    ``delta`` overrides params.delta; zero is allowed here (pure drift).
    """
    args = _double_ended_args(params, sigma, x0, T, dt, delta)
    out = _double_ended(*args, make_rng(seed, replication), int(record_every), 0)
    grid = np.arange(out.shape[0]) * record_every * dt
    return DiffusionPath(grid=grid, X=out[:, :1].copy(), U=out[:, 1:].copy(), R=None, seed=int(seed))


def _time_indices(times, dt: float):
    """Grid indices of the requested times and a recording stride that hits all of them."""
    idx = np.rint(np.atleast_1d(np.asarray(times, dtype=float)) / dt).astype(int)
    if np.any(idx < 0) or np.any(np.diff(idx) < 0):
        raise ValueError("times must be nonnegative and sorted")
    stride = int(np.gcd.reduce(idx[idx > 0])) if np.any(idx > 0) else 1
    return idx, max(stride, 1)


def double_ended_samples(params: SystemParams, sigma: float, x0: float, T, dt: float,
                         replications: int, seed: int, burn_in: float | None = None,
                         sample_every: float | None = None, threads: int = 1) -> np.ndarray:
    """X values from independent paths.

    By default returns X(T) per replication, shape (replications,), or
    (len(T), replications) when T is a sequence of times. With
    ``burn_in``/``sample_every``, returns every retained value after the
    burn-in up to max(T), shape (replications, kept).
    """
    idx, stride = _time_indices(T, dt)
    args = _double_ended_args(params, sigma, x0, float(idx.max() * dt), dt)
    steps = args[-1]
    if burn_in is None and sample_every is None:
        every, first = stride, 0

        def one(r):
            return _double_ended(*args, make_rng(seed, r), every, first)[idx // every, 0]

        out = _fan_out(one, replications, threads).T
        return out[0] if np.ndim(T) == 0 else out

    every = max(1, int(round((sample_every or dt) / dt)))
    first = min(int(round((burn_in or 0.0) / dt)), steps)

    def kept(r):
        return _double_ended(*args, make_rng(seed, r), every, first)[:, 0]

    return _fan_out(kept, replications, threads)


def double_ended_terminal(params: SystemParams, sigma: float, x0: float, T: float, dt: float,
                          replications: int, seed: int, threads: int = 1) -> np.ndarray:
    """Rows (X(T), push at b_1 up to T, push at -b_2 up to T) per replication."""
    args = _double_ended_args(params, sigma, x0, T, dt)
    steps = args[-1]

    def one(r):
        return _double_ended(*args, make_rng(seed, r), max(steps, 1), steps)[0]

    return _fan_out(one, replications, threads)


def double_ended_stationary_cdf(beta: float, delta1: float, delta2: float, sigma: float,
                                lower: float = -math.inf, upper: float = math.inf):
    """CDF of the density proportional to exp(2 int_0^x (beta - h(u)) du / sigma^2).

    Normalised by numerical quadrature; returns a vectorised callable.
    """
    def log_density(x):
        xp, xm = max(x, 0.0), max(-x, 0.0)
        return 2.0 * (beta * x - 0.5 * delta1 * xp * xp - 0.5 * delta2 * xm * xm) / sigma**2

    # the density's mode maximises log_density; shift by it before exponentiating
    mode = min(max(beta / delta1 if beta > 0 else beta / delta2, lower), upper)
    shift = log_density(mode)
    spread = 12.0 * sigma / math.sqrt(2.0 * min(delta1, delta2)) + abs(mode)
    lo = max(lower, mode - spread)
    hi = min(upper, mode + spread)
    xs = np.linspace(lo, hi, 200001)
    dens = np.exp(np.array([log_density(x) for x in xs]) - shift)
    cum = integrate.cumulative_trapezoid(dens, xs, initial=0.0)
    total = cum[-1]
    cum /= total

    def cdf(x):
        return np.interp(np.asarray(x, dtype=float), xs, cum, left=0.0, right=1.0)

    return cdf


# ------------------------------------------------------------ K-class limit

@njit(nogil=True, cache=True)
def _limit_K(q0, beta, delta, sigma, buf, dt, steps, rng, every, track):
    """Integral-equation scheme. Columns: Q(K) L(K) R W(K) abandonment(K)."""
    K = q0.shape[0]
    n_out = steps // every + 1
    width = 4 * K + 1 if track else 2 * K + 1
    out = np.empty((n_out, width))
    q = q0.copy()
    Lc = np.zeros(K)
    Wc = np.zeros(K)
    Ic = np.zeros(K)
    R = 0.0
    sq = math.sqrt(dt)
    c = np.empty(K)
    row = 0
    for k in range(steps + 1):
        if k % every == 0:
            for i in range(K):
                out[row, i] = q[i]
                out[row, K + i] = Lc[i]
            out[row, 2 * K] = R
            if track:
                for i in range(K):
                    out[row, 2 * K + 1 + i] = Wc[i]
                    out[row, 3 * K + 1 + i] = Ic[i]
            row += 1
        if k == steps:
            break
        for i in range(K):
            dw = sq * rng.standard_normal()
            Wc[i] += dw
            Ic[i] += delta[i] * q[i] * dt
            c[i] = q[i] + beta[i] * dt + sigma[i] * dw - delta[i] * q[i] * dt
        dR = c[0]
        for i in range(1, K):
            if c[i] < dR:
                dR = c[i]
        R += dR
        for i in range(K):
            q[i] = c[i] - dR
            if q[i] > buf[i]:
                Lc[i] += q[i] - buf[i]
                q[i] = buf[i]
    return out


def _limit_args(params: SystemParams, T: float, dt: float, x0, sigma):
    K = params.K
    q0 = np.zeros(K) if x0 is None else np.asarray(x0, dtype=float)
    buf = np.asarray(params.buffer, dtype=float)
    if q0.shape != (K,) or np.any(q0 < 0) or np.any(q0 > buf) or q0.min() != 0.0:
        raise BadInit(f"initial state {q0} is not a product-zero state within the buffers")
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    sig = np.full(K, math.sqrt(params.lambda0)) if sigma is None else np.asarray(sigma, dtype=float)
    beta = np.asarray(params.beta, dtype=float)
    guard = np.abs(beta * dt) + 4.0 * sig * math.sqrt(dt)
    bad = np.nonzero(guard > buf)[0]
    if bad.size:
        raise StepTooLarge(f"one step may cross the whole buffer of class {bad[0] + 1}; reduce dt")
    steps = int(round(T / dt))
    return q0, beta, np.asarray(params.delta, dtype=float), sig, buf, float(dt), steps


def simulate_limit_K(params: SystemParams, T: float, dt: float, seed: int, x0=None,
                     sigma=None, record_every: int = 1, replication: int = 0) -> DiffusionPath:
    """One path of the regulated coupling integral equation.

    Per step: net flow beta dt + sigma dW - delta Q dt, matching removal
    dR = min_i(candidate) so that min_i Q_i = 0, then reflection at b_i.
    """
    args = _limit_args(params, T, dt, x0, sigma)
    K = params.K
    out = _limit_K(*args, make_rng(seed, replication), int(record_every), True)
    grid = np.arange(out.shape[0]) * record_every * dt
    return DiffusionPath(
        grid=grid, X=out[:, :K].copy(), U=out[:, K:2 * K].copy(), R=out[:, 2 * K].copy(),
        seed=int(seed), W=out[:, 2 * K + 1:3 * K + 1].copy(), abandonment=out[:, 3 * K + 1:].copy(),
    )


def limit_samples(params: SystemParams, T, dt: float, replications: int, seed: int,
                  x0=None, sigma=None, threads: int = 1) -> np.ndarray:
    """Q(T) per replication, shape (replications, K); or (len(T), replications, K)
    when T is a sequence of times."""
    idx, stride = _time_indices(T, dt)
    args = _limit_args(params, float(idx.max() * dt), dt, x0, sigma)
    K = params.K

    def one(r):
        return _limit_K(*args, make_rng(seed, r), stride, False)[idx // stride, :K]

    data = np.moveaxis(_fan_out(one, replications, threads), 1, 0)
    return data[0] if np.ndim(T) == 0 else data


# ------------------------------------------------- generator-matrix Euler form

def _pattern_roots(params: SystemParams, matrix: str) -> np.ndarray:
    """Root of the diffusion matrix for every zero pattern (bit i set = queue i empty)."""
    K = params.K
    build = {"compact": diffusion_matrix, "expanded": expanded_diffusion_matrix}[matrix]
    roots = np.zeros((2**K, K, K))
    for mask in range(1, 2**K):
        s = np.array([0.0 if mask >> i & 1 else 1.0 for i in range(K)])
        roots[mask] = sqrt_psd(build(s, params.lambda0))
    return roots


@njit(nogil=True, cache=True)
def _generator_form(q0, beta, delta, buf, roots, dt, steps, rng, every):
    K = q0.shape[0]
    n_out = steps // every + 1
    out = np.empty((n_out, 2 * K))
    q = q0.copy()
    Lc = np.zeros(K)
    xi = np.empty(K)
    c = np.empty(K)
    sq = math.sqrt(dt)
    row = 0
    for k in range(steps + 1):
        if k % every == 0:
            for i in range(K):
                out[row, i] = q[i]
                out[row, K + i] = Lc[i]
            row += 1
        if k == steps:
            break
        mask = 0
        for i in range(K):
            if q[i] == 0.0:
                mask |= 1 << i
        for i in range(K):
            xi[i] = rng.standard_normal()
        for i in range(K):
            noise = 0.0
            for j in range(K):
                noise += roots[mask, i, j] * xi[j]
            c[i] = q[i] + (beta[i] - delta[i] * q[i]) * dt + sq * noise
        m = c.min()
        for i in range(K):
            q[i] = c[i] - m
            if q[i] > buf[i]:
                Lc[i] += q[i] - buf[i]
                q[i] = buf[i]
    return out


def generator_form_samples(params: SystemParams, T: float, dt: float, replications: int,
                           seed: int, x0=None, matrix: str = "compact",
                           threads: int = 1) -> np.ndarray:
    """X(T) from an Euler scheme with noise Sigma(X) dW, Sigma Sigma^T = a(X).

    The step is followed by the same matching removal and buffer reflection as
    the integral-equation scheme, since the generator alone does not keep the
    process on the product-zero set. Diagnostic only.
    """
    q0, beta, delta, _, buf, dt, steps = _limit_args(params, T, dt, x0, None)
    roots = _pattern_roots(params, matrix)

    def one(r):
        return _generator_form(q0, beta, delta, buf, roots, dt, steps, make_rng(seed, r),
                               max(steps, 1))[-1, :params.K]

    return _fan_out(one, replications, threads)


def _fan_out(fn, replications: int, threads: int) -> np.ndarray:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.asarray(list(pool.map(fn, range(replications))))
    return np.asarray([fn(r) for r in range(replications)])


__all__ = [
    "DiffusionPath", "sqrt_psd", "skorokhod_two_sided", "simulate_double_ended",
    "double_ended_samples", "double_ended_terminal", "double_ended_stationary_cdf", "double_ended_drift",
    "simulate_limit_K", "limit_samples", "generator_form_samples",
]

"""Exact event-driven simulation of the pre-limit matching chain.

Competing exponential clocks: each class has an arrival clock at rate
lambda_i^n and an abandonment clock at rate delta_i^n * Q_i. The next event is
drawn Gillespie-style (one exponential at the total rate, then a categorical
choice), and its effect follows ``kernel.transitions_from``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TextIO

import numpy as np
from numba import njit

from .errors import InvalidState
from .kernel import Kind
from .model import PreLimitRates, QueueState
from .rng import RNG_NAME, make_rng

# column layout of the integer record buffer, for K classes:
# Q[0:K] A[K:2K] G[2K:3K] L[3K:4K] R[4K] kind[4K+1] class[4K+2]


@njit(cache=True)
def _grow(tbuf, ibuf):
    cap = tbuf.shape[0] * 2
    t2 = np.empty(cap, dtype=np.float64)
    i2 = np.empty((cap, ibuf.shape[1]), dtype=np.int64)
    t2[: tbuf.shape[0]] = tbuf
    i2[: ibuf.shape[0]] = ibuf
    return t2, i2


@njit(cache=True)
def _write(tbuf, ibuf, row, t, q, A, G, L, R, kind, cls):
    K = q.shape[0]
    tbuf[row] = t
    for j in range(K):
        ibuf[row, j] = q[j]
        ibuf[row, K + j] = A[j]
        ibuf[row, 2 * K + j] = G[j]
        ibuf[row, 3 * K + j] = L[j]
    ibuf[row, 4 * K] = R
    ibuf[row, 4 * K + 1] = kind
    ibuf[row, 4 * K + 2] = cls


@njit(nogil=True, cache=True)
def _choose(u, lam, delta, q):
    """Index of the clock that fires: 0..K-1 arrivals, K..2K-1 abandonments."""
    K = q.shape[0]
    event = -1
    acc = 0.0
    for e in range(2 * K):
        rate = lam[e] if e < K else delta[e - K] * q[e - K]
        if rate <= 0.0:
            continue
        acc += rate
        event = e
        if u < acc:
            break
    # falls through to the last positive clock when round-off leaves u >= acc
    return event


@njit(nogil=True, cache=True)
def _fire(event, q, A, G, L, buf):
    """Apply one event in place; returns (kind, class, matches added)."""
    K = q.shape[0]
    if event >= K:
        i = event - K
        q[i] -= 1
        G[i] += 1
        return 3, i, 0
    i = event
    A[i] += 1
    for j in range(K):
        if j != i and q[j] == 0:
            if q[i] < buf[i]:
                q[i] += 1
                return 0, i, 0
            L[i] += 1
            return 2, i, 0
    for j in range(K):
        if j != i:
            q[j] -= 1
    return 1, i, 1


@njit(nogil=True, cache=True)
def _total_rate(lam_total, delta, q):
    total = lam_total
    for i in range(q.shape[0]):
        total += delta[i] * q[i]
    return total


@njit(nogil=True, cache=True)
def _gillespie(q0, lam, delta, buf, horizon, rng, record_every, cap):
    """Run one path to ``horizon``.

    record_every = 0 keeps only the initial and final rows; k >= 1 keeps every
    k-th event plus the final one. Returns (times, rows, n_rows, n_events).
    """
    K = q0.shape[0]
    q = q0.copy()
    A = np.zeros(K, dtype=np.int64)
    G = np.zeros(K, dtype=np.int64)
    L = np.zeros(K, dtype=np.int64)
    R = 0
    lam_total = lam.sum()
    tbuf = np.empty(max(cap, 2), dtype=np.float64)
    ibuf = np.empty((max(cap, 2), 4 * K + 3), dtype=np.int64)
    _write(tbuf, ibuf, 0, 0.0, q, A, G, L, R, -1, -1)
    rows = 1
    t = 0.0
    t_last = 0.0
    n_events = 0
    kind = -1
    cls = -1
    last_recorded = True
    while True:
        total = _total_rate(lam_total, delta, q)
        if total <= 0.0:
            break
        t += rng.standard_exponential() / total
        if t > horizon:
            break
        event = _choose(rng.random() * total, lam, delta, q)
        kind, cls, dR = _fire(event, q, A, G, L, buf)
        R += dR
        t_last = t
        n_events += 1
        last_recorded = False
        if record_every > 0 and n_events % record_every == 0:
            if rows == tbuf.shape[0]:
                tbuf, ibuf = _grow(tbuf, ibuf)
            _write(tbuf, ibuf, rows, t, q, A, G, L, R, kind, cls)
            rows += 1
            last_recorded = True
    if not last_recorded:
        if rows == tbuf.shape[0]:
            tbuf, ibuf = _grow(tbuf, ibuf)
        _write(tbuf, ibuf, rows, t_last, q, A, G, L, R, kind, cls)
        rows += 1
    return tbuf, ibuf, rows, n_events


@njit(nogil=True, cache=True)
def _snapshots(q0, lam, delta, buf, checkpoints, rng):
    """State and counters at each (sorted) checkpoint time; rows as in the record layout."""
    K = q0.shape[0]
    q = q0.copy()
    A = np.zeros(K, dtype=np.int64)
    G = np.zeros(K, dtype=np.int64)
    L = np.zeros(K, dtype=np.int64)
    R = 0
    lam_total = lam.sum()
    out = np.empty((checkpoints.shape[0], 4 * K + 1), dtype=np.int64)
    c = 0
    t = 0.0
    while c < checkpoints.shape[0]:
        total = _total_rate(lam_total, delta, q)
        if total <= 0.0:
            t = np.inf
        else:
            t += rng.standard_exponential() / total
        while c < checkpoints.shape[0] and t > checkpoints[c]:
            for j in range(K):
                out[c, j] = q[j]
                out[c, K + j] = A[j]
                out[c, 2 * K + j] = G[j]
                out[c, 3 * K + j] = L[j]
            out[c, 4 * K] = R
            c += 1
        if c == checkpoints.shape[0]:
            break
        event = _choose(rng.random() * total, lam, delta, q)
        kind, cls, dR = _fire(event, q, A, G, L, buf)
        R += dR
    return out


@dataclass(frozen=True)
class EventPath:
    """One chain trajectory sampled at event epochs (post-event states).

    Row 0 is the initial state at t=0 with zero counters. Counters are
    cumulative: arrivals A_i, abandons G_i, blocks L_i, matches R.
    ``kinds``/``classes`` give the event that produced each row (-1 for row 0).
    """

    times: np.ndarray
    states: np.ndarray
    arrivals: np.ndarray
    abandons: np.ndarray
    blocks: np.ndarray
    matches: np.ndarray
    kinds: np.ndarray
    classes: np.ndarray
    seed: int
    horizon: float
    n_events: int

    @property
    def K(self) -> int:
        return self.states.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def write_csv(self, stream: TextIO) -> None:
        K = self.K
        header = ["t"]
        for name in ("Q", "A", "G", "L"):
            header += [f"{name}_{i + 1}" for i in range(K)]
        header.append("R")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(self.times)):
            writer.writerow(
                [repr(float(self.times[k]))]
                + self.states[k].tolist() + self.arrivals[k].tolist()
                + self.abandons[k].tolist() + self.blocks[k].tolist()
                + [int(self.matches[k])]
            )

    def metadata(self, params=None) -> dict:
        meta = {"seed": self.seed, "rng": RNG_NAME, "horizon": self.horizon,
                "n_events": self.n_events, "rows": len(self.times)}
        if params is not None:
            meta["params"] = params.to_dict()
        return meta

    def write_metadata(self, stream: TextIO, params=None) -> None:
        json.dump(self.metadata(params), stream, indent=2, sort_keys=True)


def _arrays(rates: PreLimitRates):
    return (np.asarray(rates.arrival_rate, dtype=np.float64),
            np.asarray(rates.abandon_rate, dtype=np.float64),
            np.asarray(rates.buffer_count, dtype=np.float64))


def _initial(initial: QueueState, rates: PreLimitRates) -> np.ndarray:
    if initial.K != rates.K:
        raise InvalidState("initial state and rates have different K")
    initial.check_buffers(rates.buffer_count)
    return np.asarray(initial.counts, dtype=np.int64)


def simulate_path(rates: PreLimitRates, initial: QueueState, horizon: float, seed: int,
                  record_every: int = 1, replication: int = 0) -> EventPath:
    """Simulate one path on [0, horizon].

    ``record_every=k`` keeps every k-th event (and always the final one);
    ``record_every=0`` keeps only the first and last rows.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    q0 = _initial(initial, rates)
    lam, delta, buf = _arrays(rates)
    rng = make_rng(seed, replication)
    expected = (lam.sum() + float(np.sum(delta * q0))) * horizon
    cap = 16 if record_every == 0 else int(min(expected / max(record_every, 1) * 1.2 + 64, 1e7))
    tbuf, ibuf, rows, n_events = _gillespie(q0, lam, delta, buf, float(horizon), rng,
                                            int(record_every), cap)
    times = tbuf[:rows].copy()
    ibuf = ibuf[:rows]
    K = rates.K
    return EventPath(
        times=times,
        states=ibuf[:, :K].copy(),
        arrivals=ibuf[:, K:2 * K].copy(),
        abandons=ibuf[:, 2 * K:3 * K].copy(),
        blocks=ibuf[:, 3 * K:4 * K].copy(),
        matches=ibuf[:, 4 * K].copy(),
        kinds=ibuf[:, 4 * K + 1].copy(),
        classes=ibuf[:, 4 * K + 2].copy(),
        seed=int(seed),
        horizon=float(horizon),
        n_events=int(n_events),
    )


@dataclass(frozen=True)
class TerminalSample:
    """States and counters of independent replications at fixed times.

    Arrays have shape (replications, K) (``matches``: (replications,)) for a
    single time, or carry a leading time axis when several times were asked for.
    """

    states: np.ndarray
    arrivals: np.ndarray
    abandons: np.ndarray
    blocks: np.ndarray
    matches: np.ndarray
    seed: int


def simulate_terminal(rates: PreLimitRates, initial: QueueState, horizon,
                      replications: int, seed: int, threads: int = 1) -> TerminalSample:
    """States at ``horizon`` (a time or a sequence of times) over independent replications.

    Replication i draws from stream i of ``seed`` regardless of ``threads``.
    """
    q0 = _initial(initial, rates)
    lam, delta, buf = _arrays(rates)
    K = rates.K
    times = np.atleast_1d(np.asarray(horizon, dtype=np.float64))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and sorted")

    def one(r):
        return _snapshots(q0, lam, delta, buf, times, make_rng(seed, r))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(one, range(replications)))
    else:
        blocks = [one(r) for r in range(replications)]
    data = np.stack(blocks, axis=1)  # (times, replications, columns)
    if np.ndim(horizon) == 0:
        data = data[0]
    return TerminalSample(
        states=data[..., :K], arrivals=data[..., K:2 * K], abandons=data[..., 2 * K:3 * K],
        blocks=data[..., 3 * K:4 * K], matches=data[..., 4 * K], seed=int(seed),
    )


def flow_conservation_check(path: EventPath) -> bool:
    """Q_i = Q_i(0) + A_i - L_i - G_i - R at every recorded row, integer-exact."""
    rebuilt = (path.initial + path.arrivals - path.blocks - path.abandons
               - path.matches[:, None])
    return bool(np.array_equal(rebuilt, path.states))


def match_count_identity_check(path: EventPath) -> bool:
    """R = min_j (Q_j(0) + A_j - L_j - G_j) at every recorded row, integer-exact."""
    net = path.initial + path.arrivals - path.blocks - path.abandons
    return bool(np.array_equal(net.min(axis=1), path.matches))


def scaled_difference(sample: TerminalSample | np.ndarray, n: int, i: int = 0, j: int = 1) -> np.ndarray:
    """(Q_i - Q_j)/sqrt(n) for each replication."""
    states = sample.states if isinstance(sample, TerminalSample) else np.asarray(sample)
    return (states[:, i] - states[:, j]) / math.sqrt(n)


__all__ = [
    "EventPath", "TerminalSample", "simulate_path", "simulate_terminal",
    "flow_conservation_check", "match_count_identity_check", "scaled_difference", "Kind",
]

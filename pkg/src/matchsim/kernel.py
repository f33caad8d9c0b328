"""Transition structure of the pre-limit matching chain.

One rule covers every state of the product-zero space: an arrival to class i
triggers a match when all other queues are nonempty, otherwise it joins queue
i if there is room, otherwise it is blocked. Each waiting item abandons at
rate delta_i^n.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import TooLarge, Unbounded
from .model import PreLimitRates, QueueState

DEFAULT_MATRIX_CAP = 10**6


class Kind(enum.IntEnum):
    ADMITTED = 0
    MATCHED = 1
    BLOCKED = 2
    ABANDONED = 3


@dataclass(frozen=True)
class Transition:
    target: QueueState
    rate: float
    kind: Kind
    cls: int  # zero-based class index

    @property
    def is_self_loop(self) -> bool:
        return self.kind is Kind.BLOCKED


def transitions_from(state: QueueState, rates: PreLimitRates) -> list[Transition]:
    """All transitions out of ``state`` with positive rate.

    Blocked arrivals appear as self-loops so that callers can count them;
    they carry no probability flux.
    """
    state.check_buffers(rates.buffer_count)
    counts = state.counts
    K = len(counts)
    out = []
    for i in range(K):
        lam = rates.arrival_rate[i]
        if lam <= 0:
            continue
        if all(counts[j] > 0 for j in range(K) if j != i):
            target = tuple(c if j == i else c - 1 for j, c in enumerate(counts))
            out.append(Transition(QueueState(target), lam, Kind.MATCHED, i))
        elif counts[i] < rates.buffer_count[i]:
            target = counts[:i] + (counts[i] + 1,) + counts[i + 1:]
            out.append(Transition(QueueState(target), lam, Kind.ADMITTED, i))
        else:
            out.append(Transition(state, lam, Kind.BLOCKED, i))
    for i in range(K):
        if counts[i] > 0:
            target = counts[:i] + (counts[i] - 1,) + counts[i + 1:]
            out.append(Transition(QueueState(target), rates.abandon_rate[i] * counts[i],
                                  Kind.ABANDONED, i))
    return out


def state_count(rates: PreLimitRates) -> int:
    """Size of the product-zero space: prod(b+1) - prod(b)."""
    _require_finite(rates)
    bs = [int(b) for b in rates.buffer_count]
    return math.prod(b + 1 for b in bs) - math.prod(bs)


def enumerate_states(rates: PreLimitRates) -> list[QueueState]:
    """Every product-zero state within the buffers, in lexicographic order."""
    _require_finite(rates)
    grids = [range(int(b) + 1) for b in rates.buffer_count]
    return [QueueState(c) for c in itertools.product(*grids) if 0 in c]


def build_generator_matrix(rates: PreLimitRates, cap: int = DEFAULT_MATRIX_CAP) -> np.ndarray:
    """Dense generator over ``enumerate_states`` order; rows sum to zero."""
    size = state_count(rates)
    if size * size > cap:
        raise TooLarge(f"{size} states -> {size * size} entries exceeds cap {cap}")
    states = enumerate_states(rates)
    index = {s.counts: k for k, s in enumerate(states)}
    M = np.zeros((size, size))
    for k, s in enumerate(states):
        for tr in transitions_from(s, rates):
            if tr.is_self_loop:
                continue
            M[k, index[tr.target.counts]] += tr.rate
        M[k, k] = -M[k].sum()
    return M


def write_coo(matrix: np.ndarray, stream: TextIO) -> int:
    """Write nonzero entries as ``row col value`` lines; returns the line count."""
    rows, cols = np.nonzero(matrix)
    stream.write("row col value\n")
    for r, c in zip(rows, cols):
        stream.write(f"{r} {c} {matrix[r, c]!r}\n")
    return len(rows)


def _require_finite(rates: PreLimitRates) -> None:
    if not rates.finite:
        raise Unbounded("state space is infinite when a buffer is inf")

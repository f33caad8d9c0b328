"""Model constants, queue states and the heavy-traffic scaling.

All dynamics run on unscaled integer queue lengths. Diffusion-scaled
coordinates (counts divided by sqrt(n)) are a derived view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, InvalidState, NegativeRate

INF = math.inf


def _parse_buffer_entry(value: Any) -> float:
    if isinstance(value, str):
        if value.strip().lower() in {"inf", "+inf", ".inf", "infinity"}:
            return INF
        return float(value)
    return float(value)


def _format_buffer_entry(value: float) -> Any:
    return "inf" if math.isinf(value) else value


@dataclass(frozen=True)
class SystemParams:
    """Constants of one pre-limit system and of its heavy-traffic limit.

    ``buffer`` holds the limit buffers b_i (``math.inf`` for no buffer) and
    ``scale`` the system index n.
    """

    K: int
    lambda0: float
    beta: tuple[float, ...]
    delta: tuple[float, ...]
    buffer: tuple[float, ...]
    scale: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(x) for x in self.beta))
        object.__setattr__(self, "delta", tuple(float(x) for x in self.delta))
        object.__setattr__(self, "buffer", tuple(_parse_buffer_entry(x) for x in self.buffer))
        errors = param_errors(self.K, self.lambda0, self.beta, self.delta, self.buffer, self.scale)
        if errors:
            raise ConfigError(errors)
        root = math.sqrt(self.scale)
        for i, b in enumerate(self.beta):
            if self.lambda0 * self.scale + b * root < 0:
                raise NegativeRate(
                    f"class {i + 1}: lambda0*n + beta*sqrt(n) < 0 at n={self.scale}"
                )

    @classmethod
    def uniform(cls, K: int, lambda0: float = 1.0, beta: float = 0.0, delta: float = 1.0,
                buffer: float = INF, scale: int = 1) -> "SystemParams":
        """Symmetric parameters: every class gets the same beta, delta and buffer."""
        return cls(K, lambda0, (beta,) * K, (delta,) * K, (buffer,) * K, scale)

    def with_scale(self, n: int) -> "SystemParams":
        return replace(self, scale=int(n))

    @property
    def finite_buffers(self) -> bool:
        return all(math.isfinite(b) for b in self.buffer)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "lambda0": self.lambda0,
            "beta": list(self.beta),
            "delta": list(self.delta),
            "buffer": [_format_buffer_entry(b) for b in self.buffer],
            "n": self.scale,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SystemParams":
        errors = []
        for key in ("K", "lambda0", "beta", "delta"):
            if key not in raw:
                errors.append(f"{key} required")
        if errors:
            raise ConfigError(errors)
        K = raw["K"]
        buffer = raw.get("buffer", ["inf"] * K if isinstance(K, int) else [])
        try:
            buffer = [_parse_buffer_entry(b) for b in buffer]
        except (TypeError, ValueError):
            raise ConfigError(["buffer entries must be numbers or 'inf'"])
        return cls(
            K=K,
            lambda0=raw["lambda0"],
            beta=tuple(raw["beta"]),
            delta=tuple(raw["delta"]),
            buffer=tuple(buffer),
            scale=raw.get("n", 1),
        )

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_text(cls, text: str) -> "SystemParams":
        raw = yaml.safe_load(text)
        if not isinstance(raw, Mapping):
            raise ConfigError(["params must be a mapping"])
        return cls.from_dict(raw)


def param_errors(K, lambda0, beta, delta, buffer, scale) -> list[str]:
    """Collect every violated parameter invariant (empty list when valid)."""
    errors = []
    if not isinstance(K, (int, np.integer)) or isinstance(K, bool) or K < 2:
        errors.append("K must be an integer >= 2")
        K = None
    try:
        if not float(lambda0) > 0:
            errors.append("lambda0 must be > 0")
    except (TypeError, ValueError):
        errors.append("lambda0 must be a number")
    if K is not None:
        if len(beta) != K:
            errors.append("beta length must equal K")
        if len(delta) != K:
            errors.append("delta length must equal K")
        if len(buffer) != K:
            errors.append("buffer length must equal K")
    if any(not d > 0 for d in delta):
        errors.append("delta entries must be > 0")
    if any(not b > 0 for b in buffer):
        errors.append("buffer entries must be > 0")
    if not isinstance(scale, (int, np.integer)) or isinstance(scale, bool) or scale < 1:
        errors.append("n must be an integer >= 1")
    return errors


@dataclass(frozen=True)
class PreLimitRates:
    """Rates of the n-th system.

    arrival_rate: lambda_i^n, events per unit time.
    abandon_rate: delta_i^n, per waiting item per unit time.
    buffer_count: b_i^n as item counts; ``math.inf`` when unbuffered.
    """

    arrival_rate: tuple[float, ...]
    abandon_rate: tuple[float, ...]
    buffer_count: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "arrival_rate", tuple(float(x) for x in self.arrival_rate))
        object.__setattr__(self, "abandon_rate", tuple(float(x) for x in self.abandon_rate))
        object.__setattr__(self, "buffer_count", tuple(float(x) for x in self.buffer_count))
        if not len(self.arrival_rate) == len(self.abandon_rate) == len(self.buffer_count):
            raise ValueError("rate vectors must have equal length")
        if any(x < 0 for x in self.arrival_rate):
            raise NegativeRate("arrival rates must be >= 0")
        if any(not x > 0 for x in self.abandon_rate):
            raise ValueError("abandonment rates must be > 0")
        for b in self.buffer_count:
            if not (math.isinf(b) or (b >= 1 and b == int(b))):
                raise ValueError("buffer counts must be integers >= 1 or inf")

    @property
    def K(self) -> int:
        return len(self.arrival_rate)

    @property
    def finite(self) -> bool:
        return all(math.isfinite(b) for b in self.buffer_count)


def derive_prelimit_rates(params: SystemParams) -> PreLimitRates:
    """lambda_i^n = lambda0*n + beta_i*sqrt(n), delta_i^n = delta_i, b_i^n = round(b_i*sqrt(n))."""
    n = params.scale
    root = math.sqrt(n)
    arrivals = []
    for i, b in enumerate(params.beta):
        lam = params.lambda0 * n + b * root
        if lam < 0:
            raise NegativeRate(f"class {i + 1}: arrival rate {lam} < 0 at n={n}")
        arrivals.append(lam)
    buffers = []
    for b in params.buffer:
        if math.isinf(b):
            buffers.append(INF)
        else:
            # half-up rounding, never below one slot
            buffers.append(float(max(1, math.floor(b * root + 0.5))))
    return PreLimitRates(tuple(arrivals), params.delta, tuple(buffers))


@dataclass(frozen=True)
class QueueState:
    """Unscaled queue lengths; at least one queue is always empty."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c != raw for c, raw in zip(counts, self.counts)):
            raise InvalidState(f"queue lengths must be integers: {self.counts}")
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2:
            raise InvalidState("a state needs at least two classes")
        if any(c < 0 for c in counts):
            raise InvalidState(f"negative queue length in {counts}")
        if all(c > 0 for c in counts):
            raise InvalidState(f"no empty queue in {counts}")

    @classmethod
    def zeros(cls, K: int) -> "QueueState":
        return cls((0,) * K)

    @property
    def K(self) -> int:
        return len(self.counts)

    def check_buffers(self, buffer_count: Sequence[float]) -> "QueueState":
        if len(buffer_count) != self.K:
            raise InvalidState("state and buffer dimensions differ")
        for i, (c, b) in enumerate(zip(self.counts, buffer_count)):
            if c > b:
                raise InvalidState(f"queue {i + 1} holds {c} > buffer {b}")
        return self

    def __iter__(self):
        return iter(self.counts)

    def __getitem__(self, i):
        return self.counts[i]


def scale_state(state: QueueState | Iterable[int], n: int) -> np.ndarray:
    """Diffusion-scaled coordinates counts/sqrt(n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = state.counts if isinstance(state, QueueState) else tuple(state)
    return np.asarray(counts, dtype=float) / math.sqrt(n)

"""Experiment configs and the runners behind the ``matchsim`` subcommands.

Every run writes its data files and a ``<kind>-<hash>.summary.json`` into the
output directory. ``<hash>`` is derived from the config (minus output
location and thread count), so identical configs name identical files, and
data files are byte-for-byte reproducible for a fixed seed. Wall time and
version live only in the summary.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml
from scipy.linalg import expm

from . import __version__
from . import testfunctions as tf
from .analysis import expected_counts, ks_distance, ks_distance_cdf, moments, uniformization_transient
from .ctmc import scaled_difference, simulate_path, simulate_terminal
from .diffusion import (double_ended_samples, double_ended_stationary_cdf, double_ended_terminal,
                        limit_samples, simulate_double_ended, simulate_limit_K)
from .errors import ConfigError
from .generator import apply_An, convergence_sweep, matrix_action, write_sweep_csv
from .kernel import build_generator_matrix, enumerate_states
from .model import QueueState, SystemParams, _parse_buffer_entry, derive_prelimit_rates, param_errors
from .rng import RNG_NAME

log = logging.getLogger(__name__)

KINDS = ("simulate-ctmc", "simulate-limit", "double-ended", "generator-check",
         "converge-sweep", "compare-laws", "oracle-validate")

DEFAULTS = {
    "dt": 1e-3,
    "tol": 1e-8,
    "replications": 1,
    "seed": 0,
    "record_every": 1,
    "ks_threshold": 0.05,
    "form": "compact",
    "test_function": "difference_bump",
}

# keys each kind cannot run without (params is always required)
REQUIRED = {
    "simulate-ctmc": ("horizon",),
    "simulate-limit": ("horizon",),
    "double-ended": ("horizon",),
    "generator-check": (),
    "converge-sweep": ("n_grid", "window"),
    "compare-laws": ("horizon",),
    "oracle-validate": ("horizon",),
}

TEST_FUNCTIONS = ("difference_bump", "coordinate_square", "radial_bump", "linear", "constant")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: SystemParams
    horizon: float | None = None
    times: tuple[float, ...] | None = None
    dt: float = DEFAULTS["dt"]
    tol: float = DEFAULTS["tol"]
    replications: int = DEFAULTS["replications"]
    seed: int = DEFAULTS["seed"]
    record_every: int = DEFAULTS["record_every"]
    initial: tuple[int, ...] | None = None
    sigma: float | None = None
    x0: float | None = None
    burn_in: float | None = None
    sample_every: float | None = None
    n_grid: tuple[int, ...] | None = None
    window: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    test_function: str = DEFAULTS["test_function"]
    form: str = DEFAULTS["form"]
    ks_threshold: float = DEFAULTS["ks_threshold"]
    out: str = "results"
    threads: int = 1

    def echo(self) -> dict:
        """Plain-data view of the config with every default filled in."""
        raw = asdict(self)
        raw["params"] = self.params.to_dict()
        return raw

    def digest(self) -> str:
        raw = self.echo()
        raw.pop("out")
        raw.pop("threads")
        blob = json.dumps(raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _number(raw, key, errors, kind=float, positive=False, nonneg=False):
    if key not in raw or raw[key] is None:
        return None
    try:
        if kind is int and (isinstance(raw[key], bool) or float(raw[key]) != int(float(raw[key]))):
            raise ValueError
        value = kind(raw[key])
    except (TypeError, ValueError):
        errors.append(f"{key} must be a{'n integer' if kind is int else ' number'}")
        return None
    if positive and not value > 0:
        errors.append(f"{key} must be > 0")
    if nonneg and value < 0:
        errors.append(f"{key} must be >= 0")
    return value


def _params(raw: Any, errors: list) -> SystemParams | None:
    if not isinstance(raw, Mapping):
        errors.append("params required (a mapping with K, lambda0, beta, delta, buffer, n)")
        return None
    found = []
    for key in ("K", "lambda0", "beta", "delta"):
        if key not in raw:
            found.append(f"{key} required")
    K = raw.get("K")
    beta = list(raw.get("beta") or [])
    delta = list(raw.get("delta") or [])
    buffer = raw.get("buffer")
    if buffer is None:
        buffer = ["inf"] * K if isinstance(K, int) else []
    try:
        buffer = [_parse_buffer_entry(b) for b in buffer]
    except (TypeError, ValueError):
        found.append("buffer entries must be numbers or 'inf'")
        buffer = []
    if "K" in raw:
        for msg in param_errors(K, raw.get("lambda0", 1.0), beta, delta, buffer, raw.get("n", 1)):
            # the length checks only make sense for keys that were given
            if ("beta length" in msg and "beta" not in raw) or ("delta length" in msg and "delta" not in raw):
                continue
            if "lambda0" in msg and "lambda0" not in raw:
                continue
            found.append(msg)
    if found:
        errors.extend(found)
        return None
    try:
        return SystemParams(K, raw["lambda0"], beta, delta, buffer, raw.get("n", 1))
    except ConfigError as exc:
        errors.extend(exc.errors)
    except ValueError as exc:
        errors.append(str(exc))
    return None


def validate_config(raw: str | Mapping, kind: str | None = None) -> ExperimentConfig | list[str]:
    """Typed config, or the full list of problems found (not fail-fast).

    ``raw`` is YAML/JSON text or an already-parsed mapping; ``kind`` overrides
    the ``kind`` key. Defaults: dt=1e-3, tol=1e-8, replications=1, seed=0.
    """
    try:
        return load_config(raw, kind)
    except ConfigError as exc:
        return list(exc.errors)


def load_config(raw: str | Mapping, kind: str | None = None, **overrides) -> ExperimentConfig:
    """Like ``validate_config`` but raises ConfigError; ``overrides`` replace top-level keys."""
    if isinstance(raw, str):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError([f"config is not valid YAML/JSON: {exc}"])
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(["config must be a mapping"])
    raw = dict(raw)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if kind is not None:
        raw["kind"] = kind
    errors: list[str] = []
    kind = raw.get("kind")
    if kind is None:
        errors.append("kind required")
    elif kind not in KINDS:
        errors.append(f"kind must be one of {', '.join(KINDS)}")
    params = _params(raw.get("params"), errors)
    values: dict[str, Any] = {}

    horizon = _number(raw, "horizon", errors, nonneg=True)
    if horizon is None and "T" in raw:
        horizon = _number(raw, "T", errors, nonneg=True)
    values["horizon"] = horizon
    if "times" in raw:
        try:
            times = tuple(sorted(float(t) for t in raw["times"]))
            if any(t < 0 for t in times) or not times:
                errors.append("times must be a nonempty list of nonnegative numbers")
            values["times"] = times
        except (TypeError, ValueError):
            errors.append("times must be a list of numbers")
    values["dt"] = _number(raw, "dt", errors, positive=True)
    values["tol"] = _number(raw, "tol", errors, positive=True)
    values["replications"] = _number(raw, "replications", errors, kind=int)
    if values["replications"] is not None and values["replications"] < 1:
        errors.append("replications must be >= 1")
    values["seed"] = _number(raw, "seed", errors, kind=int, nonneg=True)
    values["record_every"] = _number(raw, "record_every", errors, kind=int, nonneg=True)
    values["sigma"] = _number(raw, "sigma", errors, nonneg=True)
    values["x0"] = _number(raw, "x0", errors)
    values["burn_in"] = _number(raw, "burn_in", errors, nonneg=True)
    values["sample_every"] = _number(raw, "sample_every", errors, positive=True)
    values["ks_threshold"] = _number(raw, "ks_threshold", errors, positive=True)
    values["threads"] = _number(raw, "threads", errors, kind=int, positive=True)
    if "initial" in raw:
        try:
            values["initial"] = QueueState(tuple(raw["initial"])).counts
        except (TypeError, ValueError) as exc:
            errors.append(f"initial: {exc}")
    if "n_grid" in raw:
        try:
            grid = tuple(sorted(int(n) for n in raw["n_grid"]))
            if not grid or grid[0] < 1:
                raise ValueError
            values["n_grid"] = grid
        except (TypeError, ValueError):
            errors.append("n_grid must be a nonempty list of integers >= 1")
    if "window" in raw:
        try:
            lo, hi = raw["window"]
            lo, hi = tuple(float(x) for x in lo), tuple(float(x) for x in hi)
            if params is not None and (len(lo) != params.K or len(hi) != params.K):
                errors.append("window length must equal K")
            elif any(a > b for a, b in zip(lo, hi)):
                errors.append("window lower corner exceeds upper corner")
            values["window"] = (lo, hi)
        except (TypeError, ValueError):
            errors.append("window must be [[lower...], [upper...]]")
    if "test_function" in raw:
        if raw["test_function"] not in TEST_FUNCTIONS:
            errors.append(f"test_function must be one of {', '.join(TEST_FUNCTIONS)}")
        values["test_function"] = raw["test_function"]
    if "form" in raw:
        if raw["form"] not in ("compact", "expanded"):
            errors.append("form must be compact or expanded")
        values["form"] = raw["form"]
    if "out" in raw:
        values["out"] = str(raw["out"])

    if kind in REQUIRED:
        for key in REQUIRED[kind]:
            if key == "horizon" and (values["horizon"] is not None or values.get("times")):
                continue
            if values.get(key) is None:
                errors.append(f"{key} required")
        if params is not None:
            if kind == "double-ended" and params.K != 2:
                errors.append("double-ended needs K = 2")
            if kind in ("generator-check", "oracle-validate") and not params.finite_buffers:
                errors.append("buffer must be finite for this kind")
            if values.get("initial") is not None:
                if len(values["initial"]) != params.K:
                    errors.append("initial length must equal K")
    known = set(ExperimentConfig.__dataclass_fields__) | {"T"}
    for key in raw:
        if key not in known:
            errors.append(f"unknown key {key}")
    if errors:
        raise ConfigError(errors)
    values = {k: v for k, v in values.items() if v is not None}
    return ExperimentConfig(kind=kind, params=params, **values)


# ----------------------------------------------------------------- running

@dataclass
class RunResult:
    status: int
    summary: dict
    files: list[Path] = field(default_factory=list)


def _version() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).parent, capture_output=True, text=True,
                              timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class _Writer:
    """Single writer per output file; names carry the config hash."""

    def __init__(self, cfg: ExperimentConfig):
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.prefix = f"{cfg.kind}-{cfg.digest()}"
        self.files: list[Path] = []

    def path(self, suffix: str) -> Path:
        return self.dir / f"{self.prefix}.{suffix}"

    def text(self, suffix: str, render) -> Path:
        buf = io.StringIO()
        render(buf)
        p = self.path(suffix)
        p.write_text(buf.getvalue(), encoding="utf-8")
        self.files.append(p)
        return p

    def rows(self, suffix: str, header, rows) -> Path:
        def render(stream):
            stream.write(",".join(header) + "\n")
            for row in rows:
                stream.write(",".join(_fmt(v) for v in row) + "\n")
        return self.text(suffix, render)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _initial_state(cfg: ExperimentConfig) -> QueueState:
    return QueueState(cfg.initial) if cfg.initial is not None else QueueState.zeros(cfg.params.K)


def _times(cfg: ExperimentConfig) -> list[float]:
    if cfg.times:
        return list(cfg.times)
    return [cfg.horizon]


def _state_header(prefix, K):
    return [f"{prefix}_{i + 1}" for i in range(K)]


def run_simulate_ctmc(cfg, w):
    rates = derive_prelimit_rates(cfg.params)
    init = _initial_state(cfg)
    path = simulate_path(rates, init, cfg.horizon, cfg.seed, record_every=cfg.record_every)
    w.text("path.csv", path.write_csv)
    summary = {"path_rows": len(path.times), "n_events": path.n_events,
               "final_state": path.final.tolist()}
    if cfg.replications > 1:
        term = simulate_terminal(rates, init, cfg.horizon, cfg.replications, cfg.seed, cfg.threads)
        K = cfg.params.K
        header = (["replication"] + _state_header("Q", K) + _state_header("A", K)
                  + _state_header("G", K) + _state_header("L", K) + ["R"])
        w.rows("terminal.csv", header,
               ([r] + term.states[r].tolist() + term.arrivals[r].tolist() + term.abandons[r].tolist()
                + term.blocks[r].tolist() + [int(term.matches[r])] for r in range(cfg.replications)))
        summary["mean_terminal_state"] = term.states.mean(axis=0).tolist()
        summary["mean_scaled_terminal_state"] = (term.states.mean(axis=0) / math.sqrt(cfg.params.scale)).tolist()
    return 0, summary


def run_simulate_limit(cfg, w):
    x0 = None if cfg.initial is None else np.asarray(cfg.initial, float) / math.sqrt(cfg.params.scale)
    path = simulate_limit_K(cfg.params, cfg.horizon, cfg.dt, cfg.seed, x0=x0,
                            record_every=max(cfg.record_every, 1))
    w.text("path.csv", path.write_csv)
    coupled = bool(np.all(path.X.min(axis=1) == 0.0))
    summary = {"coupling_invariant_holds": coupled, "final_state": path.X[-1].tolist()}
    if cfg.replications > 1:
        samples = limit_samples(cfg.params, cfg.horizon, cfg.dt, cfg.replications, cfg.seed,
                                x0=x0, threads=cfg.threads)
        K = cfg.params.K
        w.rows("terminal.csv", ["replication"] + _state_header("X", K),
               ([r] + samples[r].tolist() for r in range(cfg.replications)))
        summary["terminal_samples"] = samples.tolist()
        summary["mean_terminal_state"] = samples.mean(axis=0).tolist()
    return 0, summary


def _sigma(cfg) -> float:
    return cfg.sigma if cfg.sigma is not None else math.sqrt(2.0 * cfg.params.lambda0)


def run_double_ended(cfg, w):
    p = cfg.params
    x0 = cfg.x0 if cfg.x0 is not None else 0.0
    sigma = _sigma(cfg)
    path = simulate_double_ended(p, sigma, x0, cfg.horizon, cfg.dt, cfg.seed,
                                 record_every=max(cfg.record_every, 1))
    w.text("path.csv", path.write_csv)
    summary = {"sigma": sigma, "final_state": float(path.X[-1, 0])}
    status = 0
    if cfg.replications > 1 and cfg.burn_in is None:
        term = double_ended_terminal(p, sigma, x0, cfg.horizon, cfg.dt, cfg.replications,
                                     cfg.seed, cfg.threads)
        w.rows("terminal.csv", ["replication", "X", "U_upper", "U_lower"],
               ([r] + term[r].tolist() for r in range(cfg.replications)))
        summary["terminal_samples"] = term[:, 0].tolist()
    if cfg.burn_in is not None:
        kept = double_ended_samples(p, sigma, x0, cfg.horizon, cfg.dt, cfg.replications, cfg.seed,
                                    burn_in=cfg.burn_in, sample_every=cfg.sample_every,
                                    threads=cfg.threads).ravel()
        cdf = double_ended_stationary_cdf(p.beta[0] - p.beta[1], p.delta[0], p.delta[1], sigma,
                                          -p.buffer[1], p.buffer[0])
        ks = ks_distance_cdf(kept, cdf)
        summary.update({"stationary_samples": int(kept.size), "stationary_ks": ks,
                        "ks_threshold": cfg.ks_threshold, "pass": ks <= cfg.ks_threshold})
        status = 0 if ks <= cfg.ks_threshold else 1
    return status, summary


def run_generator_check(cfg, w):
    p = cfg.params
    rates = derive_prelimit_rates(p)
    states = enumerate_states(rates)
    M = build_generator_matrix(rates)
    rows = []
    worst = 0.0
    for f in tf.library(p.K):
        action = matrix_action(M, states, f, p.scale)
        direct = np.array([apply_An(f, s, rates, p.scale) for s in states])
        err = float(np.max(np.abs(direct - action)))
        worst = max(worst, err)
        rows.append((f.name, len(states), err))
    w.rows("generator.csv", ["function", "n_states", "max_abs_error"], rows)
    ok = worst <= 1e-12
    return (0 if ok else 1), {"max_abs_error": worst, "n_states": len(states), "pass": ok}


def _test_function(name: str, K: int):
    return {
        "difference_bump": lambda: tf.difference_bump(K),
        "coordinate_square": lambda: tf.coordinate_square(K, 0),
        "radial_bump": lambda: tf.radial_bump(np.full(K, 0.5), 1.2),
        "linear": lambda: tf.linear(np.arange(1, K + 1, dtype=float)),
        "constant": lambda: tf.constant(K, 1.0),
    }[name]()


def run_converge_sweep(cfg, w):
    f = _test_function(cfg.test_function, cfg.params.K)
    rows = convergence_sweep(f, cfg.params, cfg.n_grid, cfg.window, form=cfg.form)
    w.text("sweep.csv", lambda s: write_sweep_csv(rows, s))
    errs = [r.sup_error for r in rows]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ratio = errs[-1] / errs[0] if errs[0] > 0 else 0.0
    return 0, {"sup_errors": errs, "n_grid": [r.n for r in rows], "strictly_decreasing": decreasing,
               "ratio_last_first": ratio}


def run_compare_laws(cfg, w):
    p = cfg.params
    n = p.scale
    rates = derive_prelimit_rates(p)
    init = _initial_state(cfg)
    times = _times(cfg)
    ctmc = simulate_terminal(rates, init, times, cfg.replications, cfg.seed, cfg.threads)
    x0 = np.asarray(init.counts, float) / math.sqrt(n)
    # limit draws use seed streams disjoint from the chain's
    de_seed, lim_seed = cfg.seed + 1_000_003, cfg.seed + 2_000_006
    table = []
    summary: dict[str, Any] = {}
    if p.K == 2:
        sigma = _sigma(cfg)
        x0_diff = float(x0[0] - x0[1])
        if len(times) == 1:
            term = double_ended_terminal(p, sigma, x0_diff, times[0], cfg.dt, cfg.replications,
                                         de_seed, cfg.threads)
            de = term[None, :, 0]
            if p.finite_buffers:
                blocks = np.asarray(ctmc.blocks[-1], float)
                arrivals = np.asarray(ctmc.arrivals[-1], float)
                frac = np.divide(blocks[:, 0], arrivals[:, 0], out=np.zeros(len(blocks)),
                                 where=arrivals[:, 0] > 0)
                summary["block_fraction_positive"] = float(np.mean(frac > 0))
                summary["local_time_positive"] = float(np.mean(term[:, 1] > 0))
                summary["mean_block_fraction"] = float(frac.mean())
                summary["mean_local_time"] = float(term[:, 1].mean())
        else:
            de = double_ended_samples(p, sigma, x0_diff, times, cfg.dt, cfg.replications,
                                      de_seed, threads=cfg.threads)
        for k, t in enumerate(times):
            ks = ks_distance(scaled_difference(ctmc.states[k], n), de[k])
            table.append((t, "Q1-Q2 vs double-ended", ks, cfg.ks_threshold, ks <= cfg.ks_threshold))
    lim = limit_samples(p, times, cfg.dt, cfg.replications, lim_seed, x0=x0, threads=cfg.threads)
    for k, t in enumerate(times):
        scaled = ctmc.states[k] / math.sqrt(n)
        for i in range(p.K):
            ks = ks_distance(scaled[:, i], lim[k][:, i])
            table.append((t, f"Q{i + 1} vs limit marginal", ks, cfg.ks_threshold, ks <= cfg.ks_threshold))
    w.rows("ks.csv", ["t", "quantity", "ks", "threshold", "pass"], table)
    ok = all(row[-1] for row in table)
    summary.update({"ks_table": [[_jsonable(v) for v in r] for r in table], "pass": ok})
    return (0 if ok else 1), summary


def run_oracle_validate(cfg, w):
    p = cfg.params
    rates = derive_prelimit_rates(p)
    states = enumerate_states(rates)
    M = build_generator_matrix(rates)
    init = _initial_state(cfg)
    p0 = np.zeros(len(states))
    p0[[s.counts for s in states].index(init.counts)] = 1.0
    dist = uniformization_transient(M, p0, cfg.horizon, cfg.tol)
    w.rows("distribution.csv", ["state", "probability"],
           ((" ".join(map(str, s.counts)), float(q)) for s, q in zip(states, dist)))
    summary = {"n_states": len(states), "probability_sum": float(dist.sum())}
    ok = True
    if len(states) <= 50:
        err = float(np.max(np.abs(dist - p0 @ expm(M * cfg.horizon))))
        summary["max_abs_diff_expm"] = err
        ok &= err <= 1e-8
    exact = expected_counts(dist, states)
    if cfg.replications > 1:
        term = simulate_terminal(rates, init, cfg.horizon, cfg.replications, cfg.seed, cfg.threads)
        zs = []
        for i in range(p.K):
            m = moments(term.states[:, i])
            z = (m.mean - exact[i]) / m.sem if m.sem > 0 else 0.0
            zs.append(z)
        summary["monte_carlo_z"] = zs
        ok &= all(abs(z) <= 3 for z in zs)
    summary["exact_mean_state"] = exact.tolist()
    summary["pass"] = bool(ok)
    return (0 if ok else 1), summary


def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


RUNNERS = {
    "simulate-ctmc": run_simulate_ctmc,
    "simulate-limit": run_simulate_limit,
    "double-ended": run_double_ended,
    "generator-check": run_generator_check,
    "converge-sweep": run_converge_sweep,
    "compare-laws": run_compare_laws,
    "oracle-validate": run_oracle_validate,
}


def run(cfg: ExperimentConfig) -> RunResult:
    """Run one experiment; returns the exit status, the summary and the written files."""
    w = _Writer(cfg)
    start = time.perf_counter()
    status, results = RUNNERS[cfg.kind](cfg, w)
    summary = {
        "kind": cfg.kind,
        "config": cfg.echo(),
        "config_hash": cfg.digest(),
        "rng": RNG_NAME,
        "version": _version(),
        "wall_time_s": time.perf_counter() - start,
        "results": results,
        "files": [p.name for p in w.files],
    }
    summary_path = w.path("summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n", encoding="utf-8")
    w.files.append(summary_path)
    return RunResult(status, summary, w.files)

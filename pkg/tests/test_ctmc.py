import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchsim.analysis import expected_counts, moments, uniformization_transient
from matchsim.ctmc import (EventPath, flow_conservation_check, match_count_identity_check,
                           scaled_difference, simulate_path, simulate_terminal)
from matchsim.kernel import Kind, build_generator_matrix, enumerate_states
from matchsim.model import PreLimitRates, QueueState
from matchsim.rng import RNG_NAME


def test_zero_horizon_single_row():
    r = PreLimitRates((5, 7), (1, 1), (3, 3))
    p = simulate_path(r, QueueState((0, 2)), 0.0, seed=1)
    assert len(p.times) == 1 and p.times[0] == 0.0
    assert p.states[0].tolist() == [0, 2]
    assert p.arrivals.sum() == p.abandons.sum() == p.blocks.sum() == p.matches.sum() == 0


def test_zero_rates_no_events():
    r = PreLimitRates((0, 0), (2.0, 3.0), (math.inf, math.inf))
    p = simulate_path(r, QueueState((0, 0)), 100.0, seed=1)
    assert p.n_events == 0
    assert p.final.tolist() == [0, 0]


@pytest.mark.slow
def test_mean_matches_uniformization():
    r = PreLimitRates((50, 50), (1, 1), (5, 5))
    states = enumerate_states(r)
    assert len(states) == 11
    p0 = np.zeros(len(states))
    p0[0] = 1.0
    exact = expected_counts(uniformization_transient(build_generator_matrix(r), p0, 2.0), states)
    sample = simulate_terminal(r, QueueState((0, 0)), 2.0, 100_000, seed=11, threads=4)
    m = moments(sample.states[:, 0])
    assert abs(m.mean - exact[0]) <= 3 * m.sem


def _path(states, arrivals, blocks, abandons, matches):
    k = len(states)
    return EventPath(
        times=np.arange(k, dtype=float), states=np.array(states), arrivals=np.array(arrivals),
        abandons=np.array(abandons), blocks=np.array(blocks), matches=np.array(matches),
        kinds=np.full(k, -1), classes=np.full(k, -1), seed=0, horizon=k - 1.0, n_events=k - 1)


def test_identity_zero_event_path():
    r = PreLimitRates((1, 1), (1, 1), (3, 3))
    p = simulate_path(r, QueueState((0, 2)), 0.0, seed=0)
    assert match_count_identity_check(p)


def test_identity_hand_built():
    # admit 1, admit 1, match via class 2, abandon class 1
    states = [[0, 0], [1, 0], [2, 0], [1, 0], [0, 0]]
    arrivals = [[0, 0], [1, 0], [2, 0], [2, 1], [2, 1]]
    blocks = [[0, 0]] * 5
    abandons = [[0, 0], [0, 0], [0, 0], [0, 0], [1, 0]]
    matches = [0, 0, 0, 1, 1]
    good = _path(states, arrivals, blocks, abandons, matches)
    assert match_count_identity_check(good) and flow_conservation_check(good)
    bad = _path(states, arrivals, blocks, abandons, [0, 0, 0, 1, 2])
    assert not match_count_identity_check(bad)


def test_csv_and_metadata():
    r = PreLimitRates((5, 7), (1, 1), (3, 3))
    p = simulate_path(r, QueueState((0, 0)), 1.0, seed=5)
    buf = io.StringIO()
    p.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,Q_1,Q_2,A_1,A_2,G_1,G_2,L_1,L_2,R"
    assert len(lines) == len(p.times) + 1
    meta = p.metadata()
    assert meta["rng"] == RNG_NAME and meta["seed"] == 5
    json.loads(json.dumps(meta))


def test_thinning_keeps_last_row():
    r = PreLimitRates((30, 20), (1, 1), (5, 5))
    full = simulate_path(r, QueueState((0, 0)), 3.0, seed=9)
    thin = simulate_path(r, QueueState((0, 0)), 3.0, seed=9, record_every=7)
    ends = simulate_path(r, QueueState((0, 0)), 3.0, seed=9, record_every=0)
    assert np.array_equal(thin.states[-1], full.states[-1])
    assert np.array_equal(ends.states[-1], full.states[-1])
    assert len(ends.times) == 2
    assert np.array_equal(thin.states[1:-1], full.states[7::7][:len(thin.times) - 2])


def test_terminal_independent_of_threads():
    r = PreLimitRates((20, 25), (1, 1), (math.inf, math.inf))
    a = simulate_terminal(r, QueueState((0, 0)), [0.5, 1.0], 40, seed=2, threads=1)
    b = simulate_terminal(r, QueueState((0, 0)), [0.5, 1.0], 40, seed=2, threads=3)
    assert np.array_equal(a.states, b.states)
    assert a.states.shape == (2, 40, 2)
    # the last checkpoint is what a path run with the same stream ends at
    p = simulate_path(r, QueueState((0, 0)), 1.0, seed=2, replication=7)
    assert np.array_equal(a.states[1, 7], p.final)


def test_scaled_difference():
    states = np.array([[0, 4], [6, 0]])
    assert scaled_difference(states, 4).tolist() == [-2.0, 3.0]


def test_arrival_counts_poisson():
    r = PreLimitRates((400.0, 380.0), (1, 1), (math.inf, math.inf))
    T = 50.0
    p = simulate_path(r, QueueState((0, 0)), T, seed=21, record_every=0)
    for i, lam in enumerate(r.arrival_rate):
        assert abs(p.arrivals[-1, i] / T - lam) <= 3 * math.sqrt(lam / T)


rate_st = st.floats(0.0, 30.0)


@st.composite
def systems(draw):
    K = draw(st.integers(2, 4))
    lam = tuple(draw(rate_st) for _ in range(K))
    delta = tuple(draw(st.floats(0.05, 3.0)) for _ in range(K))
    buf = tuple(draw(st.one_of(st.integers(1, 6), st.just(math.inf))) for _ in range(K))
    r = PreLimitRates(lam, delta, buf)
    init = [0] * K
    j = draw(st.integers(0, K - 1))
    for i in range(K):
        if i != j:
            cap = 6 if math.isinf(buf[i]) else int(buf[i])
            init[i] = draw(st.integers(0, cap))
    return r, QueueState(tuple(init))


@given(systems(), st.integers(0, 2**32), st.floats(0.0, 2.0))
def test_path_invariants(system, seed, horizon):
    r, init = system
    p = simulate_path(r, init, horizon, seed)
    assert np.all(np.prod(p.states, axis=1) == 0)
    assert np.all(np.diff(p.times) > 0)
    assert np.all(p.times <= horizon)
    buf = np.array(r.buffer_count)
    assert np.all(p.states >= 0) and np.all(p.states <= buf)
    for counter in (p.arrivals, p.abandons, p.blocks):
        assert np.all(np.diff(counter, axis=0) >= 0)
    assert np.all(np.diff(p.matches) >= 0)
    assert flow_conservation_check(p) and match_count_identity_check(p)
    # blocks only when the queue sat at its buffer before the event
    for k in range(1, len(p.times)):
        if p.kinds[k] == Kind.BLOCKED:
            i = p.classes[k]
            assert p.states[k - 1, i] == buf[i] == p.states[k, i]
            assert p.blocks[k, i] == p.blocks[k - 1, i] + 1


@given(systems(), st.integers(0, 2**32))
def test_determinism(system, seed):
    r, init = system
    out = []
    for _ in range(2):
        buf = io.StringIO()
        simulate_path(r, init, 1.0, seed).write_csv(buf)
        out.append(buf.getvalue())
    assert out[0] == out[1]


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2mlife.limitedfb import (admit_by_lifetime, count_lifetime, count_power, min_chunks,
                               rate_avg, schedule_limited_feedback)
from m2mlife.model import EnergyProfile, NodeState, RadioEnvironment, TrafficProfile, dbm_to_watts
from m2mlife.numerics import RateModel
from m2mlife.scfdma import InfeasibleGrant, grant_energy, optimal_power

ENV = RadioEnvironment()
MODEL = RateModel(w=ENV.subcarrier_bw)
M, W, TAU = ENV.subcarriers_per_chunk, ENV.subcarrier_bw, ENV.slot
P_MAX = dbm_to_watts(24)


def make(i=0, distance=300.0, remaining=2e-3, payload=600.0, pathloss=None):
    return NodeState(i, TrafficProfile(300.0, payload),
                     EnergyProfile(remaining, 10e-6, dbm_to_watts(7), 1.0, P_MAX), distance,
                     pathloss=pathloss)


def unit_power(y, node):
    # power making the per-subcarrier SNR exactly one
    return y * M * node.pathloss * (ENV.noise_psd + ENV.interference_psd) * W / ENV.antenna_gain


def test_rate_avg_examples():
    n = make()
    for y in (1, 3):
        assert rate_avg(y, unit_power(y, n), n, ENV, MODEL) == pytest.approx(y * M * W)
    assert rate_avg(2, 0.0, n, ENV, MODEL) == 0.0
    with pytest.raises(ValueError):
        rate_avg(0, 1.0, n, ENV, MODEL)


@given(st.integers(1, 6), st.floats(1e-6, 1.0), st.floats(1.001, 10.0))
def test_rate_avg_increasing(y, p, f):
    n = make()
    assert rate_avg(y, p * f, n, ENV, MODEL) > rate_avg(y, p, n, ENV, MODEL)


def test_rate_avg_matches_full_csi_rate_on_flat_channel():
    n = make(distance=420.0)
    g = np.full(4, 1.0 / n.pathloss)
    for y in (1, 2, 4):
        p = optimal_power(n, g, range(y), ENV, MODEL)
        _, r, _ = grant_energy(n, g, range(y), ENV, MODEL, power=p)
        assert rate_avg(y, p, n, ENV, MODEL) == pytest.approx(r, rel=1e-12)
        assert count_power(y, n, ENV, MODEL) == pytest.approx(p, rel=1e-12)


def test_min_chunks_examples():
    assert min_chunks(make(distance=60.0), ENV, MODEL, 6) == 1
    probe = make()
    bits = TAU * rate_avg(2, P_MAX, probe, ENV, MODEL)
    assert min_chunks(make(payload=bits), ENV, MODEL, 6) == 2
    with pytest.raises(InfeasibleGrant):
        min_chunks(make(pathloss=1e30), ENV, MODEL, 6)
    with pytest.raises(InfeasibleGrant):
        min_chunks(make(distance=500.0, payload=1e5), ENV, MODEL, 6)


def test_admit_by_lifetime():
    assert admit_by_lifetime({0: 2, 1: 3, 2: 1}, {0: 5.0, 1: 1.0, 2: 9.0}, 4) == [1, 2]


def test_no_spare_leaves_everyone_at_minimum():
    nodes = [make(0, 420.0), make(1, 470.0)]
    mins = [min_chunks(n, ENV, MODEL, 12) for n in nodes]
    out = schedule_limited_feedback(nodes, sum(mins), ENV, MODEL)
    assert [out.counts[0], out.counts[1]] == mins
    assert out.deferred == []


def test_one_spare_goes_to_shorter_lifetime():
    nodes = [make(0, 470.0, remaining=1e-3), make(1, 470.0, remaining=3e-3)]
    mins = [min_chunks(n, ENV, MODEL, 12) for n in nodes]
    # the shorter-lived node must actually improve for the hand trace to apply
    assert count_lifetime(mins[0] + 1, nodes[0], ENV, MODEL) > count_lifetime(mins[0], nodes[0],
                                                                            ENV, MODEL)
    out = schedule_limited_feedback(nodes, sum(mins) + 1, ENV, MODEL)
    assert out.counts == {0: mins[0] + 1, 1: mins[1]}


def test_over_subscription_defers():
    nodes = [make(i, 480.0, remaining=(i + 1) * 1e-3) for i in range(4)]
    need = min_chunks(nodes[0], ENV, MODEL, 12)
    out = schedule_limited_feedback(nodes, need, ENV, MODEL)
    assert list(out.counts) == [0]
    assert out.deferred == [1, 2, 3]


params = st.lists(st.tuples(st.floats(40, 500), st.floats(1e-4, 1e-2)), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(params, st.integers(1, 12))
def test_output_invariants(ps, total):
    nodes = [make(i, d, e) for i, (d, e) in enumerate(ps)]
    out = schedule_limited_feedback(nodes, total, ENV, MODEL)
    again = schedule_limited_feedback(nodes, total, ENV, MODEL)
    assert out == again
    assert out.total <= total
    assert set(out.counts) | set(out.deferred) == {n.id for n in nodes}
    for i, y in out.counts.items():
        assert y >= min_chunks(nodes[i], ENV, MODEL, total)
        assert out.power[i] <= P_MAX * (1 + 1e-12)
        assert rate_avg(y, out.power[i], nodes[i], ENV, MODEL) * TAU >= 600.0 * (1 - 1e-9)
        # every increment above the minimum was a strict improvement
        f = [count_lifetime(k, nodes[i], ENV, MODEL)
             for k in range(min_chunks(nodes[i], ENV, MODEL, total), y + 1)]
        assert all(b > a for a, b in zip(f, f[1:]))
